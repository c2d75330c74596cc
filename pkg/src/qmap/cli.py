"""Scenario runner: parse a TOML scenario file, dispatch to the engine and
emit CSV/JSON artifacts.

Exit codes: 0 ok, 2 schema violation, 3 engine error, 4 invariant failure
under --strict. Outputs are deterministic for a fixed config and seed; every
CSV carries a comment line with the config hash.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import concat, lindblad, linalg, model, thermo, trajectories
from .cptpmap import (
    MapSpec,
    apply_map,
    classify_map,
    invariant_state,
    kraus_from_dilation,
)
from .errors import QmapError, SchemaError

KINDS = ("single_map", "sequence", "cycle", "lindblad", "ft_check")


# ---------------------------------------------------------------- schema

def _require(table: dict, field: str, where: str):
    if field not in table:
        raise SchemaError(f"{where}: missing field {field!r}")
    return table[field]


def _number(table: dict, field: str, where: str, positive: bool = False):
    x = _require(table, field, where)
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise SchemaError(f"{where}.{field}: expected a number, got {x!r}")
    if positive and x <= 0:
        raise SchemaError(f"{where}.{field}: must be > 0, got {x}")
    return float(x)


def _integer(table: dict, field: str, where: str, minimum: int | None = None):
    x = _require(table, field, where)
    if isinstance(x, bool) or not isinstance(x, int):
        raise SchemaError(f"{where}.{field}: expected an integer, got {x!r}")
    if minimum is not None and x < minimum:
        raise SchemaError(f"{where}.{field}: must be >= {minimum}, got {x}")
    return x


def _float_list(table: dict, field: str, where: str):
    x = table.get(field, [])
    if not isinstance(x, list) or any(
        isinstance(v, bool) or not isinstance(v, (int, float)) for v in x
    ):
        raise SchemaError(f"{where}.{field}: expected a list of numbers")
    return tuple(float(v) for v in x)


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario: experiment kind plus model/run blocks."""

    kind: str
    seed: int
    chain: model.SpinChainParams
    bath: model.BathParams
    coupling: model.CouplingSpec | None
    drive: model.CouplingSpec | None
    relaxer: model.CouplingSpec | None
    run: dict
    sha256: str


def _coupling_block(table: dict, where: str) -> model.CouplingSpec:
    jx_c = _number(table, "jx_c", where)
    jy_c = _number(table, "jy_c", where)
    site = table.get("site", 1)
    if isinstance(site, bool) or not isinstance(site, int) or site < 1:
        raise SchemaError(f"{where}.site: expected a positive integer")
    tau = _number(table, "tau", where, positive=True)
    return model.CouplingSpec(jx_c=jx_c, jy_c=jy_c, site=site, tau=tau)


def load_config(path: str | Path) -> ScenarioConfig:
    """Parse and schema-check one scenario file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read scenario file ({exc})") from exc
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise SchemaError(f"{path}: not valid TOML ({exc})") from exc

    kind = _require(doc, "kind", str(path))
    if kind not in KINDS:
        raise SchemaError(f"kind: expected one of {KINDS}, got {kind!r}")
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise SchemaError("seed: expected an integer")

    m = _require(doc, "model", str(path))
    if not isinstance(m, dict):
        raise SchemaError("model: expected a table")
    sites = _integer(m, "sites", "model", minimum=1)
    h = _number(m, "h", "model")
    beta = _number(m, "beta", "model", positive=True)
    jx = _float_list(m, "jx", "model")
    jy = _float_list(m, "jy", "model")
    h_b = float(m.get("h_b", h))
    try:
        chain = model.SpinChainParams(sites=sites, h=h, jx=jx, jy=jy)
        bath = model.BathParams(h_b=h_b, beta=beta)
    except QmapError as exc:
        raise SchemaError(f"model: {exc}") from exc

    coupling = drive = relaxer = None
    try:
        if kind == "cycle":
            drive = _coupling_block(_require(doc, "drive", str(path)), "drive")
            relaxer = _coupling_block(
                _require(doc, "relaxer", str(path)), "relaxer"
            )
        else:
            coupling = _coupling_block(
                _require(doc, "coupling", str(path)), "coupling"
            )
    except QmapError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(str(exc)) from exc

    run = doc.get("run", {})
    if not isinstance(run, dict):
        raise SchemaError("run: expected a table")
    if kind == "sequence":
        _integer(run, "steps", "run", minimum=0)
    elif kind == "cycle":
        if "relax_tol" in run:
            _number(run, "relax_tol", "run", positive=True)
        if "max_relaxers" in run:
            _integer(run, "max_relaxers", "run", minimum=1)
    elif kind == "lindblad":
        _number(run, "t", "run", positive=True)
        _number(run, "dt", "run", positive=True)
        taus = _float_list(run, "taus", "run")
        if any(t <= 0 for t in taus):
            raise SchemaError("run.taus: all entries must be > 0")
    elif kind == "single_map":
        init = run.get("init", "gibbs_hs")
        if init not in ("gibbs_hs", "gibbs_h0", "random"):
            raise SchemaError(
                "run.init: expected gibbs_hs | gibbs_h0 | random, "
                f"got {init!r}"
            )

    return ScenarioConfig(
        kind=kind,
        seed=seed,
        chain=chain,
        bath=bath,
        coupling=coupling,
        drive=drive,
        relaxer=relaxer,
        run=run,
        sha256=hashlib.sha256(raw).hexdigest(),
    )


# ---------------------------------------------------------------- artifacts

def _write_csv(path: Path, header: str, rows: list[str], sha: str) -> None:
    lines = [f"# config_sha256={sha}", header]
    lines.extend(rows)
    path.write_text("\n".join(lines) + "\n")


def _write_distribution(path: Path, dist: trajectories.Distribution,
                        sha: str) -> None:
    _write_csv(path, "value,probability", dist.csv_rows(), sha)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def _write_summary(path: Path, summary: dict) -> None:
    path.write_text(
        json.dumps(_plain(summary), indent=2, sort_keys=True) + "\n"
    )


def _map_spec(cfg: ScenarioConfig,
              coupling: model.CouplingSpec) -> MapSpec:
    return MapSpec(
        h_s=model.build_chain(cfg.chain),
        h_b=model.build_bath(cfg.bath),
        v=model.build_coupling(coupling, cfg.chain.sites),
        tau=coupling.tau,
        beta=cfg.bath.beta,
    )


def _initial_state(cfg: ScenarioConfig, spec: MapSpec) -> np.ndarray:
    init = cfg.run.get("init", "gibbs_hs")
    if init == "gibbs_hs":
        return model.gibbs_state(spec.h_s, spec.beta)
    if init == "gibbs_h0":
        return model.gibbs_state(model.build_h0(cfg.chain), spec.beta)
    rng = np.random.default_rng(cfg.seed)
    d = spec.dim_s
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def _run_single_map(cfg: ScenarioConfig, outdir: Path) -> dict:
    spec = _map_spec(cfg, cfg.coupling)
    rho0 = _initial_state(cfg, spec)
    kset = kraus_from_dilation(spec)
    rec = thermo.process_averages(spec, rho0)
    pi = invariant_state(kset, rho0)
    h0 = model.build_h0(cfg.chain)
    cls = classify_map(spec, pi, h0_candidate=h0)
    _write_csv(outdir / "thermo.csv", "step,dE,Q,W,dS,dSi",
               [rec.csv_row(1)], cfg.sha256)
    first_law = abs(rec.de - rec.w - rec.q)
    return {
        "kind": "single_map",
        "classification": cls.kind.name,
        "entropy_production_at_invariant": cls.entropy_production,
        "checks": {
            "first_law_residual": first_law,
            "kraus_completeness_residual": kset.completeness_residual(),
            "entropy_production_nonnegative": rec.dsi >= -1e-9,
        },
        "passed": first_law < 1e-9 and rec.dsi >= -1e-9,
    }


def _run_sequence(cfg: ScenarioConfig, outdir: Path) -> dict:
    steps = cfg.run["steps"]
    if steps == 0:
        _write_csv(outdir / "staircase.csv",
                   "step,hs_distance,W_cum,Q_cum,dSi_cum", [], cfg.sha256)
        return {"kind": "sequence", "steps": 0, "passed": True}
    spec = _map_spec(cfg, cfg.coupling)
    rho0 = model.gibbs_state(spec.h_s, spec.beta)
    kset = kraus_from_dilation(spec)
    pi = invariant_state(kset, rho0)
    seq = concat.MapSequence(steps=(spec,) * steps)
    results = concat.run_sequence(seq, rho0)
    rows = []
    for n, sr in enumerate(results, start=1):
        d = linalg.hs_distance(sr.state, pi)
        c = sr.cumulative
        rows.append(
            f"{n},{d:.12e},{c.w:.12e},{c.q:.12e},{c.dsi:.12e}"
        )
    _write_csv(outdir / "staircase.csv",
               "step,hs_distance,W_cum,Q_cum,dSi_cum", rows, cfg.sha256)
    summary: dict = {"kind": "sequence", "steps": steps}
    h0 = model.build_h0(cfg.chain)
    cls = classify_map(spec, pi, h0_candidate=h0)
    summary["classification"] = cls.kind.name
    cum = results[-1].cumulative
    if cfg.chain.is_xx:
        # closed-form asymptotics for the map with equilibrium state
        omega0 = model.gibbs_state(h0, spec.beta)
        h_i = spec.h_s - h0
        w_inf = -float(np.trace(h_i @ rho0).real)
        q_inf = float(np.trace(h0 @ (omega0 - rho0)).real)
        si_inf = linalg.rel_entropy(rho0, omega0)
        summary["asymptote_residuals"] = {
            "W": abs(cum.w - w_inf),
            "Q": abs(cum.q - q_inf),
            "dSi": abs(cum.dsi - si_inf),
        }
        summary["passed"] = all(
            r < 1e-6 for r in summary["asymptote_residuals"].values()
        )
    else:
        # steady-state records become constant once the state reaches it
        last, prev = results[-1].record, results[-2].record
        drift = max(
            abs(last.w - prev.w), abs(last.q - prev.q),
            abs(last.dsi - prev.dsi),
        )
        summary["steady_record_drift"] = drift
        summary["steady_entropy_rate"] = last.dsi
        summary["passed"] = drift < 1e-8 and last.dsi > 1e-4
    return summary


def _run_cycle(cfg: ScenarioConfig, outdir: Path) -> dict:
    drive = _map_spec(cfg, cfg.drive)
    relaxer = _map_spec(cfg, cfg.relaxer)
    tol = float(cfg.run.get("relax_tol", 1e-11))
    max_relaxers = int(cfg.run.get("max_relaxers", 64))
    plan = concat.plan_relaxers(drive, relaxer, tol=tol,
                                max_steps=max_relaxers)
    res = concat.run_cycle(plan)
    rows = []
    omega = model.gibbs_state(drive.h_s, drive.beta)
    for n, sr in enumerate(res.steps, start=1):
        d = linalg.hs_distance(sr.state, omega)
        c = sr.cumulative
        rows.append(f"{n},{d:.12e},{c.w:.12e},{c.q:.12e},{c.dsi:.12e}")
    _write_csv(outdir / "staircase.csv",
               "step,hs_distance,W_cum,Q_cum,dSi_cum", rows, cfg.sha256)
    _write_distribution(outdir / "p_cycle_w.csv", res.p_cycle_w, cfg.sha256)
    _write_distribution(outdir / "p_drive_w.csv", res.p_drive_w, cfg.sha256)
    _write_distribution(outdir / "p_cycle_dsi.csv", res.p_cycle_dsi,
                        cfg.sha256)
    _write_distribution(outdir / "p_drive_dsi.csv", res.p_drive_dsi,
                        cfg.sha256)
    beta = drive.beta
    work_match = trajectories.max_atom_difference(res.p_cycle_w, res.p_drive_w)
    # residual thermalization shifts the surprisal atoms, so the scaled-work
    # comparison is binned two decades above the relaxation tolerance
    scaled = trajectories.Distribution.from_atoms(
        beta * res.p_cycle_w.values, res.p_cycle_w.probs, bin_tol=1e-5
    )
    rebinned = trajectories.Distribution.from_atoms(
        res.p_cycle_dsi.values, res.p_cycle_dsi.probs, bin_tol=1e-5
    )
    scaled_match = trajectories.max_atom_difference(scaled, rebinned)
    dsi_work = abs(res.total.dsi - beta * res.drive_record.w)
    dsi_differ = trajectories.max_atom_difference(
        res.p_drive_dsi, res.p_cycle_dsi
    )
    checks = {
        "thermalized_distance": res.final_distance,
        "p_cycle_w_vs_p_drive_w": work_match,
        "p_cycle_scaled_w_vs_p_cycle_dsi": scaled_match,
        "total_dsi_vs_beta_drive_work": dsi_work,
        "p_drive_dsi_vs_p_cycle_dsi": dsi_differ,
    }
    passed = (
        res.final_distance < 1e-5
        and work_match < 1e-10
        and scaled_match < 1e-8
        and dsi_work < 1e-8
        and dsi_differ > 1e-6
    )
    return {
        "kind": "cycle",
        "relaxer_steps": len(plan.relaxers),
        "drive_work": res.drive_record.w,
        "total_dsi": res.total.dsi,
        "checks": checks,
        "passed": passed,
    }


def _run_ft_check(cfg: ScenarioConfig, outdir: Path) -> dict:
    spec = _map_spec(cfg, cfg.coupling)
    kset = kraus_from_dilation(spec)
    theta = trajectories.spin_time_reversal(cfg.chain.sites)
    report = trajectories.crooks_check(spec, theta, kraus=kset)
    basis = trajectories.MeasurementBasis.from_observable(spec.h_s, "H_S")
    rho0 = model.gibbs_state(spec.h_s, spec.beta)
    fwd = trajectories.enumerate_trajectories(
        spec, basis, basis, rho0, kraus=kset
    )
    bwd = trajectories.backward_ensemble(
        spec, theta, basis, basis, rho0, kraus=kset
    )
    detailed = trajectories.detailed_ft_check(fwd, bwd)
    integral = abs(trajectories.integral_ft(fwd) - 1.0)
    p_w = trajectories.distribution_of(fwd, "w")
    p_w_back = trajectories.distribution_of(
        [r for r in bwd], "w"
    )
    _write_distribution(outdir / "p_forward_w.csv", p_w, cfg.sha256)
    _write_distribution(outdir / "p_backward_w.csv", p_w_back, cfg.sha256)
    checks = {
        "crooks_max_residual": report.max_residual,
        "missing_mirror_atoms": len(report.missing_mirrors),
        "forward_backward_work_match": report.backward_match_residual,
        "detailed_ft_max_residual": detailed,
        "integral_ft_residual": integral,
    }
    passed = (
        report.max_residual < 1e-8
        and not report.missing_mirrors
        and report.backward_match_residual < 1e-9
        and detailed < 1e-8
        and integral < 1e-8
    )
    return {"kind": "ft_check", "checks": checks, "passed": passed}


def _run_lindblad(cfg: ScenarioConfig, outdir: Path) -> dict:
    h_s = model.build_chain(cfg.chain)
    h_b = model.build_bath(cfg.bath)
    v = model.build_coupling(cfg.coupling, cfg.chain.sites)
    beta = cfg.bath.beta
    gen = lindblad.generator_from_coupling(v, h_s, h_b, beta)
    rho0 = model.gibbs_state(h_s, beta)
    t = float(cfg.run["t"])
    dt = float(cfg.run["dt"])
    sample = int(cfg.run.get("sample_every", max(1, int(round(t / dt)) // 200)))
    traj = lindblad.integrate(gen, rho0, t=t, dt=dt, sample_every=sample)
    steady = traj.states[-1]
    rows = []
    for i, ti in enumerate(traj.times):
        r = traj.rate_records[i]
        d = linalg.hs_distance(traj.states[i], steady)
        rows.append(
            f"{ti:.12e},{r.q_dot:.12e},{r.w_dot:.12e},{r.si_dot:.12e},"
            f"{traj.w_cum[i]:.12e},{traj.q_cum[i]:.12e},"
            f"{traj.si_cum[i]:.12e},{d:.12e}"
        )
    _write_csv(outdir / "timeseries.csv",
               "t,Q_dot,W_dot,Si_dot,W_cum,Q_cum,Si_cum,hs_to_steady",
               rows, cfg.sha256)
    h0 = model.build_h0(cfg.chain)
    balance = lindblad.detailed_balance_check(gen, h0, beta)
    summary: dict = {
        "kind": "lindblad",
        "detailed_balance": balance.passed,
        "steady_entropy_rate": traj.rate_records[-1].si_dot,
    }
    taus = list(cfg.run.get("taus", []))
    passed = True
    if taus:
        table = lindblad.convergence_check(
            v, h_s, h_b, beta, rho0, t=float(cfg.run.get("t_conv", 2.0)),
            taus=taus, dt=dt,
        )
        order = table.empirical_order()
        rows = [
            f"{row.tau:.12e},{row.error:.12e},{row.order_estimate:.12e}"
            for row in table.rows
        ]
        _write_csv(outdir / "convergence.csv", "tau,error,order_estimate",
                   rows, cfg.sha256)
        summary["convergence_order"] = order
        summary["convergence_monotone"] = table.monotone
        passed = order >= 0.9 and table.monotone
    if cfg.chain.is_xx:
        omega0 = model.gibbs_state(h0, beta)
        w_pred = float(np.trace((h_s - h0) @ (omega0 - rho0)).real)
        resid = abs(traj.w_cum[-1] - w_pred)
        summary["relaxation_work_residual"] = resid
        passed = passed and resid < 1e-6 and balance.passed
    else:
        passed = passed and not balance.passed
    summary["passed"] = passed
    return summary


_RUNNERS = {
    "single_map": _run_single_map,
    "sequence": _run_sequence,
    "cycle": _run_cycle,
    "ft_check": _run_ft_check,
    "lindblad": _run_lindblad,
}


# ---------------------------------------------------------------- commands

def run(config_path: str | Path, out: str | Path | None = None,
        strict: bool = False) -> int:
    """Execute one scenario; returns the process exit code."""
    try:
        cfg = load_config(config_path)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    outdir = Path(out) if out is not None else (
        Path.cwd() / "qmap-out" / Path(config_path).stem
    )
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"schema error: output directory not writable ({exc})",
              file=sys.stderr)
        return 2
    try:
        summary = _RUNNERS[cfg.kind](cfg, outdir)
    except QmapError as exc:
        print(f"engine error: {exc}", file=sys.stderr)
        return 3
    summary["config_sha256"] = cfg.sha256
    _write_summary(outdir / "summary.json", summary)
    print(f"{Path(config_path).name}: "
          f"{'pass' if summary.get('passed', True) else 'FAIL'} "
          f"-> {outdir}")
    if strict and not summary.get("passed", True):
        return 4
    return 0


def validate(config_path: str | Path) -> int:
    """Schema-check one scenario without running the engine."""
    try:
        cfg = load_config(config_path)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    print(f"{Path(config_path).name}: ok (kind={cfg.kind}, "
          f"sites={cfg.chain.sites}, beta={cfg.bath.beta})")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="qmap",
        description="Collision-map thermodynamics scenario runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a scenario and emit artifacts")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--strict", action="store_true",
                       help="exit 4 when a scenario invariant fails")
    p_val = sub.add_parser("validate", help="schema-check a scenario")
    p_val.add_argument("scenario")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.scenario, out=args.out, strict=args.strict)
    return validate(args.scenario)


if __name__ == "__main__":
    sys.exit(main())
