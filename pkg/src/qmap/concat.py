"""Sequences of maps with fresh bath copies: joint trajectory ensembles,
cumulative thermodynamics and the drive+relax thermodynamic cycle.

Fresh-bath semantics are realized by composing Kraus operators on the system
space only; the exponential joint bath space is never materialized here.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import linalg, model, thermo
from .cptpmap import KrausSet, MapSpec, apply_map, commutes_with_dilation, kraus_from_dilation
from .errors import CapacityError, ContractError, ConvergenceError
from .trajectories import (
    Distribution,
    MeasurementBasis,
    TrajectoryRecord,
    distribution_of,
)

RECORD_BUDGET = 10_000_000
RELAX_TOL = 1e-5  # Hilbert-Schmidt distance threshold for thermalization


@dataclass(frozen=True)
class MapSequence:
    """Ordered collisions, each with its own fresh bath copy; shared beta."""

    steps: tuple[MapSpec, ...]

    def __post_init__(self):
        steps = tuple(self.steps)
        if not steps:
            raise ContractError("MapSequence: at least one step required")
        dim = steps[0].dim_s
        beta = steps[0].beta
        for s in steps:
            if s.dim_s != dim:
                raise ContractError("MapSequence: steps differ in system dimension")
            if abs(s.beta - beta) > 1e-14:
                raise ContractError("MapSequence: steps differ in beta")
        object.__setattr__(self, "steps", steps)

    @property
    def beta(self) -> float:
        return self.steps[0].beta

    @property
    def dim_s(self) -> int:
        return self.steps[0].dim_s

    @cached_property
    def kraus(self) -> tuple[KrausSet, ...]:
        return tuple(kraus_from_dilation(s) for s in self.steps)


@dataclass(frozen=True)
class StepResult:
    state: np.ndarray
    record: thermo.ThermoRecord
    cumulative: thermo.ThermoRecord


def run_sequence(seq: MapSequence, rho0) -> list[StepResult]:
    """Evolve through the sequence, collecting per-step and cumulative
    thermodynamic records."""
    rho = linalg.as_matrix(rho0)
    out = []
    cum = thermo.ZERO_RECORD
    for spec, kset in zip(seq.steps, seq.kraus):
        rec = thermo.process_averages(spec, rho)
        rho = apply_map(kset, rho)
        cum = cum + rec
        out.append(StepResult(state=rho, record=rec, cumulative=cum))
    return out


def enumerate_sequence(
    seq: MapSequence,
    a_basis: MeasurementBasis,
    b_basis: MeasurementBasis,
    rho0,
    budget: int = RECORD_BUDGET,
) -> list[TrajectoryRecord]:
    """Exact joint trajectory ensemble over all per-step bath transitions."""
    count = len(a_basis.projectors) * len(b_basis.projectors)
    for kset in seq.kraus:
        count *= len(kset.operators)
    if count > budget:
        raise CapacityError(
            f"enumerate_sequence: {count} trajectories exceed the budget {budget}"
        )
    rho0 = linalg.as_matrix(rho0)
    from .trajectories import _frame_projection

    sigmas = [_frame_projection(f, rho0) for f in a_basis.frames]
    rho_fin = sum(sigmas)
    for kset in seq.kraus:
        rho_fin = apply_map(kset, rho_fin)
    p_init = np.array([max(np.trace(s).real, 0.0) for s in sigmas])
    p_fin = np.clip(b_basis.outcome_probs(rho_fin), 0.0, None)
    log_pi = np.log(np.maximum(p_init, 1e-300))
    log_pf = np.log(np.maximum(p_fin, 1e-300))
    beta = seq.beta
    records = []
    for n, sigma_n in enumerate(sigmas):
        # branch over Kraus chains; each branch carries the conditional
        # (unnormalized) system state and the accumulated bath heat
        branches = [(sigma_n, (), 0.0)]
        for kset in seq.kraus:
            nxt = []
            for x, trans, q in branches:
                for op in kset.operators:
                    nxt.append(
                        (
                            op.op @ x @ op.op.conj().T,
                            trans + ((op.i, op.j),),
                            q + (op.eps_i - op.eps_j),
                        )
                    )
            branches = nxt
        for x, trans, q in branches:
            for m, proj_m in enumerate(b_basis.projectors):
                p = max(np.trace(proj_m @ x).real, 0.0)
                de = float(b_basis.eigenvalues[m] - a_basis.eigenvalues[n])
                ds = float(log_pi[n] - log_pf[m]) if p > 0.0 else 0.0
                records.append(
                    TrajectoryRecord(
                        n=n,
                        transitions=trans,
                        m=m,
                        p=p,
                        de=de,
                        q=q,
                        w=de - q,
                        ds=ds,
                        dsi=ds - beta * q,
                    )
                )
    total = sum(r.p for r in records)
    if abs(total - 1.0) > 1e-10:
        raise ContractError(f"enumerate_sequence: normalization {total} != 1")
    return records


@dataclass(frozen=True)
class CycleSpec:
    """A driving map followed by thermal relaxers back to the Gibbs state."""

    drive: MapSpec
    relaxers: tuple[MapSpec, ...]
    tol: float = RELAX_TOL

    def __post_init__(self):
        object.__setattr__(self, "relaxers", tuple(self.relaxers))
        for r in self.relaxers:
            res = commutes_with_dilation(r, r.h_s)
            if res > 1e-9:
                raise ContractError(
                    f"CycleSpec: relaxer is not thermal (residual {res:.3e})"
                )


def plan_relaxers(drive: MapSpec, relaxer: MapSpec, tol: float = RELAX_TOL,
                  max_steps: int = 64) -> CycleSpec:
    """Repeat the relaxer until the post-drive state returns to the Gibbs
    state within tol (Hilbert-Schmidt distance)."""
    omega = model.gibbs_state(drive.h_s, drive.beta)
    kd = kraus_from_dilation(drive)
    kr = kraus_from_dilation(relaxer)
    rho = apply_map(kd, omega)
    for n in range(1, max_steps + 1):
        rho = apply_map(kr, rho)
        if linalg.hs_distance(rho, omega) < tol:
            return CycleSpec(drive=drive, relaxers=(relaxer,) * n, tol=tol)
    raise ConvergenceError(
        f"plan_relaxers: no thermalization to {tol} within {max_steps} relaxers",
        residual=linalg.hs_distance(rho, omega),
    )


@dataclass(frozen=True)
class CycleResult:
    steps: list[StepResult]
    total: thermo.ThermoRecord
    drive_record: thermo.ThermoRecord
    final_distance: float
    p_cycle_w: Distribution
    p_drive_w: Distribution
    p_cycle_dsi: Distribution
    p_drive_dsi: Distribution


def run_cycle(c: CycleSpec) -> CycleResult:
    """Run the thermodynamic cycle from the Gibbs state of H_S and collect the
    cycle/drive work and entropy-production distributions."""
    beta = c.drive.beta
    omega = model.gibbs_state(c.drive.h_s, beta)
    seq = MapSequence(steps=(c.drive,) + c.relaxers)
    steps = run_sequence(seq, omega)
    final = steps[-1].state
    dist = linalg.hs_distance(final, omega)
    if dist > c.tol:
        raise ConvergenceError(
            f"run_cycle: relaxation incomplete, distance {dist:.3e} > {c.tol}",
            residual=dist,
        )
    energy_basis = MeasurementBasis.from_observable(c.drive.h_s, "H_S")
    drive_seq = MapSequence(steps=(c.drive,))
    cycle_recs_w = enumerate_sequence(seq, energy_basis, energy_basis, omega)
    drive_recs_w = enumerate_sequence(drive_seq, energy_basis, energy_basis, omega)
    p_cycle_w = distribution_of(cycle_recs_w, "w")
    p_drive_w = distribution_of(drive_recs_w, "w")
    # entropy-production ensembles measure the initial/final density matrices
    a_rho = MeasurementBasis.from_observable(omega, "rho_S")
    b_cycle = MeasurementBasis.from_observable(linalg.hermitize(final), "rho_S'")
    rho_drive = steps[0].state
    b_drive = MeasurementBasis.from_observable(linalg.hermitize(rho_drive), "rho_S'")
    cycle_recs_s = enumerate_sequence(seq, a_rho, b_cycle, omega)
    drive_recs_s = enumerate_sequence(drive_seq, a_rho, b_drive, omega)
    p_cycle_dsi = distribution_of(cycle_recs_s, "dsi")
    p_drive_dsi = distribution_of(drive_recs_s, "dsi")
    return CycleResult(
        steps=steps,
        total=steps[-1].cumulative,
        drive_record=steps[0].record,
        final_distance=dist,
        p_cycle_w=p_cycle_w,
        p_drive_w=p_drive_w,
        p_cycle_dsi=p_cycle_dsi,
        p_drive_dsi=p_drive_dsi,
    )
