"""Exact two-point-measurement trajectory ensembles for a single map:
stochastic energy/heat/work/entropy bookkeeping, value distributions,
time-reversed ensembles and fluctuation-theorem checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import linalg, model
from .cptpmap import KrausOperator, KrausSet, MapSpec, apply_map, kraus_from_dilation
from .errors import ContractError, IntegrityError

DEG_TOL = 1e-9  # eigenvalue grouping tolerance for measured observables
BIN_TOL = 1e-9  # distribution atom merging tolerance
P_FLOOR = 1e-12  # probabilities below this are ignored in FT ratios


@dataclass(frozen=True)
class MeasurementBasis:
    """Projective measurement of a Hermitian observable, outcomes grouped by
    eigenvalue within DEG_TOL."""

    label: str
    eigenvalues: np.ndarray
    projectors: tuple[np.ndarray, ...]
    # orthonormal columns spanning each outcome eigenspace; kept alongside the
    # projectors so states can be restricted to an outcome without numerical
    # leakage out of the eigenspace
    frames: tuple[np.ndarray, ...]

    @classmethod
    def from_observable(cls, obs, label: str, deg_tol: float = DEG_TOL):
        w, v = linalg.hermitian_eig(obs)
        groups: list[list[int]] = [[0]]
        for idx in range(1, len(w)):
            if w[idx] - w[groups[-1][0]] <= deg_tol:
                groups[-1].append(idx)
            else:
                groups.append([idx])
        vals = np.array([np.mean(w[g]) for g in groups])
        frames = tuple(v[:, g] for g in groups)
        projs = tuple(f @ f.conj().T for f in frames)
        basis = cls(label, vals, projs, frames)
        comp = sum(projs)
        if np.max(np.abs(comp - np.eye(obs.shape[0]))) > 1e-10:
            raise ContractError("MeasurementBasis: projectors are not complete")
        return basis

    @property
    def degenerate(self) -> bool:
        return any(np.trace(p).real > 1.5 for p in self.projectors)

    def dephase(self, rho) -> np.ndarray:
        return sum(p @ rho @ p for p in self.projectors)

    def outcome_probs(self, rho) -> np.ndarray:
        return np.array([np.trace(p @ rho).real for p in self.projectors])


@dataclass(frozen=True)
class TrajectoryRecord:
    """One trajectory gamma = {n, (i_1,j_1)..(i_N,j_N), m} with its probability
    and stochastic thermodynamic quantities."""

    n: int
    transitions: tuple[tuple[int, int], ...]
    m: int
    p: float
    de: float
    q: float
    w: float
    ds: float
    dsi: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n,
                "transitions": [list(t) for t in self.transitions],
                "m": self.m,
                "p": self.p,
                "de": self.de,
                "q": self.q,
                "w": self.w,
                "ds": self.ds,
                "dsi": self.dsi,
            }
        )


@dataclass(frozen=True)
class Distribution:
    """Finite atomic distribution; atoms merged within bin_tol."""

    values: np.ndarray
    probs: np.ndarray
    bin_tol: float = BIN_TOL

    @classmethod
    def from_atoms(cls, values, probs, bin_tol: float = BIN_TOL,
                   check_normalization: bool = True):
        values = np.asarray(values, dtype=float)
        probs = np.asarray(probs, dtype=float)
        order = np.argsort(values)
        values, probs = values[order], probs[order]
        merged_v: list[float] = []
        merged_p: list[float] = []
        for v, p in zip(values, probs):
            if merged_v and v - merged_v[-1] <= bin_tol:
                tot = merged_p[-1] + p
                if tot > 0:
                    merged_v[-1] = (merged_v[-1] * merged_p[-1] + v * p) / tot
                merged_p[-1] = tot
            else:
                merged_v.append(float(v))
                merged_p.append(float(p))
        total = sum(merged_p)
        if check_normalization and abs(total - 1.0) > 1e-10:
            raise IntegrityError(f"Distribution: total probability {total} != 1")
        return cls(np.array(merged_v), np.array(merged_p), bin_tol)

    def prob_at(self, value: float, tol: float | None = None) -> float:
        tol = self.bin_tol if tol is None else tol
        hit = np.abs(self.values - value) <= tol
        return float(self.probs[hit].sum())

    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def significant(self, floor: float = P_FLOOR):
        keep = self.probs > floor
        return self.values[keep], self.probs[keep]

    def csv_rows(self):
        return [f"{v:.12e},{p:.12e}" for v, p in zip(self.values, self.probs)]


def max_atom_difference(a: Distribution, b: Distribution,
                        floor: float = P_FLOOR) -> float:
    """Largest probability mismatch over the union of significant atoms."""
    diff = 0.0
    for dist, other in ((a, b), (b, a)):
        vals, probs = dist.significant(floor)
        for v, p in zip(vals, probs):
            diff = max(diff, abs(p - other.prob_at(v)))
    return diff


def _frame_projection(frame, rho) -> np.ndarray:
    """P rho P computed through the eigenspace frame V as V (V^dag rho V) V^dag.

    Sandwiching an O(1) dense state with the dense projector leaves ~1e-16
    absolute noise outside the eigenspace; for exponentially small populations
    that tilt dominates the relative error of trajectory probabilities. The
    frame form keeps the support exactly inside span(V).
    """
    block = linalg.hermitize(frame.conj().T @ rho @ frame)
    w, v = np.linalg.eigh(block)
    w = np.clip(w, 0.0, None)
    cols = frame @ v
    return (cols * w) @ cols.conj().T


def _enumerate_core(kraus: KrausSet, a_basis: MeasurementBasis,
                    b_basis: MeasurementBasis, rho_s, beta: float,
                    sigmas=None):
    rho_s = linalg.as_matrix(rho_s)
    if sigmas is None:
        sigmas = [_frame_projection(f, rho_s) for f in a_basis.frames]
    p_init = np.array([max(np.trace(s).real, 0.0) for s in sigmas])
    rho_bar = sum(sigmas)
    rho_out = apply_map(kraus, rho_bar)
    p_fin = np.clip(b_basis.outcome_probs(rho_out), 0.0, None)
    log_pi = np.log(np.maximum(p_init, 1e-300))
    log_pf = np.log(np.maximum(p_fin, 1e-300))
    records = []
    for n, sigma in enumerate(sigmas):
        for op in kraus.operators:
            t = op.op @ sigma @ op.op.conj().T
            q = op.eps_i - op.eps_j
            for m, proj in enumerate(b_basis.projectors):
                p = max(np.trace(proj @ t).real, 0.0)
                de = float(b_basis.eigenvalues[m] - a_basis.eigenvalues[n])
                if p > 0.0:
                    ds = float(log_pi[n] - log_pf[m])
                else:
                    ds = 0.0
                records.append(
                    TrajectoryRecord(
                        n=n,
                        transitions=((op.i, op.j),),
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
        raise IntegrityError(f"trajectory ensemble normalization {total} != 1")
    return records


def enumerate_trajectories(
    spec: MapSpec,
    a_basis: MeasurementBasis,
    b_basis: MeasurementBasis,
    rho_s,
    kraus: KrausSet | None = None,
) -> list[TrajectoryRecord]:
    """All trajectories of one map application, with exact probabilities."""
    if kraus is None:
        kraus = kraus_from_dilation(spec)
    return _enumerate_core(kraus, a_basis, b_basis, rho_s, spec.beta)


def distribution_of(records, quantity: str, bin_tol: float = BIN_TOL) -> Distribution:
    """Atomic distribution of one of w|q|dsi|ds|de over an ensemble."""
    if quantity not in ("w", "q", "dsi", "ds", "de"):
        raise ContractError(f"distribution_of: unknown quantity {quantity!r}")
    values = [getattr(r, quantity) for r in records]
    probs = [r.p for r in records]
    return Distribution.from_atoms(values, probs, bin_tol)


def _simultaneous_eigenbasis(h_s, h0):
    """Common eigenbasis of commuting H_S and H_0; H_S eigenvalue groups are
    sub-diagonalized by H_0."""
    w, v = linalg.hermitian_eig(h_s)
    start = 0
    while start < len(w):
        stop = start + 1
        while stop < len(w) and w[stop] - w[start] <= DEG_TOL:
            stop += 1
        if stop - start > 1:
            block = v[:, start:stop]
            sub = block.conj().T @ h0 @ block
            _, u = linalg.hermitian_eig(linalg.hermitize(sub))
            v[:, start:stop] = block @ u
        start = stop
    eps0 = np.einsum("ij,jk,ki->i", v.conj().T, h0, v).real
    return w, eps0, v


def equilibrium_work_distribution(
    spec: MapSpec, h0, rho_bar, kraus: KrausSet | None = None
) -> Distribution:
    """Work distribution from system quantities only, for maps with an
    equilibrium certificate and [H_0, H_S] = 0."""
    h0 = linalg.as_matrix(h0)
    comm = np.max(np.abs(h0 @ spec.h_s - spec.h_s @ h0))
    if comm > 1e-10:
        raise ContractError(
            f"equilibrium_work_distribution: [H_0, H_S] residual {comm:.3e}"
        )
    from .cptpmap import commutes_with_dilation

    res = commutes_with_dilation(spec, h0)
    if res > 1e-9:
        raise ContractError(
            f"equilibrium_work_distribution: certificate residual {res:.3e}"
        )
    if kraus is None:
        kraus = kraus_from_dilation(spec)
    eps, eps0, v = _simultaneous_eigenbasis(spec.h_s, h0)
    rho_bar = linalg.as_matrix(rho_bar)
    p_init = np.einsum("ij,jk,ki->i", v.conj().T, rho_bar, v).real
    d = spec.dim_s
    values = []
    probs = []
    for n in range(d):
        proj_n = np.outer(v[:, n], v[:, n].conj())
        evolved = apply_map(kraus, proj_n)
        trans = np.einsum("ij,jk,ki->i", v.conj().T, evolved, v).real
        for m in range(d):
            values.append((eps[m] - eps0[m]) - (eps[n] - eps0[n]))
            probs.append(max(trans[m], 0.0) * max(p_init[n], 0.0))
    return Distribution.from_atoms(values, probs)


@dataclass(frozen=True)
class TimeReversal:
    """Antiunitary Theta = R K per factor (K is complex conjugation)."""

    r_s: np.ndarray
    r_b: np.ndarray

    @property
    def r_total(self) -> np.ndarray:
        return np.kron(self.r_s, self.r_b)

    def conjugate_system(self, x) -> np.ndarray:
        """Theta_S X Theta_S^dag for a system operator X."""
        return self.r_s @ np.conj(x) @ self.r_s.conj().T

    def squared_sign(self) -> np.ndarray:
        """Theta^2 = R conj(R); must be +-identity."""
        r = self.r_total
        return r @ np.conj(r)


def spin_time_reversal(n_system_spins: int) -> TimeReversal:
    """Per-spin rotation (i sx)(i sy) on every system spin and the bath spin."""
    r1 = (1j * model.SIGMA["x"]) @ (1j * model.SIGMA["y"])
    r_s = np.array([[1]], dtype=complex)
    for _ in range(n_system_spins):
        r_s = np.kron(r_s, r1)
    return TimeReversal(r_s=r_s, r_b=r1)


def micro_reversibility_residual(k: KrausSet, theta: TimeReversal) -> float:
    """|Theta U^dag Theta^dag - U| for a time-symmetric protocol."""
    r = theta.r_total
    u_rev = r @ k.unitary.T @ r.conj().T
    return float(np.max(np.abs(u_rev - k.unitary)))


def reversed_kraus(k: KrausSet, theta: TimeReversal) -> KrausSet:
    """Time-reversed Kraus set via micro-reversibility:
    Mtilde_ji = Theta_S e^{beta(eps_i - eps_j)/2} M_ij^dag Theta_S^dag."""
    res = micro_reversibility_residual(k, theta)
    if res > 1e-9:
        raise ContractError(
            f"reversed_kraus: time-symmetric reversal requested but the "
            f"micro-reversibility residual is {res:.3e}"
        )
    ops = []
    for op in k.operators:
        factor = np.exp(k.beta * (op.eps_i - op.eps_j) / 2)
        m_rev = factor * theta.conjugate_system(op.op.conj().T)
        ops.append(
            KrausOperator(
                op=m_rev,
                i=op.j,
                j=op.i,
                eps_i=op.eps_j,
                eps_j=op.eps_i,
                p_i=float(np.exp(-k.beta * op.eps_j) / k.z_bath),
            )
        )
    rev = KrausSet(
        operators=tuple(ops),
        dim_s=k.dim_s,
        beta=k.beta,
        z_bath=k.z_bath,
        bath_energies=k.bath_energies,
        unitary=k.unitary,
    )
    cres = rev.completeness_residual()
    if cres > 1e-10:
        raise IntegrityError(
            f"reversed_kraus: reversed set completeness residual {cres:.3e}"
        )
    return rev


def _reverse_basis(basis: MeasurementBasis, theta: TimeReversal) -> MeasurementBasis:
    frames = tuple(theta.r_s @ np.conj(f) for f in basis.frames)
    projs = tuple(f @ f.conj().T for f in frames)
    return MeasurementBasis(basis.label + "~", basis.eigenvalues, projs, frames)


def backward_ensemble(
    spec: MapSpec,
    theta: TimeReversal,
    a_basis: MeasurementBasis,
    b_basis: MeasurementBasis,
    rho_s,
    p_init_backward=None,
    kraus: KrausSet | None = None,
) -> list[TrajectoryRecord]:
    """Trajectory ensemble of the time-reversed process.

    The backward process starts from the Theta-rotated final basis of the
    forward process; by default its initial distribution is the forward final
    distribution. Record indices keep the forward labels, so the forward
    trajectory (n, (i,j), m) pairs with the backward (m, (j,i), n).
    """
    if kraus is None:
        kraus = kraus_from_dilation(spec)
    rev = reversed_kraus(kraus, theta)
    if p_init_backward is None:
        rho_bar = a_basis.dephase(linalg.as_matrix(rho_s))
        rho_out = apply_map(kraus, rho_bar)
        p_init_backward = np.clip(b_basis.outcome_probs(rho_out), 0.0, None)
    p_init_backward = np.asarray(p_init_backward, dtype=float)
    a_rev = _reverse_basis(b_basis, theta)
    b_rev = _reverse_basis(a_basis, theta)
    # build the projected blocks directly from the given populations so the
    # backward logs reuse the exact forward probability floats; re-projecting
    # a dense reconstruction would lose absolute ~1e-16 on tiny populations
    sigmas = [
        p * proj / np.trace(proj).real
        for p, proj in zip(p_init_backward, a_rev.projectors)
    ]
    rho_back = sum(sigmas)
    return _enumerate_core(rev, a_rev, b_rev, rho_back, spec.beta,
                           sigmas=sigmas)


def detailed_ft_check(forward_records, backward_records) -> float:
    """Max residual of ln p(gamma) - dsi_gamma - ln ptilde(gamma~) over paired
    trajectories with both probabilities above P_FLOOR."""
    back = {}
    for r in backward_records:
        back[(r.n, r.transitions, r.m)] = r.p
    worst = 0.0
    for r in forward_records:
        if r.p <= P_FLOOR:
            continue
        key = (r.m, tuple((j, i) for i, j in reversed(r.transitions)), r.n)
        p_back = back.get(key)
        if p_back is None or p_back <= P_FLOOR:
            raise IntegrityError(
                f"detailed_ft_check: forward trajectory {key} has no backward "
                "partner above the probability floor"
            )
        worst = max(worst, abs(np.log(r.p) - r.dsi - np.log(p_back)))
    return worst


def integral_ft(records) -> float:
    """<e^{-dsi}> over the ensemble (should be 1)."""
    return float(sum(r.p * np.exp(-r.dsi) for r in records if r.p > 0.0))


@dataclass(frozen=True)
class CrooksReport:
    work_values: np.ndarray
    work_probs: np.ndarray
    residuals: np.ndarray  # |ln p(w) - ln p(-w) - beta w| per significant atom
    missing_mirrors: tuple[float, ...]  # atoms without a significant -w partner
    backward_match_residual: float  # max |p(w) - ptilde(w)| over atoms

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals)) if len(self.residuals) else 0.0


def crooks_check(spec: MapSpec, theta: TimeReversal,
                 kraus: KrausSet | None = None) -> CrooksReport:
    """Work fluctuation relation p(w) = p(-w) e^{beta w} for a forward process
    that starts in the Gibbs state of H_S and measures H_S twice, plus the
    forward/backward work-distribution equality for time-reversal-invariant
    dynamics."""
    if kraus is None:
        kraus = kraus_from_dilation(spec)
    basis = MeasurementBasis.from_observable(spec.h_s, "H_S")
    rho0 = model.gibbs_state(spec.h_s, spec.beta)
    fwd = enumerate_trajectories(spec, basis, basis, rho0, kraus=kraus)
    p_w = distribution_of(fwd, "w")
    vals, probs = p_w.significant()
    residuals = []
    missing = []
    for v, p in zip(vals, probs):
        p_mirror = p_w.prob_at(-v)
        if p_mirror <= P_FLOOR:
            missing.append(float(v))
            continue
        residuals.append(abs(np.log(p) - np.log(p_mirror) - spec.beta * v))
    # canonical initial distribution for the backward process, grouped like the
    # measurement outcomes
    p_canon = basis.outcome_probs(rho0)
    bwd = backward_ensemble(spec, theta, basis, basis, rho0,
                            p_init_backward=p_canon, kraus=kraus)
    p_w_back = distribution_of(bwd, "w")
    back_res = max_atom_difference(p_w, p_w_back)
    return CrooksReport(
        work_values=vals,
        work_probs=probs,
        residuals=np.array(residuals),
        missing_mirrors=tuple(missing),
        backward_match_residual=back_res,
    )
