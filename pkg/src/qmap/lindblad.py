"""Repeated-interaction continuous-time limit: GKLS generator extracted from
the scaled coupling v (V = v/sqrt(tau)), master-equation integration with
thermodynamic rates, quantum detailed balance tests, and convergence of map
concatenations to the flow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg, model
from .cptpmap import MapSpec, apply_map, kraus_from_dilation
from .errors import ContractError, PositivityError

PRUNE_TOL = 1e-13  # channels with ||L_r|| below this are dropped


@dataclass(frozen=True)
class LindbladChannel:
    """One i <= j bath-transition channel of the dissipator."""

    l_op: np.ndarray
    gamma: float
    omega: float  # e^{beta (eps_j - eps_i)}
    eps_i: float
    eps_j: float
    i: int
    j: int


@dataclass(frozen=True)
class LindbladGenerator:
    h_s: np.ndarray
    channels: tuple[LindbladChannel, ...]
    beta: float

    def dissipator(self, rho) -> np.ndarray:
        out = np.zeros_like(self.h_s)
        for c in self.channels:
            l, ld = c.l_op, c.l_op.conj().T
            ll = ld @ l
            out += c.gamma * (l @ rho @ ld - 0.5 * (ll @ rho + rho @ ll))
            llr = l @ ld
            out += (c.gamma / c.omega) * (
                ld @ rho @ l - 0.5 * (llr @ rho + rho @ llr)
            )
        return out

    def apply(self, rho) -> np.ndarray:
        h = self.h_s
        return -1j * (h @ rho - rho @ h) + self.dissipator(rho)

    def heat_rate(self, rho) -> float:
        """dQ/dt from the bath-energy bookkeeping of the channels."""
        acc = 0.0
        for c in self.channels:
            l, ld = c.l_op, c.l_op.conj().T
            t_down = np.trace(l @ rho @ ld).real
            t_down_n = np.trace(ld @ l @ rho).real
            t_up = np.trace(ld @ rho @ l).real
            t_up_n = np.trace(l @ ld @ rho).real
            acc += c.gamma * (c.eps_j * t_down - c.eps_i * t_down_n)
            acc += (c.gamma / c.omega) * (c.eps_i * t_up - c.eps_j * t_up_n)
        return -acc

    def norm_bound(self) -> float:
        """Crude bound on the generator's action norm, for step-size checks."""
        b = 2 * np.linalg.norm(self.h_s, 2)
        for c in self.channels:
            b += 2 * c.gamma * (1 + 1 / c.omega) * np.linalg.norm(c.l_op, 2) ** 2
        return float(b)


@dataclass(frozen=True)
class RateRecord:
    q_dot: float
    w_dot: float
    si_dot: float


def generator_from_coupling(v, h_s, h_b, beta: float) -> LindbladGenerator:
    """Channels L_ij = <j|v|i> over bath transitions i <= j, with weights
    gamma_r = e^{-beta eps_i}/Z_B (halved on the diagonal) and
    omega_r = e^{beta (eps_j - eps_i)}."""
    v = linalg.as_matrix(v)
    h_s = linalg.as_matrix(h_s)
    h_b = linalg.as_matrix(h_b)
    if not linalg.is_hermitian(v):
        raise ContractError("generator_from_coupling: v is not Hermitian")
    d_s, d_b = h_s.shape[0], h_b.shape[0]
    if v.shape[0] != d_s * d_b:
        raise ContractError("generator_from_coupling: dim(v) != dim_s * dim_b")
    w_b, v_b = linalg.hermitian_eig(h_b)
    rot = np.kron(np.eye(d_s), v_b)
    v_eig = rot.conj().T @ v @ rot
    blocks = v_eig.reshape(d_s, d_b, d_s, d_b)
    z_b = float(np.sum(np.exp(-beta * w_b)))
    channels = []
    for i in range(d_b):
        p_i = np.exp(-beta * w_b[i]) / z_b
        for j in range(i, d_b):
            l_op = np.array(blocks[:, j, :, i])
            if np.linalg.norm(l_op) < PRUNE_TOL:
                continue
            channels.append(
                LindbladChannel(
                    l_op=l_op,
                    gamma=p_i / 2 if i == j else p_i,
                    omega=float(np.exp(beta * (w_b[j] - w_b[i]))),
                    eps_i=float(w_b[i]),
                    eps_j=float(w_b[j]),
                    i=i,
                    j=j,
                )
            )
    return LindbladGenerator(h_s=h_s, channels=tuple(channels), beta=beta)


def rates(gen: LindbladGenerator, rho) -> RateRecord:
    """Heat flux, power and entropy-production rate at state rho."""
    d_rho = gen.dissipator(rho)
    q_dot = gen.heat_rate(rho)
    w_dot = float(np.trace(gen.h_s @ d_rho).real) - q_dot
    # integrator stage states may dip transiently negative by O(dt ||gen||)
    log_rho = linalg.clamped_log(linalg.hermitize(rho), neg_tol=1e-6)
    si_dot = -float(np.trace(d_rho @ log_rho).real) - gen.beta * q_dot
    return RateRecord(q_dot=q_dot, w_dot=w_dot, si_dot=si_dot)


@dataclass
class LindbladTrajectory:
    times: np.ndarray
    states: list[np.ndarray]
    rate_records: list[RateRecord]
    w_cum: np.ndarray
    q_cum: np.ndarray
    si_cum: np.ndarray
    clamp_count: int


def integrate(gen: LindbladGenerator, rho0, t: float, dt: float,
              sample_every: int = 1) -> LindbladTrajectory:
    """Fixed-step classical RK4 on (rho, W, Q, S_i) with post-step
    Hermitization of rho."""
    if dt * gen.norm_bound() > 0.1:
        raise ContractError(
            f"integrate: dt {dt} does not resolve the generator "
            f"(dt * ||gen|| = {dt * gen.norm_bound():.3f} > 0.1)"
        )
    rho = linalg.as_matrix(rho0)
    n_steps = int(round(t / dt))
    clamps = 0

    def derivs(state):
        nonlocal clamps
        r = linalg.hermitize(state)
        w = np.linalg.eigvalsh(r)
        if w[0] < linalg.EPS_EIG:
            clamps += 1
        rr = rates(gen, r)
        return gen.apply(r), rr

    times = [0.0]
    states = [rho.copy()]
    rec0 = rates(gen, rho)
    rate_records = [rec0]
    w_cum = [0.0]
    q_cum = [0.0]
    si_cum = [0.0]
    cw = cq = cs = 0.0
    for step in range(1, n_steps + 1):
        k1, r1 = derivs(rho)
        k2, r2 = derivs(rho + dt / 2 * k1)
        k3, r3 = derivs(rho + dt / 2 * k2)
        k4, r4 = derivs(rho + dt * k3)
        rho = linalg.hermitize(rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4))
        cw += dt / 6 * (r1.w_dot + 2 * r2.w_dot + 2 * r3.w_dot + r4.w_dot)
        cq += dt / 6 * (r1.q_dot + 2 * r2.q_dot + 2 * r3.q_dot + r4.q_dot)
        cs += dt / 6 * (r1.si_dot + 2 * r2.si_dot + 2 * r3.si_dot + r4.si_dot)
        tr = np.trace(rho).real
        if abs(tr - 1.0) > 1e-8:
            raise PositivityError(f"integrate: trace drifted to {tr}")
        if np.linalg.eigvalsh(rho)[0] < -1e-7:
            raise PositivityError("integrate: positivity lost beyond 1e-7")
        if step % sample_every == 0 or step == n_steps:
            times.append(step * dt)
            states.append(rho.copy())
            rate_records.append(rates(gen, rho))
            w_cum.append(cw)
            q_cum.append(cq)
            si_cum.append(cs)
    return LindbladTrajectory(
        times=np.array(times),
        states=states,
        rate_records=rate_records,
        w_cum=np.array(w_cum),
        q_cum=np.array(q_cum),
        si_cum=np.array(si_cum),
        clamp_count=clamps,
    )


@dataclass(frozen=True)
class DetailedBalanceReport:
    eigenoperator_residual: float  # worst ||[H_0, L_r] - (eps_i - eps_j) L_r||
    adjoint_residual: float
    h0_hs_commutator: float
    stationarity_residual: float  # ||generator(omega_beta(H_0))||

    @property
    def passed(self) -> bool:
        return (
            self.eigenoperator_residual < 1e-9
            and self.adjoint_residual < 1e-9
            and self.h0_hs_commutator < 1e-10
            and self.stationarity_residual < 1e-9
        )


def detailed_balance_check(gen: LindbladGenerator, h0, beta: float) -> DetailedBalanceReport:
    """Eigenoperator conditions [H_0, L_r] = (eps_i - eps_j) L_r plus
    [H_0, H_S] = 0 and stationarity of the candidate equilibrium state."""
    h0 = linalg.as_matrix(h0)
    worst = 0.0
    worst_adj = 0.0
    for c in gen.channels:
        l, ld = c.l_op, c.l_op.conj().T
        gap = c.eps_i - c.eps_j
        worst = max(worst, float(np.max(np.abs(h0 @ l - l @ h0 - gap * l))))
        worst_adj = max(
            worst_adj, float(np.max(np.abs(h0 @ ld - ld @ h0 + gap * ld)))
        )
    comm = float(np.max(np.abs(h0 @ gen.h_s - gen.h_s @ h0)))
    pi = model.gibbs_state(h0, beta)
    stat = float(np.max(np.abs(gen.apply(pi))))
    return DetailedBalanceReport(
        eigenoperator_residual=worst,
        adjoint_residual=worst_adj,
        h0_hs_commutator=comm,
        stationarity_residual=stat,
    )


def simplified_rates(gen: LindbladGenerator, h0, rho) -> RateRecord:
    """System-only rates, valid under the detailed-balance certificate."""
    report = detailed_balance_check(gen, h0, gen.beta)
    if not report.passed:
        raise ContractError(
            "simplified_rates: detailed-balance certificate absent "
            f"(eigenoperator residual {report.eigenoperator_residual:.3e})"
        )
    h0 = linalg.as_matrix(h0)
    d_rho = gen.dissipator(rho)
    q_dot = float(np.trace(h0 @ d_rho).real)
    w_dot = float(np.trace((gen.h_s - h0) @ d_rho).real)
    log_rho = linalg.clamped_log(linalg.hermitize(rho))
    si_dot = -float(np.trace(d_rho @ log_rho).real) - gen.beta * q_dot
    return RateRecord(q_dot=q_dot, w_dot=w_dot, si_dot=si_dot)


@dataclass(frozen=True)
class ConvergenceRow:
    tau: float
    error: float  # Frobenius distance to the integrated flow at time t
    order_estimate: float  # from the previous row; nan for the first


@dataclass(frozen=True)
class ConvergenceTable:
    rows: tuple[ConvergenceRow, ...]
    monotone: bool

    def empirical_order(self) -> float:
        ests = [r.order_estimate for r in self.rows if np.isfinite(r.order_estimate)]
        return float(np.mean(ests)) if ests else float("nan")


def convergence_check(v, h_s, h_b, beta: float, rho0, t: float,
                      taus, dt: float = 1e-3) -> ConvergenceTable:
    """Error of the tau-collision concatenation against the integrated flow at
    time t, for each tau in the grid."""
    gen = generator_from_coupling(v, h_s, h_b, beta)
    ref = integrate(gen, rho0, t, dt, sample_every=10 ** 9).states[-1]
    rows = []
    prev = None
    monotone = True
    for tau in sorted(taus, reverse=True):
        n = int(round(t / tau))
        if abs(n * tau - t) > 1e-9:
            raise ContractError(f"convergence_check: t {t} is not a multiple of tau {tau}")
        spec = MapSpec(h_s=h_s, h_b=h_b, v=np.asarray(v) / np.sqrt(tau),
                       tau=tau, beta=beta)
        kset = kraus_from_dilation(spec)
        rho = linalg.as_matrix(rho0)
        for _ in range(n):
            rho = apply_map(kset, rho)
        err = float(np.sqrt(linalg.hs_distance(rho, ref)))
        if prev is None:
            order = float("nan")
        else:
            p_tau, p_err = prev
            order = float(np.log(p_err / err) / np.log(p_tau / tau)) if err > 0 else float("inf")
            if err > p_err:
                monotone = False
        rows.append(ConvergenceRow(tau=tau, error=err, order_estimate=order))
        prev = (tau, err)
    return ConvergenceTable(rows=tuple(rows), monotone=monotone)
