"""CPTP maps from system-bath dilations: Kraus extraction labeled by bath
transitions, invariant states, and thermal / equilibrium / NESS classification.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import linalg, model
from .errors import (
    ContractError,
    ConvergenceError,
    DimensionError,
    IntegrityError,
    PositivityError,
)

DEG_TOL = 1e-9  # bath eigenvalues closer than this are flagged as degenerate
EPS_CLASS = 1e-8  # entropy production threshold separating equilibrium from NESS


@dataclass(frozen=True)
class MapSpec:
    """One system-bath collision: constant H_S, H_B and step coupling V for
    a duration tau, with the bath thermal at inverse temperature beta."""

    h_s: np.ndarray
    h_b: np.ndarray
    v: np.ndarray
    tau: float
    beta: float

    def __post_init__(self):
        h_s = linalg.as_matrix(self.h_s)
        h_b = linalg.as_matrix(self.h_b)
        v = linalg.as_matrix(self.v)
        for name, m in (("h_s", h_s), ("h_b", h_b), ("v", v)):
            if not linalg.is_hermitian(m):
                raise ContractError(f"MapSpec: {name} is not Hermitian")
        if v.shape[0] != h_s.shape[0] * h_b.shape[0]:
            raise DimensionError("MapSpec: dim(v) != dim(h_s) * dim(h_b)")
        if self.tau <= 0:
            raise ContractError("MapSpec: tau must be > 0")
        if self.beta <= 0:
            raise ContractError("MapSpec: beta must be > 0")
        object.__setattr__(self, "h_s", h_s)
        object.__setattr__(self, "h_b", h_b)
        object.__setattr__(self, "v", v)

    @property
    def dim_s(self) -> int:
        return self.h_s.shape[0]

    @property
    def dim_b(self) -> int:
        return self.h_b.shape[0]

    @cached_property
    def h_total(self) -> np.ndarray:
        eye_s = np.eye(self.dim_s)
        eye_b = np.eye(self.dim_b)
        return np.kron(self.h_s, eye_b) + np.kron(eye_s, self.h_b) + self.v

    @cached_property
    def bath_state(self) -> np.ndarray:
        return model.gibbs_state(self.h_b, self.beta)


def dilation_unitary(spec: MapSpec) -> np.ndarray:
    """Joint unitary e^{-i tau (H_S + H_B + V)}."""
    return linalg.unitary_exp(spec.h_total, spec.tau)


@dataclass(frozen=True)
class KrausOperator:
    op: np.ndarray
    i: int
    j: int
    eps_i: float
    eps_j: float
    p_i: float  # e^{-beta eps_i} / Z_B


@dataclass(frozen=True)
class KrausSet:
    """Kraus representation labeled by bath transitions |i> -> |j>."""

    operators: tuple[KrausOperator, ...]
    dim_s: int
    beta: float
    z_bath: float
    bath_energies: np.ndarray
    unitary: np.ndarray = field(repr=False)  # joint dilation, bath eigenbasis factors

    def completeness_residual(self) -> float:
        acc = np.zeros((self.dim_s, self.dim_s), dtype=complex)
        for k in self.operators:
            acc += k.op.conj().T @ k.op
        return float(np.max(np.abs(acc - np.eye(self.dim_s))))


def kraus_from_dilation(spec: MapSpec) -> KrausSet:
    """Extract M_ij = sqrt(e^{-beta eps_i}/Z_B) <j|U|i> from the dilation."""
    u = dilation_unitary(spec)
    w_b, v_b = linalg.hermitian_eig(spec.h_b)
    gaps = np.diff(w_b)
    if np.any(gaps < DEG_TOL):
        warnings.warn(
            "bath spectrum is degenerate within tolerance; Kraus labels use an "
            "arbitrary orthonormal sub-basis within each level",
            stacklevel=2,
        )
    # Rotate the bath factor into its eigenbasis before slicing.
    d_s, d_b = spec.dim_s, spec.dim_b
    rot = np.kron(np.eye(d_s), v_b)
    u_eig = rot.conj().T @ u @ rot
    blocks = u_eig.reshape(d_s, d_b, d_s, d_b)
    z_b = float(np.sum(np.exp(-spec.beta * (w_b - w_b.min()))) * np.exp(-spec.beta * w_b.min()))
    weights = np.exp(-spec.beta * w_b) / z_b
    ops = []
    for i in range(d_b):
        amp = np.sqrt(weights[i])
        for j in range(d_b):
            ops.append(
                KrausOperator(
                    op=amp * blocks[:, j, :, i],
                    i=i,
                    j=j,
                    eps_i=float(w_b[i]),
                    eps_j=float(w_b[j]),
                    p_i=float(weights[i]),
                )
            )
    kset = KrausSet(
        operators=tuple(ops),
        dim_s=d_s,
        beta=spec.beta,
        z_bath=z_b,
        bath_energies=w_b,
        unitary=u,
    )
    res = kset.completeness_residual()
    if res > 1e-10:
        raise IntegrityError(f"Kraus completeness residual {res:.3e} exceeds 1e-10")
    return kset


def apply_map(k: KrausSet, rho) -> np.ndarray:
    """rho' = sum_ij M_ij rho M_ij^dag, validated as a density matrix."""
    rho = linalg.as_matrix(rho)
    out = np.zeros_like(rho)
    for op in k.operators:
        out += op.op @ rho @ op.op.conj().T
    tr = np.trace(out).real
    if abs(tr - 1.0) > 1e-10:
        raise PositivityError(f"apply_map: output trace {tr} differs from 1")
    w = np.linalg.eigvalsh(linalg.hermitize(out))
    if w[0] < -linalg.NEG_EIG_TOL:
        raise PositivityError(f"apply_map: output eigenvalue {w[0]:.3e}")
    return out


def apply_total(spec: MapSpec, rho) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Evolve the joint state and return (rho'_tot, rho'_S, rho'_B)."""
    rho = linalg.as_matrix(rho)
    u = dilation_unitary(spec)
    rho_tot = np.kron(rho, spec.bath_state)
    rho_tot_out = u @ rho_tot @ u.conj().T
    dims = (spec.dim_s, spec.dim_b)
    rho_s = linalg.partial_trace(rho_tot_out, dims, "A")
    rho_b = linalg.partial_trace(rho_tot_out, dims, "B")
    return rho_tot_out, rho_s, rho_b


def invariant_state(
    k: KrausSet,
    rho0,
    max_iter: int = 100_000,
    tol: float = 1e-12,
    check_seeds: bool = True,
) -> np.ndarray:
    """Attractive fixed point of the map by fixed-point iteration.

    tol bounds the Hilbert-Schmidt distance (squared Frobenius) between pi
    and E(pi). With check_seeds the result is cross-checked from two more
    starting states.
    """

    def iterate(rho):
        rho = linalg.as_matrix(rho)
        residual = None
        for _ in range(max_iter):
            nxt = apply_map(k, rho)
            residual = linalg.hs_distance(nxt, rho)
            rho = nxt
            if residual < tol:
                return rho
        raise ConvergenceError(
            f"invariant_state: no convergence after {max_iter} iterations "
            f"(last residual {residual:.3e})",
            residual=residual,
        )

    pi = iterate(rho0)
    if check_seeds:
        d = k.dim_s
        rng = np.random.default_rng(7)
        a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        rand = a @ a.conj().T
        rand /= np.trace(rand).real
        for seed_state in (np.eye(d) / d, rand):
            alt = iterate(seed_state)
            if linalg.hs_distance(alt, pi) > 1e-8:
                raise ConvergenceError(
                    "invariant_state: fixed point depends on the starting state"
                )
    return pi


class MapKind(enum.Enum):
    THERMAL = "thermal"
    EQUILIBRIUM = "equilibrium_non_thermal"
    NESS = "ness"


@dataclass(frozen=True)
class MapClassification:
    kind: MapKind
    invariant: np.ndarray
    entropy_production: float  # raw entropy production at the invariant state
    h0: np.ndarray | None = None
    within_tolerance_note: str | None = None


def entropy_production_at(spec: MapSpec, rho) -> float:
    """Entropy production D(rho'_tot || rho'_S (x) omega_B) of one application."""
    rho_tot_out, rho_s, _ = apply_total(spec, rho)
    return linalg.rel_entropy(rho_tot_out, np.kron(rho_s, spec.bath_state))


def commutes_with_dilation(spec: MapSpec, h0, tol: float = 1e-9) -> float:
    """Operator-norm residual of [U, H_0 (x) I + I (x) H_B]."""
    u = dilation_unitary(spec)
    gen = np.kron(linalg.as_matrix(h0), np.eye(spec.dim_b)) + np.kron(
        np.eye(spec.dim_s), spec.h_b
    )
    return float(np.linalg.norm(u @ gen - gen @ u, 2))


def classify_map(
    spec: MapSpec,
    pi,
    h0_candidate=None,
    eps_class: float = EPS_CLASS,
) -> MapClassification:
    """Classify a map by the entropy production at its invariant state, with an
    optional commuting-H_0 certificate."""
    dis = entropy_production_at(spec, pi)
    thermal_res = commutes_with_dilation(spec, spec.h_s)
    cand_res = None
    if h0_candidate is not None:
        cand_res = commutes_with_dilation(spec, h0_candidate)
    if dis > eps_class:
        if thermal_res < 1e-9 or (cand_res is not None and cand_res < 1e-9):
            raise IntegrityError(
                "classify_map: commuting certificate found but entropy "
                f"production at pi is {dis:.3e}"
            )
        return MapClassification(MapKind.NESS, pi, dis)
    note = None
    if dis >= 1e-10:
        note = f"equilibrium within tolerance (raw entropy production {dis:.3e})"
    if thermal_res < 1e-9:
        return MapClassification(MapKind.THERMAL, pi, dis, h0=spec.h_s,
                                 within_tolerance_note=note)
    h0 = None
    if cand_res is not None and cand_res < 1e-9:
        h0 = linalg.as_matrix(h0_candidate)
    return MapClassification(MapKind.EQUILIBRIUM, pi, dis, h0=h0,
                             within_tolerance_note=note)
