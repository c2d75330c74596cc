"""Physical building blocks: Pauli registers, XX/XY chains, bath spins,
step couplings and Gibbs states.

Tensor-factor ordering is fixed everywhere: system spins 1..M first, the bath
spin is the last factor. Joint operators live on dimension 2^(M+1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import ContractError, DimensionError

SIGMA = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}
ID2 = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class SpinChainParams:
    """XX/XY chain: field h, couplings Jx[i], Jy[i] between sites i, i+1.

    A zero (or empty) Jy array selects the XX chain, whose exchange term
    Jx (sx sx + sy sy) weights both quadratures equally; only that symmetric
    form conserves the total magnetization. A nonzero Jy gives the XY chain
    with independent xx and yy weights.
    """

    sites: int
    h: float
    jx: tuple[float, ...] = ()
    jy: tuple[float, ...] = ()

    def __post_init__(self):
        if self.sites < 1:
            raise ContractError("SpinChainParams: sites must be >= 1")
        jx = tuple(self.jx) if self.jx else (0.0,) * (self.sites - 1)
        jy = tuple(self.jy) if self.jy else (0.0,) * (self.sites - 1)
        object.__setattr__(self, "jx", jx)
        object.__setattr__(self, "jy", jy)
        if len(jx) != self.sites - 1 or len(jy) != self.sites - 1:
            raise ContractError(
                "SpinChainParams: jx and jy must have length sites - 1"
            )

    @property
    def is_xx(self) -> bool:
        return all(j == 0.0 for j in self.jy)

    @property
    def yy_couplings(self) -> tuple[float, ...]:
        return self.jx if self.is_xx else self.jy


@dataclass(frozen=True)
class BathParams:
    """Single bath spin with field h_b at inverse temperature beta."""

    h_b: float
    beta: float

    def __post_init__(self):
        if self.beta <= 0:
            raise ContractError("BathParams: beta must be > 0")


@dataclass(frozen=True)
class CouplingSpec:
    """Step coupling J^x_c sx_b sx_site + J^y_c sy_b sy_site acting for time tau."""

    jx_c: float
    jy_c: float
    site: int = 1
    tau: float = field(default=1.0)

    def __post_init__(self):
        if self.tau <= 0:
            raise ContractError("CouplingSpec: tau must be > 0")


def pauli_site(axis: str, site: int, n_spins: int) -> np.ndarray:
    """Pauli operator on one site of an n-spin register (sites count from 1)."""
    if axis not in SIGMA:
        raise ContractError(f"pauli_site: axis must be x|y|z, got {axis!r}")
    if not 1 <= site <= n_spins:
        raise DimensionError(f"pauli_site: site {site} out of range 1..{n_spins}")
    op = np.array([[1]], dtype=complex)
    for k in range(1, n_spins + 1):
        op = np.kron(op, SIGMA[axis] if k == site else ID2)
    return op


def build_h0(p: SpinChainParams) -> np.ndarray:
    """Non-interacting part (h/2) sum_i sz_i (total magnetization times h/2)."""
    m = p.sites
    h0 = np.zeros((2 ** m, 2 ** m), dtype=complex)
    for i in range(1, m + 1):
        h0 += (p.h / 2) * pauli_site("z", i, m)
    return h0


def build_chain(p: SpinChainParams) -> np.ndarray:
    """XX/XY chain Hamiltonian on 2^M dimensions."""
    m = p.sites
    h = build_h0(p)
    for i in range(1, m):
        for axis, js in (("x", p.jx), ("y", p.yy_couplings)):
            if js[i - 1] != 0.0:
                h -= js[i - 1] * (
                    pauli_site(axis, i, m) @ pauli_site(axis, i + 1, m)
                )
    return h


def build_bath(b: BathParams) -> np.ndarray:
    """Bath spin Hamiltonian (h_b/2) sz."""
    return (b.h_b / 2) * SIGMA["z"]


def build_coupling(c: CouplingSpec, n_system_spins: int) -> np.ndarray:
    """System-bath coupling on 2^(M+1) dimensions, bath spin last."""
    m = n_system_spins
    if not 1 <= c.site <= m:
        raise DimensionError(f"build_coupling: site {c.site} out of range 1..{m}")
    n = m + 1
    v = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for axis, j in (("x", c.jx_c), ("y", c.jy_c)):
        if j != 0.0:
            v += j * (pauli_site(axis, n, n) @ pauli_site(axis, c.site, n))
    return v


def gibbs_state(h, beta: float) -> np.ndarray:
    """Canonical state e^{-beta h} / Z."""
    if beta <= 0:
        raise ContractError("gibbs_state: beta must be > 0")
    w, v = linalg.hermitian_eig(h)
    pops = np.exp(-beta * (w - w.min()))
    pops /= pops.sum()
    return (v * pops) @ v.conj().T
