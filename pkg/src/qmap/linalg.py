"""Dense complex linear-algebra kernels.

All operators are plain complex numpy arrays (square, row-major). States are
Hermitian positive semidefinite unit-trace arrays. Everything here is a pure
function; no physics semantics.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ContractError, DimensionError, PositivityError, SupportError

# Eigenvalue floor for logarithms: values in (-NEG_EIG_TOL, EPS_EIG) are
# treated as roundoff and clamped, anything below -NEG_EIG_TOL is a genuine
# positivity violation.
EPS_EIG = 1e-12
NEG_EIG_TOL = 1e-9

MAX_DIM = 2 ** 14

HERM_TOL = 1e-10


class HermitianEig(NamedTuple):
    eigenvalues: np.ndarray  # real, ascending
    eigenvectors: np.ndarray  # unitary, columns are eigenvectors


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DimensionError("matrix contains NaN/Inf entries")
    return m


def is_hermitian(m: np.ndarray, tol: float = HERM_TOL) -> bool:
    return np.max(np.abs(m - m.conj().T)) < tol


def hermitize(m: np.ndarray) -> np.ndarray:
    return (m + m.conj().T) / 2


def kron(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[0] * b.shape[0] > MAX_DIM:
        raise DimensionError(
            f"kron dimension {a.shape[0] * b.shape[0]} exceeds the limit {MAX_DIM}"
        )
    return np.kron(a, b)


def hermitian_eig(h) -> HermitianEig:
    """Eigendecomposition of a Hermitian matrix (ascending eigenvalues)."""
    h = as_matrix(h)
    if not is_hermitian(h):
        raise ContractError("hermitian_eig: input is not Hermitian to 1e-10")
    w, v = np.linalg.eigh(h)
    return HermitianEig(w, v)


def unitary_exp(h, t: float) -> np.ndarray:
    """exp(-i h t) for Hermitian h, via spectral decomposition."""
    w, v = hermitian_eig(h)
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def herm_func(h, f) -> np.ndarray:
    """f(h) for Hermitian h via the spectral theorem."""
    w, v = hermitian_eig(h)
    return (v * f(w)) @ v.conj().T


def clamped_log(rho, neg_tol: float = NEG_EIG_TOL) -> np.ndarray:
    """Spectral log with the eigenvalue floor EPS_EIG.

    Eigenvalues below -neg_tol raise; the rest are clamped to EPS_EIG
    before taking the log.
    """
    w, v = hermitian_eig(rho)
    if w[0] < -neg_tol:
        raise PositivityError(f"clamped_log: eigenvalue {w[0]:.3e} below -{neg_tol}")
    w = np.maximum(w, EPS_EIG)
    return (v * np.log(w)) @ v.conj().T


def partial_trace(m, dims: tuple[int, int], keep: str) -> np.ndarray:
    """Partial trace of an operator on a bipartite space A (x) B.

    keep is 'A' or 'B'; dims = (d_A, d_B) with d_A * d_B = dim(m).
    """
    m = as_matrix(m)
    d_a, d_b = dims
    if d_a * d_b != m.shape[0]:
        raise DimensionError(
            f"partial_trace: dims {dims} incompatible with matrix of dim {m.shape[0]}"
        )
    t = m.reshape(d_a, d_b, d_a, d_b)
    if keep == "A":
        return np.einsum("ikjk->ij", t)
    if keep == "B":
        return np.einsum("kikj->ij", t)
    raise DimensionError(f"partial_trace: keep must be 'A' or 'B', got {keep!r}")


def check_density(rho, tol: float = 1e-8) -> np.ndarray:
    """Validate a density matrix: Hermitian, unit trace, eigenvalues >= -NEG_EIG_TOL."""
    rho = as_matrix(rho)
    if not is_hermitian(rho, tol):
        raise PositivityError("density matrix is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > tol:
        raise PositivityError(f"density matrix trace {tr} differs from 1")
    w = np.linalg.eigvalsh(hermitize(rho))
    if w[0] < -NEG_EIG_TOL:
        raise PositivityError(f"density matrix has eigenvalue {w[0]:.3e}")
    return rho


def vn_entropy(rho) -> float:
    """Von Neumann entropy -sum(lam ln lam) over eigenvalues above EPS_EIG."""
    w, _ = hermitian_eig(hermitize(as_matrix(rho)))
    if w[0] < -NEG_EIG_TOL:
        raise PositivityError(f"vn_entropy: eigenvalue {w[0]:.3e} below -{NEG_EIG_TOL}")
    w = w[w > EPS_EIG]
    return float(-np.sum(w * np.log(w)))


def rel_entropy(a, b) -> float:
    """Quantum relative entropy D(a||b) = Tr[a ln a] - Tr[a ln b].

    Raises SupportError when a has weight outside the support of b.
    """
    a = hermitize(as_matrix(a))
    b = hermitize(as_matrix(b))
    if a.shape != b.shape:
        raise DimensionError("rel_entropy: dimension mismatch")
    wb, vb = hermitian_eig(b)
    null = wb < EPS_EIG
    if np.any(null):
        weight = float(np.einsum("ij,jk,ki->", vb[:, null].conj().T, a, vb[:, null]).real)
        if weight > 1e-10:
            raise SupportError(
                f"rel_entropy: first argument has weight {weight:.3e} outside "
                "the support of the second"
            )
    wa, _ = hermitian_eig(a)
    if wa[0] < -NEG_EIG_TOL:
        raise PositivityError("rel_entropy: first argument not positive")
    wa_pos = wa[wa > EPS_EIG]
    tr_a_ln_a = float(np.sum(wa_pos * np.log(wa_pos)))
    log_b = (vb * np.log(np.maximum(wb, EPS_EIG))) @ vb.conj().T
    tr_a_ln_b = float(np.trace(a @ log_b).real)
    return tr_a_ln_a - tr_a_ln_b


def rel_entropy_to_gibbs(rho, h, beta: float) -> float:
    """D(rho || e^{-beta h}/Z) = -S(rho) + beta Tr[h rho] + ln Z.

    Avoids diagonalizing the reference state, which loses digits on its
    exponentially small populations.
    """
    rho = as_matrix(rho)
    h = as_matrix(h)
    w, _ = hermitian_eig(h)
    ln_z = float(
        np.log(np.sum(np.exp(-beta * (w - w.min())))) - beta * w.min()
    )
    return float(
        -vn_entropy(rho) + beta * np.trace(h @ rho).real + ln_z
    )


def hs_distance(a, b) -> float:
    """Hilbert-Schmidt distance Tr[(a-b)^dag (a-b)] (squared Frobenius norm)."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise DimensionError("hs_distance: dimension mismatch")
    d = a - b
    return float(np.sum(np.abs(d) ** 2))
