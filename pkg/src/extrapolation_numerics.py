"""Dense linear algebra shared by every certificate.

Symmetric eigendecomposition, SVD, Cholesky, random orthonormal matrices and the
generalized maximum eigenvalue sup_v (v^T B v)/(v^T A v) with the 0/0 = 0
convention. All functions are pure and work on float64 numpy arrays.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as linalg

from src.extrapolation_errors import InvalidInput, NotPositiveDefinite

logger = logging.getLogger(__name__)

NULL_TOL = 1e-10
PSD_TOL = 1e-10
INFINITE_TOL = 1e-8
JACOBI_TOL = 1e-12
CHOLESKY_MIN_EIG = 1e-12


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues in ascending order with matching orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.shape[0])


@dataclass(frozen=True)
class GeneralizedMax:
    """Value of sup_v (v^T B v)/(v^T A v) and a vector attaining it.

    For an infinite value ``vector`` is a null direction of A carrying
    numerator mass; it is None only when B vanishes.
    """

    value: float
    vector: Optional[np.ndarray]

    @property
    def infinite(self) -> bool:
        return math.isinf(self.value)


def as_sym_matrix(a, name: str = "A", check_symmetry: bool = False) -> np.ndarray:
    """Build a SymMatrix: finite float64 square array symmetrized as (A + A^T)/2."""
    arr = np.array(a, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise InvalidInput(f"{name} must be a square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} has non-finite entries")
    if check_symmetry:
        gap = np.max(np.abs(arr - arr.T)) if arr.size else 0.0
        scale = 1.0 + (np.max(np.abs(arr)) if arr.size else 0.0)
        if gap > 1e-10 * scale:
            raise InvalidInput(f"{name} is not symmetric (max asymmetry {gap:.3e})")
    return (arr + arr.T) / 2.0


def _as_finite_matrix(a, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise InvalidInput(f"{name} must be a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} has non-finite entries")
    return arr


def sym_eig(a) -> Spectrum:
    """Full spectrum of a symmetric matrix, eigenvalues ascending."""
    A = as_sym_matrix(a)
    if A.shape[0] == 0:
        return Spectrum(np.zeros(0), np.zeros((0, 0)))
    w, v = linalg.eigh(A, check_finite=False)
    return Spectrum(w, v)


def jacobi_eig(a, tol: float = JACOBI_TOL, max_sweeps: int = 100) -> Spectrum:
    """Cyclic Jacobi eigensolver.

    Independent of LAPACK's symmetric drivers; used to cross-check sym_eig.
    Stops once the off-diagonal Frobenius norm is <= tol * ||A||_F.
    """
    A = as_sym_matrix(a).copy()
    n = A.shape[0]
    V = np.eye(n)
    norm_a = np.linalg.norm(A)
    for sweep in range(max_sweeps):
        off = math.sqrt(max(np.sum(A * A) - np.sum(np.diag(A) ** 2), 0.0))
        if off <= tol * norm_a:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                sign = 1.0 if theta >= 0 else -1.0
                t = sign / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = A[:, p].copy()
                col_q = A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p = A[p, :].copy()
                row_q = A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                vec_p = V[:, p].copy()
                vec_q = V[:, q].copy()
                V[:, p] = c * vec_p - s * vec_q
                V[:, q] = s * vec_p + c * vec_q
    else:
        logger.warning(f"Jacobi did not converge in {max_sweeps} sweeps")
    order = np.argsort(np.diag(A), kind="stable")
    return Spectrum(np.diag(A)[order].copy(), V[:, order])


def svd(a) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD A = U diag(s) V^T with s descending. Returns (U, s, V)."""
    A = _as_finite_matrix(a, "A")
    U, s, Vt = linalg.svd(A, full_matrices=False, check_finite=False)
    return U, s, Vt.T


def singular_values(a) -> np.ndarray:
    A = _as_finite_matrix(a, "A")
    return linalg.svdvals(A, check_finite=False)


def lambda_min(a) -> float:
    return float(sym_eig(a).eigenvalues[0])


def lambda_max(a) -> float:
    return float(sym_eig(a).eigenvalues[-1])


def psd_spectrum(a, tol: float = PSD_TOL, name: str = "A") -> Spectrum:
    """Spectrum of a PSD matrix with round-off negatives clipped to 0.

    Eigenvalues in [-tol * ||A||_2, 0) become 0; anything more negative raises
    NotPositiveDefinite.
    """
    spec = sym_eig(as_sym_matrix(a, name))
    if spec.dim == 0:
        return spec
    w = spec.eigenvalues
    scale = float(np.max(np.abs(w)))
    if w[0] < -tol * scale:
        raise NotPositiveDefinite(f"{name} is not PSD (lambda_min = {w[0]:.3e})")
    return Spectrum(np.clip(w, 0.0, None), spec.eigenvectors)


def generalized_max_eig_witness(
    b,
    a,
    null_tol: float = NULL_TOL,
    infinite_tol: float = INFINITE_TOL,
    psd_tol: float = PSD_TOL,
) -> GeneralizedMax:
    """sup_v (v^T B v)/(v^T A v) for PSD A, B, together with a maximizer.

    The null space N of A is the span of eigenvectors with eigenvalue
    <= null_tol * lambda_max(A). If B carries more than infinite_tol * lambda_max(B)
    on N the value is +inf; otherwise both forms are projected onto the
    complement of N and the top eigenvalue of the Cholesky-whitened pencil is
    returned.
    """
    A = as_sym_matrix(a, "A", check_symmetry=True)
    B = as_sym_matrix(b, "B", check_symmetry=True)
    if A.shape != B.shape:
        raise InvalidInput(f"shape mismatch: A {A.shape} vs B {B.shape}")
    try:
        spec_a = psd_spectrum(A, psd_tol, "A")
        spec_b = psd_spectrum(B, psd_tol, "B")
    except NotPositiveDefinite as e:
        raise InvalidInput(str(e)) from e

    top_b = float(spec_b.eigenvalues[-1]) if spec_b.dim else 0.0
    if top_b <= 0.0:
        # 0/0 = 0 and 0/positive = 0
        return GeneralizedMax(0.0, None)
    top_a = float(spec_a.eigenvalues[-1])
    if top_a <= 0.0:
        return GeneralizedMax(math.inf, spec_b.eigenvectors[:, -1].copy())

    null_mask = spec_a.eigenvalues <= null_tol * top_a
    N = spec_a.eigenvectors[:, null_mask]
    R = spec_a.eigenvectors[:, ~null_mask]
    if N.shape[1] > 0:
        bn = sym_eig(N.T @ B @ N)
        if bn.eigenvalues[-1] > infinite_tol * top_b:
            return GeneralizedMax(math.inf, N @ bn.eigenvectors[:, -1])

    a_r = as_sym_matrix(R.T @ A @ R)
    b_r = as_sym_matrix(R.T @ B @ R)
    L = linalg.cholesky(a_r, lower=True, check_finite=False)
    half = linalg.solve_triangular(L, b_r, lower=True, check_finite=False)
    whitened = linalg.solve_triangular(L, half.T, lower=True, check_finite=False)
    spec_w = sym_eig(whitened)
    value = max(float(spec_w.eigenvalues[-1]), 0.0)
    y = spec_w.eigenvectors[:, -1]
    v = R @ linalg.solve_triangular(L.T, y, lower=False, check_finite=False)
    return GeneralizedMax(value, v)


def generalized_max_eig(b, a, **kwargs) -> float:
    """sup over v of v^T B v / v^T A v (0/0 = 0, positive/0 = +inf)."""
    return generalized_max_eig_witness(b, a, **kwargs).value


def cholesky(a) -> np.ndarray:
    """Lower-triangular L with L L^T = A; requires lambda_min(A) > 1e-12."""
    A = as_sym_matrix(a)
    if A.shape[0] == 0:
        return np.zeros((0, 0))
    low = lambda_min(A)
    if low <= CHOLESKY_MIN_EIG:
        raise NotPositiveDefinite(f"matrix is not positive definite (lambda_min = {low:.3e})")
    try:
        return linalg.cholesky(A, lower=True, check_finite=False)
    except linalg.LinAlgError as e:
        raise NotPositiveDefinite(f"Cholesky factorization failed: {e}") from e


def random_orthonormal(d: int, seed) -> np.ndarray:
    """Haar-distributed orthonormal d x d matrix from the QR of a Gaussian matrix."""
    if d < 1:
        raise InvalidInput(f"dimension must be >= 1, got {d}")
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((d, d))
    Q, R = linalg.qr(Z)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def elementwise_power(m, n: int) -> np.ndarray:
    """Entry-wise n-th power, with 0**0 = 1 so that level 0 is the all-ones matrix."""
    return np.power(np.asarray(m, dtype=np.float64), int(n))
