"""Hermite basis and Mehler kernel machinery.

psi_n(x) = H_n(x / sqrt 2) exp(-x^2 / 4) (2 pi)^{-1/4} (2^n n!)^{-1/2} is an
orthonormal basis of L^2(R), and the bivariate standard Gaussian kernel
K_rho(x1, x2) = p(x1, x2) / sqrt(p(x1) p(x2)) has eigenvalues rho^k with
eigenfunctions psi_k.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.stats import multivariate_normal

from src.extrapolation_errors import (
    DegenerateCorrelation,
    InvalidInput,
    NotPositiveDefinite,
    OrderTooLarge,
)
from src.extrapolation_numerics import svd

logger = logging.getLogger(__name__)

MAX_ORDER = 120
DEFAULT_TRUNCATION = 60
MAX_ABS_RHO = 0.99
PSI0_NORM = (2.0 * math.pi) ** -0.25
# Cramer: |psi_n(x)| <= 1.086435 (2 pi)^{-1/4} for every n and x
PSI_SUP = 1.086435 * PSI0_NORM
QUAD_POINTS = 4000
QUAD_HALF_WIDTH = 12.0
MEHLER_RHOS = (-0.9, -0.5, -0.2, 0.2, 0.5, 0.9)


def _check_order(n: int) -> None:
    if n < 0:
        raise InvalidInput(f"order must be >= 0, got {n}")


def hermite_H(n: int, x):
    """Physicists' Hermite polynomial by H_{n+1} = 2x H_n - 2n H_{n-1}."""
    _check_order(n)
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.ones_like(x)
    if n == 0:
        return h_prev
    h = 2.0 * x
    for m in range(1, n):
        h_prev, h = h, 2.0 * x * h - 2.0 * m * h_prev
    return h


def hermite_all(x, max_order: int) -> np.ndarray:
    """H_0 .. H_N at x, shape (N + 1,) + x.shape."""
    x = np.asarray(x, dtype=np.float64)
    _check_order(max_order)
    out = np.empty((max_order + 1,) + x.shape)
    out[0] = 1.0
    if max_order >= 1:
        out[1] = 2.0 * x
    for m in range(1, max_order):
        out[m + 1] = 2.0 * x * out[m] - 2.0 * m * out[m - 1]
    return out


def psi_all(x, max_order: int) -> np.ndarray:
    """psi_0 .. psi_N at x, shape (N + 1,) + x.shape.

    Uses the normalized recurrence
    psi_{n+1} = x / sqrt(n+1) psi_n - sqrt(n / (n+1)) psi_{n-1},
    which never forms H_n and so cannot overflow.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_order(max_order)
    out = np.empty((max_order + 1,) + x.shape)
    out[0] = PSI0_NORM * np.exp(-0.25 * x * x)
    if max_order >= 1:
        out[1] = x * out[0]
    for n in range(1, max_order):
        out[n + 1] = x / math.sqrt(n + 1.0) * out[n] - math.sqrt(n / (n + 1.0)) * out[n - 1]
    return out


def psi_from_hermite(n: int, x):
    """Direct formula with the (2^n n!)^{-1/2} factor taken in log domain."""
    _check_order(n)
    x = np.asarray(x, dtype=np.float64)
    log_norm = -0.5 * (n * math.log(2.0) + math.lgamma(n + 1.0))
    return hermite_H(n, x / math.sqrt(2.0)) * np.exp(-0.25 * x * x + log_norm) * PSI0_NORM


def probabilist_all(x, max_order: int) -> np.ndarray:
    """He_n(x) / sqrt(n!) for n = 0..N, i.e. psi_n(x) / sqrt(phi(x))."""
    x = np.asarray(x, dtype=np.float64)
    _check_order(max_order)
    out = np.empty((max_order + 1,) + x.shape)
    out[0] = 1.0
    if max_order >= 1:
        out[1] = x
    for n in range(1, max_order):
        out[n + 1] = (x * out[n] - math.sqrt(n) * out[n - 1]) / math.sqrt(n + 1.0)
    return out


@dataclass(frozen=True)
class HermiteBasis:
    """psi_0 .. psi_N, guarded at N <= 120."""

    max_order: int = MAX_ORDER

    def __post_init__(self):
        if self.max_order < 0:
            raise InvalidInput(f"max_order must be >= 0, got {self.max_order}")
        if self.max_order > MAX_ORDER:
            raise OrderTooLarge(f"max_order {self.max_order} exceeds {MAX_ORDER}")

    def _check(self, n: int) -> None:
        _check_order(n)
        if n > self.max_order:
            raise OrderTooLarge(f"order {n} exceeds basis max order {self.max_order}")

    def psi(self, n: int, x):
        self._check(n)
        return psi_all(x, n)[n]

    def psi_all(self, x, n: Optional[int] = None) -> np.ndarray:
        n = self.max_order if n is None else n
        self._check(n)
        return psi_all(x, n)


_DEFAULT_BASIS = HermiteBasis()


def psi(n: int, x, basis: HermiteBasis = _DEFAULT_BASIS):
    return basis.psi(n, x)


@dataclass(frozen=True)
class MehlerSpec:
    rho: float

    def __post_init__(self):
        if not math.isfinite(self.rho) or abs(self.rho) > 1.0:
            raise DegenerateCorrelation(f"rho must lie in [-1, 1], got {self.rho}")

    def require_series(self, max_abs_rho: float = MAX_ABS_RHO) -> None:
        if abs(self.rho) >= 1.0 or abs(self.rho) > max_abs_rho:
            raise DegenerateCorrelation(
                f"|rho| = {abs(self.rho)} is outside the supported range [0, {max_abs_rho}]"
            )


def mehler_closed_form(rho: float, x1, x2, max_abs_rho: float = MAX_ABS_RHO):
    MehlerSpec(rho).require_series(max_abs_rho)
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    one_minus = 1.0 - rho * rho
    exponent = -(x1 * x1 + x2 * x2 - 2.0 * rho * x1 * x2) / (2.0 * one_minus) + 0.25 * (x1 * x1 + x2 * x2)
    return np.exp(exponent) / math.sqrt(2.0 * math.pi * one_minus)


def mehler_series(
    rho: float,
    x1,
    x2,
    N: int = DEFAULT_TRUNCATION,
    basis: HermiteBasis = _DEFAULT_BASIS,
    max_abs_rho: float = MAX_ABS_RHO,
):
    """Partial sum sum_{k=0}^{N} rho^k psi_k(x1) psi_k(x2)."""
    MehlerSpec(rho).require_series(max_abs_rho)
    psi1 = basis.psi_all(x1, N)
    psi2 = basis.psi_all(x2, N)
    weights = np.power(float(rho), np.arange(N + 1))
    weights = weights.reshape((N + 1,) + (1,) * (psi1.ndim - 1))
    return np.sum(weights * psi1 * psi2, axis=0)


def mehler_tail_bound(rho: float, N: int) -> float:
    """Upper bound on |closed form - N-term series| from the uniform bound on |psi_k|."""
    a = abs(rho)
    return PSI_SUP ** 2 * a ** (N + 1) / (1.0 - a)


def _grid(grid_points: int, half_width: float):
    axis = np.linspace(-half_width, half_width, grid_points)
    return np.meshgrid(axis, axis, indexing="ij")


def mehler_grid_error(
    rhos: Iterable[float] = MEHLER_RHOS,
    N: int = DEFAULT_TRUNCATION,
    grid_points: int = 25,
    half_width: float = 3.0,
    tol: float = 1e-8,
    basis: HermiteBasis = _DEFAULT_BASIS,
    max_abs_rho: float = MAX_ABS_RHO,
) -> pd.DataFrame:
    """Max |series - closed form| over a square grid, per rho.

    ``passed`` means max_error <= tol + tail bound; the tail bound is the
    truncation error the N-term series is allowed to carry.
    """
    X1, X2 = _grid(grid_points, half_width)
    rows = []
    for rho in rhos:
        series = mehler_series(rho, X1, X2, N, basis, max_abs_rho)
        err = float(np.max(np.abs(series - mehler_closed_form(rho, X1, X2, max_abs_rho))))
        tail = mehler_tail_bound(rho, N)
        rows.append({"rho": rho, "N": N, "max_error": err, "tail_bound": tail, "passed": err <= tol + tail})
    return pd.DataFrame(rows)


def density_recovery_error(
    rho: float,
    grid_points: int = 25,
    half_width: float = 3.0,
    max_abs_rho: float = MAX_ABS_RHO,
) -> float:
    """max |K_rho(x1, x2) sqrt(phi(x1) phi(x2)) - bivariate normal density|."""
    X1, X2 = _grid(grid_points, half_width)
    phi1 = np.exp(-0.5 * X1 * X1) / math.sqrt(2.0 * math.pi)
    phi2 = np.exp(-0.5 * X2 * X2) / math.sqrt(2.0 * math.pi)
    recovered = mehler_closed_form(rho, X1, X2, max_abs_rho) * np.sqrt(phi1 * phi2)
    points = np.stack([X1.ravel(), X2.ravel()], axis=1)
    density = multivariate_normal(mean=[0.0, 0.0], cov=[[1.0, rho], [rho, 1.0]]).pdf(points)
    return float(np.max(np.abs(recovered.ravel() - density)))


def hermite_gram(
    max_order: int,
    n_points: int = QUAD_POINTS,
    half_width: float = QUAD_HALF_WIDTH,
) -> np.ndarray:
    """Trapezoid Gram matrix of psi_0..psi_N on [-half_width, half_width]."""
    x = np.linspace(-half_width, half_width, n_points)
    values = HermiteBasis(max(max_order, 0)).psi_all(x, max_order)
    products = values[:, None, :] * values[None, :, :]
    return trapezoid(products, x, axis=-1)


def block_kernel_eigs(Sigma12, N: int, max_terms: int = 200000) -> np.ndarray:
    """Eigenvalues prod_i sigma_i^{n_i} (sum n_i <= N) of the block Gaussian kernel, descending."""
    sigmas = svd(Sigma12)[1]
    if sigmas.size and sigmas[0] > 1.0 + 1e-10:
        raise NotPositiveDefinite(
            f"block covariance is not PSD: sigma_max(Sigma12) = {sigmas[0]:.6g} > 1"
        )
    m = sigmas.shape[0]
    n_terms = math.comb(N + m, m)
    if n_terms > max_terms:
        raise InvalidInput(f"{n_terms} exponent tuples exceed max_terms = {max_terms}; lower N")
    values = [1.0]
    for degree in range(1, N + 1):
        for combo in itertools.combinations_with_replacement(range(m), degree):
            values.append(float(np.prod(sigmas[list(combo)])))
    return np.sort(np.array(values))[::-1]


def block_kernel_value(Sigma12, x1: Sequence[float], x2: Sequence[float], max_abs_rho: float = MAX_ABS_RHO):
    """p(x1, x2) / sqrt(p(x1) p(x2)) for the block Gaussian [[I, S], [S^T, I]].

    Rotating t1 = U^T x1, t2 = V^T x2 by the SVD of S splits the kernel into a
    product of 1-D Mehler kernels; coordinates without a partner contribute psi_0.
    """
    Sigma12 = np.asarray(Sigma12, dtype=np.float64)
    d1, d2 = Sigma12.shape
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    U, s, V = svd(Sigma12)
    t1 = U.T @ x1
    t2 = V.T @ x2
    value = 1.0
    for sigma, a, b in zip(s, t1, t2):
        value *= float(mehler_closed_form(float(sigma), a, b, max_abs_rho))
    m = s.shape[0]
    rest1 = max(float(x1 @ x1 - t1 @ t1), 0.0)
    rest2 = max(float(x2 @ x2 - t2 @ t2), 0.0)
    value *= PSI0_NORM ** (d1 - m) * math.exp(-0.25 * rest1)
    value *= PSI0_NORM ** (d2 - m) * math.exp(-0.25 * rest2)
    return value
