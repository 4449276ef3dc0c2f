"""Gaussian extrapolation certificates.

Upper bounds for the pairwise-Gaussian model (d / lambda_min) and the two-block
model (2 / (1 - sigma_max)), the exact level-wise ratio kappa, eigenvalue checks on
elementwise powers and block matrices, a seeded Box-Muller sampler and Monte
Carlo ratio estimation.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import random_correlation as scipy_random_correlation

from src.extrapolation_errors import (
    DegenerateDenominator,
    InvalidInput,
    NotPositiveDefinite,
    NumericalFailure,
    ShapeMismatch,
)
from src.extrapolation_hermite import probabilist_all
from src.extrapolation_numerics import (
    as_sym_matrix,
    cholesky,
    elementwise_power,
    generalized_max_eig,
    lambda_min,
    psd_spectrum,
    random_orthonormal,
    singular_values,
)

logger = logging.getLogger(__name__)

DIAG_TOL = 1e-12
SINGULAR_TOL = 1e-12
POWER_EIG_TOL = 1e-10
SIGMA_MAX_TOL = 1e-10
BLOCK_GAP_TOL = 1e-9
KAPPA_STOP_TOL = 1e-12
KAPPA_TRUNCATION = 40
MIN_MC_SAMPLES = 1000
ADMISSIBLE_S_MAX = 0.95


@dataclass(frozen=True)
class CorrelationSpec:
    """Correlation matrix plus the means/stds removed by normalization."""

    Sigma: np.ndarray
    means: Optional[np.ndarray] = None
    stds: Optional[np.ndarray] = None

    def __post_init__(self):
        S = as_sym_matrix(self.Sigma, "Sigma", check_symmetry=True)
        d = S.shape[0]
        if d < 1:
            raise InvalidInput("Sigma must be at least 1 x 1")
        if np.max(np.abs(np.diag(S) - 1.0)) > DIAG_TOL:
            raise InvalidInput("Sigma must have unit diagonal")
        if np.max(np.abs(S)) > 1.0 + DIAG_TOL:
            raise InvalidInput("Sigma off-diagonal entries must lie in [-1, 1]")
        psd_spectrum(S, name="Sigma")
        means = np.zeros(d) if self.means is None else np.asarray(self.means, dtype=np.float64)
        stds = np.ones(d) if self.stds is None else np.asarray(self.stds, dtype=np.float64)
        if means.shape != (d,) or stds.shape != (d,):
            raise ShapeMismatch(f"means/stds must have length {d}")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(stds))):
            raise InvalidInput("means/stds must be finite")
        if np.any(stds <= 0.0):
            raise InvalidInput("stds must be strictly positive")
        object.__setattr__(self, "Sigma", S)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    @property
    def d(self) -> int:
        return int(self.Sigma.shape[0])

    @property
    def is_standard(self) -> bool:
        return bool(np.all(self.means == 0.0) and np.all(self.stds == 1.0))

    @classmethod
    def standard(cls, Sigma) -> "CorrelationSpec":
        return cls(np.asarray(Sigma, dtype=np.float64))

    @classmethod
    def from_covariance(cls, cov, means=None) -> "CorrelationSpec":
        """Normalize a covariance to unit variances; the ratio is unchanged by this."""
        C = as_sym_matrix(cov, "cov", check_symmetry=True)
        variances = np.diag(C)
        if np.any(variances <= 0.0):
            raise InvalidInput("covariance must have positive variances")
        stds = np.sqrt(variances)
        Sigma = C / np.outer(stds, stds)
        np.fill_diagonal(Sigma, 1.0)
        Sigma = np.clip(Sigma, -1.0, 1.0)
        return cls(Sigma, means=means, stds=stds)


@dataclass(frozen=True)
class BlockGaussianSpec:
    """Two-block Gaussian [[I, S], [S^T, I]] with cross block S = Sigma12."""

    Sigma12: np.ndarray

    def __post_init__(self):
        S = np.array(self.Sigma12, dtype=np.float64)
        if S.ndim != 2 or S.size == 0:
            raise InvalidInput(f"Sigma12 must be a non-empty matrix, got shape {S.shape}")
        if not np.all(np.isfinite(S)):
            raise InvalidInput("Sigma12 has non-finite entries")
        s_max = float(singular_values(S)[0])
        if s_max > 1.0 + SIGMA_MAX_TOL:
            raise NotPositiveDefinite(
                f"block matrix is not PSD: sigma_max(Sigma12) = {s_max:.6g} > 1"
            )
        S.setflags(write=False)
        object.__setattr__(self, "Sigma12", S)

    @property
    def d1(self) -> int:
        return int(self.Sigma12.shape[0])

    @property
    def d2(self) -> int:
        return int(self.Sigma12.shape[1])

    @property
    def sigma_max(self) -> float:
        return float(singular_values(self.Sigma12)[0])

    def block_matrix(self) -> np.ndarray:
        top = np.hstack([np.eye(self.d1), self.Sigma12])
        bottom = np.hstack([self.Sigma12.T, np.eye(self.d2)])
        return np.vstack([top, bottom])


@dataclass(frozen=True)
class HermiteAdditiveFunction:
    """sum_i g_i(x_i) with g_i(x) sqrt(phi(x)) = sum_n alpha_i^(n) psi_n(x).

    ``coefficients[n, i]`` is alpha_i^(n); levels 0..N, features 0..d-1.
    """

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=np.float64)
        if c.ndim != 2:
            raise ShapeMismatch(f"coefficients must be (N + 1, d), got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise InvalidInput("coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @property
    def max_order(self) -> int:
        return int(self.coefficients.shape[0] - 1)

    @property
    def d(self) -> int:
        return int(self.coefficients.shape[1])

    def evaluate(self, X) -> np.ndarray:
        """Values at standard-normal inputs X of shape (n, d); g_i(x) = sum_n alpha_i^(n) He_n(x)/sqrt(n!)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.d:
            raise ShapeMismatch(f"expected {self.d} features, got {X.shape[1]}")
        basis = probabilist_all(X, self.max_order)
        return np.einsum("kni,ki->n", basis, self.coefficients)


def rer_bound_pairwise(P: CorrelationSpec) -> float:
    """d / lambda_min(Sigma_P); means and stds do not enter."""
    low = lambda_min(P.Sigma)
    if low <= SINGULAR_TOL:
        return math.inf
    return P.d / low


@dataclass(frozen=True)
class TwoBlockCertificate:
    bound: float
    sigma_max: float
    lambda_min_block: float
    block_gap: float


def two_block_certificate(B: BlockGaussianSpec) -> TwoBlockCertificate:
    s_max = B.sigma_max
    low = lambda_min(B.block_matrix())
    gap = abs(low - (1.0 - s_max))
    if gap > BLOCK_GAP_TOL:
        raise NumericalFailure(
            f"lambda_min(block) = {low:.17g} differs from 1 - sigma_max = {1.0 - s_max:.17g}"
        )
    bound = math.inf if s_max >= 1.0 - SINGULAR_TOL else 2.0 / (1.0 - s_max)
    return TwoBlockCertificate(bound, s_max, low, gap)


def rer_bound_two_block(B: BlockGaussianSpec) -> float:
    return two_block_certificate(B).bound


def _max_off_diagonal(M: np.ndarray) -> float:
    if M.shape[0] < 2:
        return 0.0
    return float(np.max(np.abs(M[~np.eye(M.shape[0], dtype=bool)])))


@dataclass(frozen=True)
class KappaCertificate:
    """kappa over levels 0..stop_level, plus a bound on every later level."""

    kappa: float
    argmax_level: int
    stop_level: int
    early_stop: bool
    tail_bound: float
    level_values: Tuple[float, ...] = field(default=())


def exact_kappa_certificate(
    P: CorrelationSpec,
    Q: CorrelationSpec,
    N: int = KAPPA_TRUNCATION,
    **eig_kwargs,
) -> KappaCertificate:
    """sup over levels n of lambda_max-gen(Sigma_Q^(n), Sigma_P^(n)).

    Level 0 (all-ones matrices on both sides) contributes 1. Iteration stops at
    n* once every off-diagonal entry of both powers is below 1e-12; levels
    after n* are bounded by (1 + d m_Q^n*) / (1 - d m_P^n*) via Gershgorin.
    """
    if P.d != Q.d:
        raise ShapeMismatch(f"dimension mismatch: P has d = {P.d}, Q has d = {Q.d}")
    if N < 0:
        raise InvalidInput(f"truncation must be >= 0, got {N}")
    if not (P.is_standard and Q.is_standard):
        logger.info("non-standard means/stds ignored; kappa depends on the correlation matrices only")

    d = P.d
    best, best_level = 1.0, 0
    values = [1.0]
    stop, early = 0, False
    m_p = m_q = 1.0
    for n in range(1, N + 1):
        Mp = elementwise_power(P.Sigma, n)
        Mq = elementwise_power(Q.Sigma, n)
        value = generalized_max_eig(Mq, Mp, **eig_kwargs)
        values.append(value)
        if value > best:
            best, best_level = value, n
        stop = n
        m_p, m_q = _max_off_diagonal(Mp), _max_off_diagonal(Mq)
        if max(m_p, m_q) < KAPPA_STOP_TOL:
            early = True
            break
    if stop == 0 or d * m_p >= 1.0:
        tail = math.inf
    else:
        tail = (1.0 + d * m_q) / (1.0 - d * m_p)
    logger.debug(f"kappa = {best} at level {best_level}, stopped at {stop}, tail bound {tail}")
    return KappaCertificate(best, best_level, stop, early, tail, tuple(values))


def exact_kappa(P: CorrelationSpec, Q: CorrelationSpec, N: int = KAPPA_TRUNCATION, **eig_kwargs) -> float:
    return exact_kappa_certificate(P, Q, N, **eig_kwargs).kappa


def linear_model_ratio(P: CorrelationSpec, Q: CorrelationSpec) -> float:
    """Ratio restricted to linear models: lambda_max-gen(Sigma_Q, Sigma_P)."""
    if P.d != Q.d:
        raise ShapeMismatch(f"dimension mismatch: P has d = {P.d}, Q has d = {Q.d}")
    return generalized_max_eig(Q.Sigma, P.Sigma)


def additive_norm_sq(alpha: HermiteAdditiveFunction, Sigma) -> float:
    """E[(sum_i g_i(x_i))^2] = sum_n alpha^(n)^T Sigma^(n) alpha^(n)."""
    S = as_sym_matrix(Sigma, "Sigma")
    if S.shape[0] != alpha.d:
        raise ShapeMismatch(f"Sigma is {S.shape[0]} x {S.shape[0]} but alpha has {alpha.d} features")
    total = 0.0
    for n in range(alpha.max_order + 1):
        a = alpha.coefficients[n]
        total += float(a @ elementwise_power(S, n) @ a)
    return total


# ---------------------------------------------------------------------------
# 逐元素幂与分块矩阵检验
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatrixCheckReport:
    name: str
    passed: bool
    values: Tuple[float, ...]
    message: str = ""


def _correlation_matrix(Sigma) -> np.ndarray:
    return CorrelationSpec.standard(Sigma).Sigma


def lemma3_check(Sigma, k_max: int = 6) -> MatrixCheckReport:
    """lambda_min(Sigma^(k)) >= lambda_min(Sigma) for k = 1..k_max."""
    S = _correlation_matrix(Sigma)
    base = lambda_min(S)
    mins = tuple(lambda_min(elementwise_power(S, k)) for k in range(1, k_max + 1))
    failed = [k + 1 for k, v in enumerate(mins) if v < base - POWER_EIG_TOL]
    msg = "" if not failed else f"elementwise powers {failed} drop below lambda_min(Sigma) = {base:.6g}"
    return MatrixCheckReport("elementwise-power lambda_min", not failed, mins, msg)


def _checked_block(Sigma12) -> BlockGaussianSpec:
    spec = BlockGaussianSpec(Sigma12)
    psd_spectrum(spec.block_matrix(), name="block matrix")
    return spec


def lemma4_check(Sigma12) -> bool:
    """PSD block matrix implies sigma_max(Sigma12) <= 1."""
    return _checked_block(Sigma12).sigma_max <= 1.0 + SIGMA_MAX_TOL


def lemma5_check(Sigma12) -> MatrixCheckReport:
    """lambda_min(block) = 1 - sigma_max(Sigma12)."""
    spec = _checked_block(Sigma12)
    s_max = spec.sigma_max
    low = lambda_min(spec.block_matrix())
    gap = abs(low - (1.0 - s_max))
    passed = gap <= BLOCK_GAP_TOL
    msg = "" if passed else f"gap {gap:.3e} exceeds {BLOCK_GAP_TOL}"
    return MatrixCheckReport("block lambda_min = 1 - sigma_max", passed, (low, s_max, gap), msg)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

class GaussianSampler:
    """Seeded N(mean, Sigma) sampler.

    Standard normals come from Box-Muller on the generator's uniforms and are
    mapped through a Cholesky factor (or a symmetric square root when Sigma is
    only semidefinite). One sampler owns one generator; use ``reseeded`` for
    independent streams.
    """

    def __init__(self, Sigma, mean=None, seed=None):
        self.Sigma = as_sym_matrix(Sigma, "Sigma", check_symmetry=True)
        self.dim = self.Sigma.shape[0]
        self.mean = np.zeros(self.dim) if mean is None else np.asarray(mean, dtype=np.float64)
        if self.mean.shape != (self.dim,):
            raise ShapeMismatch(f"mean must have length {self.dim}")
        try:
            self._factor = cholesky(self.Sigma)
        except NotPositiveDefinite:
            spec = psd_spectrum(self.Sigma, name="Sigma")
            self._factor = spec.eigenvectors * np.sqrt(spec.eigenvalues)
        self._rng = np.random.default_rng(seed)

    def reseeded(self, seed) -> "GaussianSampler":
        return GaussianSampler(self.Sigma, self.mean, seed)

    def _standard_normal(self, count: int) -> np.ndarray:
        pairs = (count + 1) // 2
        u1 = self._rng.random(pairs)
        u2 = self._rng.random(pairs)
        radius = np.sqrt(-2.0 * np.log1p(-u1))
        angle = 2.0 * math.pi * u2
        z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
        return z[:count]

    def draw(self, n: int) -> np.ndarray:
        """n samples as rows of an (n, dim) array."""
        if n < 0:
            raise InvalidInput(f"sample count must be >= 0, got {n}")
        Z = self._standard_normal(n * self.dim).reshape(n, self.dim)
        return self.mean + Z @ self._factor.T

    def __iter__(self):
        while True:
            for row in self.draw(1024):
                yield row


def gaussian_sampler(Sigma, mean=None, seed=None) -> GaussianSampler:
    return GaussianSampler(Sigma, mean, seed)


@dataclass(frozen=True)
class MonteCarloRatio:
    ratio: float
    stderr: float
    numerator: float
    denominator: float
    n_samples: int

    @property
    def relative_stderr(self) -> float:
        return self.stderr / self.ratio if self.ratio > 0 else 0.0


def mc_ratio_estimate(
    f1: Callable[[np.ndarray], np.ndarray],
    f2: Callable[[np.ndarray], np.ndarray],
    p_sampler: GaussianSampler,
    q_sampler: GaussianSampler,
    n_samples: int,
    seed,
) -> MonteCarloRatio:
    """E_Q[(f1 + f2)^2] / E_P[(f1 + f2)^2] with a delta-method standard error.

    f1 and f2 receive the full (n, dim) sample matrix. The samplers are
    reseeded from ``seed`` so the estimate is deterministic.
    """
    if n_samples < MIN_MC_SAMPLES:
        raise InvalidInput(f"n_samples must be >= {MIN_MC_SAMPLES}, got {n_samples}")
    p_seed, q_seed = np.random.SeedSequence(seed).spawn(2)
    Xp = p_sampler.reseeded(p_seed).draw(n_samples)
    Xq = q_sampler.reseeded(q_seed).draw(n_samples)
    sq_p = (np.asarray(f1(Xp)) + np.asarray(f2(Xp))) ** 2
    sq_q = (np.asarray(f1(Xq)) + np.asarray(f2(Xq))) ** 2
    den = float(np.mean(sq_p))
    num = float(np.mean(sq_q))
    if not (math.isfinite(den) and math.isfinite(num)):
        raise NumericalFailure("non-finite Monte Carlo moment")
    if den <= 0.0:
        raise DegenerateDenominator("estimated E_P[(f1 + f2)^2] is zero")
    ratio = num / den
    var_num = float(np.var(sq_q)) / n_samples
    var_den = float(np.var(sq_p)) / n_samples
    stderr = math.sqrt(var_num / den ** 2 + num ** 2 * var_den / den ** 4)
    return MonteCarloRatio(ratio, stderr, num, den, n_samples)


# ---------------------------------------------------------------------------
# Random instances and sweeps
# ---------------------------------------------------------------------------

def random_correlation(d: int, seed, min_eig: float = 0.05) -> np.ndarray:
    """Random correlation matrix with every eigenvalue >= min_eig."""
    if d < 1:
        raise InvalidInput(f"dimension must be >= 1, got {d}")
    if not 0.0 <= min_eig < 1.0:
        raise InvalidInput(f"min_eig must lie in [0, 1), got {min_eig}")
    rng = np.random.default_rng(seed)
    if d == 1:
        return np.ones((1, 1))
    eigs = min_eig + d * (1.0 - min_eig) * rng.dirichlet(np.ones(d))
    eigs *= d / eigs.sum()
    S = scipy_random_correlation.rvs(eigs, random_state=rng)
    S = (S + S.T) / 2.0
    np.fill_diagonal(S, 1.0)
    return np.clip(S, -1.0, 1.0)


def random_admissible_sigma12(d1: int, d2: int, seed, gamma: float = 1.0, s_max: float = ADMISSIBLE_S_MAX) -> np.ndarray:
    """gamma * U1 diag(s) U2^T with s ~ U[0, s_max]; sigma_max <= gamma * s_max."""
    rng = np.random.default_rng(seed)
    U1 = random_orthonormal(d1, rng)
    U2 = random_orthonormal(d2, rng)
    m = min(d1, d2)
    S = np.zeros((d1, d2))
    S[np.arange(m), np.arange(m)] = rng.uniform(0.0, s_max, size=m)
    return gamma * U1 @ S @ U2.T


def pairwise_soundness_sweep(
    n_pairs: int = 100,
    dims: Sequence[int] = (2, 3, 5),
    seed=0,
    N: int = KAPPA_TRUNCATION,
    min_eig: float = 0.05,
) -> pd.DataFrame:
    """exact kappa vs d / lambda_min(Sigma_P) on random standard pairs."""
    rng = np.random.default_rng(seed)
    rows = []
    for pair in range(n_pairs):
        d = int(dims[pair % len(dims)])
        P = CorrelationSpec.standard(random_correlation(d, rng, min_eig))
        Q = CorrelationSpec.standard(random_correlation(d, rng, 0.0))
        kappa = exact_kappa(P, Q, N)
        bound = rer_bound_pairwise(P)
        rows.append({
            "pair": pair,
            "d": d,
            "lambda_min_p": lambda_min(P.Sigma),
            "kappa": kappa,
            "bound": bound,
            "sound": kappa <= bound + 1e-8,
        })
    return pd.DataFrame(rows)


def random_relu_block_function(d_in: int, hidden: int, rng) -> Callable[[np.ndarray], np.ndarray]:
    W = rng.standard_normal((hidden, d_in)) / math.sqrt(d_in)
    b = rng.standard_normal(hidden) * 0.5
    a = rng.standard_normal(hidden) / math.sqrt(hidden)
    return lambda X: np.maximum(X @ W.T + b, 0.0) @ a


def two_block_soundness_sweep(
    n_instances: int = 20,
    n_functions: int = 50,
    d1: int = 4,
    d2: int = 4,
    n_samples: int = 100000,
    seed=0,
    hidden: int = 8,
) -> pd.DataFrame:
    """Sampled two-block soundness: MC ratio vs 2/(1 - sigma_max(Sigma12_P)).

    Q is a second admissible block Gaussian, so both share identity marginals.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for instance in range(n_instances):
        P = BlockGaussianSpec(random_admissible_sigma12(d1, d2, rng, s_max=0.9))
        Q = BlockGaussianSpec(random_admissible_sigma12(d1, d2, rng, s_max=0.9))
        bound = rer_bound_two_block(P)
        p_sampler = GaussianSampler(P.block_matrix())
        q_sampler = GaussianSampler(Q.block_matrix())
        for j in range(n_functions):
            g1 = random_relu_block_function(d1, hidden, rng)
            g2 = random_relu_block_function(d2, hidden, rng)
            est = mc_ratio_estimate(
                lambda X, g=g1: g(X[:, :d1]),
                lambda X, g=g2: g(X[:, d1:]),
                p_sampler,
                q_sampler,
                n_samples,
                int(rng.integers(0, 2 ** 32)),
            )
            rows.append({
                "instance": instance,
                "function": j,
                "sigma_max": P.sigma_max,
                "ratio": est.ratio,
                "stderr": est.stderr,
                "bound": bound,
                "sound": est.ratio <= bound * (1.0 + 3.0 * est.relative_stderr),
            })
    return pd.DataFrame(rows)