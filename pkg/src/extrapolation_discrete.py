"""Discrete-feature extrapolation certificates.

A joint table over k discrete features induces the signless-Laplacian kernel
K_P (diagonal blocks: marginal masses, off-diagonal blocks: pairwise joints) in
the indicator basis b_{i,t}(x) = 1{x_i = t}. The exact error ratio over additive
models is the generalized maximum eigenvalue of (K_Q, K_P); the spectral bound
is k / lambda_k(Kbar_P) times the largest marginal density ratio.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order

from src.extrapolation_errors import InvalidInput, ShapeMismatch, Unsupported
from src.extrapolation_numerics import (
    NULL_TOL,
    GeneralizedMax,
    as_sym_matrix,
    generalized_max_eig_witness,
    psd_spectrum,
    sym_eig,
    svd,
)

logger = logging.getLogger(__name__)

MAX_FEATURES = 5
MAX_ARITY = 12
MASS_TOL = 1e-12
EDGE_TOL = 1e-15
CONNECTIVITY_EIG_TOL = 1e-8
EIG_SNAP_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteJoint:
    """Dense joint probability table of shape r_1 x ... x r_k."""

    table: np.ndarray

    def __post_init__(self):
        table = np.array(self.table, dtype=np.float64)
        if table.ndim < 2:
            raise InvalidInput(f"a joint needs k >= 2 features, got k = {table.ndim}")
        if table.ndim > MAX_FEATURES:
            raise InvalidInput(f"k = {table.ndim} exceeds the supported maximum {MAX_FEATURES}")
        if any(r < 1 or r > MAX_ARITY for r in table.shape):
            raise InvalidInput(f"arities {table.shape} must lie in [1, {MAX_ARITY}]")
        if not np.all(np.isfinite(table)) or np.any(table < 0):
            raise InvalidInput("joint masses must be finite and nonnegative")
        total = float(table.sum())
        if abs(total - 1.0) > MASS_TOL:
            raise InvalidInput(f"joint masses sum to {total!r}, expected 1")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @classmethod
    def from_table(cls, table, normalize: bool = False) -> "DiscreteJoint":
        arr = np.array(table, dtype=np.float64)
        if normalize:
            total = arr.sum()
            if total <= 0:
                raise InvalidInput("cannot normalize a table with no mass")
            arr = arr / total
        return cls(arr)

    @property
    def k(self) -> int:
        return self.table.ndim

    @property
    def arities(self) -> Tuple[int, ...]:
        return tuple(int(r) for r in self.table.shape)

    @property
    def block_offsets(self) -> Tuple[int, ...]:
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.arities)]))

    def marginal(self, i: int) -> np.ndarray:
        others = tuple(a for a in range(self.k) if a != i)
        return self.table.sum(axis=others)

    def pairwise(self, i: int, j: int) -> np.ndarray:
        """Matrix with entry (a, b) = P(x_i = a, x_j = b)."""
        if i == j:
            return np.diag(self.marginal(i))
        others = tuple(a for a in range(self.k) if a not in (i, j))
        pair = self.table.sum(axis=others) if others else self.table
        return pair if i < j else pair.T


@dataclass(frozen=True)
class KernelMatrix:
    """Signless-Laplacian kernel K_P and its normalization D^{-1/2} K_P D^{-1/2}."""

    r: int
    block_offsets: Tuple[int, ...]
    K: np.ndarray
    Kbar: np.ndarray
    diag_D: np.ndarray

    def block(self, i: int, j: int) -> np.ndarray:
        o = self.block_offsets
        return self.K[o[i]:o[i + 1], o[j]:o[j + 1]]

    @property
    def supported(self) -> np.ndarray:
        return self.diag_D > 0


@dataclass(frozen=True)
class AdditiveCoefficientsDiscrete:
    """Additive function sum_i f_i(x_i) in the indicator basis: v_t = f_{i(t)}(t)."""

    v: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=np.float64).ravel()
        if not np.all(np.isfinite(v)):
            raise InvalidInput("additive coefficients must be finite")
        object.__setattr__(self, "v", v)

    @classmethod
    def from_components(cls, components: Sequence[Sequence[float]]) -> "AdditiveCoefficientsDiscrete":
        return cls(np.concatenate([np.asarray(c, dtype=np.float64) for c in components]))

    def evaluate(self, arities: Sequence[int]) -> np.ndarray:
        """Values of the additive function on the full product space."""
        arities = tuple(int(r) for r in arities)
        if self.v.shape[0] != sum(arities):
            raise ShapeMismatch(f"coefficient length {self.v.shape[0]} != sum of arities {sum(arities)}")
        values = np.zeros(arities)
        offset = 0
        for i, r in enumerate(arities):
            shape = [1] * len(arities)
            shape[i] = r
            values = values + self.v[offset:offset + r].reshape(shape)
            offset += r
        return values


@dataclass(frozen=True)
class NullBasis:
    """Shared sign vectors u_t plus any further null directions of K_P."""

    analytic: np.ndarray
    extra: np.ndarray

    @property
    def vectors(self) -> np.ndarray:
        return np.vstack([self.analytic, self.extra])


@dataclass(frozen=True)
class DiscreteBoundCertificate:
    bound: float
    certificate: str
    eigenvalue_name: str
    eigenvalue: float
    marginal_ratio: float
    k: int


@dataclass(frozen=True)
class LossTransferReport:
    """Loss transfer check E_Q[(y-f)^2] <= (8 tau + 4) eps_F + 4 tau E_P[(y-f)^2]."""

    eps_f: float
    tau: float
    p_error: float
    lhs: float
    rhs: float
    holds: bool


def _check_same_arities(P: DiscreteJoint, Q: DiscreteJoint) -> None:
    if P.arities != Q.arities:
        raise ShapeMismatch(f"arity mismatch: P {P.arities} vs Q {Q.arities}")


def build_kernel(J: DiscreteJoint) -> KernelMatrix:
    """Assemble K_P from the pairwise marginals of J and normalize it."""
    offsets = J.block_offsets
    r = offsets[-1]
    K = np.zeros((r, r))
    for i in range(J.k):
        for j in range(J.k):
            K[offsets[i]:offsets[i + 1], offsets[j]:offsets[j + 1]] = J.pairwise(i, j)
    K = as_sym_matrix(K, "K_P")
    diag_D = np.diag(K).copy()
    # zero-mass coordinates: pseudo-inverse of D^{1/2}
    inv_sqrt = np.zeros(r)
    positive = diag_D > 0
    inv_sqrt[positive] = 1.0 / np.sqrt(diag_D[positive])
    Kbar = as_sym_matrix(inv_sqrt[:, None] * K * inv_sqrt[None, :], "Kbar_P")
    psd_spectrum(K, name="K_P")
    return KernelMatrix(r=r, block_offsets=offsets, K=K, Kbar=Kbar, diag_D=diag_D)


def normalized_eigenvalues(kernel: KernelMatrix) -> np.ndarray:
    """Ascending spectrum of Kbar_P restricted to positive-mass coordinates.

    Eigenvalues within EIG_SNAP_TOL of an integer are snapped to it; product
    distributions have the exact spectrum {0, 1, k}.
    """
    supp = kernel.supported
    eigs = sym_eig(kernel.Kbar[np.ix_(supp, supp)]).eigenvalues.copy()
    nearest = np.rint(eigs)
    snap = np.abs(eigs - nearest) <= EIG_SNAP_TOL
    eigs[snap] = nearest[snap]
    return eigs


def null_basis(J: DiscreteJoint, null_tol: float = NULL_TOL) -> NullBasis:
    offsets = J.block_offsets
    r = offsets[-1]
    analytic = np.zeros((J.k - 1, r))
    for t in range(J.k - 1):
        analytic[t, offsets[t]:offsets[t + 1]] = 1.0
        analytic[t, offsets[t + 1]:offsets[t + 2]] = -1.0

    spec = psd_spectrum(build_kernel(J).K, name="K_P")
    top = spec.eigenvalues[-1]
    null = spec.eigenvectors[:, spec.eigenvalues <= null_tol * top]
    # remove the analytic span, keep what is left
    basis, _ = np.linalg.qr(analytic.T)
    residual = null - basis @ (basis.T @ null)
    extra = np.zeros((0, r))
    if residual.shape[1] > 0:
        U, s, _ = svd(residual)
        extra = U[:, s > 1e-8].T
    return NullBasis(analytic=analytic, extra=extra)


def marginal_ratio_max(P: DiscreteJoint, Q: DiscreteJoint) -> float:
    """max over features and values of Q(x_i = t) / P(x_i = t), with 0/0 = 0."""
    _check_same_arities(P, Q)
    best = 0.0
    for i in range(P.k):
        p = P.marginal(i)
        q = Q.marginal(i)
        if np.any((p == 0) & (q > 0)):
            return math.inf
        positive = p > 0
        if np.any(positive):
            best = max(best, float(np.max(q[positive] / p[positive])))
    return best


def discrete_bound_certificate(
    P: DiscreteJoint, Q: DiscreteJoint, null_tol: float = NULL_TOL
) -> DiscreteBoundCertificate:
    _check_same_arities(P, Q)
    k = P.k
    eigs = normalized_eigenvalues(build_kernel(P))
    lam_k = float(eigs[k - 1]) if eigs.shape[0] >= k else 0.0
    ratio = marginal_ratio_max(P, Q)
    if math.isinf(ratio) or lam_k <= null_tol * max(float(eigs[-1]), 1.0):
        bound = math.inf
    else:
        bound = k * ratio / lam_k
    return DiscreteBoundCertificate(
        bound=bound,
        certificate=f"{k} * max marginal ratio / lambda_{k}(normalized signless Laplacian of P)",
        eigenvalue_name=f"lambda_{k}(Kbar_P)",
        eigenvalue=lam_k,
        marginal_ratio=ratio,
        k=k,
    )


def rer_upper_bound_discrete(P: DiscreteJoint, Q: DiscreteJoint) -> float:
    return discrete_bound_certificate(P, Q).bound


def exact_rer_discrete_witness(P: DiscreteJoint, Q: DiscreteJoint) -> GeneralizedMax:
    """Exact ratio sup_v v^T K_Q v / v^T K_P v with its maximizing coefficients."""
    _check_same_arities(P, Q)
    return generalized_max_eig_witness(build_kernel(Q).K, build_kernel(P).K)


def exact_rer_discrete(P: DiscreteJoint, Q: DiscreteJoint) -> float:
    return exact_rer_discrete_witness(P, Q).value


def is_connected(P: DiscreteJoint) -> bool:
    """BFS over the bipartite graph of P restricted to positive-mass vertices."""
    if P.k != 2:
        raise Unsupported(f"connectivity is defined for k = 2 features, got k = {P.k}")
    rows = P.marginal(0) > 0
    cols = P.marginal(1) > 0
    edges = P.table[np.ix_(rows, cols)] > EDGE_TOL
    n1, n2 = edges.shape
    adjacency = np.zeros((n1 + n2, n1 + n2), dtype=bool)
    adjacency[:n1, n1:] = edges
    adjacency[n1:, :n1] = edges.T
    reached = breadth_first_order(csr_matrix(adjacency.astype(np.float64)), 0, directed=False,
                                  return_predecessors=False)
    return len(reached) == n1 + n2


def check_prop1(
    P: DiscreteJoint,
    Q: DiscreteJoint,
    y: np.ndarray,
    fstar: AdditiveCoefficientsDiscrete,
    f: AdditiveCoefficientsDiscrete,
) -> LossTransferReport:
    _check_same_arities(P, Q)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != P.arities:
        raise ShapeMismatch(f"label table shape {y.shape} != arities {P.arities}")
    star_values = fstar.evaluate(P.arities)
    f_values = f.evaluate(P.arities)

    mixture = (P.table + Q.table) / 2.0
    eps_f = float(np.sum(mixture * (y - star_values) ** 2))
    p_error = float(np.sum(P.table * (y - f_values) ** 2))
    lhs = float(np.sum(Q.table * (y - f_values) ** 2))
    tau = exact_rer_discrete(P, Q)
    if math.isinf(tau):
        rhs = math.inf
    else:
        rhs = (8.0 * tau + 4.0) * eps_f + 4.0 * tau * p_error
    return LossTransferReport(eps_f=eps_f, tau=tau, p_error=p_error, lhs=lhs, rhs=rhs, holds=lhs <= rhs + 1e-9)


# ---------------------------------------------------------------------------
# 随机实例与示例分布
# ---------------------------------------------------------------------------

def random_joint(arities: Sequence[int], seed, density: float = 1.0) -> DiscreteJoint:
    """Random joint; each cell is kept with probability ``density``."""
    rng = np.random.default_rng(seed)
    arities = tuple(int(r) for r in arities)
    table = rng.gamma(1.0, size=arities)
    if density < 1.0:
        keep = rng.random(arities) < density
        if not keep.any():
            keep.flat[rng.integers(keep.size)] = True
        table = table * keep
    return DiscreteJoint.from_table(table, normalize=True)


def random_clusterable_joint(r1: int, r2: int, seed, n_blocks: int = 2) -> DiscreteJoint:
    """Block-diagonal joint under hidden row/column permutations (disconnected G_P)."""
    if n_blocks < 2 or n_blocks > min(r1, r2):
        raise InvalidInput(f"need 2 <= n_blocks <= min(r1, r2), got {n_blocks}")
    rng = np.random.default_rng(seed)

    def split(r: int) -> np.ndarray:
        cuts = np.sort(rng.choice(np.arange(1, r), size=n_blocks - 1, replace=False))
        labels = np.zeros(r, dtype=int)
        for c in cuts:
            labels[c:] += 1
        return labels

    row_labels = split(r1)
    col_labels = split(r2)
    table = rng.gamma(1.0, size=(r1, r2)) * (row_labels[:, None] == col_labels[None, :])
    table = table[rng.permutation(r1)][:, rng.permutation(r2)]
    return DiscreteJoint.from_table(table, normalize=True)


def uniform_joint(arities: Sequence[int]) -> DiscreteJoint:
    arities = tuple(int(r) for r in arities)
    return DiscreteJoint(np.full(arities, 1.0 / np.prod(arities)))


def sparse_connected_joint(r: int) -> DiscreteJoint:
    """Mass on (t, t) and (t, t+1): a sparse support whose bipartite graph is a path."""
    table = np.zeros((r, r))
    for t in range(r):
        table[t, t] = 1.0
        if t + 1 < r:
            table[t, t + 1] = 1.0
    return DiscreteJoint.from_table(table, normalize=True)


def shifted_support_joint(r: int, shift: Optional[int] = None) -> DiscreteJoint:
    """Uniform marginals, mass on (t, t + shift mod r): barely overlaps a banded P."""
    shift = r // 2 if shift is None else shift
    table = np.zeros((r, r))
    for t in range(r):
        table[t, (t + shift) % r] = 1.0
    return DiscreteJoint.from_table(table, normalize=True)


def discrete_soundness_sweep(
    n_instances: int,
    k: int,
    max_arity: int,
    seed,
    clusterable_every: int = 0,
) -> pd.DataFrame:
    """Exact ratio vs spectral bound on random instances.

    Q always has full support; P alternates dense and sparse supports, and for
    k = 2 every ``clusterable_every``-th P is block-diagonal.
    """
    streams = np.random.SeedSequence(seed).spawn(n_instances)
    rows: List[dict] = []
    for idx, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        arities = tuple(int(a) for a in rng.integers(2, max_arity + 1, size=k))
        clustered = k == 2 and clusterable_every > 0 and idx % clusterable_every == 0
        if clustered:
            P = random_clusterable_joint(arities[0], arities[1], rng)
        else:
            density = 1.0 if idx % 2 == 0 else float(rng.uniform(0.3, 0.9))
            P = random_joint(arities, rng, density=density)
        Q = random_joint(arities, rng)
        cert = discrete_bound_certificate(P, Q)
        exact = exact_rer_discrete(P, Q)
        row = {
            "instance": idx,
            "arities": "x".join(str(a) for a in arities),
            "clusterable": clustered,
            "exact": exact,
            "bound": cert.bound,
            "eigenvalue": cert.eigenvalue,
            "marginal_ratio": cert.marginal_ratio,
            "sound": exact <= cert.bound * (1.0 + 1e-8) + 1e-8,
            "same_infinity": math.isinf(exact) == math.isinf(cert.bound),
        }
        if k == 2:
            row["connected"] = is_connected(P)
            lam2 = normalized_eigenvalues(build_kernel(P))[1]
            row["cheeger_agrees"] = row["connected"] == (lam2 > CONNECTIVITY_EIG_TOL)
        rows.append(row)
    logger.info(f"discrete sweep k={k}: {len(rows)} instances")
    return pd.DataFrame(rows)
