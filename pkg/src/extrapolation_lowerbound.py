"""Bump networks and the unbounded-ratio witness on the unit sphere.

A single ReLU neuron with w = t, b = -1 + eps^2/2 and output weight
a = 8 / (3 eps^2) vanishes outside the eps-cap around t and is >= 1 inside the
eps/2-cap. Summing bumps over a cover of the target points gives a network that
is identically zero on the source support and as large as we like on the target.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.extrapolation_errors import InvalidInput, SeparationViolated, ShapeMismatch

logger = logging.getLogger(__name__)

UNIT_TOL = 1e-12
# 覆盖半径略小于 eps/2，保证覆盖点上的取值严格 >= 1
COVER_SHRINK = 1.0 - 1e-6
# 预激活在 P 上允许的舍入误差
ACTIVE_TOL = 1e-12


def _as_points(points, name: str) -> np.ndarray:
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise InvalidInput(f"{name} must be a list of vectors, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInput(f"{name} has non-finite entries")
    return X


def _check_unit(X: np.ndarray, name: str) -> None:
    if X.size and np.max(np.abs(np.linalg.norm(X, axis=1) - 1.0)) > UNIT_TOL:
        raise InvalidInput(f"{name} must contain unit vectors")


@dataclass(frozen=True)
class BumpNetwork:
    """f(x) = sum_j a_j ReLU(w_j^T x + b_j)."""

    a: np.ndarray
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64).reshape(-1)
        W = np.atleast_2d(np.asarray(self.W, dtype=np.float64))
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if not (a.shape[0] == W.shape[0] == b.shape[0]):
            raise ShapeMismatch(f"neuron count mismatch: a {a.shape}, W {W.shape}, b {b.shape}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @property
    def n_neurons(self) -> int:
        return int(self.a.shape[0])

    @property
    def dim(self) -> int:
        return int(self.W.shape[1])

    @property
    def neurons(self) -> Tuple[Tuple[float, np.ndarray, float], ...]:
        return tuple((float(a), w, float(b)) for a, w, b in zip(self.a, self.W, self.b))

    def pre_activations(self, X) -> np.ndarray:
        X = _as_points(X, "X")
        if X.shape[1] != self.dim:
            raise ShapeMismatch(f"expected {self.dim}-dimensional inputs, got {X.shape[1]}")
        return X @ self.W.T + self.b

    def evaluate(self, X) -> np.ndarray:
        return np.maximum(self.pre_activations(X), 0.0) @ self.a

    def scaled(self, c: float) -> "BumpNetwork":
        return BumpNetwork(c * self.a, self.W, self.b)

    @staticmethod
    def concat(networks) -> "BumpNetwork":
        networks = list(networks)
        if not networks:
            raise InvalidInput("cannot concatenate an empty list of networks")
        return BumpNetwork(
            np.concatenate([n.a for n in networks]),
            np.vstack([n.W for n in networks]),
            np.concatenate([n.b for n in networks]),
        )


def bump(t, eps: float) -> BumpNetwork:
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if abs(np.linalg.norm(t) - 1.0) > UNIT_TOL:
        raise InvalidInput(f"bump center must be a unit vector (norm {np.linalg.norm(t):.15g})")
    if not 0.0 < eps <= 2.0:
        raise InvalidInput(f"eps must lie in (0, 2], got {eps}")
    return BumpNetwork(np.array([8.0 / (3.0 * eps * eps)]), t.reshape(1, -1), np.array([-1.0 + eps * eps / 2.0]))


@dataclass(frozen=True)
class SphereCover:
    centers: np.ndarray
    radius: float

    def covers(self, points, tol: float = 0.0) -> bool:
        X = _as_points(points, "points")
        dist = np.linalg.norm(X[:, None, :] - self.centers[None, :, :], axis=2)
        return bool(np.all(dist.min(axis=1) <= self.radius + tol))


def greedy_cover(points, radius: float) -> SphereCover:
    """Farthest-point greedy cover; centers are a subset of the input points."""
    X = _as_points(points, "points")
    if X.shape[0] == 0:
        raise InvalidInput("cannot cover an empty point set")
    if radius <= 0.0:
        raise InvalidInput(f"radius must be positive, got {radius}")
    chosen = [0]
    nearest = np.linalg.norm(X - X[0], axis=1)
    while True:
        far = int(np.argmax(nearest))
        if nearest[far] <= radius:
            break
        chosen.append(far)
        nearest = np.minimum(nearest, np.linalg.norm(X - X[far], axis=1))
    logger.debug(f"greedy cover: {len(chosen)} centers for {X.shape[0]} points at radius {radius}")
    return SphereCover(X[chosen].copy(), radius)


@dataclass(frozen=True)
class WitnessReport:
    n_centers: int
    eps: float
    scale: float
    max_abs_on_p: float
    min_on_q: float
    mean_sq_on_q: float


def build_witness(P_support, Q_points, eps: float, scale: float = 1.0) -> Tuple[BumpNetwork, WitnessReport]:
    """c * sum of bumps over a greedy eps/2-cover of Q_points.

    Every Q point must be at distance >= eps from every P point; the check is
    done on the pre-activations so that the network is exactly 0 on P.
    """
    P = _as_points(P_support, "P_support")
    Q = _as_points(Q_points, "Q_points")
    if Q.shape[0] == 0:
        raise InvalidInput("Q_points is empty")
    if P.shape[0] and P.shape[1] != Q.shape[1]:
        raise ShapeMismatch(f"P points are {P.shape[1]}-dimensional, Q points {Q.shape[1]}-dimensional")
    if scale <= 0.0:
        raise InvalidInput(f"scale must be positive, got {scale}")
    _check_unit(P, "P_support")
    _check_unit(Q, "Q_points")

    if P.shape[0]:
        gaps = np.linalg.norm(Q[:, None, :] - P[None, :, :], axis=2)
        if gaps.min() < eps - UNIT_TOL:
            raise SeparationViolated(
                f"a Q point is at distance {gaps.min():.6g} < eps = {eps} from the P support"
            )

    cover = greedy_cover(Q, eps / 2.0 * COVER_SHRINK)
    net = BumpNetwork.concat(bump(center, eps) for center in cover.centers).scaled(scale)

    if P.shape[0]:
        # P points at distance exactly eps sit on the boundary of a cap and can
        # round to a tiny positive pre-activation
        excess = net.pre_activations(P).max(axis=0)
        if excess.max() > ACTIVE_TOL:
            raise SeparationViolated(f"a bump is active on the P support (pre-activation {excess.max():.3g})")
        touching = excess > 0.0
        if np.any(touching):
            b = net.b.copy()
            b[touching] -= excess[touching] + ACTIVE_TOL
            net = BumpNetwork(net.a, net.W, b)
            logger.debug(f"witness: lowered {int(touching.sum())} bias(es) touching the P support")
        if np.any(net.pre_activations(P) > 0.0):
            raise SeparationViolated("a bump is active on the P support")
        on_p = net.evaluate(P)
        max_abs_p = float(np.max(np.abs(on_p)))
    else:
        max_abs_p = 0.0
    on_q = net.evaluate(Q)
    report = WitnessReport(
        n_centers=int(cover.centers.shape[0]),
        eps=eps,
        scale=scale,
        max_abs_on_p=max_abs_p,
        min_on_q=float(np.min(on_q)),
        mean_sq_on_q=float(np.mean(on_q ** 2)),
    )
    logger.info(f"witness: {report.n_centers} bumps, min on Q {report.min_on_q:.6g}, max |f| on P {report.max_abs_on_p}")
    return net, report


def random_sphere_points(n: int, d: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def equator_band(n: int, d: int, seed, half_width: float = 0.5) -> np.ndarray:
    """Unit vectors with |x_d| <= half_width."""
    if d < 2:
        raise InvalidInput("the equator band needs d >= 2")
    rng = np.random.default_rng(seed)
    last = rng.uniform(-half_width, half_width, size=n)
    rest = rng.standard_normal((n, d - 1))
    rest /= np.linalg.norm(rest, axis=1, keepdims=True)
    X = np.hstack([rest * np.sqrt(1.0 - last ** 2)[:, None], last[:, None]])
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def north_pole(d: int) -> np.ndarray:
    e = np.zeros((1, d))
    e[0, -1] = 1.0
    return e
