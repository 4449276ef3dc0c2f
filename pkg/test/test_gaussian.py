"""
测试高斯外推证书：成对高斯上界、两块上界、精确 kappa、引理检验、采样器与蒙特卡洛比值
"""
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import math

import numpy as np
import pytest

from src.extrapolation_errors import (
    DegenerateDenominator,
    InvalidInput,
    NotPositiveDefinite,
    ShapeMismatch,
)
from src.extrapolation_gaussian import (
    BlockGaussianSpec,
    CorrelationSpec,
    GaussianSampler,
    HermiteAdditiveFunction,
    additive_norm_sq,
    exact_kappa,
    exact_kappa_certificate,
    lemma3_check,
    lemma4_check,
    lemma5_check,
    linear_model_ratio,
    mc_ratio_estimate,
    random_admissible_sigma12,
    random_correlation,
    rer_bound_pairwise,
    rer_bound_two_block,
    pairwise_soundness_sweep,
    two_block_soundness_sweep,
    two_block_certificate,
)
from src.extrapolation_numerics import lambda_min, random_orthonormal

NOT_PSD = np.array([[1.0, 0.9, 0.9], [0.9, 1.0, -0.9], [0.9, -0.9, 1.0]])


def _corr(rho):
    return np.array([[1.0, rho], [rho, 1.0]])


# ---------------------------------------------------------------------------
# CorrelationSpec / 成对高斯上界
# ---------------------------------------------------------------------------

def test_correlation_spec_validation():
    with pytest.raises(InvalidInput):
        CorrelationSpec(np.array([[2.0, 0.0], [0.0, 1.0]]))
    with pytest.raises(NotPositiveDefinite):
        CorrelationSpec(NOT_PSD)
    with pytest.raises(InvalidInput):
        CorrelationSpec(_corr(0.3), stds=np.array([1.0, -1.0]))
    with pytest.raises(ShapeMismatch):
        CorrelationSpec(_corr(0.3), means=np.zeros(3))


def test_from_covariance_normalizes():
    cov = np.array([[4.0, 1.2], [1.2, 1.0]])
    spec = CorrelationSpec.from_covariance(cov, means=np.array([1.0, 2.0]))
    np.testing.assert_allclose(spec.Sigma, _corr(0.6))
    np.testing.assert_allclose(spec.stds, [2.0, 1.0])
    assert not spec.is_standard


def test_pairwise_bound_examples():
    assert rer_bound_pairwise(CorrelationSpec(np.eye(3))) == pytest.approx(3.0, rel=1e-12)
    for rho in (-0.6, 0.3, 0.8):
        expected = 2.0 / (1.0 - abs(rho))
        assert rer_bound_pairwise(CorrelationSpec(_corr(rho))) == pytest.approx(expected, rel=1e-12)


def test_pairwise_bound_ignores_normalization():
    Sigma = _corr(0.45)
    plain = rer_bound_pairwise(CorrelationSpec(Sigma))
    shifted = rer_bound_pairwise(CorrelationSpec(Sigma, means=np.array([5.0, -2.0]), stds=np.array([3.0, 0.1])))
    assert plain == shifted


def test_pairwise_bound_singular_is_infinite():
    assert math.isinf(rer_bound_pairwise(CorrelationSpec(_corr(1.0))))


# ---------------------------------------------------------------------------
# 两块上界
# ---------------------------------------------------------------------------

def test_two_block_examples():
    assert rer_bound_two_block(BlockGaussianSpec(np.zeros((2, 3)))) == pytest.approx(2.0, rel=1e-12)
    S = 0.9 * random_orthonormal(3, 4)
    assert rer_bound_two_block(BlockGaussianSpec(S)) == pytest.approx(20.0, rel=1e-9)


def test_two_block_matches_block_eigenvalue():
    rng = np.random.default_rng(2)
    for _ in range(10):
        S = random_admissible_sigma12(3, 4, rng)
        B = BlockGaussianSpec(S)
        expected = 2.0 / lambda_min(B.block_matrix())
        assert rer_bound_two_block(B) == pytest.approx(expected, rel=1e-9)
        assert two_block_certificate(B).block_gap <= 1e-9


def test_two_block_rotation_invariance():
    rng = np.random.default_rng(9)
    S = random_admissible_sigma12(4, 3, rng)
    U = random_orthonormal(4, rng)
    V = random_orthonormal(3, rng)
    rotated = U.T @ S @ V
    assert rer_bound_two_block(BlockGaussianSpec(rotated)) == pytest.approx(
        rer_bound_two_block(BlockGaussianSpec(S)), rel=1e-9
    )


def test_two_block_rejects_non_psd():
    with pytest.raises(NotPositiveDefinite):
        BlockGaussianSpec(1.5 * np.eye(2))


# ---------------------------------------------------------------------------
# 精确 kappa
# ---------------------------------------------------------------------------

def test_kappa_identical_distributions():
    P = CorrelationSpec(random_correlation(4, 1))
    assert exact_kappa(P, P) == pytest.approx(1.0, rel=1e-9)


def test_kappa_two_dimensional_example():
    P = CorrelationSpec(np.eye(2))
    Q = CorrelationSpec(_corr(0.8))
    cert = exact_kappa_certificate(P, Q)
    assert cert.kappa == pytest.approx(1.8, rel=1e-9)
    assert cert.argmax_level == 1
    assert cert.kappa <= rer_bound_pairwise(P)
    assert cert.level_values[0] == 1.0
    assert cert.level_values[2] == pytest.approx(1.64, rel=1e-9)


def test_kappa_early_stop_and_tail():
    P = CorrelationSpec(_corr(0.1))
    Q = CorrelationSpec(_corr(0.2))
    cert = exact_kappa_certificate(P, Q, N=40)
    assert cert.early_stop
    assert cert.stop_level < 40
    assert cert.tail_bound == pytest.approx(1.0, abs=1e-10)


def test_kappa_dimension_mismatch():
    with pytest.raises(ShapeMismatch):
        exact_kappa(CorrelationSpec(np.eye(2)), CorrelationSpec(np.eye(3)))


def test_linear_model_consistency():
    rng = np.random.default_rng(4)
    for d in (2, 3, 5):
        P = CorrelationSpec(random_correlation(d, rng))
        Q = CorrelationSpec(random_correlation(d, rng))
        level_one = exact_kappa_certificate(P, Q, N=1).level_values[1]
        assert level_one == pytest.approx(linear_model_ratio(P, Q), rel=1e-9)


def test_pairwise_soundness_sweep():
    frame = pairwise_soundness_sweep(n_pairs=100, dims=(2, 3, 5), seed=0)
    assert len(frame) == 100
    assert (frame["lambda_min_p"] >= 0.05 - 1e-6).all()
    assert frame["sound"].all()


# ---------------------------------------------------------------------------
# 加性函数范数
# ---------------------------------------------------------------------------

def test_additive_norm_examples():
    zero = HermiteAdditiveFunction(np.zeros((3, 2)))
    assert additive_norm_sq(zero, _corr(0.5)) == 0.0
    alpha = np.zeros((2, 2))
    alpha[1, 0] = 1.0
    assert additive_norm_sq(HermiteAdditiveFunction(alpha), np.eye(2)) == pytest.approx(1.0)
    with pytest.raises(ShapeMismatch):
        additive_norm_sq(HermiteAdditiveFunction(alpha), np.eye(3))


def test_additive_norm_matches_monte_carlo():
    rng = np.random.default_rng(17)
    alpha = HermiteAdditiveFunction(rng.standard_normal((4, 2)) * 0.5)
    Sigma = _corr(0.6)
    X = GaussianSampler(Sigma, seed=3).draw(400000)
    values = alpha.evaluate(X) ** 2
    stderr = values.std() / math.sqrt(values.size)
    assert abs(values.mean() - additive_norm_sq(alpha, Sigma)) <= 4.0 * stderr


# ---------------------------------------------------------------------------
# 引理检验
# ---------------------------------------------------------------------------

def test_elementwise_power_eigenvalues():
    rng = np.random.default_rng(8)
    for d in (2, 4, 8):
        report = lemma3_check(random_correlation(d, rng, min_eig=0.0), k_max=6)
        assert report.passed, report.message
    identity = lemma3_check(np.eye(3))
    np.testing.assert_allclose(identity.values, 1.0)
    strong = lemma3_check(_corr(0.9), k_max=2)
    assert strong.values[1] == pytest.approx(0.19, rel=1e-9)
    assert strong.values[1] >= 0.1


def test_elementwise_power_rejects_non_psd():
    with pytest.raises(NotPositiveDefinite):
        lemma3_check(NOT_PSD)


def test_block_eigenvalue_identity():
    report = lemma5_check(np.array([[0.9]]))
    low, s_max, gap = report.values
    assert low == pytest.approx(0.1, rel=1e-9)
    assert s_max == pytest.approx(0.9)
    zero = lemma5_check(np.zeros((2, 2)))
    assert zero.values[0] == pytest.approx(1.0)
    assert zero.values[1] == 0.0
    rng = np.random.default_rng(6)
    for _ in range(20):
        S = random_admissible_sigma12(4, 3, rng)
        assert lemma4_check(S)
        assert lemma5_check(S).passed


def test_block_checks_reject_non_psd():
    with pytest.raises(NotPositiveDefinite):
        lemma4_check(np.array([[1.2, 0.0], [0.0, 0.3]]))


# ---------------------------------------------------------------------------
# 采样与蒙特卡洛
# ---------------------------------------------------------------------------

def test_sampler_moments():
    X = GaussianSampler(np.eye(2), seed=1).draw(100000)
    assert np.all(np.abs(X.mean(axis=0)) < 0.02)
    Sigma = random_correlation(4, 2)
    Y = GaussianSampler(Sigma, seed=5).draw(100000)
    emp = np.cov(Y, rowvar=False)
    assert np.linalg.norm(emp - Sigma) <= 0.05 * np.linalg.norm(Sigma)


def test_sampler_handles_semidefinite_and_mean():
    sampler = GaussianSampler(_corr(1.0), mean=np.array([3.0, -1.0]), seed=0)
    X = sampler.draw(2000)
    np.testing.assert_allclose(X[:, 0] - 3.0, X[:, 1] + 1.0, atol=1e-6)


def test_sampler_reproducible():
    a = GaussianSampler(_corr(0.3), seed=42).draw(10)
    b = GaussianSampler(_corr(0.3), seed=42).draw(10)
    np.testing.assert_array_equal(a, b)
    first = iter(GaussianSampler(_corr(0.3), seed=42))
    second = iter(GaussianSampler(_corr(0.3), seed=42))
    for _ in range(5):
        np.testing.assert_array_equal(next(first), next(second))


def test_mc_ratio_constant_function():
    P = GaussianSampler(_corr(0.5))
    Q = GaussianSampler(_corr(-0.5))
    est = mc_ratio_estimate(lambda X: np.ones(len(X)), lambda X: np.zeros(len(X)), P, Q, 5000, seed=1)
    assert est.ratio == 1.0
    assert est.stderr == 0.0


def test_mc_ratio_same_distribution():
    S = _corr(0.4)
    est = mc_ratio_estimate(
        lambda X: np.maximum(X[:, 0], 0.0),
        lambda X: np.sin(X[:, 1]),
        GaussianSampler(S),
        GaussianSampler(S),
        50000,
        seed=7,
    )
    assert abs(est.ratio - 1.0) <= 4.0 * est.stderr


def test_mc_ratio_deterministic_and_guarded():
    S = _corr(0.2)
    f1 = lambda X: X[:, 0]
    f2 = lambda X: X[:, 1] ** 2
    a = mc_ratio_estimate(f1, f2, GaussianSampler(S), GaussianSampler(np.eye(2)), 2000, seed=3)
    b = mc_ratio_estimate(f1, f2, GaussianSampler(S), GaussianSampler(np.eye(2)), 2000, seed=3)
    assert a.ratio == b.ratio
    with pytest.raises(InvalidInput):
        mc_ratio_estimate(f1, f2, GaussianSampler(S), GaussianSampler(S), 999, seed=0)
    zero = lambda X: np.zeros(len(X))
    with pytest.raises(DegenerateDenominator):
        mc_ratio_estimate(zero, zero, GaussianSampler(S), GaussianSampler(S), 1000, seed=0)


def test_two_block_sampled_soundness():
    frame = two_block_soundness_sweep(n_instances=3, n_functions=5, n_samples=20000, seed=1)
    assert len(frame) == 15
    assert (frame["sigma_max"] <= 0.9 + 1e-12).all()
    assert frame["sound"].all()


@pytest.mark.skipif(not os.environ.get("EXTRAP_RUN_SLOW"), reason="set EXTRAP_RUN_SLOW=1 for the full sweep")
def test_two_block_sampled_soundness_full():
    frame = two_block_soundness_sweep()
    assert len(frame) == 1000
    assert frame["sound"].all()
