"""
测试 Hermite 基函数与 Mehler 核
"""
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import math

import numpy as np
import pytest
from scipy.special import eval_hermite
from scipy.stats import multivariate_normal

from src.extrapolation_errors import DegenerateCorrelation, InvalidInput, NotPositiveDefinite, OrderTooLarge
from src.extrapolation_hermite import (
    PSI_SUP,
    HermiteBasis,
    MehlerSpec,
    block_kernel_eigs,
    block_kernel_value,
    density_recovery_error,
    hermite_H,
    hermite_all,
    hermite_gram,
    mehler_closed_form,
    mehler_grid_error,
    mehler_series,
    mehler_tail_bound,
    probabilist_all,
    psi,
    psi_all,
    psi_from_hermite,
)
from src.extrapolation_numerics import random_orthonormal


# ---------------------------------------------------------------------------
# 多项式与基函数
# ---------------------------------------------------------------------------

def test_hermite_polynomial_values():
    assert hermite_H(0, 3.7) == 1.0
    assert hermite_H(2, 1.0) == pytest.approx(2.0)
    x = 0.7
    assert hermite_H(5, x) == pytest.approx(32 * x ** 5 - 160 * x ** 3 + 120 * x, rel=1e-13)
    for n in range(12):
        assert hermite_H(n, x) == pytest.approx(eval_hermite(n, x), rel=1e-12)
    with pytest.raises(InvalidInput):
        hermite_H(-1, 0.0)


def test_hermite_table_matches_single_orders():
    x = np.linspace(-2.0, 2.0, 9)
    table = hermite_all(x, 15)
    assert table.shape == (16, 9)
    for n in range(16):
        np.testing.assert_allclose(table[n], hermite_H(n, x), rtol=1e-13, atol=0.0)
    assert hermite_all(0.3, 0).tolist() == [1.0]


def test_psi_values():
    assert psi(0, 0.0) == pytest.approx(0.63161878, abs=1e-8)
    assert psi(1, 0.0) == 0.0
    assert hermite_gram(3, n_points=2000)[3, 3] == pytest.approx(1.0, abs=1e-6)


def test_orthonormality():
    gram = hermite_gram(10)
    np.testing.assert_allclose(gram, np.eye(11), atol=1e-6)


def test_recurrence_matches_direct_formula():
    x = np.linspace(-6.0, 6.0, 41)
    values = psi_all(x, 30)
    for n in range(31):
        np.testing.assert_allclose(values[n], psi_from_hermite(n, x), atol=1e-10)


def test_parity():
    x = np.linspace(0.1, 5.0, 30)
    plus = psi_all(x, 40)
    minus = psi_all(-x, 40)
    for k in range(41):
        np.testing.assert_allclose(minus[k], (-1) ** k * plus[k], atol=1e-12)


def test_uniform_bound_on_psi():
    x = np.linspace(-15.0, 15.0, 3001)
    assert np.max(np.abs(psi_all(x, 120))) <= PSI_SUP


def test_probabilist_relation():
    x = np.linspace(-3.0, 3.0, 13)
    phi = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    np.testing.assert_allclose(probabilist_all(x, 8) * np.sqrt(phi), psi_all(x, 8), atol=1e-13)


def test_order_guard():
    with pytest.raises(OrderTooLarge):
        HermiteBasis(121)
    with pytest.raises(OrderTooLarge):
        HermiteBasis(10).psi(11, 0.0)
    assert HermiteBasis(10).psi_all(0.5).shape == (11,)
    with pytest.raises(InvalidInput):
        HermiteBasis(10).psi(-1, 0.0)
    with pytest.raises(InvalidInput):
        psi(-2, 0.0)
    for table in (hermite_all, psi_all, probabilist_all):
        with pytest.raises(InvalidInput):
            table(0.0, -1)
    with pytest.raises(InvalidInput):
        psi_from_hermite(-1, 0.0)


# ---------------------------------------------------------------------------
# Mehler 核
# ---------------------------------------------------------------------------

def test_rho_validation():
    with pytest.raises(DegenerateCorrelation):
        MehlerSpec(1.5)
    with pytest.raises(DegenerateCorrelation):
        mehler_closed_form(1.0, 0.0, 0.0)
    with pytest.raises(DegenerateCorrelation):
        mehler_series(0.995, 0.0, 0.0, 10)


def test_closed_form_examples():
    assert mehler_closed_form(0.0, 0.4, -1.2) == pytest.approx(psi(0, 0.4) * psi(0, -1.2), rel=1e-14)
    assert mehler_closed_form(0.7, 0.3, 1.9) == pytest.approx(mehler_closed_form(0.7, 1.9, 0.3), rel=1e-14)
    assert mehler_closed_form(0.5, 0.3, -0.7) == pytest.approx(mehler_series(0.5, 0.3, -0.7, 80), abs=1e-10)


def test_series_examples():
    assert mehler_series(0.6, 0.2, 0.9, 0) == pytest.approx(psi(0, 0.2) * psi(0, 0.9), rel=1e-14)
    assert mehler_series(0.0, 0.2, 0.9, 5) == mehler_series(0.0, 0.2, 0.9, 50)


def test_series_converges_at_strong_correlation():
    err = abs(mehler_series(0.9, 1.0, 1.0, 60) - mehler_closed_form(0.9, 1.0, 1.0))
    assert err <= mehler_tail_bound(0.9, 60)
    assert mehler_tail_bound(0.9, 60) < 1e-2


def test_grid_error():
    frame = mehler_grid_error()
    assert frame["passed"].all()
    moderate = frame[frame["rho"].abs() <= 0.5]
    assert (moderate["max_error"] <= 1e-8).all()
    assert (frame["max_error"] <= frame["tail_bound"] + 1e-8).all()


def test_density_recovery():
    for rho in (-0.9, -0.5, 0.0, 0.2, 0.9):
        assert density_recovery_error(rho) <= 1e-10


# ---------------------------------------------------------------------------
# 分块高斯核
# ---------------------------------------------------------------------------

def test_block_kernel_eigs():
    eigs = block_kernel_eigs(np.zeros((2, 2)), 3)
    assert eigs[0] == 1.0
    assert np.all(eigs[1:] == 0.0)
    eigs = block_kernel_eigs(np.diag([0.9, 0.3]), 2)
    np.testing.assert_allclose(eigs, [1.0, 0.9, 0.81, 0.3, 0.27, 0.09], atol=1e-15)


def test_block_kernel_second_eigenvalue_is_sigma_max():
    rng = np.random.default_rng(3)
    S = 0.8 * random_orthonormal(3, rng)[:, :2] @ np.diag([1.0, 0.5]) @ random_orthonormal(2, rng).T
    eigs = block_kernel_eigs(S, 3)
    assert eigs[1] == pytest.approx(0.8, rel=1e-12)


def test_block_kernel_rejects_non_psd():
    with pytest.raises(NotPositiveDefinite):
        block_kernel_eigs(np.diag([1.5, 0.2]), 2)


def test_block_kernel_value_matches_density_ratio():
    rng = np.random.default_rng(11)
    S = 0.7 * random_orthonormal(3, rng)[:, :2] @ np.diag([1.0, 0.4]) @ random_orthonormal(2, rng).T
    cov = np.block([[np.eye(3), S], [S.T, np.eye(2)]])
    joint = multivariate_normal(mean=np.zeros(5), cov=cov)
    left = multivariate_normal(mean=np.zeros(3), cov=np.eye(3))
    right = multivariate_normal(mean=np.zeros(2), cov=np.eye(2))
    for _ in range(5):
        x1 = rng.standard_normal(3)
        x2 = rng.standard_normal(2)
        expected = joint.pdf(np.concatenate([x1, x2])) / math.sqrt(left.pdf(x1) * right.pdf(x2))
        assert block_kernel_value(S, x1, x2) == pytest.approx(expected, rel=1e-10)
