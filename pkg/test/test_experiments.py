"""
测试结构化与非结构化两层网络的训练实验
"""
import os
import sys
from dataclasses import replace

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pandas as pd
import pytest

from src.extrapolation_errors import ConfigError, DegenerateCorrelation, InvalidInput
from src.extrapolation_experiments import (
    RUN_COLUMNS,
    SUMMARY_COLUMNS,
    ExperimentConfig,
    ablation_sweep,
    build_model,
    compare_models,
    discrepancy_ratio,
    embed_structured,
    make_covariances,
    make_ground_truth,
    prepare_data,
    structured_bound,
    summary_frame,
    train,
    write_run_csv,
    write_summary_csv,
)
from src.extrapolation_gaussian import GaussianSampler
from src.extrapolation_numerics import lambda_min

TINY = ExperimentConfig(
    d1=4,
    d2=4,
    gamma=0.5,
    hidden_structured=8,
    hidden_unstructured=16,
    gt_hidden=4,
    lr=1e-2,
    batch_size=64,
    batches_per_epoch=50,
    epochs=3,
    init_std=0.1,
    eval_samples=1024,
    seed=3,
)


# ---------------------------------------------------------------------------
# 配置
# ---------------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(DegenerateCorrelation):
        ExperimentConfig(gamma=1.0)
    with pytest.raises(InvalidInput):
        ExperimentConfig(lr=0.0)
    with pytest.raises(InvalidInput):
        ExperimentConfig(reg="dropout")


def test_config_from_mapping():
    config = ExperimentConfig.from_mapping({"epochs": "2", "gamma": "0.5", "reg": "l1(1e-4)"})
    assert config.epochs == 2
    assert config.gamma == 0.5
    assert config.reg == "l1"
    assert config.reg_lambda == pytest.approx(1e-4)
    assert config.reg_label == "l1(0.0001)"
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"learning_rate": "0.1"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"epochs": "many"})


# ---------------------------------------------------------------------------
# 数据
# ---------------------------------------------------------------------------

def test_covariances():
    P, Q = make_covariances(3, 3, 0.0, 1)
    np.testing.assert_array_equal(P, np.eye(6))
    np.testing.assert_array_equal(Q, np.eye(6))
    P, Q = make_covariances(4, 4, 0.9, 2)
    assert lambda_min(P) == pytest.approx(0.1, abs=1e-9)
    assert lambda_min(Q) == pytest.approx(0.1, abs=1e-9)
    np.testing.assert_array_equal(P[:4, :4], np.eye(4))
    np.testing.assert_array_equal(Q[4:, 4:], np.eye(4))
    assert not np.allclose(P[:4, 4:], Q[:4, 4:])
    assert structured_bound(ExperimentConfig(gamma=0.9)) == pytest.approx(20.0)
    with pytest.raises(DegenerateCorrelation):
        make_covariances(2, 2, 1.0, 0)


def test_sampled_cross_covariance():
    P, _ = make_covariances(3, 3, 0.8, 5)
    X = GaussianSampler(P, seed=1).draw(100000)
    cross = X[:, :3].T @ X[:, 3:] / X.shape[0]
    assert np.max(np.abs(cross - P[:3, 3:])) < 0.03


def test_ground_truth():
    points = np.random.default_rng(0).standard_normal((100, 8))
    a = make_ground_truth(TINY, 11)
    b = make_ground_truth(TINY, 11)
    np.testing.assert_array_equal(a(points), b(points))
    np.testing.assert_allclose(a(points), a.component(0)(points) + a.component(1)(points), atol=1e-14)
    data = prepare_data(TINY)
    assert np.var(data.y_id) > 0.0


# ---------------------------------------------------------------------------
# 模型
# ---------------------------------------------------------------------------

def test_embedding_computes_same_function():
    model = build_model("structured", TINY, np.random.default_rng(2))
    points = np.random.default_rng(3).standard_normal((200, 8))
    wide = embed_structured(model, hidden=20)
    assert wide.kind == "unstructured"
    assert wide.hidden == 20
    np.testing.assert_allclose(wide(points), model(points), atol=1e-12)
    with pytest.raises(InvalidInput):
        embed_structured(model, hidden=10)


def test_backward_matches_finite_differences():
    model = build_model("unstructured", TINY, np.random.default_rng(4))
    X = np.random.default_rng(5).standard_normal((16, 8))
    y = np.random.default_rng(6).standard_normal(16)

    def loss():
        return float(np.mean((model(X) - y) ** 2))

    f, hiddens = model.forward(X)
    grads = model.gradients(X, hiddens, 2.0 * (f - y) / X.shape[0])
    params = model.parameters()
    h = 1e-6
    for p, g in zip(params, grads):
        idx = (0,) * p.ndim
        saved = p[idx]
        p[idx] = saved + h
        up = loss()
        p[idx] = saved - h
        down = loss()
        p[idx] = saved
        assert g[idx] == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-9)


def test_unknown_model_kind():
    with pytest.raises(InvalidInput):
        build_model("convolutional", TINY, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# 训练
# ---------------------------------------------------------------------------

def test_zero_epochs_reports_initialization():
    config = replace(TINY, epochs=0)
    report = train("structured", config)
    assert report.epochs == [0]
    data = prepare_data(config)
    model = build_model("structured", config, np.random.default_rng(data.init_seed))
    assert report.final_id == pytest.approx(float(np.mean((model(data.X_id) - data.y_id) ** 2)), rel=1e-12)


def test_training_reduces_loss_and_is_deterministic():
    a = train("structured", TINY)
    b = train("structured", TINY)
    assert a.epochs == [0, 1, 2, 3]
    assert a.final_id < a.id_losses[0]
    assert a.id_losses == b.id_losses
    assert a.ood_losses == b.ood_losses
    assert all(v >= 0.0 for v in a.id_losses + a.ood_losses)


def test_regularized_training_runs():
    config = replace(TINY, reg="l2", reg_lambda=1e-3)
    report = train("unstructured", config)
    assert report.reg == "l2(0.001)"
    assert len(report.epochs) == config.epochs + 1


def test_compare_models_extends_unstructured_run():
    structured, unstructured = compare_models(TINY)
    assert structured.model_kind == "structured"
    assert unstructured.model_kind == "unstructured"
    assert TINY.epochs <= unstructured.epochs[-1] <= 3 * TINY.epochs
    if unstructured.epochs[-1] < 3 * TINY.epochs:
        assert unstructured.final_id <= 2.0 * structured.final_id


def test_discrepancy_ratio_within_bound():
    report = train("structured", TINY)
    est = discrepancy_ratio(report, TINY, n_samples=20000, seed=1)
    assert est.ratio <= structured_bound(TINY) * (1.0 + 3.0 * est.relative_stderr)
    with pytest.raises(InvalidInput):
        discrepancy_ratio(train("unstructured", TINY), TINY)


# ---------------------------------------------------------------------------
# 消融扫描与输出
# ---------------------------------------------------------------------------

def test_ablation_sweep():
    with pytest.raises(InvalidInput):
        ablation_sweep([], TINY)
    with pytest.raises(ConfigError):
        ablation_sweep([{"width": 4}], TINY)
    settings = [{"hidden_unstructured": 4}, {"hidden_unstructured": 12}]
    sequential = ablation_sweep(settings, TINY, threads=1)
    threaded = ablation_sweep(settings, TINY, threads=2)
    assert [r.hidden for r in sequential] == [4, 12]
    for s, t in zip(sequential, threaded):
        np.testing.assert_allclose(s.id_losses, t.id_losses, rtol=1e-12)


def test_csv_outputs(tmp_path):
    report = train("structured", TINY)
    run_path = tmp_path / "structured.csv"
    write_run_csv(report, run_path)
    frame = pd.read_csv(run_path, float_precision="round_trip")
    assert list(frame.columns) == RUN_COLUMNS
    assert frame["id_loss"].tolist() == report.id_losses

    summary_path = tmp_path / "summary.csv"
    write_summary_csv([report], summary_path)
    summary = pd.read_csv(summary_path, float_precision="round_trip")
    assert list(summary.columns) == SUMMARY_COLUMNS
    assert summary.loc[0, "ratio"] == report.ratio
    assert list(summary_frame([report, report])["run_id"]) == [0, 1]


SLOW = pytest.mark.skipif(not os.environ.get("EXTRAP_RUN_SLOW"), reason="set EXTRAP_RUN_SLOW=1 for desk-scale runs")
DESK_SEEDS = range(5)


@SLOW
def test_desk_scale_structured_advantage():
    ratios, advantages = [], []
    for seed in DESK_SEEDS:
        structured, unstructured = compare_models(ExperimentConfig(seed=seed))
        assert unstructured.final_id <= 2.0 * structured.final_id or unstructured.epochs[-1] == 3 * structured.epochs[-1]
        ratios.append(structured.ratio)
        advantages.append(unstructured.final_ood / structured.final_ood)
    assert np.median(ratios) <= 3.0
    assert np.median(advantages) >= 3.0


@SLOW
def test_desk_scale_width_ablation():
    narrow, wide = ablation_sweep([{"hidden_unstructured": 1}, {"hidden_unstructured": 64}], ExperimentConfig(seed=0))
    assert narrow.final_id >= 10.0 * wide.final_id


@SLOW
def test_desk_scale_regularized_runs_stay_above_structured():
    regs = [{"reg": "l1", "reg_lambda": 1e-4}, {"reg": "l2", "reg_lambda": 1e-4}]
    for seed in DESK_SEEDS:
        base = ExperimentConfig(seed=seed)
        structured = train("structured", base)
        for report in ablation_sweep(regs, base):
            assert report.final_ood > structured.final_ood, f"seed {seed}, {report.reg}"
