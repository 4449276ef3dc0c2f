"""Structured vs unstructured two-layer MLPs on synthetic block-Gaussian data.

Inputs x = (x1, x2) are drawn from N(0, [[I, gamma O], [gamma O^T, I]]) with a
random orthonormal O; source (P) and target (Q) use independent O so the block
marginals match while the cross-block correlation differs. Labels come from a
frozen structured network f1*(x1) + f2*(x2). Models are trained with SGD plus
momentum on fresh P mini-batches; ID loss is measured on P, OOD loss on Q.
"""

import logging
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config.extrap_config import THREADS_ENV_VAR, _threads_from_env
from src.extrapolation_errors import (
    ConfigError,
    DegenerateCorrelation,
    DivergenceDetected,
    InvalidInput,
    IoError,
)
from src.extrapolation_gaussian import GaussianSampler, MonteCarloRatio, mc_ratio_estimate
from src.extrapolation_numerics import random_orthonormal

logger = logging.getLogger(__name__)

MODEL_KINDS = ("structured", "unstructured")
REG_KINDS = ("none", "l1", "l2")
RUN_COLUMNS = ["epoch", "id_loss", "ood_loss"]
SUMMARY_COLUMNS = ["run_id", "model_kind", "hidden", "reg", "final_id", "final_ood", "ratio"]


@dataclass(frozen=True)
class ExperimentConfig:
    """Desk-scale defaults; widths of structured models are per component."""

    d1: int = 16
    d2: int = 16
    gamma: float = 0.9
    hidden_structured: int = 32
    hidden_unstructured: int = 64
    gt_hidden: int = 16
    lr: float = 3e-3
    momentum: float = 0.9
    batch_size: int = 256
    batches_per_epoch: int = 1000
    epochs: int = 30
    init_std: float = 1e-3
    reg: str = "none"
    reg_lambda: float = 0.0
    seed: int = 0
    eval_samples: int = 4096

    def __post_init__(self):
        if self.d1 < 1 or self.d2 < 1:
            raise InvalidInput("d1 and d2 must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            if self.gamma >= 1.0:
                raise DegenerateCorrelation(f"gamma must be < 1, got {self.gamma}")
            raise InvalidInput(f"gamma must be >= 0, got {self.gamma}")
        if min(self.hidden_structured, self.hidden_unstructured, self.gt_hidden) < 1:
            raise InvalidInput("hidden widths must be >= 1")
        if self.lr <= 0.0:
            raise InvalidInput(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidInput(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1 or self.batches_per_epoch < 1 or self.eval_samples < 1:
            raise InvalidInput("batch_size, batches_per_epoch and eval_samples must be >= 1")
        if self.epochs < 0:
            raise InvalidInput(f"epochs must be >= 0, got {self.epochs}")
        if self.init_std < 0.0:
            raise InvalidInput(f"init_std must be >= 0, got {self.init_std}")
        if self.reg not in REG_KINDS:
            raise InvalidInput(f"reg must be one of {REG_KINDS}, got {self.reg!r}")
        if self.reg_lambda < 0.0:
            raise InvalidInput(f"reg_lambda must be >= 0, got {self.reg_lambda}")

    @property
    def dim(self) -> int:
        return self.d1 + self.d2

    @property
    def reg_label(self) -> str:
        return "none" if self.reg == "none" else f"{self.reg}({self.reg_lambda:g})"

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "ExperimentConfig":
        """Build from flat key = value strings; unknown keys raise ConfigError.

        ``reg`` also accepts the short form ``l1(1e-4)``.
        """
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown experiment config key: {key}")
            text = str(raw).strip()
            if key == "reg":
                match = re.fullmatch(r"(l1|l2)\(([^)]+)\)", text)
                if match:
                    kwargs["reg"] = match.group(1)
                    text_lambda = match.group(2)
                    try:
                        kwargs["reg_lambda"] = float(text_lambda)
                    except ValueError:
                        raise ConfigError(f"bad regularization strength {text_lambda!r}") from None
                    continue
                kwargs["reg"] = text
                continue
            caster = int if types[key] in (int, "int") else float
            try:
                kwargs[key] = caster(text)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {text!r}") from None
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# 模型
# ---------------------------------------------------------------------------

class MLP2:
    """x -> a^T ReLU(W1 x + b1), no output bias."""

    def __init__(self, W1: np.ndarray, b1: np.ndarray, a: np.ndarray):
        self.W1 = np.asarray(W1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.a = np.asarray(a, dtype=np.float64)

    @classmethod
    def init_normal(cls, input_dim: int, hidden_dim: int, std: float, rng) -> "MLP2":
        return cls(
            rng.normal(0.0, std, (hidden_dim, input_dim)),
            rng.normal(0.0, std, hidden_dim),
            rng.normal(0.0, std, hidden_dim),
        )

    @classmethod
    def init_fan_in(cls, input_dim: int, hidden_dim: int, rng) -> "MLP2":
        """Weights N(0, 1/fan_in), zero hidden bias."""
        return cls(
            rng.normal(0.0, 1.0 / math.sqrt(input_dim), (hidden_dim, input_dim)),
            np.zeros(hidden_dim),
            rng.normal(0.0, 1.0 / math.sqrt(hidden_dim), hidden_dim),
        )

    @property
    def input_dim(self) -> int:
        return int(self.W1.shape[1])

    @property
    def hidden_dim(self) -> int:
        return int(self.W1.shape[0])

    def parameters(self) -> List[np.ndarray]:
        return [self.W1, self.b1, self.a]

    def forward(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        hidden = np.maximum(X @ self.W1.T + self.b1, 0.0)
        return hidden @ self.a, hidden

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X)[0]

    def backward(self, X: np.ndarray, hidden: np.ndarray, grad_out: np.ndarray) -> List[np.ndarray]:
        """Gradients of sum(grad_out * f) w.r.t. (W1, b1, a)."""
        da = hidden.T @ grad_out
        dhidden = np.outer(grad_out, self.a)
        dhidden[hidden <= 0.0] = 0.0
        return [dhidden.T @ X, dhidden.sum(axis=0), da]


@dataclass
class AdditiveMLP:
    """Sum of MLP2 components, each reading one contiguous slice of the input.

    A structured model has one component per feature block; an unstructured
    model is a single component over all features.
    """

    kind: str
    components: List[MLP2]
    slices: List[slice]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X)[0]

    def forward(self, X: np.ndarray):
        out = np.zeros(X.shape[0])
        hiddens = []
        for net, sl in zip(self.components, self.slices):
            f, hidden = net.forward(X[:, sl])
            out += f
            hiddens.append(hidden)
        return out, hiddens

    def component(self, i: int):
        net, sl = self.components[i], self.slices[i]
        return lambda X: net(X[:, sl])

    def parameters(self) -> List[np.ndarray]:
        return [p for net in self.components for p in net.parameters()]

    def gradients(self, X: np.ndarray, hiddens, grad_out: np.ndarray) -> List[np.ndarray]:
        grads = []
        for net, sl, hidden in zip(self.components, self.slices, hiddens):
            grads.extend(net.backward(X[:, sl], hidden, grad_out))
        return grads

    @property
    def hidden(self) -> int:
        return sum(net.hidden_dim for net in self.components)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())


def _block_slices(config: ExperimentConfig) -> List[slice]:
    return [slice(0, config.d1), slice(config.d1, config.dim)]


def build_model(kind: str, config: ExperimentConfig, rng) -> AdditiveMLP:
    if kind == "structured":
        blocks = _block_slices(config)
        nets = [MLP2.init_normal(sl.stop - sl.start, config.hidden_structured, config.init_std, rng) for sl in blocks]
        return AdditiveMLP(kind, nets, blocks)
    if kind == "unstructured":
        net = MLP2.init_normal(config.dim, config.hidden_unstructured, config.init_std, rng)
        return AdditiveMLP(kind, [net], [slice(0, config.dim)])
    raise InvalidInput(f"model kind must be one of {MODEL_KINDS}, got {kind!r}")


def embed_structured(model: AdditiveMLP, hidden: Optional[int] = None) -> AdditiveMLP:
    """Unstructured network computing exactly the same function.

    The first layer is block diagonal; extra neurons (when ``hidden`` exceeds
    the structured width) have zero weights.
    """
    if model.kind != "structured":
        raise InvalidInput("only structured models can be embedded")
    dim = model.slices[-1].stop
    total = model.hidden
    hidden = total if hidden is None else hidden
    if hidden < total:
        raise InvalidInput(f"unstructured width {hidden} cannot hold {total} structured neurons")
    W1 = np.zeros((hidden, dim))
    b1 = np.zeros(hidden)
    a = np.zeros(hidden)
    row = 0
    for net, sl in zip(model.components, model.slices):
        h = net.hidden_dim
        W1[row:row + h, sl] = net.W1
        b1[row:row + h] = net.b1
        a[row:row + h] = net.a
        row += h
    return AdditiveMLP("unstructured", [MLP2(W1, b1, a)], [slice(0, dim)])


# ---------------------------------------------------------------------------
# 数据
# ---------------------------------------------------------------------------

def make_covariances(d1: int, d2: int, gamma: float, seed) -> Tuple[np.ndarray, np.ndarray]:
    """(Sigma_P, Sigma_Q) = [[I, gamma O], [gamma O^T, I]] with independent random O."""
    if gamma >= 1.0:
        raise DegenerateCorrelation(f"gamma must be < 1, got {gamma}")
    if gamma < 0.0:
        raise InvalidInput(f"gamma must be >= 0, got {gamma}")
    rng = np.random.default_rng(seed)
    m = min(d1, d2)
    out = []
    for _ in range(2):
        O = random_orthonormal(d1, rng)[:, :m] @ random_orthonormal(d2, rng)[:, :m].T
        Sigma = np.eye(d1 + d2)
        Sigma[:d1, d1:] = gamma * O
        Sigma[d1:, :d1] = gamma * O.T
        out.append(Sigma)
    return out[0], out[1]


def make_ground_truth(config: ExperimentConfig, seed) -> AdditiveMLP:
    """Frozen structured labeler f1*(x1) + f2*(x2) of width gt_hidden per block."""
    rng = np.random.default_rng(seed)
    blocks = _block_slices(config)
    nets = [MLP2.init_fan_in(sl.stop - sl.start, config.gt_hidden, rng) for sl in blocks]
    return AdditiveMLP("structured", nets, blocks)


@dataclass
class ExperimentData:
    Sigma_P: np.ndarray
    Sigma_Q: np.ndarray
    ground_truth: AdditiveMLP
    train_seed: np.random.SeedSequence
    X_id: np.ndarray
    y_id: np.ndarray
    X_ood: np.ndarray
    y_ood: np.ndarray
    init_seed: np.random.SeedSequence


def prepare_data(config: ExperimentConfig) -> ExperimentData:
    """Everything derived from config.seed; shared by every model trained on it."""
    cov_seed, gt_seed, train_seed, id_seed, ood_seed, init_seed = np.random.SeedSequence(config.seed).spawn(6)
    Sigma_P, Sigma_Q = make_covariances(config.d1, config.d2, config.gamma, cov_seed)
    gt = make_ground_truth(config, gt_seed)
    X_id = GaussianSampler(Sigma_P, seed=id_seed).draw(config.eval_samples)
    X_ood = GaussianSampler(Sigma_Q, seed=ood_seed).draw(config.eval_samples)
    return ExperimentData(
        Sigma_P, Sigma_Q, gt,
        train_seed,
        X_id, gt(X_id), X_ood, gt(X_ood),
        init_seed,
    )


# ---------------------------------------------------------------------------
# 训练
# ---------------------------------------------------------------------------

@dataclass
class RunReport:
    model_kind: str
    hidden: int
    reg: str
    epochs: List[int] = field(default_factory=list)
    id_losses: List[float] = field(default_factory=list)
    ood_losses: List[float] = field(default_factory=list)
    config: Dict[str, object] = field(default_factory=dict)
    wall_time: float = 0.0
    model: Optional[AdditiveMLP] = field(default=None, repr=False, compare=False)

    @property
    def final_id(self) -> float:
        return self.id_losses[-1]

    @property
    def final_ood(self) -> float:
        return self.ood_losses[-1]

    @property
    def ratio(self) -> float:
        return self.final_ood / self.final_id if self.final_id > 0 else math.inf

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"epoch": self.epochs, "id_loss": self.id_losses, "ood_loss": self.ood_losses})


def _mse(model: AdditiveMLP, X: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean((model(X) - y) ** 2))


def _penalty_grads(model: AdditiveMLP, config: ExperimentConfig) -> List[Optional[np.ndarray]]:
    """Regularizer gradients on W1 and a; biases are not penalized."""
    out = []
    for net in model.components:
        for p, penalized in ((net.W1, True), (net.b1, False), (net.a, True)):
            if not penalized or config.reg == "none" or config.reg_lambda == 0.0:
                out.append(None)
            elif config.reg == "l1":
                out.append(config.reg_lambda * np.sign(p))
            else:
                out.append(2.0 * config.reg_lambda * p)
    return out


def train(
    model_kind: str,
    config: ExperimentConfig,
    target_id_loss: Optional[float] = None,
    max_epochs: Optional[int] = None,
    data: Optional[ExperimentData] = None,
) -> RunReport:
    """SGD with momentum on MSE over fresh P mini-batches.

    Runs config.epochs epochs; with ``target_id_loss`` it keeps going one epoch
    at a time until the ID loss reaches the target or ``max_epochs`` is hit.
    Epoch 0 in the report is the initialization.
    """
    start = time.perf_counter()
    data = prepare_data(config) if data is None else data
    model = build_model(model_kind, config, np.random.default_rng(data.init_seed))
    sampler = GaussianSampler(data.Sigma_P, seed=data.train_seed)
    params = model.parameters()
    velocity = [np.zeros_like(p) for p in params]

    report = RunReport(
        model_kind=model_kind,
        hidden=model.hidden,
        reg=config.reg_label,
        config=asdict(config),
    )

    def record(epoch: int) -> None:
        id_loss = _mse(model, data.X_id, data.y_id)
        ood_loss = _mse(model, data.X_ood, data.y_ood)
        if not (math.isfinite(id_loss) and math.isfinite(ood_loss)):
            raise DivergenceDetected(
                f"{model_kind} run diverged at epoch {epoch}",
                last_finite_epoch=report.epochs[-1] if report.epochs else -1,
            )
        report.epochs.append(epoch)
        report.id_losses.append(id_loss)
        report.ood_losses.append(ood_loss)

    record(0)
    cap = config.epochs if max_epochs is None else max(max_epochs, config.epochs)
    epoch = 0
    while epoch < cap:
        if epoch >= config.epochs and (target_id_loss is None or report.final_id <= target_id_loss):
            break
        epoch += 1
        for _ in range(config.batches_per_epoch):
            X = sampler.draw(config.batch_size)
            y = data.ground_truth(X)
            f, hiddens = model.forward(X)
            grad_out = 2.0 * (f - y) / X.shape[0]
            grads = model.gradients(X, hiddens, grad_out)
            for g, extra in zip(grads, _penalty_grads(model, config)):
                if extra is not None:
                    g += extra
            for p, v, g in zip(params, velocity, grads):
                v *= config.momentum
                v += g
                p -= config.lr * v
        if not model.is_finite():
            raise DivergenceDetected(
                f"{model_kind} parameters became non-finite in epoch {epoch}",
                last_finite_epoch=report.epochs[-1],
            )
        record(epoch)
        logger.debug(f"{model_kind} epoch {epoch}: id {report.final_id:.6g}, ood {report.final_ood:.6g}")

    report.wall_time = time.perf_counter() - start
    report.model = model
    logger.info(
        f"{model_kind} (hidden {report.hidden}, reg {report.reg}): {report.epochs[-1]} epochs, "
        f"id {report.final_id:.6g}, ood {report.final_ood:.6g}"
    )
    return report


def compare_models(config: ExperimentConfig) -> Tuple[RunReport, RunReport]:
    """Structured run, then an unstructured run extended until its ID loss is
    within 2x of the structured one (at most 3x the epochs)."""
    data = prepare_data(config)
    structured = train("structured", config, data=data)
    unstructured = train(
        "unstructured",
        config,
        target_id_loss=2.0 * structured.final_id,
        max_epochs=3 * config.epochs,
        data=data,
    )
    return structured, unstructured


def ablation_sweep(
    settings: Sequence[Mapping[str, object]],
    base: ExperimentConfig,
    model_kind: str = "unstructured",
    threads: Optional[int] = None,
) -> List[RunReport]:
    """One run per settings override, all on base.seed's data.

    Runs in a thread pool of at most ``threads`` workers (default: the
    EXTRAP_CERT_THREADS environment variable, else 1).
    """
    settings = list(settings)
    if not settings:
        raise InvalidInput("ablation sweep needs at least one setting")
    configs = []
    for overrides in settings:
        unknown = set(overrides) - {f.name for f in fields(ExperimentConfig)}
        if unknown:
            raise ConfigError(f"unknown ablation keys: {sorted(unknown)}")
        configs.append(replace(base, **overrides))

    threads = _threads_from_env(1) if threads is None else max(1, threads)
    logger.info(f"ablation sweep: {len(configs)} runs on {min(threads, len(configs))} thread(s) ({THREADS_ENV_VAR})")
    if threads == 1:
        return [train(model_kind, c) for c in configs]
    with ThreadPoolExecutor(max_workers=min(threads, len(configs))) as executor:
        return list(executor.map(lambda c: train(model_kind, c), configs))


def discrepancy_ratio(
    report: RunReport,
    config: ExperimentConfig,
    n_samples: int = 100000,
    seed=0,
) -> MonteCarloRatio:
    """||f - f*||^2_Q / ||f - f*||^2_P for a trained structured model."""
    if report.model is None or report.model.kind != "structured":
        raise InvalidInput("discrepancy ratio needs a trained structured model")
    data = prepare_data(config)
    model, gt = report.model, data.ground_truth
    f1 = lambda X: model.component(0)(X) - gt.component(0)(X)
    f2 = lambda X: model.component(1)(X) - gt.component(1)(X)
    return mc_ratio_estimate(
        f1, f2,
        GaussianSampler(data.Sigma_P),
        GaussianSampler(data.Sigma_Q),
        n_samples,
        seed,
    )


def structured_bound(config: ExperimentConfig) -> float:
    return 2.0 / (1.0 - config.gamma)


# ---------------------------------------------------------------------------
# CSV 输出
# ---------------------------------------------------------------------------

def write_run_csv(report: RunReport, path) -> None:
    try:
        report.to_frame()[RUN_COLUMNS].to_csv(path, index=False, float_format="%.17g")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def summary_frame(reports: Sequence[RunReport]) -> pd.DataFrame:
    rows = [
        {
            "run_id": i,
            "model_kind": r.model_kind,
            "hidden": r.hidden,
            "reg": r.reg,
            "final_id": r.final_id,
            "final_ood": r.final_ood,
            "ratio": r.ratio,
        }
        for i, r in enumerate(reports)
    ]
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def write_summary_csv(reports: Sequence[RunReport], path) -> None:
    try:
        summary_frame(reports).to_csv(path, index=False, float_format="%.17g")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
