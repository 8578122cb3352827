"""Seizure-prediction network: conv front end, two residual blocks, Mamba mixer, FC head.

Also the training loop and the cross-validation / channel-sweep harness.
"""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np

from . import nn
from .chansel import SelectionConfig, accuracy_matrix, tally
from .eeg_io import EegRecording
from .errors import BudgetExceeded, NonFinite, NoPositives, ShapeMismatch
from .mlcore import MetricsReport, compute_metrics
from .nn import functional as F
from .nn.ssm import MambaParams, SsmParams, init_a_log
from .nn.tensor import Tensor
from .pipeline import Holdout, KFold, SegmentDataset, SplitPlan, WindowingConfig, build_dataset, make_split
from .rng import child_seed, stream

log = logging.getLogger(__name__)

REFERENCE_PARAMETER_COUNT = 21_200


@dataclass
class ModelConfig:
    in_channels: int = 8
    input_length: int = 1024
    front_kernel: int = 21
    trunk_channels: int = 32
    res_block_kernels: tuple[tuple[int, int, int], ...] = ((5, 3, 3), (5, 3, 3))
    res_inner_channels: int = 12
    pool_windows: tuple[int, int] = (4, 4)
    mixer: str = "mamba"  # "mamba" | "conv" (ablation) | "none"
    mamba_inner: int = 64
    ssm_state: int = 8
    mamba_conv_kernel: int = 4
    dt_rank: int = 4
    mamba_gate: bool = True
    conv_mixer_kernels: tuple[int, int] = (5, 5)
    n_classes: int = 2
    loss_lambda: float = 1.0
    temperature: float = 0.07
    lr: float = 1e-3
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    dtype: str = "float32"
    param_budget: int = 25_000

    def __post_init__(self):
        self.res_block_kernels = tuple(tuple(int(k) for k in ks) for ks in self.res_block_kernels)
        self.pool_windows = tuple(int(p) for p in self.pool_windows)
        self.conv_mixer_kernels = tuple(int(k) for k in self.conv_mixer_kernels)
        if self.mixer not in ("mamba", "conv", "none"):
            raise ValueError(f"unknown mixer {self.mixer!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.sequence_length < 1:
            raise ValueError("pooling leaves no time steps for the mixer")

    @property
    def sequence_length(self) -> int:
        length = self.input_length
        for p in self.pool_windows:
            length //= p
        return length

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_items(self) -> list[tuple[str, str]]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ";".join(",".join(map(str, x)) if isinstance(x, tuple) else str(x) for x in v)
            out.append((f.name, str(v)))
        return out

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in items:
                continue
            raw = items[f.name]
            default = getattr(cls(), f.name)
            if isinstance(default, bool):
                kwargs[f.name] = raw == "True"
            elif isinstance(default, int):
                kwargs[f.name] = int(raw)
            elif isinstance(default, float):
                kwargs[f.name] = float(raw)
            elif f.name == "res_block_kernels":
                kwargs[f.name] = tuple(tuple(int(k) for k in g.split(",")) for g in raw.split(";"))
            elif isinstance(default, tuple):
                kwargs[f.name] = tuple(int(k) for k in raw.split(";"))
            else:
                kwargs[f.name] = raw
        return cls(**kwargs)


def parameter_count(cfg: ModelConfig) -> int:
    """Closed-form learnable parameter count."""
    t, c = cfg.trunk_channels, cfg.res_inner_channels
    total = cfg.in_channels * t * cfg.front_kernel + t
    for k1, k2, k3 in cfg.res_block_kernels:
        total += t * c * k1 + c + c * c * k2 + c + c * t * k3 + t
    if cfg.mixer == "mamba":
        m, n, r = cfg.mamba_inner, cfg.ssm_state, cfg.dt_rank
        branches = 2 if cfg.mamba_gate else 1
        total += branches * (m * t + m)  # input projections
        total += m * cfg.mamba_conv_kernel + m  # depthwise conv
        total += m * (r + 2 * n)  # dt / B / C projections
        total += m * r + m  # dt up-projection + bias
        total += m * n + m  # A_log, D
        total += t * m + t  # output projection
    elif cfg.mixer == "conv":
        for k in cfg.conv_mixer_kernels:
            total += t * t * k + t
    total += cfg.n_classes * t + cfg.n_classes
    return total


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: "OrderedDict[str, Tensor]"
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def count(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict((name, t.data) for name, t in self.tensors.items())
        for name, arr in self.buffers.items():
            out[f"buffer.{name}"] = arr
        return out

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.tensors.items():
            if arrays[name].shape != t.shape:
                raise ShapeMismatch(f"{name}: checkpoint {arrays[name].shape} vs model {t.shape}")
            t.data = arrays[name].astype(t.dtype).copy()
        for name in list(self.buffers):
            if f"buffer.{name}" in arrays:
                self.buffers[name] = arrays[f"buffer.{name}"].astype(np.float32).copy()

    def mamba(self) -> MambaParams:
        g = self.tensors
        gate = self.config.mamba_gate
        return MambaParams(
            in_proj_x=g["mamba.in_proj_x.w"],
            in_proj_x_bias=g["mamba.in_proj_x.b"],
            conv_w=g["mamba.conv.w"],
            conv_b=g["mamba.conv.b"],
            ssm=SsmParams(
                A_log=g["mamba.ssm.A_log"],
                proj_B=g["mamba.ssm.proj_B"],
                proj_C=g["mamba.ssm.proj_C"],
                proj_dt_down=g["mamba.ssm.proj_dt_down"],
                proj_dt_up=g["mamba.ssm.proj_dt_up"],
                dt_bias=g["mamba.ssm.dt_bias"],
                D=g["mamba.ssm.D"],
            ),
            out_proj=g["mamba.out_proj.w"],
            out_proj_bias=g["mamba.out_proj.b"],
            in_proj_z=g["mamba.in_proj_z.w"] if gate else None,
            in_proj_z_bias=g["mamba.in_proj_z.b"] if gate else None,
        )


def _kaiming_uniform(rng, shape, fan_in, dtype, a=math.sqrt(5.0)):
    # leaky-ReLU gain with slope a; a = sqrt(5) gives the bound 1 / sqrt(fan_in)
    gain = math.sqrt(2.0 / (1.0 + a * a))
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def build_model(cfg: ModelConfig, seed: int | None = None) -> ModelParams:
    """Instantiate every layer; each tensor draws from its own named random stream."""
    seed = cfg.seed if seed is None else seed
    dtype = cfg.np_dtype
    specs: list[tuple[str, tuple[int, ...], str, int]] = []  # name, shape, init, fan_in
    t, c = cfg.trunk_channels, cfg.res_inner_channels

    def conv(name, c_out, c_in, k):
        specs.append((f"{name}.w", (c_out, c_in, k), "kaiming", c_in * k))
        specs.append((f"{name}.b", (c_out,), "zeros", 0))

    def fc(name, d_out, d_in, bias=True):
        specs.append((f"{name}.w", (d_out, d_in), "kaiming", d_in))
        if bias:
            specs.append((f"{name}.b", (d_out,), "zeros", 0))

    conv("front", t, cfg.in_channels, cfg.front_kernel)
    for i, (k1, k2, k3) in enumerate(cfg.res_block_kernels):
        conv(f"res{i}.conv0", c, t, k1)
        conv(f"res{i}.conv1", c, c, k2)
        conv(f"res{i}.conv2", t, c, k3)
    if cfg.mixer == "mamba":
        m, n, r = cfg.mamba_inner, cfg.ssm_state, cfg.dt_rank
        fc("mamba.in_proj_x", m, t)
        if cfg.mamba_gate:
            fc("mamba.in_proj_z", m, t)
        specs.append(("mamba.conv.w", (m, cfg.mamba_conv_kernel), "kaiming", cfg.mamba_conv_kernel))
        specs.append(("mamba.conv.b", (m,), "zeros", 0))
        specs.append(("mamba.ssm.A_log", (m, n), "a_log", 0))
        specs.append(("mamba.ssm.proj_B", (n, m), "kaiming", m))
        specs.append(("mamba.ssm.proj_C", (n, m), "kaiming", m))
        specs.append(("mamba.ssm.proj_dt_down", (r, m), "kaiming", m))
        specs.append(("mamba.ssm.proj_dt_up", (m, r), "dt_up", r))
        specs.append(("mamba.ssm.dt_bias", (m,), "dt_bias", 0))
        specs.append(("mamba.ssm.D", (m,), "ones", 0))
        fc("mamba.out_proj", t, m)
    elif cfg.mixer == "conv":
        for i, k in enumerate(cfg.conv_mixer_kernels):
            conv(f"mixer.conv{i}", t, t, k)
    fc("head", cfg.n_classes, t)

    tensors: OrderedDict[str, Tensor] = OrderedDict()
    for name, shape, init, fan_in in specs:
        rng = stream(seed, "init", name)
        if init == "kaiming":
            data = _kaiming_uniform(rng, shape, fan_in, dtype)
        elif init == "zeros":
            data = np.zeros(shape, dtype=dtype)
        elif init == "ones":
            data = np.ones(shape, dtype=dtype)
        elif init == "a_log":
            data = init_a_log(shape[0], shape[1], dtype)
        elif init == "dt_up":
            data = rng.uniform(-(fan_in**-0.5), fan_in**-0.5, size=shape).astype(dtype)
        elif init == "dt_bias":
            # step sizes log-uniform in [1e-3, 1e-1], stored through inverse softplus
            dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), size=shape))
            data = (dt + np.log(-np.expm1(-dt))).astype(dtype)
        else:  # pragma: no cover
            raise AssertionError(init)
        tensors[name] = Tensor(data, requires_grad=True, name=name)

    params = ModelParams(
        cfg,
        tensors,
        {
            "input_mean": np.zeros(cfg.in_channels, dtype=np.float32),
            "input_std": np.ones(cfg.in_channels, dtype=np.float32),
        },
    )
    count = params.count()
    if count > cfg.param_budget:
        raise BudgetExceeded(f"model has {count} parameters, budget is {cfg.param_budget}")
    return params


def fit_input_scaling(params: ModelParams, X: np.ndarray) -> None:
    """Per-channel standardisation statistics from training segments."""
    mean = X.mean(axis=(0, 2), dtype=np.float64)
    std = X.std(axis=(0, 2), dtype=np.float64)
    params.buffers["input_mean"] = mean.astype(np.float32)
    params.buffers["input_std"] = np.where(std > 0, std, 1.0).astype(np.float32)


def _res_block(p: ModelParams, i: int, x: Tensor, kernels) -> Tensor:
    g = p.tensors
    h = x
    for j, k in enumerate(kernels):
        h = F.conv1d(h, g[f"res{i}.conv{j}.w"], g[f"res{i}.conv{j}.b"], padding=k // 2)
        if j < len(kernels) - 1:
            h = F.relu(h)
    return F.relu(F.add(h, x))


def forward(params: ModelParams, x) -> tuple[Tensor, Tensor]:
    """Logits [B x n_classes] and pooled embedding [B x trunk] for ``x`` [B x k x L]."""
    cfg = params.config
    g = params.tensors
    xd = x.data if isinstance(x, Tensor) else np.asarray(x)
    if xd.ndim != 3 or xd.shape[1:] != (cfg.in_channels, cfg.input_length):
        raise ShapeMismatch(
            f"expected [B x {cfg.in_channels} x {cfg.input_length}], got {xd.shape}"
        )
    mean = params.buffers["input_mean"][None, :, None]
    std = params.buffers["input_std"][None, :, None]
    h = Tensor(((xd - mean) / std).astype(cfg.np_dtype))

    h = F.conv1d(h, g["front.w"], g["front.b"], padding=cfg.front_kernel // 2)
    h = F.maxpool1d(F.relu(h), cfg.pool_windows[0])
    for i, kernels in enumerate(cfg.res_block_kernels):
        h = _res_block(params, i, h, kernels)
        if i + 1 < len(cfg.pool_windows):
            h = F.maxpool1d(h, cfg.pool_windows[i + 1])
    if cfg.mixer == "mamba":
        h = F.transpose(h, (0, 2, 1))  # time-major for the mixer
        h = nn.mamba_block(params.mamba(), h)
        emb = F.mean(h, axis=1)
    else:
        if cfg.mixer == "conv":
            z = h
            for i, k in enumerate(cfg.conv_mixer_kernels):
                z = F.conv1d(z, g[f"mixer.conv{i}.w"], g[f"mixer.conv{i}.b"], padding=k // 2)
                if i < len(cfg.conv_mixer_kernels) - 1:
                    z = F.relu(z)
            h = F.relu(F.add(z, h))
        emb = F.global_avg_pool(h)
    logits = F.linear(emb, g["head.w"], g["head.b"])
    return logits, emb


def loss_fn(params: ModelParams, x, labels, cfg: ModelConfig | None = None) -> tuple[Tensor, Tensor]:
    """CE + lambda * SupCon (SupCon dropped when no anchor has a positive)."""
    cfg = cfg or params.config
    logits, emb = forward(params, x)
    loss = F.cross_entropy(logits, labels)
    if cfg.loss_lambda != 0:
        try:
            loss = F.add(loss, F.mul(F.supcon_loss(emb, labels, cfg.temperature), cfg.loss_lambda))
        except NoPositives:
            pass
    return loss, logits


def predict_logits(params: ModelParams, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
    out = []
    with nn.no_grad():
        for start in range(0, X.shape[0], batch_size):
            logits, _ = forward(params, X[start : start + batch_size])
            out.append(logits.data)
    if not out:
        return np.zeros((0, params.config.n_classes), dtype=np.float32)
    return np.concatenate(out)


def predict(params: ModelParams, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
    return predict_logits(params, X, batch_size).argmax(axis=1)


@dataclass
class TrainResult:
    params: ModelParams
    optimizer: nn.OptimState
    losses: list[float]
    accuracies: list[float]
    epochs_done: int


def train(
    params: ModelParams,
    dataset: SegmentDataset,
    cfg: ModelConfig | None = None,
    *,
    optimizer: nn.OptimState | None = None,
    start_epoch: int = 0,
    epochs: int | None = None,
    fit_scaling: bool = True,
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> TrainResult:
    """Minibatch Adam on CE + lambda * SupCon.

    Epoch ``e`` shuffles with its own stream of ``cfg.seed``, so a run
    resumed at ``start_epoch`` with the saved optimizer state continues
    exactly like an uninterrupted one.
    """
    cfg = cfg or params.config
    X, y = dataset.X, dataset.y.astype(np.int64)
    if len(np.unique(y)) < 2:
        raise ValueError("training data must contain both classes")
    if fit_scaling and optimizer is None:
        fit_input_scaling(params, X)
    opt = optimizer or nn.OptimState(lr=cfg.lr)
    end = cfg.epochs if epochs is None else start_epoch + epochs
    losses, accs = [], []
    for epoch in range(start_epoch, end):
        order = stream(cfg.seed, "epoch", epoch).permutation(len(y))
        total, correct = 0.0, 0
        for start in range(0, len(y), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            nn.zero_grad(params.tensors)
            loss, logits = loss_fn(params, X[idx], y[idx], cfg)
            if not np.isfinite(loss.data):
                raise NonFinite(f"loss became non-finite at epoch {epoch}, batch starting {start}")
            loss.backward()
            nn.adam_step(params.tensors, opt)
            total += float(loss.data) * idx.size
            correct += int(np.sum(logits.data.argmax(axis=1) == y[idx]))
        losses.append(total / len(y))
        accs.append(correct / len(y))
        log.debug("epoch %d loss %.6f acc %.4f", epoch, losses[-1], accs[-1])
        if on_epoch is not None:
            on_epoch(epoch, losses[-1], accs[-1])
    nn.zero_grad(params.tensors)
    return TrainResult(params, opt, losses, accs, end)


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_arrays(params: ModelParams, opt: nn.OptimState | None = None, epoch: int = 0):
    arrays = params.arrays()
    if opt is not None:
        arrays["meta.step"] = np.array([opt.step], dtype=np.float32)
        arrays["meta.epoch"] = np.array([epoch], dtype=np.float32)
        for name in params.tensors:
            if name in opt.m:
                arrays[f"adam.m.{name}"] = opt.m[name]
                arrays[f"adam.v.{name}"] = opt.v[name]
    return arrays


def restore_checkpoint(cfg: ModelConfig, arrays: dict[str, np.ndarray]):
    """(params, optimizer state or None, next epoch)."""
    params = build_model(cfg)
    params.load(arrays)
    if "meta.step" not in arrays:
        return params, None, 0
    opt = nn.OptimState(lr=cfg.lr, step=int(arrays["meta.step"][0]))
    for name in params.tensors:
        if f"adam.m.{name}" in arrays:
            opt.m[name] = arrays[f"adam.m.{name}"].astype(cfg.np_dtype).copy()
            opt.v[name] = arrays[f"adam.v.{name}"].astype(cfg.np_dtype).copy()
    return params, opt, int(arrays["meta.epoch"][0])


# ---------------------------------------------------------------------------
# evaluation harness


@dataclass
class EvalResult:
    folds: list[MetricsReport]
    config: dict
    seed: int

    @property
    def mean_accuracy(self) -> float:
        return float(np.nanmean([f.accuracy for f in self.folds]))

    @property
    def mean_sensitivity(self) -> float:
        return float(np.nanmean([f.sensitivity for f in self.folds]))

    @property
    def mean_specificity(self) -> float:
        return float(np.nanmean([f.specificity for f in self.folds]))


FitPredict = Callable[[SegmentDataset, SegmentDataset, int], np.ndarray]


def model_fit_predict(cfg: ModelConfig) -> FitPredict:
    """Train a fresh network per fold, then label the held-out segments."""

    def run(train_ds: SegmentDataset, test_ds: SegmentDataset, fold: int) -> np.ndarray:
        fold_cfg = replace(cfg, seed=child_seed(cfg.seed, "fold", fold))
        params = build_model(fold_cfg)
        train(params, train_ds, fold_cfg)
        return predict(params, test_ds.X)

    return run


_EVAL_STATE: tuple | None = None


def _init_eval(dataset, fit_predict):
    global _EVAL_STATE
    _EVAL_STATE = (dataset, fit_predict)


def _eval_fold(job):
    fold, train_idx, test_idx = job
    dataset, fit_predict = _EVAL_STATE
    test_ds = dataset.subset(test_idx)
    pred = fit_predict(dataset.subset(train_idx), test_ds, fold)
    return compute_metrics(pred, test_ds.y)


def evaluate(
    dataset: SegmentDataset,
    plan: SplitPlan,
    cfg: ModelConfig | None = None,
    fit_predict: FitPredict | None = None,
    jobs: int = 1,
) -> EvalResult:
    """Train on all-but-one fold, test on the held-out fold, for every fold of ``plan``."""
    cfg = cfg or ModelConfig(in_channels=dataset.X.shape[1], input_length=dataset.X.shape[2])
    fit_predict = fit_predict or model_fit_predict(cfg)
    jobs_list = [(f, tr, te) for f, (tr, te) in enumerate(plan.folds())]
    if jobs > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_eval, initargs=(dataset, fit_predict)) as pool:
            reports = list(pool.map(_eval_fold, jobs_list))
    else:
        _init_eval(dataset, fit_predict)
        reports = [_eval_fold(job) for job in jobs_list]
    return EvalResult(reports, asdict(cfg), plan.seed)


@dataclass
class SweepRow:
    k: int
    channels: list[int]
    result: EvalResult


def channel_sweep(
    rec: EegRecording,
    cfg: ModelConfig,
    k_values: Sequence[int] = (4, 6, 8, 10),
    selection: SelectionConfig | None = None,
    windowing: WindowingConfig | None = None,
    plan_kind: KFold | Holdout = Holdout(0.2),
    include_all: bool = True,
    fit_predict_for: Callable[[ModelConfig], FitPredict] | None = None,
) -> list[SweepRow]:
    """Evaluate the network on the top-k channels for each k.

    One accuracy tally is shared by every k, so the selected sets are
    nested prefixes of a single ranking.
    """
    selection = selection or SelectionConfig(seed=cfg.seed)
    windowing = windowing or WindowingConfig()
    ks = sorted({k for k in k_values if k <= rec.num_channels})
    if include_all:
        ks = sorted(set(ks) | {rec.num_channels})
    sel_ds = build_dataset([rec], selection.windowing())
    shared = tally(accuracy_matrix(sel_ds, selection), max(ks), rec.channel_labels)
    full = build_dataset([rec], windowing)
    make = fit_predict_for or model_fit_predict
    rows = []
    for k in ks:
        channels = shared.top(k)
        ds = full.select_channels(channels)
        k_cfg = replace(cfg, in_channels=k, input_length=ds.X.shape[2])
        plan = make_split(len(ds), plan_kind, cfg.seed, labels=ds.y)
        rows.append(SweepRow(k, channels, evaluate(ds, plan, k_cfg, make(k_cfg))))
    return rows
