"""Losses, optimizer, LR schedule, early stopping, and the adapter fit loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import params as P
from . import tensor as T
from .errors import ConfigError, ContractError, NumericError, TrainingError
from .tensor import Tape, Tensor

LR_GRID = (1e-3, 1e-4, 1e-5, 1e-6)
WEIGHT_DECAY_GRID = (0.0, 1e-2, 1e-4, 1e-6)
BATCH_GRID = (8, 16, 32, 64)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 32
    max_epochs: int = 100
    steps_per_epoch: int = 50
    scheduler_patience: int = 5
    scheduler_factor: float = 0.5
    early_stop_patience: int = 10
    loss: str = "quantile"
    seed: int = 42

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "max_epochs", "steps_per_epoch",
                     "scheduler_patience", "early_stop_patience"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if not (0.0 < self.scheduler_factor < 1.0):
            raise ConfigError("scheduler_factor must lie in (0, 1)")
        if self.loss not in ("quantile", "huber"):
            raise ConfigError(f"unknown loss {self.loss!r}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# losses


def quantile_loss_tensor(pred: Tensor, y: Tensor, levels) -> Tensor:
    """Mean pinball loss over horizon steps and quantile levels.

    pred: (..., H, K) quantile grid, y: (..., H) targets. For each level a,
    the term is (a - 1{y < q}) (y - q), i.e. a*(y-q)+ + (1-a)*(q-y)+.
    """
    if pred.shape[:-1] != y.shape:
        raise ContractError(f"prediction {pred.shape} does not match targets {y.shape}")
    if pred.shape[-1] != len(levels):
        raise ContractError("level count does not match prediction width")
    alphas = np.asarray(levels, dtype=np.float64)
    yk = T.reshape(y, y.shape + (1,))
    err = T.sub(yk, pred)
    loss = T.add(T.mul(T.relu(err), alphas), T.mul(T.relu(T.neg(err)), 1.0 - alphas))
    return T.reduce_mean(loss)


def quantile_loss(pred, y, levels) -> float:
    """Numpy convenience wrapper over :func:`quantile_loss_tensor`."""
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(y))):
        raise NumericError("quantile loss received non-finite input")
    return quantile_loss_tensor(Tensor(pred), Tensor(y), levels).item()


def huber_loss_tensor(pred: Tensor, y: Tensor, delta: float = 1.0) -> Tensor:
    """Mean Huber loss: 0.5 e^2 inside |e| <= delta, linear tails outside."""
    if pred.shape != y.shape:
        raise ContractError(f"prediction {pred.shape} does not match targets {y.shape}")
    e = T.absolute(T.sub(pred, y))
    m = T.clip_max(e, delta)
    quad = T.mul(T.mul(m, m), 0.5)
    lin = T.mul(T.sub(e, m), delta)
    return T.reduce_mean(T.add(quad, lin))


def huber_loss(pred, y, delta: float = 1.0) -> float:
    return huber_loss_tensor(Tensor(np.asarray(pred, dtype=np.float64)),
                             Tensor(np.asarray(y, dtype=np.float64)), delta).item()


def training_loss(pred: Tensor, y_norm: np.ndarray, levels, kind: str, tape: Tape) -> Tensor:
    y = tape.constant(y_norm)
    if kind == "quantile":
        return quantile_loss_tensor(pred, y, levels)
    median = list(levels).index(min(levels, key=lambda a: abs(a - 0.5)))
    point = pred[..., median]
    return huber_loss_tensor(point, y)


# ---------------------------------------------------------------------------
# optimizer and scheduler


class AdamState:
    """Per-parameter Adam moments; frozen parameters carry no state."""

    def __init__(self, params: P.Params, lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items() if not p.frozen}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items() if not p.frozen}


def adam_step(params: P.Params, state: AdamState) -> None:
    """Bias-corrected Adam update with decoupled weight decay (when nonzero)."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for name, param in params.items():
        if param.frozen:
            continue
        g = param.grad
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        update = m_hat / (np.sqrt(v_hat) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * param.value
        param.value -= state.lr * update


class PlateauScheduler:
    """Halve the learning rate after `patience` non-improving epochs."""

    def __init__(self, state: AdamState, patience: int, factor: float):
        self.state = state
        self.patience = patience
        self.factor = factor
        self.best = math.inf
        self.wait = 0

    def update(self, monitored: float) -> float:
        if monitored < self.best:
            self.best = monitored
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.state.lr *= self.factor
                self.wait = 0
        return self.state.lr


def reduce_lr_on_plateau(history, lr0: float, patience: int = 5, factor: float = 0.5) -> float:
    """Replay a loss history through the plateau rule; returns the final lr."""
    if len(history) < 1:
        raise ContractError("reduce_lr_on_plateau needs at least one recorded value")
    state = AdamState({}, lr=lr0)
    sched = PlateauScheduler(state, patience, factor)
    lr = lr0
    for value in history:
        lr = sched.update(value)
    return lr


# ---------------------------------------------------------------------------
# generic fit loop


@dataclass
class Telemetry:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = math.inf
    stopped_epoch: int = -1

    def to_json(self) -> dict:
        return asdict(self)


def fit(model, train_windows, val_windows, cfg: TrainConfig) -> Telemetry:
    """Run the epoch loop over a model exposing the fit-protocol hooks.

    model must provide: trainable_params() -> Params, batch_loss(windows,
    rng) -> Tensor with its Tape, and val_loss(windows) -> float. The best
    validation snapshot is restored before returning.
    """
    if not train_windows:
        raise TrainingError("no training windows available")
    params = model.trainable_params()
    opt = AdamState(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    sched = PlateauScheduler(opt, cfg.scheduler_patience, cfg.scheduler_factor)
    sample_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    telemetry = Telemetry()
    best_snap = P.snapshot(params)
    telemetry.best_val = model.val_loss(val_windows)
    telemetry.best_epoch = 0
    since_best = 0
    for epoch in range(1, cfg.max_epochs + 1):
        epoch_losses = []
        for step in range(cfg.steps_per_epoch):
            take = sample_rng.integers(len(train_windows), size=cfg.batch_size)
            batch = [train_windows[int(i)] for i in take]
            tape, loss = model.batch_loss(batch, sample_rng)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch} step {step}")
            T.backward(tape, loss)
            adam_step(params, opt)
            epoch_losses.append(value)
        val = model.val_loss(val_windows)
        telemetry.train_loss.append(float(np.mean(epoch_losses)))
        telemetry.val_loss.append(val)
        telemetry.lr.append(opt.lr)
        sched.update(val)
        if val < telemetry.best_val:
            telemetry.best_val = val
            telemetry.best_epoch = epoch
            best_snap = P.snapshot(params)
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                telemetry.stopped_epoch = epoch
                break
    P.restore(params, best_snap)
    return telemetry


class _AdapterFitModel:
    """fit()-protocol adapter around an Adapter plus its prepared dataset."""

    def __init__(self, adapter, prep, loss_kind: str):
        self.adapter = adapter
        self.prep = prep
        self.loss_kind = loss_kind
        self.levels = adapter.backbone.config.levels
        self.ctx = adapter.backbone.config.context

    def trainable_params(self) -> P.Params:
        return self.adapter.params

    def _loss_on(self, windows):
        from .homogenize import build_window_batch

        batch = build_window_batch(self.prep, windows, self.ctx)
        tape = Tape()
        out = self.adapter.forward(batch, tape, sort=False)
        y_norm = (batch.y_future - out.mu.data) / out.sigma.data
        return tape, training_loss(out.pred, y_norm, self.levels, self.loss_kind, tape)

    def batch_loss(self, windows, rng):
        return self._loss_on(windows)

    def val_loss(self, windows, chunk: int = 256) -> float:
        vals = []
        for lo in range(0, len(windows), chunk):
            _, loss = self._loss_on(windows[lo:lo + chunk])
            vals.append((loss.item(), len(windows[lo:lo + chunk])))
        total = sum(n for _, n in vals)
        return sum(v * n for v, n in vals) / total


def train_adapter(prep, adapter, cfg: TrainConfig, splits) -> Telemetry:
    """Train adapter parameters against a frozen backbone (best-val snapshot).

    The monitored metric is the mean quantile loss on validation windows in
    normalized space; the scheduler halves the LR on plateaus and training
    stops after `early_stop_patience` non-improving epochs.
    """
    if not all(p.frozen for p in adapter.backbone.params.values()):
        raise ContractError("backbone must be frozen before adapter training")
    model = _AdapterFitModel(adapter, prep, cfg.loss)
    return fit(model, splits.train, splits.val, cfg)


class _BackboneFitModel:
    """fit()-protocol wrapper for full fine-tuning (covariates ignored)."""

    def __init__(self, params, backbone_cfg, prep, loss_kind: str):
        self.params = params
        self.cfg = backbone_cfg
        self.prep = prep
        self.loss_kind = loss_kind

    def trainable_params(self) -> P.Params:
        return self.params

    def _loss_on(self, windows):
        from .backbone import backbone_forward, make_batch

        ctx, obs, fut = make_batch(self.prep, windows, self.cfg.context)
        tape = Tape()
        pred, mu, sigma = backbone_forward(self.params, self.cfg, tape, ctx, obs, sort=False)
        y_norm = (fut - mu.data) / sigma.data
        return tape, training_loss(pred, y_norm, self.cfg.levels, self.loss_kind, tape)

    def batch_loss(self, windows, rng):
        return self._loss_on(windows)

    def val_loss(self, windows, chunk: int = 256) -> float:
        vals = []
        for lo in range(0, len(windows), chunk):
            _, loss = self._loss_on(windows[lo:lo + chunk])
            vals.append((loss.item(), len(windows[lo:lo + chunk])))
        total = sum(n for _, n in vals)
        return sum(v * n for v, n in vals) / total


def finetune_backbone(prep, backbone, cfg: TrainConfig, splits):
    """Full fine-tune arm: unfrozen backbone copy, target series only."""
    params = backbone.unfreeze_clone()
    model = _BackboneFitModel(params, backbone.config, prep, cfg.loss)
    telemetry = fit(model, splits.train, splits.val, cfg)
    return params, telemetry


def seed_sweep(run_fn, seeds=(41, 42, 43, 44, 45)) -> dict:
    """Execute run_fn(seed) -> {metric: value} per seed; report mean and std."""
    per_seed = {int(s): run_fn(int(s)) for s in seeds}
    metrics = sorted({m for r in per_seed.values() for m in r})
    report = {}
    for m in metrics:
        vals = np.asarray([per_seed[s][m] for s in sorted(per_seed)], dtype=np.float64)
        report[m] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return {"seeds": sorted(per_seed), "metrics": report,
            "per_seed": {str(s): per_seed[s] for s in sorted(per_seed)}}
