"""Dual-objective loss, Adam, early stopping and grid search."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import HoseqError, NonFiniteLoss, SingleClass
from ..feature_pipeline import ClassWeights, SequenceWindow, class_weights
from .nets import backward_batch, forward_batch, sigmoid
from .params import ModelKind, PredictorParams, init_params

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
MIN_IMPROVEMENT = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-3
    dropout_prob: float = 0.1
    max_epochs: int = 200
    patience: int = 20
    batch_size: int = 32
    lambda_pp: float = 1.0
    hidden_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError("dropout_prob must be in [0, 1)")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lambda_pp >= 0:
            raise ValueError("lambda_pp must be >= 0")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")


@dataclass
class TrainHistory:
    epochs: list[tuple[int, float, float]] = field(default_factory=list)  # (epoch, train, val)
    stopped_epoch: int = 0
    best_epoch: int = 0
    wall_train_s: float = 0.0
    wall_infer_s: float | None = None
    param_count: int = 0

    @property
    def val_losses(self) -> list[float]:
        return [v for _, _, v in self.epochs]

    @property
    def best_val_loss(self) -> float:
        return min(v for e, _, v in self.epochs if e >= 1) if len(self.epochs) > 1 else math.inf

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for e, tr, va in self.epochs:
            w.writerow([e, repr(tr), repr(va)])
        return buf.getvalue()


# ----------------------------------------------------------------------- data

@dataclass(frozen=True)
class Batch:
    X: np.ndarray  # (N, L, F)
    tos_s: np.ndarray  # (N,)
    pp: np.ndarray  # (N,) bool

    def __len__(self) -> int:
        return len(self.tos_s)

    def take(self, idx) -> "Batch":
        return Batch(self.X[idx], self.tos_s[idx], self.pp[idx])


def to_batch(windows: Sequence[SequenceWindow] | Batch, include_censored: bool = False) -> Batch:
    if isinstance(windows, Batch):
        return windows
    ws =[w for w in windows if include_censored or not w.censored]
    if not ws:
        return Batch(np.zeros((0, 0, 0)), np.zeros(0), np.zeros(0, dtype=bool))
    return Batch(
        np.stack([w.features for w in ws]).astype(float),
        np.array([w.target_tos_s for w in ws], dtype=float),
        np.array([w.target_pp for w in ws], dtype=bool),
    )


# ----------------------------------------------------------------------- loss

def _bce_with_logits(logit, y):
    return np.maximum(logit, 0.0) - logit * y + np.log1p(np.exp(-np.abs(logit)))


def loss_terms(out: np.ndarray, batch: Batch, weights: ClassWeights, lambda_pp: float):
    """Per-example (squared error on log1p ToS, weighted BCE) and d(mean loss)/d out."""
    n = len(batch)
    target = np.log1p(batch.tos_s)
    y = batch.pp.astype(float)
    w = np.where(batch.pp, weights[1], weights[0])
    err = out[:, 0] - target
    sq = err * err
    bce = w * _bce_with_logits(out[:, 1], y)
    dout = np.empty_like(out)
    dout[:, 0] = 2.0 * err / n
    dout[:, 1] = lambda_pp * w * (sigmoid(out[:, 1]) - y) / n
    return sq, bce, dout


def loss(batch: Batch | Sequence[SequenceWindow], params: PredictorParams, weights: ClassWeights,
         lambda_pp: float = 1.0) -> float:
    """Mean over the batch of (tos_pred - log1p tos)^2 + lambda_pp * w[y] * BCE(pp_prob, y)."""
    if not isinstance(batch, Batch):
        batch = to_batch(batch)
    if len(batch) == 0:
        raise ValueError("loss of an empty batch")
    out, _ = forward_batch(params, batch.X)
    sq, bce, _ = loss_terms(out, batch, weights, lambda_pp)
    return float(np.mean(sq + lambda_pp * bce))


def loss_and_grad(params: PredictorParams, batch: Batch, weights: ClassWeights, lambda_pp: float,
                  p_drop: float = 0.0, rng=None):
    out, cache = forward_batch(params, batch.X, p_drop, rng)
    sq, bce, dout = loss_terms(out, batch, weights, lambda_pp)
    return float(np.mean(sq + lambda_pp * bce)), backward_batch(params, cache, dout)


# ----------------------------------------------------------------------- Adam

class Adam:
    def __init__(self, params: PredictorParams, lr: float):
        self.lr = lr
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}

    def step(self, params: PredictorParams, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        c1 = 1.0 - ADAM_BETA1 ** self.step_count
        c2 = 1.0 - ADAM_BETA2 ** self.step_count
        for k, g in grads.items():
            self.m[k] = ADAM_BETA1 * self.m[k] + (1.0 - ADAM_BETA1) * g
            self.v[k] = ADAM_BETA2 * self.v[k] + (1.0 - ADAM_BETA2) * g * g
            params.tensors[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + ADAM_EPS)


# ---------------------------------------------------------------------- train

def train(
    kind: ModelKind | str,
    train_windows: Sequence[SequenceWindow] | Batch,
    val_windows: Sequence[SequenceWindow] | Batch,
    cfg: TrainConfig,
    *,
    weights: ClassWeights | None = None,
    val_loss_fn: Callable[[PredictorParams], float] | None = None,
    shuffle: bool = True,
) -> tuple[PredictorParams, TrainHistory]:
    """Fit one predictor; returns the best-validation parameters and the history.

    Epoch 0 in the history is the untrained model.  Early stopping counts
    epochs (from 1) whose validation loss fails to beat the best so far by
    ``MIN_IMPROVEMENT`` and stops once ``patience`` of them occur in a row.
    ``val_loss_fn`` replaces the validation loss computation when given.
    """
    tr = train_windows if isinstance(train_windows, Batch) else to_batch(train_windows)
    va = val_windows if isinstance(val_windows, Batch) else to_batch(val_windows)
    if len(tr) == 0:
        raise ValueError("empty training split")
    if len(va) == 0 and val_loss_fn is None:
        raise ValueError("empty validation split")
    if weights is None:
        weights = class_weights(tr.pp)  # raises SingleClass
    elif tr.pp.all() or not tr.pp.any():
        raise SingleClass("training labels contain a single class")

    rng = np.random.default_rng(cfg.seed)
    params = init_params(kind, tr.X.shape[2], cfg.hidden_dim, tr.X.shape[1], rng)
    opt = Adam(params, cfg.learning_rate)
    hist = TrainHistory(param_count=params.param_count)

    def val_loss(p):
        return val_loss_fn(p) if val_loss_fn is not None else loss(va, p, weights, cfg.lambda_pp)

    t0 = time.perf_counter()
    hist.epochs.append((0, loss(tr, params, weights, cfg.lambda_pp), val_loss(params)))
    best, best_params, bad = math.inf, params.copy(), 0
    n = len(tr)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n) if shuffle else np.arange(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            b = tr.take(order[lo : lo + cfg.batch_size])
            value, grads = loss_and_grad(params, b, weights, cfg.lambda_pp, cfg.dropout_prob, rng)
            if not math.isfinite(value):
                hist.stopped_epoch = epoch
                hist.wall_train_s = time.perf_counter() - t0
                raise NonFiniteLoss(f"non-finite training loss at epoch {epoch}", hist)
            opt.step(params, grads)
            total += value * len(b)
        v = val_loss(params)
        hist.epochs.append((epoch, total / n, v))
        if not (math.isfinite(v) and params.is_finite()):
            hist.stopped_epoch = epoch
            hist.wall_train_s = time.perf_counter() - t0
            raise NonFiniteLoss(f"non-finite validation loss at epoch {epoch}", hist)
        if v < best - MIN_IMPROVEMENT:
            best, best_params, bad = v, params.copy(), 0
            hist.best_epoch = epoch
        else:
            bad += 1
        hist.stopped_epoch = epoch
        if bad >= cfg.patience:
            break
    hist.wall_train_s = time.perf_counter() - t0
    return best_params, hist


def predict(params: PredictorParams, X: np.ndarray | Sequence[SequenceWindow]) -> tuple[np.ndarray, np.ndarray]:
    """Inference without dropout: (ToS in seconds, ping-pong probability)."""
    if not isinstance(X, np.ndarray):
        X = np.stack([w.features for w in X])
    out, _ = forward_batch(params, X)
    return np.maximum(np.expm1(out[:, 0]), 0.0), sigmoid(out[:, 1])


def forward(params: PredictorParams, window: SequenceWindow | np.ndarray, dropout_rng=None,
            dropout_prob: float = 0.0) -> tuple[float, float]:
    """Single-window forward pass returning (tos_pred seconds, pp_prob).

    Dropout is applied only when a generator is supplied.
    """
    x = window.features if isinstance(window, SequenceWindow) else window
    out, _ = forward_batch(params, np.asarray(x, dtype=float)[None], dropout_prob, dropout_rng)
    return float(max(np.expm1(out[0, 0]), 0.0)), float(sigmoid(out[0, 1:2])[0])


# ---------------------------------------------------------------- grid search

@dataclass(frozen=True)
class GridPoint:
    kind: ModelKind
    seq_len: int
    hidden_dim: int
    learning_rate: float

    def sort_key(self):
        return (self.kind.value, self.seq_len, self.hidden_dim, self.learning_rate)


@dataclass
class GridRow:
    point: GridPoint
    status: str  # "ok" or "failed"
    val_loss: float = math.nan
    param_count: int = 0
    stopped_epoch: int = 0
    error: str = ""


@dataclass
class GridResult:
    rows: list[GridRow]
    best: GridRow | None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "seq_len", "hidden_dim", "learning_rate", "status", "val_loss",
                    "params", "stopped_epoch", "error"])
        for r in self.rows:
            p = r.point
            w.writerow([p.kind.value, p.seq_len, p.hidden_dim, repr(p.learning_rate), r.status,
                        "" if math.isnan(r.val_loss) else repr(r.val_loss), r.param_count,
                        r.stopped_epoch, r.error])
        return buf.getvalue()


def _run_cell(point: GridPoint, tr: Batch, va: Batch, cfg: TrainConfig) -> GridRow:
    cell_cfg = TrainConfig(**{**cfg.__dict__, "learning_rate": point.learning_rate,
                              "hidden_dim": point.hidden_dim})
    try:
        params, hist = train(point.kind, tr, va, cell_cfg)
    except HoseqError as exc:
        return GridRow(point, "failed", error=f"{type(exc).__name__}: {exc}")
    return GridRow(point, "ok", hist.best_val_loss, params.param_count, hist.stopped_epoch)


def grid_search(
    kinds: Iterable[ModelKind | str],
    space: dict[str, Sequence],
    data: Callable[[int], tuple[Sequence[SequenceWindow], Sequence[SequenceWindow]]],
    cfg: TrainConfig,
    jobs: int = 1,
) -> GridResult:
    """Train every (kind, seq_len, hidden_dim, learning_rate) cell with ``cfg.seed``.

    ``data(seq_len)`` returns normalised (train, val) windows.  A failing cell
    is recorded and the sweep continues.  Best is the lowest validation loss,
    ties broken by fewer parameters, then by the configuration tuple.
    """
    seq_lens = list(space.get("seq_len", [10]))
    hiddens = list(space.get("hidden_dim", [cfg.hidden_dim]))
    lrs = list(space.get("learning_rate", [cfg.learning_rate]))
    kinds = [ModelKind(k.upper() if isinstance(k, str) else k) for k in kinds]
    if not (kinds and seq_lens and hiddens and lrs):
        raise ValueError("grid search space is empty")

    tasks = []
    rows: list[GridRow] = []
    for seq_len in seq_lens:
        try:
            tr_w, va_w = data(seq_len)
            tr, va = to_batch(tr_w), to_batch(va_w)
        except HoseqError as exc:
            for kind, h, lr in itertools.product(kinds, hiddens, lrs):
                rows.append(GridRow(GridPoint(kind, seq_len, h, lr), "failed",
                                    error=f"{type(exc).__name__}: {exc}"))
            continue
        for kind, h, lr in itertools.product(kinds, hiddens, lrs):
            tasks.append((GridPoint(kind, seq_len, h, lr), tr, va, cfg))

    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows += list(pool.map(_run_cell, *zip(*tasks)))
    else:
        rows += [_run_cell(*t) for t in tasks]

    rows.sort(key=lambda r: r.point.sort_key())
    ok = [r for r in rows if r.status == "ok"]
    best = min(ok, key=lambda r: (r.val_loss, r.param_count, r.point.sort_key())) if ok else None
    return GridResult(rows, best)
