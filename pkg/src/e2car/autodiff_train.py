"""Reverse-mode gradients, MSE loss, Adam, the training loop and gradient checks."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .model_graph import ActivationPattern, Model, ModelSpec, ParamStore, build
from .tensor_ops import ShapeError

log = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 10
    seed: int = 0
    validation_fraction: float = 0.1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 < self.validation_fraction < 1:
            raise ValueError(f"validation_fraction must be in (0, 1), got {self.validation_fraction}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 0:
            raise ValueError(f"patience must be >= 0, got {self.patience}")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
            for i, row in enumerate(zip(self.train_loss, self.val_loss, self.seconds)):
                w.writerow([i + 1, *(repr(float(v)) for v in row)])

    @classmethod
    def from_csv(cls, path) -> "TrainHistory":
        h = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                h.train_loss.append(float(row["train_loss"]))
                h.val_loss.append(float(row["val_loss"]))
                h.seconds.append(float(row["seconds"]))
        if h.val_loss:
            h.best_epoch = int(np.argmin(h.val_loss))
        return h


def mse_loss(pred, target) -> float:
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss needs equal shapes, got {pred.shape} and {target.shape}", axis="shape")
    d = pred - target
    return float(np.mean(d * d, dtype=np.float64))


def loss_and_grads(model: Model, inputs, targets) -> tuple[float, ParamStore]:
    """MSE of ``model(inputs)`` against ``targets`` and its gradient per parameter."""
    inputs = np.asarray(inputs, model.dtype)
    targets = np.asarray(targets, model.dtype)
    single = inputs.shape == model.spec.input_shape
    if single:
        inputs, targets = inputs[None], targets[None]
    pred, caches = model.forward_with_cache(inputs)
    if pred.shape != targets.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {targets.shape}", axis="target")
    diff = pred - targets
    loss = float(np.mean(diff * diff, dtype=np.float64))
    dy = diff * model.dtype.type(2.0 / diff.size)
    _, grads = model.backward_from(caches, dy)
    return loss, grads


def backward(model: Model, inputs, targets) -> ParamStore:
    """Exact gradient of :func:`mse_loss` w.r.t. every weight and bias."""
    return loss_and_grads(model, inputs, targets)[1]


@dataclass
class AdamState:
    m: ParamStore
    v: ParamStore
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ParamStore) -> "AdamState":
        z = {k: (np.zeros_like(w), np.zeros_like(b)) for k, (w, b) in params.items()}
        z2 = {k: (np.zeros_like(w), np.zeros_like(b)) for k, (w, b) in params.items()}
        return cls(z, z2, 0)


def adam_step(params: ParamStore, grads: ParamStore, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    b1, b2, eps, lr = config.beta1, config.beta2, config.epsilon, config.learning_rate
    t = state.t + 1
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    new_p, new_m, new_v = {}, {}, {}
    for k in sorted(params):
        pair_p, pair_m, pair_v = [], [], []
        for p, g, m, v in zip(params[k], grads[k], state.m[k], state.v[k]):
            dt = p.dtype.type
            m = dt(b1) * m + dt(1 - b1) * g
            v = dt(b2) * v + dt(1 - b2) * (g * g)
            step = dt(lr) * (m / dt(c1)) / (np.sqrt(v / dt(c2)) + dt(eps))
            pair_p.append(p - step)
            pair_m.append(m)
            pair_v.append(v)
        new_p[k], new_m[k], new_v[k] = tuple(pair_p), tuple(pair_m), tuple(pair_v)
    return new_p, AdamState(new_m, new_v, t)


def _stack_pairs(dataset, input_shape) -> tuple[np.ndarray, np.ndarray]:
    usable = [p for p in dataset if not p.degenerate]
    skipped = len(dataset) - len(usable)
    if skipped:
        log.warning("skipping %d degenerate segment(s)", skipped)
    if not usable:
        raise ValueError("dataset has no usable (non-degenerate) segments")
    x = np.stack([np.asarray(p.contaminated, np.float32) for p in usable])
    y = np.stack([np.asarray(p.clean, np.float32) for p in usable])
    lo, hi = float(x.min()), float(x.max())
    if lo < -NORM_TOLERANCE or hi > 1 + NORM_TOLERANCE:
        raise ValueError(f"contaminated segments must be min-max normalized to [0, 1], found [{lo}, {hi}]")
    shape = (len(usable),) + tuple(input_shape)
    return x.reshape(shape), y.reshape(shape)


def _eval_loss(model: Model, x, y, batch_size: int) -> float:
    total = 0.0
    for i in range(0, len(x), batch_size):
        d = model.forward(x[i : i + batch_size]) - y[i : i + batch_size]
        total += float(np.sum(d.astype(np.float64) ** 2))
    return total / y.size


def train(spec: ModelSpec, dataset: Sequence, config: TrainConfig) -> tuple[Model, TrainHistory]:
    """Fit ``spec`` to map contaminated -> clean segments with Adam on MSE.

    The split into train/validation and the per-epoch minibatch order are
    drawn from ``config.seed``; parameter initialisation uses ``spec.seed``.
    Returns the model at its best validation epoch.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    x, y = _stack_pairs(dataset, spec.input_shape)
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(x))
    if len(x) == 1:
        train_idx = val_idx = order
    else:
        n_val = min(max(1, int(round(len(x) * config.validation_fraction))), len(x) - 1)
        val_idx, train_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
    xv, yv = x[val_idx], y[val_idx]

    model = build(spec)
    params = model.params
    state = AdamState.zeros_like(params)
    history = TrainHistory()
    best_val, best_params, since_best = np.inf, params, 0
    bs = config.batch_size

    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        perm = train_idx[rng.permutation(len(train_idx))]
        loss_sum = 0.0
        for i in range(0, len(perm), bs):
            idx = perm[i : i + bs]
            loss, grads = loss_and_grads(model, x[idx], y[idx])
            loss_sum += loss * len(idx)
            params, state = adam_step(params, grads, state, config)
            model.params = params
        val = _eval_loss(model, xv, yv, max(bs, 64))
        history.train_loss.append(loss_sum / len(perm))
        history.val_loss.append(val)
        history.seconds.append(time.perf_counter() - t0)
        log.info("epoch %d train %.6g val %.6g", epoch + 1, history.train_loss[-1], val)
        if val < best_val:
            best_val, best_params, since_best = val, params, 0
            history.best_epoch = epoch
        else:
            since_best += 1
        if since_best >= config.patience:
            break
    return Model(spec, best_params, model.dtype), history


def grad_check(
    spec: ModelSpec,
    n_params_sampled: int = 200,
    h: float = 1e-5,
    seed: int = 0,
    batch_size: int = 1,
    model: Model | None = None,
    inputs=None,
    targets=None,
    freeze_kinks: bool = True,
    fd_dtype=np.longdouble,
    zero_tol: float = 1e-14,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Analytic gradients are computed in float64 on one random batch (or the
    given ``inputs``/``targets``); ``n_params_sampled`` parameter entries are
    drawn without replacement. Entries where both gradients are below
    ``zero_tol`` in magnitude (0/0 in exact arithmetic) count as zero error.

    With ``freeze_kinks`` the perturbed evaluations replay the ReLU/max-pool
    pattern of the unperturbed pass. Without it, a +-h step that moves any
    pre-activation across zero (near-certain in the wider models) adds an
    O(h) error unrelated to the backward pass. Under a frozen pattern the loss
    is quadratic in any single parameter, so the central difference is exact
    up to round-off; ``fd_dtype`` (extended precision by default) keeps that
    round-off well below the gradients being checked.
    """
    model = (model or build(spec)).astype(np.float64)
    rng = np.random.default_rng(seed)
    shape = (batch_size,) + model.spec.input_shape
    x = rng.uniform(0.0, 1.0, shape) if inputs is None else np.asarray(inputs, np.float64)
    y = rng.uniform(0.0, 1.0, shape) if targets is None else np.asarray(targets, np.float64)
    _, grads = loss_and_grads(model, x, y)
    pattern = None
    if freeze_kinks:
        pattern = ActivationPattern()
        model.forward(x, pattern)

    probe = model.astype(fd_dtype)
    xf, yf = x.astype(fd_dtype), y.astype(fd_dtype)

    def loss_at() -> float:
        d = probe.forward(xf, pattern and pattern.replay()) - yf
        return np.mean(d * d)

    # flat index -> (slot, 0 for weights / 1 for bias, offset)
    entries = []
    for slot in sorted(probe.params):
        for which, arr in enumerate(probe.params[slot]):
            entries.extend((slot, which, j) for j in range(arr.size))
    if not entries:
        return 0.0
    picks = rng.choice(len(entries), size=min(n_params_sampled, len(entries)), replace=False)

    worst = 0.0
    for e in np.sort(picks):
        slot, which, j = entries[e]
        arr = probe.params[slot][which].reshape(-1)
        orig = arr[j]
        arr[j] = orig + fd_dtype(h)
        lp = loss_at()
        arr[j] = orig - fd_dtype(h)
        lm = loss_at()
        arr[j] = orig
        numeric = float((lp - lm) / (2 * fd_dtype(h)))
        analytic = float(grads[slot][which].reshape(-1)[j])
        scale = max(abs(numeric), abs(analytic))
        if scale > zero_tol:
            worst = max(worst, abs(numeric - analytic) / scale)
    return worst
