"""Objectives, optimization and the training loop.

Loss functions: summed squared error with a Frobenius L2 penalty on the
fully connected weights, categorical cross-entropy for single-label
softmax heads, and binary cross-entropy for multi-label sigmoid heads.
The learning rate follows the warmup schedule
``d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)``; optimization is
Adam with bias-corrected moments; early stopping snapshots and restores
the best weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import data as D
from . import metrics as ME
from . import tensor as T
from .model import Model, predict
from .tensor import Tensor


class DivergenceError(RuntimeError):
    """Raised when the training loss turns non-finite."""

    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step


@dataclass
class LossConfig:
    kind: str = "ce"          # "ce" | "mse_l2" | "bce"
    l2_lambda: float = 0.0    # penalty on FC weights, scaled by 1/m
    class_weights: list[float] | None = None
    ae_recon_weight: float = 0.0  # optional autoencoder auxiliary loss

    def __post_init__(self):
        if self.kind not in ("ce", "mse_l2", "bce"):
            raise ValueError(f"loss kind must be ce|mse_l2|bce, got {self.kind!r}")
        if self.l2_lambda < 0:
            raise ValueError(f"l2_lambda must be >= 0, got {self.l2_lambda}")


def l2_penalty(weights: list[Tensor], lam: float, m: int) -> Tensor:
    """(lam/m) * sum of squared Frobenius norms; biases are not passed in."""
    total = Tensor(0.0)
    for w in weights:
        total = total + T.tsum(w * w)
    return total * (lam / m)


def mse_l2_loss(y, y_hat: Tensor, weights: list[Tensor] | None = None,
                lam: float = 0.0, m: int | None = None) -> Tensor:
    """Mean (per sample) summed squared error plus the L2 weight penalty."""
    y = y if isinstance(y, Tensor) else Tensor(y)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: targets {y.shape} vs predictions {y_hat.shape}")
    m = m if m is not None else (y.shape[0] if y.data.ndim else 1)
    diff = y - y_hat
    loss = T.tsum(diff * diff) * (1.0 / m)
    if weights and lam > 0:
        loss = loss + l2_penalty(weights, lam, m)
    return loss


def bce_loss(y, p: Tensor, n: int | None = None,
             class_weights: np.ndarray | None = None) -> Tensor:
    """-(1/N) sum[y log p + (1-y) log(1-p)], classes summed, samples averaged.

    Probabilities are clamped to [1e-7, 1-1e-7] before the logs.
    """
    y = y if isinstance(y, Tensor) else Tensor(y)
    if y.shape != p.shape:
        raise ValueError(f"shape mismatch: targets {y.shape} vs probabilities {p.shape}")
    n = n if n is not None else (y.shape[0] if y.data.ndim else 1)
    pc = T.clip(p, 1e-7, 1.0 - 1e-7)
    term = y * T.log(pc) + (1.0 - y) * T.log(1.0 - pc)
    if class_weights is not None:
        term = term * Tensor(np.asarray(class_weights, dtype=np.float64))
    return T.tsum(term) * (-1.0 / n)


def ce_loss(y_onehot, p: Tensor, m: int | None = None) -> Tensor:
    """Categorical cross-entropy -(1/m) sum y log p over clamped probabilities."""
    y = y_onehot if isinstance(y_onehot, Tensor) else Tensor(y_onehot)
    if y.shape != p.shape:
        raise ValueError(f"shape mismatch: targets {y.shape} vs probabilities {p.shape}")
    m = m if m is not None else y.shape[0]
    return T.tsum(y * T.log(T.clip(p, 1e-7, 1.0 - 1e-7))) * (-1.0 / m)


def noam_lr(step_num: int, d_model: int, warmup_steps: int) -> float:
    """d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)."""
    if step_num < 1 or d_model < 1 or warmup_steps < 1:
        raise ValueError("noam_lr arguments must all be >= 1")
    return d_model ** -0.5 * min(step_num ** -0.5, step_num * warmup_steps ** -1.5)


@dataclass
class NoamSchedule:
    d_model: int
    warmup_steps: int
    step_num: int = 0

    def next(self) -> float:
        self.step_num += 1
        return noam_lr(self.step_num, self.d_model, self.warmup_steps)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              lrate: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> list[np.ndarray]:
    """One Adam update with bias-corrected moments; params updated in place."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lrate * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params


class Adam:
    """Adam over a model's parameter dict."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.names = list(params)
        self.params = [params[n] for n in self.names]
        self.state = AdamState.for_params([p.data for p in self.params])
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, lrate: float) -> None:
        grads = [p.grad for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state, lrate,
                  self.beta1, self.beta2, self.eps)
        for p in self.params:
            p.zero_grad()


@dataclass
class EarlyStopper:
    """Stops after ``patience`` consecutive evaluations without improvement.

    An improvement must beat the best value by more than ``min_delta``;
    improvements snapshot the supplied state, and the best snapshot is
    restored by the training loop on stop.
    """

    metric: str = "val_loss"
    patience: int = 5
    min_delta: float = 0.0
    mode: str = "min"
    best_value: float | None = None
    best_state: dict | None = None
    stale: int = 0
    stop_epoch: int | None = None
    _seen: int = 0

    def update(self, value: float, state: dict | None = None) -> str:
        self._seen += 1
        improved = self.best_value is None or (
            value < self.best_value - self.min_delta if self.mode == "min"
            else value > self.best_value + self.min_delta
        )
        if improved:
            self.best_value = value
            self.best_state = state
            self.stale = 0
            return "continue"
        self.stale += 1
        if self.stale >= self.patience:
            self.stop_epoch = self._seen
            return "stop"
        return "continue"


def oversample(dataset: D.Dataset, seed: int = 0) -> D.Dataset:
    """Duplicate minority-class records (seeded, with replacement) until
    every class matches the majority count; originals are all retained."""
    by_class: dict[int, list[int]] = {c: [] for c in range(dataset.class_count)}
    for i, rec in enumerate(dataset.records):
        for label in rec.labels:
            by_class[label].append(i)
    for c, members in by_class.items():
        if not members:
            raise ValueError(f"cannot oversample: class {c} has no samples")
    target = max(len(v) for v in by_class.values())
    rng = np.random.default_rng(seed)
    indices = list(range(len(dataset)))
    for c in sorted(by_class):
        short = target - len(by_class[c])
        if short > 0:
            indices.extend(rng.choice(by_class[c], size=short, replace=True).tolist())
    return dataset.subset(indices)


def _targets(labels: list[set[int]], class_count: int) -> np.ndarray:
    y = np.zeros((len(labels), class_count))
    for i, ls in enumerate(labels):
        for c in ls:
            y[i, c] = 1.0
    return y


def _batch_loss(model: Model, scores: Tensor, batch, loss_cfg: LossConfig) -> Tensor:
    y = _targets(batch.labels, model.config.class_count)
    m = batch.size
    if loss_cfg.kind == "mse_l2":
        return mse_l2_loss(y, scores, model.l2_params(), loss_cfg.l2_lambda, m)
    if loss_cfg.kind == "bce":
        cw = None if loss_cfg.class_weights is None else np.asarray(loss_cfg.class_weights)
        loss = bce_loss(y, scores, m, cw)
    else:
        loss = ce_loss(y, scores, m)
    if loss_cfg.l2_lambda > 0:
        loss = loss + l2_penalty(model.l2_params(), loss_cfg.l2_lambda, m)
    return loss


def _aux_recon(model: Model, batch, weight: float) -> Tensor:
    scale = 1.0 / model.config.input_length
    aux = model.ae_r.reconstruction_loss(batch.r_values * scale, batch.r_mask)
    aux = aux + model.ae_p.reconstruction_loss(batch.p_values * scale, batch.p_mask)
    return aux * weight


def evaluate(model: Model, dataset: D.Dataset, loss_cfg: LossConfig,
             thresholds: np.ndarray | None = None, batch_size: int = 32
             ) -> tuple[float, float, np.ndarray, list[set[int]]]:
    """Eval-mode loss, micro-F1, stacked scores and true label sets."""
    D.ensure_fiducials(dataset)
    cfg = model.config
    losses, sizes, score_rows, label_sets = [], [], [], []
    with T.no_grad():
        for batch in D.make_batches(dataset, batch_size, seed=None):
            scores = model.forward(batch, "eval")
            losses.append(float(_batch_loss(model, scores, batch, loss_cfg).data))
            sizes.append(batch.size)
            score_rows.append(scores.data)
            label_sets.extend(batch.labels)
    scores = np.concatenate(score_rows) if score_rows else np.zeros((0, cfg.class_count))
    loss = float(np.average(losses, weights=sizes)) if losses else float("nan")
    if cfg.head == "softmax":
        preds = predict(scores, None, "softmax")
        truth = [min(ls) for ls in label_sets]
        cm = ME.confusion_matrix(truth, preds, cfg.class_count)
        micro = ME.f1_scores(cm).micro
    else:
        pred_sets = predict(scores, thresholds, "sigmoid")
        micro = ME.multilabel_f1(
            ME.multilabel_counts(label_sets, pred_sets, cfg.class_count)
        ).micro
    return loss, micro, scores, label_sets


def snapshot_state(model: Model) -> dict:
    state = {"params": {n: p.data.copy() for n, p in model.named_params().items()},
             "buffers": {n: b.copy() for n, b in model.named_buffers().items()}}
    return state


def restore_state(model: Model, state: dict) -> None:
    for n, p in model.named_params().items():
        p.data = state["params"][n].copy()
    for n in model.named_buffers():
        model.set_buffer(n, state["buffers"][n])


def train_loop(model: Model, train_ds: D.Dataset, val_ds: D.Dataset,
               loss_cfg: LossConfig, schedule: NoamSchedule,
               stopper: EarlyStopper | None = None, epochs_max: int = 100,
               batch_size: int = 16, seed: int = 0,
               thresholds: np.ndarray | None = None) -> tuple[Model, list[dict]]:
    """Seeded, deterministic training; returns the model (best weights when
    early stopping triggered) and per-epoch history rows."""
    D.ensure_fiducials(train_ds)
    D.ensure_fiducials(val_ds)
    optimizer = Adam(model.named_params())
    dropout_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD0]))
    history: list[dict] = []
    for epoch in range(1, epochs_max + 1):
        epoch_losses, epoch_sizes = [], []
        for batch in D.make_batches(train_ds, batch_size, seed=seed * 100003 + epoch):
            lrate = schedule.next()
            scores = model.forward(batch, "train", rng=dropout_rng)
            loss = _batch_loss(model, scores, batch, loss_cfg)
            if loss_cfg.ae_recon_weight > 0:
                loss = loss + _aux_recon(model, batch, loss_cfg.ae_recon_weight)
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergenceError(schedule.step_num, value)
            T.backward(loss)
            optimizer.step(lrate)
            epoch_losses.append(value)
            epoch_sizes.append(batch.size)
        val_loss, val_micro, _, _ = evaluate(model, val_ds, loss_cfg, thresholds,
                                             batch_size)
        row = {
            "epoch": epoch,
            "step": schedule.step_num,
            "lrate": noam_lr(schedule.step_num, schedule.d_model, schedule.warmup_steps),
            "train_loss": float(np.average(epoch_losses, weights=epoch_sizes)),
            "val_loss": val_loss,
            "val_micro_f1": val_micro,
        }
        history.append(row)
        if stopper is not None:
            decision = stopper.update(row[stopper.metric], snapshot_state(model))
            if decision == "stop":
                break
    # keep the optimal weights whether stopping triggered or epochs ran out
    if stopper is not None and stopper.best_state is not None:
        restore_state(model, stopper.best_state)
    return model, history


HISTORY_HEADER = "epoch,step,lrate,train_loss,val_loss,val_micro_f1"


def history_csv(history: list[dict]) -> str:
    lines = [HISTORY_HEADER]
    for row in history:
        lines.append(
            f"{row['epoch']},{row['step']},{row['lrate']:.12g},"
            f"{row['train_loss']:.12g},{row['val_loss']:.12g},{row['val_micro_f1']:.12g}"
        )
    return "\n".join(lines) + "\n"
