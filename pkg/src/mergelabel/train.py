"""Loss, Adam, learning-rate schedule and the training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .data import Batch
from .evaluate import decode_all, predict, score
from .model import MergeLabelModel, ModelOutput
from .tensor import Tensor

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, history: list):
        super().__init__(message)
        self.history = history


class LossBreakdown(NamedTuple):
    mae_m: Tensor
    ce_c: Tensor
    total: Tensor


def compute_loss(output: ModelOutput, batch: Batch, w_m: float = 0.5) -> LossBreakdown:
    """``w_m * MAE(M, gold merges) + CE(labels)``, each averaged over unmasked cells."""
    M = output.structure.M
    logits = output.logits
    b, s, L, C = logits.shape
    if batch.labels is None or batch.merges is None:
        raise ValueError("batch carries no training targets")
    if batch.labels.shape != (b, s, L):
        raise T.ShapeError(f"label targets {batch.labels.shape} do not match logits {logits.shape}")
    if batch.merges.shape != M.shape:
        raise T.ShapeError(f"merge targets {batch.merges.shape} do not match merge values {M.shape}")
    tok = np.asarray(batch.token_mask, bool)
    pair = tok[:, :-1] & tok[:, 1:] if batch.pair_mask is None else np.asarray(batch.pair_mask, bool)
    n_pair_cells = int(pair.sum()) * L
    if n_pair_cells:
        diff = T.absolute(M - batch.merges.astype(M.dtype)) * pair[..., None].astype(M.dtype)
        mae = T.reduce("sum", diff) / float(n_pair_cells)
    else:
        mae = Tensor(0.0)
    cell_mask = np.broadcast_to(tok[:, :, None], (b, s, L)).reshape(-1)
    ce = T.softmax_cross_entropy(logits.reshape(b * s * L, C), batch.labels.reshape(-1), cell_mask)
    return LossBreakdown(mae, ce, mae * w_m + ce)


def lr_schedule(epoch: int, base_lr: float = 0.0005, total_epochs: int = 60) -> float:
    """Halve the learning rate every ``total_epochs // 5`` epochs."""
    period = max(total_epochs // 5, 1)
    return base_lr * 0.5 ** (epoch // period)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray | None],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, applied in place to ``params``."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.setdefault(k, np.zeros_like(p.data))
        v = state.v.setdefault(k, np.zeros_like(p.data))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data = (p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 0.0005, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def step(self, lr: float | None = None) -> None:
        grads = {k: p.grad for k, p in self.params.items()}
        adam_step(self.params, grads, self.state, self.lr if lr is None else lr, self.beta1, self.beta2, self.eps)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    mae: float
    ce: float
    dev: dict | None = None

    def line(self) -> str:
        out = f"epoch={self.epoch} lr={self.lr:.6g} loss={self.loss:.6f} mae={self.mae:.6f} ce={self.ce:.6f}"
        if self.dev is not None:
            out += f" dev_p={self.dev['precision']:.4f} dev_r={self.dev['recall']:.4f} dev_f1={self.dev['f1']:.4f}"
        return out


@dataclass
class TrainResult:
    model: MergeLabelModel
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_f1: float = float("nan")

    def log_text(self) -> str:
        return "".join(r.line() + "\n" for r in self.history)


def train(
    model: MergeLabelModel,
    batches: Sequence[Batch],
    epochs: int,
    seed: int = 0,
    dev_batches: Sequence[Batch] | None = None,
    dev_gold=None,
    label_names: Sequence[str] | None = None,
    flat: bool = False,
    on_epoch: Callable[[EpochRecord], None] | None = None,
    on_best: Callable[[MergeLabelModel], None] | None = None,
    on_diverge: Callable[[MergeLabelModel], None] | None = None,
) -> TrainResult:
    """forward -> loss -> backward -> Adam for every batch, every epoch.

    With a dev set, strict F1 at the configured cutoff is computed after each
    epoch and the best-scoring parameters are restored at the end. A
    non-finite loss rolls the parameters back to the last finite state (the
    start of the epoch if the current ones are already corrupt), hands the
    model to ``on_diverge`` and raises :class:`TrainingDiverged`.
    """
    c = model.config
    rng = np.random.default_rng([seed, 7])
    opt = Adam(model.params, c.lr, c.beta1, c.beta2, c.eps)
    result = TrainResult(model)
    best_state = None
    for epoch in range(epochs):
        lr = lr_schedule(epoch, c.lr, epochs)
        totals = np.zeros(3)
        order = rng.permutation(len(batches))
        epoch_start = {k: v.copy() for k, v in model.state_arrays().items()}
        for bi in order:
            batch = batches[bi]
            model.zero_grad()
            out = model.forward(batch, training=True)
            parts = compute_loss(out, batch, c.w_m)
            values = np.array([parts.total.item(), parts.mae_m.item(), parts.ce_c.item()])
            if not np.all(np.isfinite(values)):
                if not all(np.all(np.isfinite(v)) for v in model.state_arrays().values()):
                    model.load_arrays(epoch_start)
                if on_diverge is not None:
                    on_diverge(model)
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", result.history)
            T.backward(parts.total)
            opt.step(lr)
            totals += values
        n = max(len(batches), 1)
        rec = EpochRecord(epoch, lr, totals[0] / n, totals[1] / n, totals[2] / n)
        if dev_batches is not None and dev_gold is not None:
            spans = decode_all(predict(model, dev_batches), dev_batches, label_names, c.cutoff)
            rec.dev = score(spans, dev_gold, flat)
            if best_state is None or rec.dev["f1"] > result.best_f1:
                result.best_f1 = rec.dev["f1"]
                result.best_epoch = epoch
                best_state = {k: v.copy() for k, v in model.state_arrays().items()}
                if on_best is not None:
                    on_best(model)
        result.history.append(rec)
        logger.info(rec.line())
        if on_epoch is not None:
            on_epoch(rec)
    if best_state is not None:
        model.load_arrays(best_state)
    return result
