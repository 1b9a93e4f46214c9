"""Optimizer, learning-rate schedule, losses, and the training loop.

SGD uses coupled weight decay (added to the gradient) and momentum:
    g <- grad + wd * p;  v <- m * v + g;  p <- p - lr * v
Frozen parameters are skipped entirely, so they stay bitwise unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import AudioSpectrogram, VisualClip
from .fusion import FusionMode, cmfl_loss
from .layers import Parameter
from .model import DeceptionModel, ModalityMask, apply_mask
from .rng import SplitMix64, derive_seed
from .tensor import (Tensor, backward, concat, exp, log, mean, mul, no_grad,
                     reshape, tensor_sum)


class OptimizerError(RuntimeError):
    """Raised when a trainable parameter is missing its gradient."""


@dataclass
class TrainConfig:
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 5e-5
    momentum: float = 0.9
    step_size: int = 20
    gamma: float = 0.1
    epochs: int = 25
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "lr", "weight_decay", "momentum",
                     "step_size", "gamma", "epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


class SgdState:
    """Per-parameter momentum buffers, created lazily."""

    def __init__(self):
        self.velocity: dict[str, np.ndarray] = {}


def step_lr(epoch: int, cfg: TrainConfig) -> float:
    """StepLR: base_lr * gamma ** floor(epoch / step_size)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr * cfg.gamma ** (epoch // cfg.step_size)


def sgd_step(params: list[Parameter], state: SgdState, cfg: TrainConfig,
             lr: float | None = None) -> None:
    """One SGD update over the trainable parameters; zeroes all grads after."""
    if lr is None:
        lr = cfg.lr
    for p in params:
        if not p.trainable:
            continue
        if p.value.grad is None:
            raise OptimizerError(f"trainable parameter {p.name} has no gradient")
        g = p.value.grad + cfg.weight_decay * p.value.data
        v = state.velocity.get(p.name)
        v = g if v is None else cfg.momentum * v + g
        state.velocity[p.name] = v
        p.value.data -= lr * v
    for p in params:
        p.value.grad = None


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy for a (B, 2) logit batch and 0/1 labels."""
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"labels shape {labels.shape} != ({b},)")
    # logsumexp with a detached max shift is exact for any constant shift
    shift = logits.data.max(axis=-1, keepdims=True)
    lse = log(tensor_sum(exp(logits - shift), axis=-1)) + Tensor(shift[:, 0])
    onehot = np.zeros((b, c))
    onehot[np.arange(b), labels] = 1.0
    picked = tensor_sum(mul(logits, Tensor(onehot)), axis=-1)
    return mean(lse - picked)


def class_probabilities(logits: Tensor, labels) -> Tensor:
    """Probability assigned to the true class, per row of a (B, 2) batch."""
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    shift = logits.data.max(axis=-1, keepdims=True)
    lse = log(tensor_sum(exp(logits - shift), axis=-1)) + Tensor(shift[:, 0])
    onehot = np.zeros((b, c))
    onehot[np.arange(b), labels] = 1.0
    picked = tensor_sum(mul(logits, Tensor(onehot)), axis=-1)
    return exp(picked - lse)


def _sample_inputs(sample) -> tuple[VisualClip, AudioSpectrogram]:
    return (VisualClip(Tensor(sample.frames.astype(np.float64))),
            AudioSpectrogram(Tensor(sample.spectrogram.astype(np.float64))))


def _effective_mask(sample, mask: ModalityMask | None) -> ModalityMask | None:
    """Intersect the scenario mask with the sample's availability flags."""
    vision = sample.availability & 1 != 0
    audio = sample.availability & 2 != 0
    if mask is not None:
        vision = vision and mask.vision_present
        audio = audio and mask.audio_present
    if vision and audio:
        return None if mask is None else mask
    return ModalityMask(vision, audio)


def batch_logits(model: DeceptionModel, samples, mask: ModalityMask | None = None,
                 with_branches: bool = False):
    """Stack per-sample forwards into (B, 2) logits (plus branch logits)."""
    rows, rows_v, rows_a = [], [], []
    for sample in samples:
        clip, spec = _sample_inputs(sample)
        eff = _effective_mask(sample, mask)
        if with_branches:
            joint, v, a = model.forward_with_branches(clip, spec, eff)
            rows_v.append(reshape(v, (1, 2)))
            rows_a.append(reshape(a, (1, 2)))
        else:
            joint = model.forward(clip, spec, eff)
        rows.append(reshape(joint, (1, 2)))
    logits = concat(rows, axis=0) if len(rows) > 1 else rows[0]
    if not with_branches:
        return logits
    vb = concat(rows_v, axis=0) if len(rows_v) > 1 else rows_v[0]
    ab = concat(rows_a, axis=0) if len(rows_a) > 1 else rows_a[0]
    return logits, vb, ab


def training_loss(model: DeceptionModel, samples, mask: ModalityMask | None = None,
                  cmfl_gamma: float = 2.0) -> Tensor:
    """Batch loss for the model's fusion mode.

    cmfl mode adds the two cross-modal focal terms over the branch heads to
    the joint cross-entropy; every other mode is plain cross-entropy.
    """
    labels = [s.label for s in samples]
    if model.cfg.fusion is FusionMode.CMFL:
        logits, v_logits, a_logits = batch_logits(model, samples, mask,
                                                  with_branches=True)
        p = class_probabilities(v_logits, labels)
        q = class_probabilities(a_logits, labels)
        focal = mean(cmfl_loss(p, q, cmfl_gamma)) + mean(cmfl_loss(q, p, cmfl_gamma))
        return cross_entropy(logits, labels) + focal
    logits = batch_logits(model, samples, mask)
    return cross_entropy(logits, labels)


def train_model(model: DeceptionModel, samples, cfg: TrainConfig,
                mask: ModalityMask | None = None,
                log_fn=None) -> list[float]:
    """Train in place; returns the mean loss per epoch.

    Batch order reshuffles every epoch from a stream derived from (seed,
    epoch); the last incomplete batch is kept.
    """
    params = model.store.all()
    state = SgdState()
    history: list[float] = []
    n = len(samples)
    for epoch in range(cfg.epochs):
        lr = step_lr(epoch, cfg)
        order = SplitMix64(derive_seed(cfg.seed, "epoch", epoch)).shuffle(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            batch = [samples[i] for i in order[start:start + cfg.batch_size]]
            loss = training_loss(model, batch, mask)
            losses.append(loss.item())
            backward(loss)
            sgd_step(params, state, cfg, lr)
        history.append(float(np.mean(losses)))
        if log_fn is not None:
            log_fn(epoch, history[-1], lr)
    return history


def predict_scores(model: DeceptionModel, samples,
                   mask: ModalityMask | None = None,
                   hook=None) -> tuple[np.ndarray, np.ndarray]:
    """Positive-class ("lie") probabilities and labels, without grad tracking.

    The optional hook receives (index, masked_clip, masked_spec) for every
    sample, so callers can audit that zero-blocking was actually applied.
    """
    scores = np.empty(len(samples))
    labels = np.empty(len(samples), dtype=np.int64)
    with no_grad():
        for i, sample in enumerate(samples):
            clip, spec = _sample_inputs(sample)
            eff = _effective_mask(sample, mask)
            mclip, mspec = apply_mask(clip, spec, eff)
            if hook is not None:
                hook(i, mclip, mspec)
            logits = model.forward(mclip, mspec, None).data
            shifted = np.exp(logits - logits.max())
            scores[i] = shifted[1] / shifted.sum()
            labels[i] = sample.label
    return scores, labels


def grad_check_model(model: DeceptionModel, samples, n_coords: int = 4,
                     h: float = 1e-5, seed: int = 0,
                     mask: ModalityMask | None = None) -> dict[str, float]:
    """Central-difference check of the full-model loss gradient.

    Samples up to n_coords coordinates per trainable parameter and returns the
    max relative error per parameter name.
    """
    params = [p for p in model.store.all() if p.trainable]
    loss = training_loss(model, samples, mask)
    backward(loss)
    analytic = {p.name: (np.array(p.value.grad) if p.value.grad is not None
                         else np.zeros_like(p.value.data)) for p in params}
    for p in model.store.all():
        p.value.grad = None

    worst: dict[str, float] = {}
    with no_grad():
        for p in params:
            stream = SplitMix64(derive_seed(seed, "gradcheck", p.name))
            size = p.value.size
            coords = (stream.integers(min(n_coords, size), size)
                      if size > n_coords else np.arange(size))
            flat = p.value.data.reshape(-1)
            err = 0.0
            for c in sorted(set(int(c) for c in coords)):
                orig = flat[c]
                flat[c] = orig + h
                up = training_loss(model, samples, mask).item()
                flat[c] = orig - h
                down = training_loss(model, samples, mask).item()
                flat[c] = orig
                numeric = (up - down) / (2.0 * h)
                a = analytic[p.name].reshape(-1)[c]
                err = max(err, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
            worst[p.name] = err
    return worst
