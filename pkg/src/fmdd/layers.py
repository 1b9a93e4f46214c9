"""Composable neural layers: parameter registration, initialization, freezing.

Parameters live in a flat, insertion-ordered store keyed by dotted-path names
(``encoder.0.attn.wq``). Freezing works on name prefixes, so adapters are
deliberately registered outside the ``encoder.`` namespace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64, derive_seed
from .tensor import (Tensor, ShapeError, add, gelu, layer_norm, matmul, mul,
                     permute, relu, reshape, sigmoid, softmax)

INIT_SIGMA = 0.02


@dataclass
class Parameter:
    """A named tensor with a trainable flag consulted by the optimizer."""

    name: str
    value: Tensor
    trainable: bool = True
    init_kind: str = "normal"  # normal | he | zeros | ones
    fan_in: int = 0            # required for the fan-in-scaled "he" kind


class ParamStore:
    """Flat registry of uniquely named parameters in insertion order."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, shape: tuple[int, ...], kind: str = "normal",
            fan_in: int = 0) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        if kind == "he" and fan_in < 1:
            raise ValueError(f"parameter {name}: 'he' init needs fan_in >= 1")
        p = Parameter(name, Tensor(np.zeros(shape), requires_grad=True), True,
                      kind, fan_in)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def all(self) -> list[Parameter]:
        return list(self._params.values())

    def names(self) -> list[str]:
        return list(self._params)

    def prefixed(self, prefix: str) -> list[Parameter]:
        return [p for n, p in self._params.items() if n.startswith(prefix)]


def init_params(model, seed: int) -> None:
    """Deterministically initialize every parameter from the seed.

    Each parameter gets its own stream derived from (seed, name), so the result
    is independent of registration order. Kinds: ``normal`` is N(0, 0.02)
    truncated at two sigma (transformer-side weights and embeddings); ``he``
    is fan-in-scaled N(0, 2/fan_in), same truncation (freshly trained
    extractor, projection, adapter, and head weights - these have no
    pretrained counterpart, and signal through them dies at desk scale without
    fan-in scaling); ``zeros`` and ``ones`` are constants.
    """
    store: ParamStore = model.store if hasattr(model, "store") else model
    for p in store.all():
        if p.init_kind == "zeros":
            p.value.data[...] = 0.0
        elif p.init_kind == "ones":
            p.value.data[...] = 1.0
        elif p.init_kind in ("normal", "he"):
            sigma = INIT_SIGMA if p.init_kind == "normal" else math.sqrt(2.0 / p.fan_in)
            stream = SplitMix64(derive_seed(seed, "init", p.name))
            p.value.data[...] = stream.truncated_normal(
                p.value.size, sigma).reshape(p.value.shape)
        else:
            raise ValueError(f"unknown init kind {p.init_kind!r} for {p.name}")
        p.value.grad = None


def set_trainable(model, name_pattern: str, flag: bool) -> int:
    """Set the trainable flag on every parameter whose dotted path starts with
    the pattern. Returns the match count; zero matches is an error."""
    store: ParamStore = model.store if hasattr(model, "store") else model
    matched = store.prefixed(name_pattern)
    if not matched:
        raise ValueError(f"no parameters match pattern {name_pattern!r}")
    for p in matched:
        p.trainable = flag
    return len(matched)


@dataclass
class MhsaConfig:
    d_model: int
    n_heads: int

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ShapeError(f"n_heads={self.n_heads} does not divide "
                             f"d_model={self.d_model}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


class Linear:
    """Affine map x @ W + b with W (d_in, d_out)."""

    def __init__(self, store: ParamStore, prefix: str, d_in: int, d_out: int,
                 weight_kind: str = "normal", bias_kind: str = "zeros"):
        self.w = store.add(f"{prefix}.w", (d_in, d_out), weight_kind, fan_in=d_in)
        self.b = store.add(f"{prefix}.b", (d_out,), bias_kind)

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.w.value), self.b.value)


class LayerNorm:
    def __init__(self, store: ParamStore, prefix: str, d: int, eps: float = 1e-5):
        self.gamma = store.add(f"{prefix}.gamma", (d,), "ones")
        self.beta = store.add(f"{prefix}.beta", (d,), "zeros")
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma.value, self.beta.value, self.eps)


class Mhsa:
    """Multi-head scaled dot-product self-attention, full (unmasked):
    every token attends to every token."""

    def __init__(self, store: ParamStore, prefix: str, cfg: MhsaConfig):
        self.cfg = cfg
        d = cfg.d_model
        self.q = Linear(store, f"{prefix}.q", d, d, weight_kind="he")
        self.k = Linear(store, f"{prefix}.k", d, d, weight_kind="he")
        self.v = Linear(store, f"{prefix}.v", d, d, weight_kind="he")
        self.out = Linear(store, f"{prefix}.out", d, d, weight_kind="he")

    def __call__(self, tokens: Tensor) -> Tensor:
        s, d = tokens.shape
        h, dh = self.cfg.n_heads, self.cfg.d_head
        q = permute(reshape(self.q(tokens), (s, h, dh)), (1, 0, 2))  # (h, S, dh)
        k = permute(reshape(self.k(tokens), (s, h, dh)), (1, 0, 2))
        v = permute(reshape(self.v(tokens), (s, h, dh)), (1, 0, 2))
        scores = mul(matmul(q, permute(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
        attn = softmax(scores)
        mixed = matmul(attn, v)  # (h, S, dh)
        merged = reshape(permute(mixed, (1, 0, 2)), (s, d))
        return self.out(merged)


class Mlp:
    """Token-wise feed-forward: linear(d -> r*d), GELU, linear(r*d -> d)."""

    def __init__(self, store: ParamStore, prefix: str, d: int, hidden_ratio: int = 4):
        hidden = hidden_ratio * d
        self.fc1 = Linear(store, f"{prefix}.fc1", d, hidden, weight_kind="he")
        self.fc2 = Linear(store, f"{prefix}.fc2", hidden, d, weight_kind="he")

    def __call__(self, tokens: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(tokens)))


class SeBlock:
    """Squeeze-and-excitation gate on an already pooled feature vector:
    feat * sigmoid(W2 relu(W1 feat))."""

    def __init__(self, store: ParamStore, prefix: str, channels: int, reduction: int = 4):
        reduced = max(channels // reduction, 1)
        self.fc1 = Linear(store, f"{prefix}.fc1", channels, reduced, weight_kind="he")
        self.fc2 = Linear(store, f"{prefix}.fc2", reduced, channels, weight_kind="he")
        self.channels = channels

    def __call__(self, feat: Tensor) -> Tensor:
        flat = feat.ndim == 1
        x = reshape(feat, (1, self.channels)) if flat else feat
        gate = sigmoid(self.fc2(relu(self.fc1(x))))
        out = mul(x, gate)
        return reshape(out, (self.channels,)) if flat else out
