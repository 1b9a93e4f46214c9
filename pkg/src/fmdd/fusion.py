"""Cross-modal fusion mechanisms.

The audio-visual adapter is a bottleneck (linear-down, GELU, temporal 1-D conv
over time-aligned visual/audio token pairs, GELU, linear-up) inserted in
parallel with frozen encoder sublayers. Its linear-up is zero-initialized so a
freshly inserted adapter leaves the frozen model bitwise unchanged.

The comparison baselines are plain concatenation, SE-gated concatenation, a
cross-modal focal loss over two modality branch heads, and prompt tokens.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .backbone import TokenLayout, TokenSequence
from .layers import Linear, Parameter, ParamStore, SeBlock
from .tensor import (Tensor, ShapeError, add, clamp_min, concat, conv1d_temporal,
                     div, gelu, log, mul, narrow, neg, pow_scalar, reshape,
                     transpose)


class FusionMode(str, Enum):
    AVA = "ava"
    CONCAT = "concat"
    SE_CONCAT = "se-concat"
    CMFL = "cmfl"
    PROMPT = "prompt"


@dataclass(frozen=True)
class AvaConfig:
    """Adapter hyperparameters: bottleneck width, temporal kernel, placement
    within each encoder block, and which layers carry adapters.

    kernel_k = 0 means the conv stage is omitted (linear-down/up only), the
    channel-wise adapter degenerate case used in ablations.
    """

    d_bottleneck: int
    kernel_k: int = 5
    placement: frozenset[str] = frozenset({"mhsa", "ffn"})
    layer_set: tuple[int, ...] = ()

    def __post_init__(self):
        if self.d_bottleneck < 1:
            raise ValueError(f"d_bottleneck must be >= 1, got {self.d_bottleneck}")
        if self.kernel_k != 0 and self.kernel_k % 2 == 0:
            raise ValueError(f"kernel_k must be odd or 0, got {self.kernel_k}")
        bad = set(self.placement) - {"mhsa", "ffn"}
        if bad:
            raise ValueError(f"unknown placement entries: {sorted(bad)}")


class AudioVisualAdapter:
    """Bottleneck adapter mixing time-aligned visual/audio tokens.

    Forward: (a) linear-down then GELU on all tokens; (b) stack the visual and
    audio bottleneck tokens of each time step into a 2*d_b channel column,
    giving a (2*d_b, T) array; (c) full-channel temporal conv, kernel k,
    padding k//2; (d) unstack; (e) GELU then linear-up. Untimed tokens (class,
    prompts) skip (b)-(d) but keep the down/up path.
    """

    def __init__(self, store: ParamStore, prefix: str, d_model: int, cfg: AvaConfig):
        self.cfg = cfg
        self.d_model = d_model
        self.down = Linear(store, f"{prefix}.down", d_model, cfg.d_bottleneck,
                           weight_kind="he")
        if cfg.kernel_k > 0:
            c = 2 * cfg.d_bottleneck
            self.conv_w = store.add(f"{prefix}.conv.w", (c, c, cfg.kernel_k), "he",
                                    fan_in=c * cfg.kernel_k)
            self.conv_b = store.add(f"{prefix}.conv.b", (c,), "zeros")
        else:
            self.conv_w = None
            self.conv_b = None
        self.up = Linear(store, f"{prefix}.up", cfg.d_bottleneck, d_model,
                         weight_kind="zeros", bias_kind="zeros")

    def __call__(self, tokens: Tensor, layout: TokenLayout) -> Tensor:
        s, d = tokens.shape
        if d != self.d_model:
            raise ShapeError(f"adapter width {self.d_model} != token width {d}")
        if s != layout.length:
            raise ShapeError(f"layout expects {layout.length} tokens "
                             f"({layout.t_steps} visual + {layout.t_steps} audio), got {s}")
        t = layout.t_steps
        db = self.cfg.d_bottleneck
        h = gelu(self.down(tokens))  # (S, db)
        if self.conv_w is not None:
            lead = 1 + layout.n_prompts
            timed = narrow(h, 0, lead, 2 * t)
            v = transpose(narrow(timed, 0, 0, t))       # (db, T)
            a = transpose(narrow(timed, 0, t, t))       # (db, T)
            stacked = concat([v, a], axis=0)            # (2*db, T)
            mixed = conv1d_temporal(stacked, self.conv_w.value, self.conv_b.value,
                                    padding=self.cfg.kernel_k // 2)
            v2 = transpose(narrow(mixed, 0, 0, db))
            a2 = transpose(narrow(mixed, 0, db, db))
            h = concat([narrow(h, 0, 0, lead), v2, a2], axis=0)
        return self.up(gelu(h))


def ava_forward(seq: TokenSequence, adapter: AudioVisualAdapter) -> Tensor:
    """Adapter output for a token sequence; the caller adds it residually."""
    return adapter(seq.tokens, seq.layout)


class ConcatFuse:
    """Channel concat of the two pooled features into a linear 2-logit head."""

    def __init__(self, store: ParamStore, prefix: str, d: int):
        self.head = Linear(store, f"{prefix}.head", 2 * d, 2, weight_kind="he")
        self.d = d

    def __call__(self, pooled_v: Tensor, pooled_a: Tensor) -> Tensor:
        both = concat([reshape(pooled_v, (1, self.d)),
                       reshape(pooled_a, (1, self.d))], axis=1)
        return reshape(self.head(both), (2,))


class SeConcatFuse:
    """SE self-calibration on each modality branch, then concat fusion."""

    def __init__(self, store: ParamStore, prefix: str, d: int, reduction: int = 4):
        self.se_v = SeBlock(store, f"{prefix}.se_v", d, reduction)
        self.se_a = SeBlock(store, f"{prefix}.se_a", d, reduction)
        self.fuse = ConcatFuse(store, f"{prefix}.concat", d)

    def __call__(self, pooled_v: Tensor, pooled_a: Tensor) -> Tensor:
        return self.fuse(self.se_v(pooled_v), self.se_a(pooled_a))


def cmfl_loss(p: Tensor, q: Tensor, gamma: float = 2.0) -> Tensor:
    """Cross-modal focal term: -(1 - w)^gamma * log(p) with
    w(p, q) = q * 2pq / (p + q).

    p and q are the probabilities the two modality branches assign to the true
    class; a confident sibling branch (large q) shrinks the penalty on p.
    Inputs are clamped at 1e-7.
    """
    p = clamp_min(p, 1e-7)
    q = clamp_min(q, 1e-7)
    w = div(mul(q, mul(mul(p, q), 2.0)), add(p, q))
    focal = pow_scalar(add(neg(w), 1.0), gamma)
    return neg(mul(focal, log(p)))


def prompt_prepend(seq: TokenSequence, prompts: Parameter | None) -> TokenSequence:
    """Insert learnable prompt tokens after the class token:
    [class | prompts | visual | audio]."""
    if prompts is None or prompts.value.shape[0] == 0:
        return seq
    m, d = prompts.value.shape
    if d != seq.tokens.shape[1]:
        raise ShapeError(f"prompt width {d} != token width {seq.tokens.shape[1]}")
    lay = seq.layout
    if lay.n_prompts:
        raise ShapeError("sequence already carries prompt tokens")
    cls = narrow(seq.tokens, 0, 0, 1)
    rest = narrow(seq.tokens, 0, 1, 2 * lay.t_steps)
    tokens = concat([cls, prompts.value, rest], axis=0)
    return TokenSequence(tokens, TokenLayout(t_steps=lay.t_steps, n_prompts=m))
