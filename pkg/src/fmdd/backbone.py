"""Feature extraction and tokenization.

A shared-weight per-frame CNN turns the visual clip into one feature row per
frame; an unshared CNN turns the spectrogram into features keeping a time and
a frequency axis. Temporal convolutions project both into d-dimensional tokens
aligned on the time axis, and the full sequence is assembled as
[class | visual(T) | audio(T)] plus learnable position embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

from .layers import Parameter, ParamStore
from .tensor import (Tensor, ShapeError, add, concat, conv1d_temporal, conv2d,
                     gelu, matmul, mean, permute, reshape, transpose)


@dataclass
class VisualClip:
    """T frames of face crops, shape (T, C, H, W)."""

    frames: Tensor

    def __post_init__(self):
        if self.frames.ndim != 4:
            raise ShapeError(f"clip frames must be (T, C, H, W), got {self.frames.shape}")

    @property
    def t_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class AudioSpectrogram:
    """A mel-spectrogram-shaped image, shape (C, H, W); W is the time axis."""

    image: Tensor

    def __post_init__(self):
        if self.image.ndim != 3:
            raise ShapeError(f"spectrogram must be (C, H, W), got {self.image.shape}")


@dataclass(frozen=True)
class TokenLayout:
    """Positions within [class | prompts | visual(T) | audio(T)]."""

    t_steps: int
    n_prompts: int = 0

    @property
    def class_index(self) -> int:
        return 0

    @property
    def prompt_slice(self) -> slice:
        return slice(1, 1 + self.n_prompts)

    @property
    def visual_slice(self) -> slice:
        start = 1 + self.n_prompts
        return slice(start, start + self.t_steps)

    @property
    def audio_slice(self) -> slice:
        start = 1 + self.n_prompts + self.t_steps
        return slice(start, start + self.t_steps)

    @property
    def length(self) -> int:
        return 1 + self.n_prompts + 2 * self.t_steps


@dataclass
class TokenSequence:
    tokens: Tensor  # (S, d)
    layout: TokenLayout

    def __post_init__(self):
        if self.tokens.shape[0] != self.layout.length:
            raise ShapeError(f"sequence length {self.tokens.shape[0]} does not match "
                             f"layout length {self.layout.length}")


class ConvStack:
    """Stacked stride-2 conv2d + GELU stages with optional global average pool.

    Stand-in for a pretrained image backbone: the contract the rest of the
    pipeline relies on is shapes and weight sharing, not representation quality.
    """

    def __init__(self, store: ParamStore, prefix: str, channels: list[int],
                 kernel: int = 3, stride: int = 2, pool: bool = True):
        self.stages: list[tuple[Parameter, Parameter]] = []
        self.kernel = kernel
        self.stride = stride
        self.padding = kernel // 2
        self.pool = pool
        for i, (cin, cout) in enumerate(zip(channels[:-1], channels[1:])):
            w = store.add(f"{prefix}.stage{i}.w", (cout, cin, kernel, kernel), "he",
                          fan_in=cin * kernel * kernel)
            b = store.add(f"{prefix}.stage{i}.b", (cout,), "zeros")
            self.stages.append((w, b))

    def __call__(self, x: Tensor) -> Tensor:
        for w, b in self.stages:
            x = gelu(conv2d(x, w.value, b.value, stride=self.stride, padding=self.padding))
        if self.pool:
            x = mean(mean(x, axis=-1), axis=-1)  # (..., C)
        return x


class VisualExtractor:
    """Per-frame CNN with shared weights: clip (T, C, H, W) -> features (T, dv)."""

    def __init__(self, store: ParamStore, channels: list[int]):
        self.stack = ConvStack(store, "extractor.visual", channels, pool=True)
        self.dv = channels[-1]

    def __call__(self, clip: VisualClip) -> Tensor:
        return self.stack(clip.frames)


class AudioExtractor:
    """Unshared CNN over the spectrogram keeping time and frequency axes:
    image (C, H, W) -> features (da, T, F) with T taken from the width axis."""

    def __init__(self, store: ParamStore, channels: list[int]):
        self.stack = ConvStack(store, "extractor.audio", channels, pool=False)
        self.da = channels[-1]

    def __call__(self, spec: AudioSpectrogram) -> Tensor:
        feats = self.stack(spec.image)  # (da, F, T)
        return permute(feats, (0, 2, 1))  # (da, T, F)


class VisualProjector:
    """Temporal conv over frame features: (T, dv) -> (T, d), one token per frame."""

    def __init__(self, store: ParamStore, dv: int, d: int, kernel: int = 3):
        if kernel % 2 == 0:
            raise ShapeError(f"projection kernel must be odd, got {kernel}")
        self.w = store.add("proj.visual.conv.w", (d, dv, kernel), "he",
                           fan_in=dv * kernel)
        self.b = store.add("proj.visual.conv.b", (d,), "zeros")
        self.padding = kernel // 2

    def __call__(self, fv: Tensor) -> Tensor:
        out = conv1d_temporal(transpose(fv), self.w.value, self.b.value, self.padding)
        return transpose(out)


class AudioProjector:
    """Frequency-global conv collapsing the frequency axis, then a temporal
    conv: (da, T, F) -> (T, d), one token per time step."""

    def __init__(self, store: ParamStore, da: int, freq: int, d: int, kernel: int = 3):
        if kernel % 2 == 0:
            raise ShapeError(f"projection kernel must be odd, got {kernel}")
        # kernel spanning the full frequency extent == per-step linear map
        self.freq_w = store.add("proj.audio.freq.w", (da * freq, da), "he",
                                fan_in=da * freq)
        self.freq_b = store.add("proj.audio.freq.b", (da,), "zeros")
        self.w = store.add("proj.audio.conv.w", (d, da, kernel), "he",
                           fan_in=da * kernel)
        self.b = store.add("proj.audio.conv.b", (d,), "zeros")
        self.da = da
        self.freq = freq
        self.padding = kernel // 2

    def __call__(self, fa: Tensor) -> Tensor:
        da, t, freq = fa.shape
        if da != self.da or freq != self.freq:
            raise ShapeError(f"audio features {fa.shape} do not match projector "
                             f"(da={self.da}, F={self.freq})")
        per_step = reshape(permute(fa, (1, 0, 2)), (t, da * freq))
        collapsed = add(matmul(per_step, self.freq_w.value), self.freq_b.value)  # (T, da)
        out = conv1d_temporal(transpose(collapsed), self.w.value, self.b.value, self.padding)
        return transpose(out)


def assemble_tokens(tv: Tensor, ta: Tensor, class_token: Parameter,
                    pos_emb: Parameter) -> TokenSequence:
    """Concatenate [class | visual | audio] and add position embeddings."""
    if tv.shape != ta.shape:
        raise ShapeError(f"visual tokens {tv.shape} and audio tokens {ta.shape} differ")
    t, d = tv.shape
    if class_token.value.shape != (d,):
        raise ShapeError(f"class token shape {class_token.value.shape} != ({d},)")
    s = 2 * t + 1
    if pos_emb.value.shape != (s, d):
        raise ShapeError(f"position embedding shape {pos_emb.value.shape} != ({s}, {d})")
    cls = reshape(class_token.value, (1, d))
    tokens = add(concat([cls, tv, ta], axis=0), pos_emb.value)
    return TokenSequence(tokens, TokenLayout(t_steps=t))
