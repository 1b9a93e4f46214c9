"""Full network assembly and modality masking.

The forward path is: zero-block masked raw inputs, extract per-modality
features, project to temporal tokens, assemble [class | visual | audio] with
position embeddings (plus prompt tokens in prompt mode), run N encoder blocks
with adapters in parallel to their sublayers, then apply the mode's head.

Each encoder block is a flat three-term sum per sublayer:
    mid = x + MHSA(LN(x)) + A(x)
    out = mid + LN(MLP(mid)) + A'(mid)
with adapter terms A only on configured layers/placements; the FFN branch
becomes MLP(LN(mid)) under the pre_norm option.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .backbone import (AudioExtractor, AudioProjector, AudioSpectrogram,
                       TokenSequence, VisualClip, VisualExtractor,
                       VisualProjector, assemble_tokens)
from .fusion import (AudioVisualAdapter, AvaConfig, ConcatFuse, FusionMode,
                     SeConcatFuse, prompt_prepend)
from .layers import (LayerNorm, Linear, Mhsa, MhsaConfig, Mlp, ParamStore,
                     init_params, set_trainable)
from .tensor import Tensor, ShapeError, add, mean, narrow, reshape


class MaskError(ValueError):
    """Raised when a modality mask would block every modality."""


@dataclass(frozen=True)
class ModalityMask:
    vision_present: bool = True
    audio_present: bool = True

    def __post_init__(self):
        if not (self.vision_present or self.audio_present):
            raise MaskError("at least one modality must be present")

    @property
    def label(self) -> str:
        if self.vision_present and self.audio_present:
            return "V&A"
        return "V" if self.vision_present else "A"


MASK_VA = ModalityMask(True, True)
MASK_A = ModalityMask(False, True)
MASK_V = ModalityMask(True, False)


def _conv_out(size: int, stages: int, kernel: int = 3, stride: int = 2) -> int:
    pad = kernel // 2
    for _ in range(stages):
        size = (size + 2 * pad - kernel) // stride + 1
    return size


@dataclass(frozen=True)
class ModelConfig:
    """All architecture hyperparameters for one model instance."""

    preset: str
    t_frames: int
    frame_shape: tuple[int, int, int]  # (C, H, W)
    spec_shape: tuple[int, int, int]   # (C, H, W); W is the time axis
    visual_channels: tuple[int, ...]
    audio_channels: tuple[int, ...]
    d_model: int
    n_heads: int
    n_layers: int
    ava: AvaConfig
    fusion: FusionMode = FusionMode.AVA
    ffn_norm_order: str = "as_paper"   # as_paper | pre_norm
    mlp_ratio: int = 4
    proj_kernel: int = 3
    n_prompts: int = 5
    n_classes: int = 2

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.ffn_norm_order not in ("as_paper", "pre_norm"):
            raise ValueError(f"unknown ffn_norm_order {self.ffn_norm_order!r}")
        if self.visual_channels[0] != self.frame_shape[0]:
            raise ShapeError("visual_channels[0] must equal the frame channel count")
        if self.audio_channels[0] != self.spec_shape[0]:
            raise ShapeError("audio_channels[0] must equal the spectrogram channel count")
        if self.audio_time != self.t_frames:
            raise ShapeError(f"audio extractor yields T'={self.audio_time} time steps "
                             f"but the clip has T={self.t_frames} frames")
        bad = [i for i in self.ava.layer_set if not 0 <= i < self.n_layers]
        if bad:
            raise ValueError(f"ava layer_set entries out of range: {bad}")

    @property
    def dv(self) -> int:
        return self.visual_channels[-1]

    @property
    def da(self) -> int:
        return self.audio_channels[-1]

    @property
    def audio_time(self) -> int:
        return _conv_out(self.spec_shape[2], len(self.audio_channels) - 1)

    @property
    def audio_freq(self) -> int:
        return _conv_out(self.spec_shape[1], len(self.audio_channels) - 1)

    @property
    def seq_len(self) -> int:
        return 2 * self.t_frames + 1

    def to_kv(self) -> str:
        lines = [
            f"preset={self.preset}",
            f"t_frames={self.t_frames}",
            "frame_shape=" + ",".join(map(str, self.frame_shape)),
            "spec_shape=" + ",".join(map(str, self.spec_shape)),
            "visual_channels=" + ",".join(map(str, self.visual_channels)),
            "audio_channels=" + ",".join(map(str, self.audio_channels)),
            f"d_model={self.d_model}",
            f"n_heads={self.n_heads}",
            f"n_layers={self.n_layers}",
            f"ava_d_bottleneck={self.ava.d_bottleneck}",
            f"ava_kernel_k={self.ava.kernel_k}",
            "ava_placement=" + "+".join(sorted(self.ava.placement)),
            "ava_layer_set=" + ",".join(map(str, self.ava.layer_set)),
            f"fusion={self.fusion.value}",
            f"ffn_norm_order={self.ffn_norm_order}",
            f"mlp_ratio={self.mlp_ratio}",
            f"proj_kernel={self.proj_kernel}",
            f"n_prompts={self.n_prompts}",
            f"n_classes={self.n_classes}",
        ]
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_kv(text: str) -> "ModelConfig":
        kv: dict[str, str] = {}
        for line in text.splitlines():
            line = line.strip()
            if line:
                key, _, value = line.partition("=")
                kv[key] = value

        def ints(key: str) -> tuple[int, ...]:
            raw = kv[key]
            return tuple(int(v) for v in raw.split(",") if v != "")

        placement = frozenset(p for p in kv["ava_placement"].split("+") if p)
        ava = AvaConfig(
            d_bottleneck=int(kv["ava_d_bottleneck"]),
            kernel_k=int(kv["ava_kernel_k"]),
            placement=placement,
            layer_set=ints("ava_layer_set"),
        )
        return ModelConfig(
            preset=kv["preset"],
            t_frames=int(kv["t_frames"]),
            frame_shape=ints("frame_shape"),  # type: ignore[arg-type]
            spec_shape=ints("spec_shape"),    # type: ignore[arg-type]
            visual_channels=ints("visual_channels"),
            audio_channels=ints("audio_channels"),
            d_model=int(kv["d_model"]),
            n_heads=int(kv["n_heads"]),
            n_layers=int(kv["n_layers"]),
            ava=ava,
            fusion=FusionMode(kv["fusion"]),
            ffn_norm_order=kv["ffn_norm_order"],
            mlp_ratio=int(kv["mlp_ratio"]),
            proj_kernel=int(kv["proj_kernel"]),
            n_prompts=int(kv["n_prompts"]),
            n_classes=int(kv["n_classes"]),
        )


def _build_test_preset() -> ModelConfig:
    # desk-scale configuration the test suite runs on: T=4, d=32, N=2
    return ModelConfig(
        preset="test",
        t_frames=4,
        frame_shape=(1, 8, 8),
        spec_shape=(1, 12, 16),
        visual_channels=(1, 8, 16),
        audio_channels=(1, 8, 16),
        d_model=32,
        n_heads=4,
        n_layers=2,
        ava=AvaConfig(d_bottleneck=8, kernel_k=5, layer_set=(0, 1)),
    )


def _build_paper_preset() -> ModelConfig:
    # full-scale configuration: T=20 frames, d=768, 8 encoder layers,
    # 512-dim modality features, adapter kernel 5
    return ModelConfig(
        preset="paper",
        t_frames=20,
        frame_shape=(3, 224, 224),
        spec_shape=(3, 480, 640),
        visual_channels=(3, 64, 128, 256, 512),
        audio_channels=(3, 32, 64, 128, 256, 512),
        d_model=768,
        n_heads=12,
        n_layers=8,
        ava=AvaConfig(d_bottleneck=48, kernel_k=5, layer_set=tuple(range(8))),
    )


_PRESET_BUILDERS = {"test": _build_test_preset, "paper": _build_paper_preset}
PRESETS = tuple(_PRESET_BUILDERS)


def preset(name: str, fusion: FusionMode = FusionMode.AVA, **overrides) -> ModelConfig:
    """A named model configuration ("test" or "paper"), optionally adjusted."""
    try:
        cfg = _PRESET_BUILDERS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; expected one of {PRESETS}") from None
    cfg = replace(cfg, fusion=fusion)
    return replace(cfg, **overrides) if overrides else cfg


def apply_mask(clip: VisualClip, spec: AudioSpectrogram,
               mask: ModalityMask | None) -> tuple[VisualClip, AudioSpectrogram]:
    """Zero-block masked modalities at the raw input, before extraction."""
    if mask is None:
        return clip, spec
    if not (mask.vision_present or mask.audio_present):
        raise MaskError("cannot mask both modalities")
    if not mask.vision_present:
        clip = VisualClip(Tensor(np.zeros_like(clip.frames.data)))
    if not mask.audio_present:
        spec = AudioSpectrogram(Tensor(np.zeros_like(spec.image.data)))
    return clip, spec


class EncoderBlock:
    def __init__(self, store: ParamStore, prefix: str, cfg: ModelConfig):
        d = cfg.d_model
        self.ln1 = LayerNorm(store, f"{prefix}.ln1", d)
        self.attn = Mhsa(store, f"{prefix}.attn", MhsaConfig(d, cfg.n_heads))
        self.ln2 = LayerNorm(store, f"{prefix}.ln2", d)
        self.mlp = Mlp(store, f"{prefix}.mlp", d, cfg.mlp_ratio)
        self.pre_norm = cfg.ffn_norm_order == "pre_norm"

    def __call__(self, tokens: Tensor, layout,
                 ava_mhsa: AudioVisualAdapter | None = None,
                 ava_ffn: AudioVisualAdapter | None = None) -> Tensor:
        mid = add(tokens, self.attn(self.ln1(tokens)))
        if ava_mhsa is not None:
            mid = add(mid, ava_mhsa(tokens, layout))
        if self.pre_norm:
            ffn = self.mlp(self.ln2(mid))
        else:
            ffn = self.ln2(self.mlp(mid))
        out = add(mid, ffn)
        if ava_ffn is not None:
            out = add(out, ava_ffn(mid, layout))
        return out


class DeceptionModel:
    """Binary truth/lie classifier over a visual clip and an audio spectrogram."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        store = ParamStore()
        self.store = store
        self.visual_extractor = VisualExtractor(store, list(cfg.visual_channels))
        self.audio_extractor = AudioExtractor(store, list(cfg.audio_channels))
        self.visual_proj = VisualProjector(store, cfg.dv, cfg.d_model, cfg.proj_kernel)
        self.audio_proj = AudioProjector(store, cfg.da, cfg.audio_freq,
                                         cfg.d_model, cfg.proj_kernel)
        self.class_token = store.add("tokens.class", (cfg.d_model,), "normal")
        self.pos_emb = store.add("tokens.pos", (cfg.seq_len, cfg.d_model), "normal")

        self.blocks = [EncoderBlock(store, f"encoder.{i}", cfg)
                       for i in range(cfg.n_layers)]

        # adapters live outside the encoder namespace so freezing "encoder."
        # leaves them trainable
        self.adapters: dict[int, dict[str, AudioVisualAdapter]] = {}
        if cfg.fusion is FusionMode.AVA:
            for i in cfg.ava.layer_set:
                per_layer = {}
                for place in sorted(cfg.ava.placement):
                    per_layer[place] = AudioVisualAdapter(
                        store, f"ava.{i}.{place}", cfg.d_model, cfg.ava)
                self.adapters[i] = per_layer

        self.prompts = None
        if cfg.fusion is FusionMode.PROMPT and cfg.n_prompts > 0:
            self.prompts = store.add("prompt.tokens", (cfg.n_prompts, cfg.d_model),
                                     "normal")

        self.head = None
        self.concat_head = None
        self.branch_head_v = None
        self.branch_head_a = None
        if cfg.fusion in (FusionMode.AVA, FusionMode.CMFL, FusionMode.PROMPT):
            self.head = Linear(store, "head", cfg.d_model, cfg.n_classes,
                               weight_kind="he")
        if cfg.fusion is FusionMode.CONCAT:
            self.concat_head = ConcatFuse(store, "fusion.concat", cfg.d_model)
        elif cfg.fusion is FusionMode.SE_CONCAT:
            self.concat_head = SeConcatFuse(store, "fusion.se", cfg.d_model)
        if cfg.fusion is FusionMode.CMFL:
            self.branch_head_v = Linear(store, "fusion.cmfl.visual",
                                        cfg.d_model, cfg.n_classes,
                                        weight_kind="he")
            self.branch_head_a = Linear(store, "fusion.cmfl.audio",
                                        cfg.d_model, cfg.n_classes,
                                        weight_kind="he")

    # -- forward ------------------------------------------------------------

    def _check_inputs(self, clip: VisualClip, spec: AudioSpectrogram) -> None:
        t, c, h, w = clip.frames.shape
        if (t, (c, h, w)) != (self.cfg.t_frames, self.cfg.frame_shape):
            raise ShapeError(f"clip shape {clip.frames.shape} does not match config "
                             f"(T={self.cfg.t_frames}, frame={self.cfg.frame_shape})")
        if spec.image.shape != self.cfg.spec_shape:
            raise ShapeError(f"spectrogram shape {spec.image.shape} != "
                             f"{self.cfg.spec_shape}")

    def encode(self, clip: VisualClip, spec: AudioSpectrogram,
               mask: ModalityMask | None = None) -> TokenSequence:
        """Everything up to and including the encoder stack."""
        self._check_inputs(clip, spec)
        clip, spec = apply_mask(clip, spec, mask)
        fv = self.visual_extractor(clip)     # (T, dv)
        fa = self.audio_extractor(spec)      # (da, T, F)
        tv = self.visual_proj(fv)            # (T, d)
        ta = self.audio_proj(fa)             # (T, d)
        seq = assemble_tokens(tv, ta, self.class_token, self.pos_emb)
        if self.cfg.fusion is FusionMode.PROMPT:
            seq = prompt_prepend(seq, self.prompts)
        x = seq.tokens
        for i, block in enumerate(self.blocks):
            per_layer = self.adapters.get(i, {})
            x = block(x, seq.layout,
                      ava_mhsa=per_layer.get("mhsa"),
                      ava_ffn=per_layer.get("ffn"))
        return TokenSequence(x, seq.layout)

    def _pooled(self, seq: TokenSequence) -> tuple[Tensor, Tensor]:
        lay = seq.layout
        pooled_v = mean(narrow(seq.tokens, 0, lay.visual_slice.start, lay.t_steps), axis=0)
        pooled_a = mean(narrow(seq.tokens, 0, lay.audio_slice.start, lay.t_steps), axis=0)
        return pooled_v, pooled_a

    def forward(self, clip: VisualClip, spec: AudioSpectrogram,
                mask: ModalityMask | None = None) -> Tensor:
        """Two logits [truth, lie]."""
        seq = self.encode(clip, spec, mask)
        if self.cfg.fusion in (FusionMode.CONCAT, FusionMode.SE_CONCAT):
            pooled_v, pooled_a = self._pooled(seq)
            return self.concat_head(pooled_v, pooled_a)
        cls = narrow(seq.tokens, 0, 0, 1)
        return reshape(self.head(cls), (self.cfg.n_classes,))

    def forward_with_branches(self, clip: VisualClip, spec: AudioSpectrogram,
                              mask: ModalityMask | None = None
                              ) -> tuple[Tensor, Tensor, Tensor]:
        """Joint logits plus the two modality branch logits (cmfl training)."""
        if self.cfg.fusion is not FusionMode.CMFL:
            raise ValueError("branch heads exist only in cmfl fusion mode")
        seq = self.encode(clip, spec, mask)
        cls = narrow(seq.tokens, 0, 0, 1)
        joint = reshape(self.head(cls), (self.cfg.n_classes,))
        pooled_v, pooled_a = self._pooled(seq)
        v_logits = reshape(self.branch_head_v(reshape(pooled_v, (1, -1))), (2,))
        a_logits = reshape(self.branch_head_a(reshape(pooled_a, (1, -1))), (2,))
        return joint, v_logits, a_logits

    def __call__(self, clip, spec, mask=None):
        return self.forward(clip, spec, mask)


def apply_standard_freezing(model: DeceptionModel) -> None:
    """Freeze the transformer encoder; prompt mode also freezes the class
    token and position embeddings, leaving only prompts, heads, extractors
    and projections trainable."""
    set_trainable(model, "encoder.", False)
    if model.cfg.fusion is FusionMode.PROMPT:
        set_trainable(model, "tokens.", False)


def build_model(cfg: ModelConfig, seed: int) -> DeceptionModel:
    model = DeceptionModel(cfg)
    init_params(model, seed)
    apply_standard_freezing(model)
    return model


def count_parameters(model: DeceptionModel) -> dict[str, int]:
    total = trainable = 0
    for p in model.store.all():
        n = p.value.size
        total += n
        if p.trainable:
            trainable += n
    return {"total": total, "trainable": trainable, "frozen": total - trainable}
