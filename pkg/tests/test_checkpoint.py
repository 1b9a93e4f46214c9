"""Checkpoint container: round trips, flags, and mismatch errors."""

import numpy as np
import pytest

from fmdd.backbone import AudioSpectrogram, VisualClip
from fmdd.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from fmdd.fusion import FusionMode
from fmdd.layers import set_trainable
from fmdd.model import build_model, preset
from fmdd.rng import SplitMix64
from fmdd.tensor import Tensor, no_grad


def _inputs(cfg, seed=3):
    stream = SplitMix64(seed)
    t, (c, h, w) = cfg.t_frames, cfg.frame_shape
    sc, sh, sw = cfg.spec_shape
    return (VisualClip(Tensor(stream.normal(t * c * h * w).reshape(t, c, h, w))),
            AudioSpectrogram(Tensor(stream.normal(sc * sh * sw).reshape(sc, sh, sw))))


def test_round_trip_preserves_forward_within_f32(tmp_path):
    cfg = preset("test")
    model = build_model(cfg, seed=1)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    restored = load_checkpoint(path)
    clip, spec = _inputs(cfg)
    with no_grad():
        a = model.forward(clip, spec).data
        b = restored.forward(clip, spec).data
    assert np.max(np.abs(a - b)) < 1e-6


def test_round_trip_preserves_trainable_flags(tmp_path):
    model = build_model(preset("test"), seed=2)
    set_trainable(model, "extractor.visual.", False)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    restored = load_checkpoint(path)
    flags = {p.name: p.trainable for p in model.store.all()}
    assert {p.name: p.trainable for p in restored.store.all()} == flags
    assert not restored.store["extractor.visual.stage0.w"].trainable
    assert not restored.store["encoder.0.attn.q.w"].trainable


def test_round_trip_preserves_values_exactly_at_f32(tmp_path):
    model = build_model(preset("test"), seed=3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    restored = load_checkpoint(path)
    for p in model.store.all():
        expected = p.value.data.astype(np.float32).astype(np.float64)
        assert np.array_equal(restored.store[p.name].value.data, expected)


def test_shape_mismatch_names_parameter(tmp_path):
    model = build_model(preset("test"), seed=4)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    other = preset("test", t_frames=8, frame_shape=(1, 8, 8),
                   spec_shape=(1, 12, 32))
    with pytest.raises(CheckpointError, match=r"tokens\.pos"):
        load_checkpoint(path, config=other)


def test_unknown_parameter_rejected(tmp_path):
    model = build_model(preset("test"), seed=5)  # ava mode has adapter params
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    concat_cfg = preset("test", fusion=FusionMode.CONCAT)
    with pytest.raises(CheckpointError, match="unknown parameter"):
        load_checkpoint(path, config=concat_cfg)


def test_stored_config_reconstructs_model(tmp_path):
    cfg = preset("test", fusion=FusionMode.SE_CONCAT, ffn_norm_order="pre_norm")
    model = build_model(cfg, seed=6)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    restored = load_checkpoint(path)
    assert restored.cfg == cfg


def test_corrupt_magic_rejected(tmp_path):
    model = build_model(preset("test"), seed=7)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    blob = bytearray(path.read_bytes())
    blob[0] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)
