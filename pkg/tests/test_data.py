"""Synthetic data: planted-signal statistics and the binary container format."""

from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from fmdd.data import (AUDIO_BIT, MAGIC, VISION_BIT, BadMagicError, Dataset,
                       DomainShift, Sample, SignalMode, SynthSpec,
                       TrailingBytesError, TruncatedPayloadError, gen_synthetic,
                       hidden_bits, read_dataset, synth_spec_for, write_dataset)
from fmdd.model import preset


def _spec(mode=SignalMode.XOR, n=32, seed=5, **kw):
    base = synth_spec_for(preset("test"), mode, n, seed=seed)
    return replace(base, **kw) if kw else base


def test_generation_deterministic_byte_for_byte(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    write_dataset(a, gen_synthetic(_spec()))
    write_dataset(b, gen_synthetic(_spec()))
    assert a.read_bytes() == b.read_bytes()


def test_different_seed_changes_bytes(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    write_dataset(a, gen_synthetic(_spec(seed=5)))
    write_dataset(b, gen_synthetic(_spec(seed=6)))
    assert a.read_bytes() != b.read_bytes()


def test_xor_label_is_marginally_independent_of_each_bit():
    spec = _spec(n=10000, seed=9)
    bits = np.array([hidden_bits(spec, i) for i in range(spec.n_samples)])
    b_v, b_a, y = bits[:, 0], bits[:, 1], bits[:, 3]
    assert np.array_equal(y, b_v ^ b_a)
    assert abs(np.corrcoef(y, b_v)[0, 1]) <= 0.05
    assert abs(np.corrcoef(y, b_a)[0, 1]) <= 0.05


def test_redundant_noiseless_threshold_rule_is_perfect():
    spec = _spec(mode=SignalMode.REDUNDANT, n=64, noise_sigma=0.0)
    data = gen_synthetic(spec)
    for sample in data.samples:
        # visual rule: frame 0 is bright exactly when b_v == 0 == label
        visual_pred = 1 if sample.frames[0].mean() < 0 else 0
        assert visual_pred == sample.label
        # audio rule: upper band brighter than lower exactly when b_a == 1
        sh = sample.spectrogram.shape[1]
        lower = sample.spectrogram[:, : sh // 2, :].mean()
        upper = sample.spectrogram[:, sh // 2:, :].mean()
        audio_pred = 1 if upper > lower else 0
        assert audio_pred == sample.label


@pytest.mark.parametrize("mode", list(SignalMode))
def test_label_balance(mode):
    spec = _spec(mode=mode, n=1000, seed=13)
    labels = np.array([hidden_bits(spec, i)[3] for i in range(1000)])
    assert 0.45 <= labels.mean() <= 0.55


def test_complementary_bits_decide_half_each():
    spec = _spec(mode=SignalMode.COMPLEMENTARY, n=4000, seed=17)
    bits = np.array([hidden_bits(spec, i) for i in range(4000)])
    b_v, b_a, chooser, y = bits[:, 0], bits[:, 1], bits[:, 2], bits[:, 3]
    assert np.array_equal(y, np.where(chooser == 0, b_v, b_a))
    agree_v = np.mean(y == b_v)
    agree_a = np.mean(y == b_a)
    # each modality decides half the samples and coincides on another quarter
    assert 0.70 <= agree_v <= 0.80
    assert 0.70 <= agree_a <= 0.80


def test_domain_shift_offsets_brightness():
    plain = gen_synthetic(_spec(n=8, noise_sigma=0.0))
    shifted = gen_synthetic(_spec(n=8, noise_sigma=0.0,
                                  domain_shift=DomainShift(brightness_offset=0.5)))
    delta = shifted.samples[0].frames - plain.samples[0].frames
    assert np.allclose(delta, 0.5, atol=1e-6)


def test_availability_defaults_to_both():
    data = gen_synthetic(_spec(n=3))
    assert all(s.availability == (VISION_BIT | AUDIO_BIT) for s in data.samples)


# -- container format -----------------------------------------------------------

def test_round_trip_bitwise(tmp_path):
    data = gen_synthetic(_spec(n=10))
    path = tmp_path / "d.bin"
    write_dataset(path, data)
    loaded = read_dataset(path)
    assert loaded.t_frames == data.t_frames
    assert loaded.frame_shape == data.frame_shape
    assert loaded.spec_shape == data.spec_shape
    for a, b in zip(data.samples, loaded.samples):
        assert a.label == b.label
        assert a.availability == b.availability
        assert np.array_equal(a.frames, b.frames)
        assert np.array_equal(a.spectrogram, b.spectrogram)
    # writing the loaded copy reproduces the file exactly
    path2 = tmp_path / "d2.bin"
    write_dataset(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "d.bin"
    write_dataset(path, gen_synthetic(_spec(n=2)))
    blob = bytearray(path.read_bytes())
    blob[:4] = b"XXXX"
    path.write_bytes(bytes(blob))
    with pytest.raises(BadMagicError):
        read_dataset(path)


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "d.bin"
    write_dataset(path, gen_synthetic(_spec(n=2)))
    blob = path.read_bytes()
    path.write_bytes(blob[:-1])
    with pytest.raises(TruncatedPayloadError):
        read_dataset(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "d.bin"
    write_dataset(path, gen_synthetic(_spec(n=2)))
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(TrailingBytesError):
        read_dataset(path)


def test_magic_constant():
    assert MAGIC == b"FMDD0001"


def _best_threshold_acc(feature_train, y_train, feature_test, y_test):
    """Best-threshold single-feature classifier, the strongest simple
    single-modality rule for these planted encodings."""
    order = np.argsort(feature_train)
    candidates = np.concatenate(([-np.inf], feature_train[order]))
    best_acc, best_thr, best_sign = 0.0, 0.0, 1
    for thr in candidates:
        for sign in (1, -1):
            pred = (sign * feature_train >= sign * thr).astype(int)
            acc = float(np.mean(pred == y_train))
            if acc > best_acc:
                best_acc, best_thr, best_sign = acc, thr, sign
    pred = (best_sign * feature_test >= best_sign * best_thr).astype(int)
    return float(np.mean(pred == y_test))


def test_xor_single_modality_classifier_stays_near_chance():
    train = gen_synthetic(_spec(n=400, seed=21))
    test = gen_synthetic(_spec(n=500, seed=22))

    def phase_feature(ds):
        # even-vs-odd frame brightness difference: the strongest visual cue
        means = np.array([[s.frames[t].mean() for t in range(ds.t_frames)]
                          for s in ds.samples])
        return means[:, 0::2].mean(axis=1) - means[:, 1::2].mean(axis=1)

    def band_feature(ds):
        sh = ds.spec_shape[1]
        return np.array([s.spectrogram[:, sh // 2:, :].mean()
                         - s.spectrogram[:, : sh // 2, :].mean()
                         for s in ds.samples])

    y_train, y_test = train.labels(), test.labels()
    for feat in (phase_feature, band_feature):
        acc = _best_threshold_acc(feat(train), y_train, feat(test), y_test)
        assert 0.40 <= acc <= 0.60
