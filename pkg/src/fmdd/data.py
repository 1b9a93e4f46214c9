"""Synthetic flexible-modal datasets and their on-disk container.

Each sample hides one bit per modality: the visual bit sets the phase of a
frame-brightness square wave across the T frames, the audio bit sets which
frequency band of the spectrogram is lit. The label rule depends on the signal
mode:

    xor           y = b_v XOR b_a   (either modality alone is uninformative)
    redundant     b_a = b_v, y = b_v (either modality alone suffices)
    complementary y = b_v on a random half of samples, b_a on the other half

In complementary mode the deciding-modality selector is itself visible as a
global brightness level in both modalities, so the label is fully recoverable
only with both modalities present (a single modality peaks at 75%).
Gaussian noise is added everywhere; an optional domain shift applies a fixed
brightness offset and noise rescale to emulate a second recording environment.

File layout (little-endian): 8-byte magic "FMDD0001"; eight uint32 header
fields (n_samples, T, frame C/H/W, spec C/H/W); then per sample one label
byte, one modality-availability byte (bit0 vision, bit1 audio), the frame
float32 payload, and the spectrogram float32 payload, all row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .rng import SplitMix64, derive_seed

MAGIC = b"FMDD0001"
VISION_BIT = 1
AUDIO_BIT = 2

_HEADER = struct.Struct("<8I")


class DatasetFormatError(ValueError):
    """Base class for malformed dataset files."""


class BadMagicError(DatasetFormatError):
    pass


class TruncatedPayloadError(DatasetFormatError):
    pass


class TrailingBytesError(DatasetFormatError):
    pass


class SignalMode(str, Enum):
    XOR = "xor"
    REDUNDANT = "redundant"
    COMPLEMENTARY = "complementary"


@dataclass(frozen=True)
class DomainShift:
    brightness_offset: float = 0.3
    noise_scale: float = 1.5


@dataclass(frozen=True)
class SynthSpec:
    n_samples: int
    t_frames: int
    frame_shape: tuple[int, int, int]
    spec_shape: tuple[int, int, int]
    signal_mode: SignalMode = SignalMode.XOR
    noise_sigma: float = 0.3
    amplitude: float = 1.0
    domain_shift: DomainShift | None = None
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


@dataclass
class Sample:
    frames: np.ndarray        # (T, C, H, W) float32
    spectrogram: np.ndarray   # (C, H, W) float32
    label: int
    availability: int = VISION_BIT | AUDIO_BIT


@dataclass
class Dataset:
    t_frames: int
    frame_shape: tuple[int, int, int]
    spec_shape: tuple[int, int, int]
    samples: list[Sample]

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)


def hidden_bits(spec: SynthSpec, index: int) -> tuple[int, int, int, int]:
    """The planted (b_v, b_a, chooser, y) tuple of one sample, without
    materializing pixel data. Used by generation and directly testable.

    chooser is meaningful only in complementary mode (0 elsewhere): it selects
    whether b_v or b_a decides the label, and is embedded in both modalities
    as a global brightness level.
    """
    stream = SplitMix64(derive_seed(spec.seed, "bits", index))
    b_v = int(stream.bits(1)[0])
    chooser = 0
    if spec.signal_mode is SignalMode.REDUNDANT:
        b_a = b_v
        y = b_v
    elif spec.signal_mode is SignalMode.XOR:
        b_a = int(stream.bits(1)[0])
        y = b_v ^ b_a
    else:
        b_a = int(stream.bits(1)[0])
        chooser = int(stream.bits(1)[0])
        y = b_v if chooser == 0 else b_a
    return b_v, b_a, chooser, y


def _band_rows(height: int, bit: int) -> tuple[int, int]:
    """Row range of the lit band: lower quarter for bit 0, upper for bit 1."""
    if bit == 0:
        return height // 8, max(height // 8 + 1, 3 * height // 8)
    return 5 * height // 8, max(5 * height // 8 + 1, 7 * height // 8)


def gen_synthetic(spec: SynthSpec) -> Dataset:
    """Generate a dataset; byte-for-byte deterministic per seed."""
    t = spec.t_frames
    fc, fh, fw = spec.frame_shape
    sc, sh, sw = spec.spec_shape
    offset = 0.0
    sigma = spec.noise_sigma
    if spec.domain_shift is not None:
        offset = spec.domain_shift.brightness_offset
        sigma = sigma * spec.domain_shift.noise_scale

    samples: list[Sample] = []
    frame_size = t * fc * fh * fw
    spec_size = sc * sh * sw
    for i in range(spec.n_samples):
        b_v, b_a, chooser, y = hidden_bits(spec, i)
        noise = SplitMix64(derive_seed(spec.seed, "noise", i))
        # complementary mode: the deciding-modality selector is a visible
        # global brightness level in both modalities
        chooser_level = 0.0
        if spec.signal_mode is SignalMode.COMPLEMENTARY:
            chooser_level = spec.amplitude * (0.5 if chooser else -0.5)

        frames = np.empty((t, fc, fh, fw), dtype=np.float64)
        for step in range(t):
            phase = 1.0 if (step + b_v) % 2 == 0 else -1.0
            frames[step] = spec.amplitude * phase
        frames += offset + chooser_level
        if sigma > 0:
            frames += noise.normal(frame_size).reshape(frames.shape) * sigma

        spect = np.zeros((sc, sh, sw), dtype=np.float64)
        lo, hi = _band_rows(sh, b_a)
        spect[:, lo:hi, :] = spec.amplitude
        spect += offset + chooser_level
        if sigma > 0:
            spect += noise.normal(spec_size).reshape(spect.shape) * sigma

        samples.append(Sample(frames=frames.astype(np.float32),
                              spectrogram=spect.astype(np.float32),
                              label=int(y)))
    return Dataset(t_frames=t, frame_shape=spec.frame_shape,
                   spec_shape=spec.spec_shape, samples=samples)


def write_dataset(path, dataset: Dataset) -> None:
    t = dataset.t_frames
    fc, fh, fw = dataset.frame_shape
    sc, sh, sw = dataset.spec_shape
    with open(path, "wb") as fh_out:
        fh_out.write(MAGIC)
        fh_out.write(_HEADER.pack(len(dataset.samples), t, fc, fh, fw, sc, sh, sw))
        for sample in dataset.samples:
            if sample.frames.shape != (t, fc, fh, fw):
                raise DatasetFormatError(f"sample frames {sample.frames.shape} do not "
                                         f"match header {(t, fc, fh, fw)}")
            if sample.spectrogram.shape != (sc, sh, sw):
                raise DatasetFormatError(f"sample spectrogram {sample.spectrogram.shape} "
                                         f"does not match header {(sc, sh, sw)}")
            fh_out.write(bytes([sample.label & 0xFF, sample.availability & 0xFF]))
            fh_out.write(np.ascontiguousarray(sample.frames, dtype="<f4").tobytes())
            fh_out.write(np.ascontiguousarray(sample.spectrogram, dtype="<f4").tobytes())


def read_dataset(path) -> Dataset:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) or blob[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {blob[:len(MAGIC)]!r}")
    off = len(MAGIC)
    if len(blob) < off + _HEADER.size:
        raise TruncatedPayloadError(f"{path}: header truncated")
    n, t, fc, fh, fw, sc, sh, sw = _HEADER.unpack_from(blob, off)
    off += _HEADER.size

    frame_bytes = t * fc * fh * fw * 4
    spec_bytes = sc * sh * sw * 4
    per_sample = 2 + frame_bytes + spec_bytes
    expected = off + n * per_sample
    if len(blob) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload truncated ({len(blob)} bytes, expected {expected})")
    if len(blob) > expected:
        raise TrailingBytesError(
            f"{path}: {len(blob) - expected} trailing bytes after declared payload")

    samples: list[Sample] = []
    for _ in range(n):
        label = blob[off]
        availability = blob[off + 1]
        off += 2
        frames = np.frombuffer(blob, dtype="<f4", count=frame_bytes // 4,
                               offset=off).reshape(t, fc, fh, fw).copy()
        off += frame_bytes
        spect = np.frombuffer(blob, dtype="<f4", count=spec_bytes // 4,
                              offset=off).reshape(sc, sh, sw).copy()
        off += spec_bytes
        samples.append(Sample(frames=frames, spectrogram=spect,
                              label=int(label), availability=int(availability)))
    return Dataset(t_frames=t, frame_shape=(fc, fh, fw), spec_shape=(sc, sh, sw),
                   samples=samples)


def synth_spec_for(model_cfg, mode: SignalMode, n: int, seed: int,
                   noise_sigma: float = 0.3,
                   domain_shift: DomainShift | None = None) -> SynthSpec:
    """A SynthSpec whose dimensions match a model configuration."""
    return SynthSpec(
        n_samples=n,
        t_frames=model_cfg.t_frames,
        frame_shape=model_cfg.frame_shape,
        spec_shape=model_cfg.spec_shape,
        signal_mode=mode,
        noise_sigma=noise_sigma,
        domain_shift=domain_shift,
        seed=seed,
    )
