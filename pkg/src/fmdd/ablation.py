"""Ablation sweeps over the adapter's three configuration axes:

    layers    number of encoder layers left without adapters (0..N)
    kernel    temporal conv kernel size k in {0, 1, 3, 5, 7, 9}
    position  adapter placement: mhsa, ffn, or both

Each setting trains a fresh adapter-fused model and evaluates it under the
three test scenarios (V&A, A, V); the result is one row per setting.
"""

from __future__ import annotations

from dataclasses import replace

from .evaluation import compute_metrics
from .fusion import FusionMode
from .model import MASK_A, MASK_V, MASK_VA, ModelConfig, build_model
from .rng import derive_seed
from .training import TrainConfig, predict_scores, train_model

KERNEL_SWEEP = (0, 1, 3, 5, 7, 9)
POSITION_SWEEP = ("mhsa", "ffn", "mhsa+ffn")

AXES = ("layers", "kernel", "position")


def sweep_configs(axis: str, base_cfg: ModelConfig) -> list[tuple[str, ModelConfig]]:
    if base_cfg.fusion is not FusionMode.AVA:
        base_cfg = replace(base_cfg, fusion=FusionMode.AVA)
    ava = base_cfg.ava
    n = base_cfg.n_layers
    out: list[tuple[str, ModelConfig]] = []
    if axis == "layers":
        # m = number of leading encoder layers left without an adapter
        for m in range(n + 1):
            cfg = replace(base_cfg, ava=replace(ava, layer_set=tuple(range(m, n))))
            out.append((str(m), cfg))
    elif axis == "kernel":
        for k in KERNEL_SWEEP:
            cfg = replace(base_cfg, ava=replace(ava, kernel_k=k,
                                                layer_set=tuple(range(n))))
            out.append((str(k), cfg))
    elif axis == "position":
        for placement in POSITION_SWEEP:
            place = frozenset(placement.split("+"))
            cfg = replace(base_cfg, ava=replace(ava, placement=place,
                                                layer_set=tuple(range(n))))
            out.append((placement, cfg))
    else:
        raise ValueError(f"unknown ablation axis {axis!r}; expected one of {AXES}")
    return out


def run_ablation(axis: str, train_samples, test_samples, base_cfg: ModelConfig,
                 train_cfg: TrainConfig, printer=None) -> list[dict]:
    """One metrics row per swept setting: {'setting', 'V&A', 'A', 'V'}."""
    rows: list[dict] = []
    for setting, cfg in sweep_configs(axis, base_cfg):
        seed = derive_seed(train_cfg.seed, "ablate", axis, setting)
        model = build_model(cfg, seed)
        cfg_train = replace(train_cfg, seed=seed)
        train_model(model, train_samples, cfg_train)
        row: dict = {"setting": setting}
        for mask in (MASK_VA, MASK_A, MASK_V):
            scores, labels = predict_scores(model, test_samples, mask)
            row[mask.label] = compute_metrics(scores, labels)
        rows.append(row)
        if printer is not None:
            m = row["V&A"]
            printer(f"{axis}={setting}: acc(V&A)={m.acc:.4f} "
                    f"acc(A)={row['A'].acc:.4f} acc(V)={row['V'].acc:.4f}")
    return rows
