"""Classification metrics and flexible-modal evaluation protocols.

A model is trained once per fold (or once per dataset pair for cross-dataset
runs) and then evaluated under every test scenario: both modalities, audio
only, and vision only, with the missing modality zero-blocked at test time.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .model import MASK_A, MASK_V, MASK_VA, ModalityMask, ModelConfig, build_model
from .rng import SplitMix64, derive_seed
from .training import TrainConfig, predict_scores, train_model


@dataclass(frozen=True)
class Metrics:
    acc: float
    auc: float
    f1: float
    auc_defined: bool = True


def compute_metrics(scores, labels) -> Metrics:
    """ACC and F1 at threshold 0.5 (positive class 1 = "lie"); AUC by
    Mann-Whitney pair counting with ties worth 0.5.

    AUC over a single-class label set is undefined: it is reported as NaN with
    auc_defined=False.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.size == 0:
        raise ValueError("compute_metrics requires at least one sample")
    if scores.shape != labels.shape:
        raise ValueError(f"scores shape {scores.shape} != labels shape {labels.shape}")

    pred = scores >= 0.5
    acc = float(np.mean(pred == (labels == 1)))

    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0

    n_pos = int(np.sum(labels == 1))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return Metrics(acc=acc, auc=math.nan, f1=f1, auc_defined=False)

    # exact integer pair count: 2*wins + ties, via one sort
    order = np.argsort(scores, kind="mergesort")
    s_sorted = scores[order]
    l_sorted = labels[order]
    wins2 = 0
    neg_below = 0
    i = 0
    n = scores.size
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            j += 1
        pos_here = int(np.sum(l_sorted[i:j] == 1))
        neg_here = (j - i) - pos_here
        wins2 += 2 * pos_here * neg_below + pos_here * neg_here
        neg_below += neg_here
        i = j
    auc = wins2 / (2 * n_pos * n_neg)
    return Metrics(acc=acc, auc=auc, f1=f1)


def kfold_split(n_samples: int, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Deterministic shuffled partition into k folds differing in size by <= 1."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > n_samples:
        raise ValueError(f"k={k} exceeds sample count {n_samples}")
    perm = SplitMix64(derive_seed(seed, "kfold")).shuffle(n_samples)
    base, extra = divmod(n_samples, k)
    folds: list[tuple[np.ndarray, np.ndarray]] = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        test_idx = np.sort(perm[start:start + size])
        train_idx = np.sort(np.concatenate([perm[:start], perm[start + size:]]))
        folds.append((train_idx, test_idx))
        start += size
    return folds


@dataclass(frozen=True)
class ProtocolSpec:
    kind: str  # intra_kfold | cross_dataset
    k: int = 5
    train_scenario: ModalityMask = MASK_VA
    test_scenarios: tuple[ModalityMask, ...] = (MASK_VA, MASK_A, MASK_V)

    def __post_init__(self):
        if self.kind not in ("intra_kfold", "cross_dataset"):
            raise ValueError(f"unknown protocol kind {self.kind!r}")
        if self.kind == "intra_kfold" and self.k < 2:
            raise ValueError("intra-dataset protocol needs k >= 2")


def _mean_metrics(folds: list[Metrics]) -> Metrics:
    defined = [m.auc for m in folds if m.auc_defined]
    return Metrics(
        acc=float(np.mean([m.acc for m in folds])),
        auc=float(np.mean(defined)) if defined else math.nan,
        f1=float(np.mean([m.f1 for m in folds])),
        auc_defined=len(defined) == len(folds),
    )


@dataclass(frozen=True)
class ScenarioResult:
    scenario: str
    folds: tuple[Metrics, ...]
    mean: Metrics


@dataclass(frozen=True)
class EvalReport:
    kind: str
    method: str
    train_label: str
    rows: tuple[ScenarioResult, ...]

    def scenario(self, label: str) -> ScenarioResult:
        for row in self.rows:
            if row.scenario == label:
                return row
        raise KeyError(f"no scenario {label!r} in report")


def _fold_worker(args):
    (fold_idx, train_samples, test_samples, model_cfg, train_cfg,
     scenarios, train_mask, eval_hook) = args
    fold_seed = derive_seed(train_cfg.seed, "fold", fold_idx)
    model = build_model(model_cfg, fold_seed)
    fold_train_cfg = replace(train_cfg, seed=fold_seed)
    mask = None if train_mask == MASK_VA else train_mask
    train_model(model, train_samples, fold_train_cfg, mask=mask)
    results = []
    for scenario in scenarios:
        hook = None if eval_hook is None else (
            lambda i, c, s, _sc=scenario: eval_hook(fold_idx, _sc, i, c, s))
        scores, labels = predict_scores(model, test_samples, scenario, hook=hook)
        results.append(compute_metrics(scores, labels))
    return fold_idx, results


def fold_parallelism() -> int:
    raw = os.environ.get("FMDD_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_protocol(spec: ProtocolSpec, dataset, model_cfg: ModelConfig,
                 train_cfg: TrainConfig, dataset2=None,
                 eval_hook=None) -> EvalReport:
    """Run a full flexible-modal protocol and aggregate metrics.

    intra_kfold trains one model per fold and evaluates it on the held-out
    fold under every test scenario; cross_dataset trains on `dataset` and
    evaluates on `dataset2`. Deterministic given the train config seed.
    FMDD_THREADS > 1 runs folds concurrently (each fold has its own model,
    tape, and optimizer state).
    """
    samples = dataset.samples
    if spec.kind == "cross_dataset":
        if dataset2 is None:
            raise ValueError("cross_dataset protocol needs a second dataset")
        jobs = [(0, samples, dataset2.samples, model_cfg, train_cfg,
                 spec.test_scenarios, spec.train_scenario, eval_hook)]
    else:
        folds = kfold_split(len(samples), spec.k, train_cfg.seed)
        jobs = []
        for fold_idx, (train_idx, test_idx) in enumerate(folds):
            jobs.append((fold_idx,
                         [samples[i] for i in train_idx],
                         [samples[i] for i in test_idx],
                         model_cfg, train_cfg, spec.test_scenarios,
                         spec.train_scenario, eval_hook))

    workers = min(fold_parallelism(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_fold_worker, jobs))
    else:
        outcomes = [_fold_worker(job) for job in jobs]
    outcomes.sort(key=lambda item: item[0])

    rows = []
    for s_idx, scenario in enumerate(spec.test_scenarios):
        fold_metrics = tuple(res[s_idx] for _, res in outcomes)
        rows.append(ScenarioResult(scenario=scenario.label, folds=fold_metrics,
                                   mean=_mean_metrics(list(fold_metrics))))
    return EvalReport(kind=spec.kind, method=model_cfg.fusion.value,
                      train_label=spec.train_scenario.label, rows=tuple(rows))
