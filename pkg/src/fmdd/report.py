"""Report rendering: aligned text tables, tab-delimited output, and figures.

Protocol reports mirror the row structure method x train-modality x
test-modality x {ACC, AUC, F1}. The figure renderers write PNG files next to
the delimited output when a report directory is requested.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import EvalReport


def _pct(value: float) -> str:
    return "--" if math.isnan(value) else f"{100.0 * value:6.2f}"


def report_to_text(report: EvalReport) -> str:
    header = f"{'Method':<12} {'Train':<6} {'Test':<6} {'ACC(%)':>8} {'AUC(%)':>8} {'F1(%)':>8}"
    lines = [header, "-" * len(header)]
    for row in report.rows:
        m = row.mean
        lines.append(f"{report.method:<12} {report.train_label:<6} {row.scenario:<6} "
                     f"{_pct(m.acc):>8} {_pct(m.auc):>8} {_pct(m.f1):>8}")
    if any(len(row.folds) > 1 for row in report.rows):
        lines.append("")
        lines.append("per-fold accuracy:")
        for row in report.rows:
            folds = " ".join(f"{m.acc:.4f}" for m in row.folds)
            lines.append(f"  {row.scenario:<6} {folds}")
    return "\n".join(lines)


def report_to_tsv(report: EvalReport) -> str:
    lines = ["method\ttrain\ttest\tfold\tacc\tauc\tf1"]
    for row in report.rows:
        for i, m in enumerate(row.folds):
            auc = "nan" if not m.auc_defined else f"{m.auc:.6f}"
            lines.append(f"{report.method}\t{report.train_label}\t{row.scenario}"
                         f"\t{i}\t{m.acc:.6f}\t{auc}\t{m.f1:.6f}")
        m = row.mean
        auc = "nan" if not m.auc_defined else f"{m.auc:.6f}"
        lines.append(f"{report.method}\t{report.train_label}\t{row.scenario}"
                     f"\tmean\t{m.acc:.6f}\t{auc}\t{m.f1:.6f}")
    return "\n".join(lines) + "\n"


def save_report_figure(report: EvalReport, path) -> None:
    """Grouped bars of mean ACC/AUC/F1 per test scenario."""
    scenarios = [row.scenario for row in report.rows]
    metric_names = ("ACC", "AUC", "F1")
    values = {
        "ACC": [row.mean.acc for row in report.rows],
        "AUC": [row.mean.auc for row in report.rows],
        "F1": [row.mean.f1 for row in report.rows],
    }
    x = range(len(scenarios))
    width = 0.25
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, name in enumerate(metric_names):
        offs = [xi + (i - 1) * width for xi in x]
        ax.bar(offs, values[name], width=width, label=name)
    ax.set_xticks(list(x))
    ax.set_xticklabels(scenarios)
    ax.set_ylim(0.0, 1.05)
    ax.set_xlabel("test scenario")
    ax.set_ylabel("metric")
    ax.set_title(f"{report.method} trained on {report.train_label} ({report.kind})")
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ablation_rows_to_text(axis: str, rows: list[dict]) -> str:
    header = (f"{axis:<12} {'ACC V&A':>8} {'AUC V&A':>8} {'F1 V&A':>8} "
              f"{'ACC A':>8} {'AUC A':>8} {'F1 A':>8} "
              f"{'ACC V':>8} {'AUC V':>8} {'F1 V':>8}")
    lines = [header, "-" * len(header)]
    for row in rows:
        cells = [f"{str(row['setting']):<12}"]
        for scenario in ("V&A", "A", "V"):
            m = row[scenario]
            cells.extend([_pct(m.acc).strip().rjust(8),
                          _pct(m.auc).strip().rjust(8),
                          _pct(m.f1).strip().rjust(8)])
        lines.append(" ".join(cells))
    return "\n".join(lines)


def ablation_rows_to_tsv(axis: str, rows: list[dict]) -> str:
    lines = [f"{axis}\tscenario\tacc\tauc\tf1"]
    for row in rows:
        for scenario in ("V&A", "A", "V"):
            m = row[scenario]
            auc = "nan" if not m.auc_defined else f"{m.auc:.6f}"
            lines.append(f"{row['setting']}\t{scenario}\t{m.acc:.6f}\t{auc}\t{m.f1:.6f}")
    return "\n".join(lines) + "\n"


def save_ablation_figure(axis: str, rows: list[dict], path) -> None:
    """Accuracy against the swept setting, one curve per test scenario."""
    settings = [str(row["setting"]) for row in rows]
    x = range(len(settings))
    fig, ax = plt.subplots(figsize=(6, 4))
    for scenario, marker in (("V&A", "o"), ("A", "s"), ("V", "^")):
        ax.plot(list(x), [row[scenario].acc for row in rows],
                marker=marker, label=scenario)
    ax.set_xticks(list(x))
    ax.set_xticklabels(settings)
    ax.set_ylim(0.0, 1.05)
    ax.set_xlabel(axis)
    ax.set_ylabel("accuracy")
    ax.set_title(f"ablation: {axis}")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report_files(report: EvalReport, out_dir, stem: str = "protocol") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tsv = out / f"{stem}.tsv"
    png = out / f"{stem}.png"
    tsv.write_text(report_to_tsv(report))
    save_report_figure(report, png)
    return [tsv, png]


def write_ablation_files(axis: str, rows: list[dict], out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tsv = out / f"ablate_{axis}.tsv"
    png = out / f"ablate_{axis}.png"
    tsv.write_text(ablation_rows_to_tsv(axis, rows))
    save_ablation_figure(axis, rows, png)
    return [tsv, png]
