"""Report rendering: every report is a CSV plus a matching matplotlib figure.

All figures go to files (Agg backend); nothing opens a window. CSVs are the
machine-readable artifact, the PNG next to them is the human-readable one.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .clustering import ClusterHistogram, entropy, top_cluster_fraction  # noqa: E402
from .evaluator import CostModel, EvalReport, total_cost  # noqa: E402


def write_csv(path: str | Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _save_fig(fig, png_path: str | Path) -> None:
    png_path = Path(png_path)
    png_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


def render_cost_curves(models: Mapping[str, CostModel], tasks: Sequence[float],
                       csv_path: str | Path, png_path: str | Path) -> None:
    """Total cost vs. number of specialization tasks, per method."""
    rows = [
        (n, name, total_cost(cm, n))
        for name, cm in sorted(models.items())
        for n in tasks
    ]
    write_csv(csv_path, ["tasks", "method", "total_cost"], rows)

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, cm in sorted(models.items()):
        ax.plot(tasks, [total_cost(cm, n) for n in tasks], marker="o", label=name)
    ax.set_xlabel("specialization tasks")
    ax.set_ylabel(f"total training cost ({next(iter(models.values())).unit})")
    ax.set_title("Total cost vs. task count")
    ax.legend()
    _save_fig(fig, png_path)


def render_eval_report(report: EvalReport, csv_path: str | Path,
                       png_path: str | Path) -> None:
    """Per-domain perplexity table and bar chart (macro bar included)."""
    write_csv(csv_path, ["domain", "tokens", "nll", "ppl"], report.csv_rows())

    domains = sorted(report.per_domain)
    ppls = [report.per_domain[d].ppl for d in domains] + [report.macro_ppl]
    labels = domains + ["macro"]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(labels)), 4))
    bars = ax.bar(labels, ppls, color=["#4878d0"] * len(domains) + ["#d65f5f"])
    ax.bar_label(bars, fmt="%.2f")
    ax.set_ylabel("perplexity")
    ax.set_title(f"Held-out perplexity{': ' + report.model_id if report.model_id else ''}")
    _save_fig(fig, png_path)


def render_cluster_diagnostics(histograms: Mapping[str, ClusterHistogram],
                               csv_path: str | Path, png_path: str | Path) -> None:
    """Histogram concentration and entropy per corpus/domain."""
    rows = []
    for name, hist in sorted(histograms.items()):
        rows.append((name, hist.k, int(hist.counts.sum()),
                     top_cluster_fraction(hist), entropy(hist)))
    write_csv(csv_path, ["corpus", "clusters", "windows", "top_fraction", "entropy_nats"],
              rows)

    fig, axes = plt.subplots(1, len(histograms), figsize=(4 * len(histograms), 3),
                             squeeze=False)
    for ax, (name, hist) in zip(axes[0], sorted(histograms.items())):
        ax.bar(range(hist.k), hist.frequencies)
        ax.set_title(f"{name} (H={entropy(hist):.2f} nats)")
        ax.set_xlabel("cluster")
        ax.set_ylabel("frequency")
    _save_fig(fig, png_path)


def render_compare(rows: Sequence[dict], csv_path: str | Path, png_path: str | Path,
                   footer_path: str | Path | None = None,
                   recommendation: str | None = None) -> None:
    """Method-matrix summary: one row per (method, spec size) with costs and
    final perplexity; scatter of perplexity vs. specialization cost."""
    header = ["method", "spec_tokens", "generic_units", "specialization_units",
              "target_nll", "target_ppl"]
    write_csv(csv_path, header, [[r[h] for h in header] for r in rows])

    fig, ax = plt.subplots(figsize=(6, 4))
    for r in rows:
        ax.scatter(r["generic_units"] + r["specialization_units"], r["target_ppl"],
                   label=f"{r['method']}@{r['spec_tokens']}")
        ax.annotate(r["method"], (r["generic_units"] + r["specialization_units"],
                                  r["target_ppl"]), fontsize=8)
    ax.set_xlabel("total training cost (units)")
    ax.set_ylabel("target-domain perplexity")
    ax.set_xscale("symlog")
    ax.set_title("Method comparison")
    _save_fig(fig, png_path)

    if footer_path is not None and recommendation is not None:
        footer_path = Path(footer_path)
        footer_path.parent.mkdir(parents=True, exist_ok=True)
        footer_path.write_text(recommendation + "\n", encoding="utf-8")
