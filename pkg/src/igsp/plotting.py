"""Figures written next to the CSV/JSON output. Uses the non-interactive Agg backend."""

from __future__ import annotations

import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
    "savefig.dpi": 120,
}
COLORS = {"igsp": "tab:blue", "icp": "tab:orange"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_iteration_pr(trial_docs, path, threshold: float = 0.75) -> Path:
    """Precision and recall of the selected pairs against the iteration index, one line per trial."""
    with plt.rc_context(STYLE):
        fig, (ax_p, ax_r) = plt.subplots(1, 2, sharey=True, figsize=(9, 3.6))
        for doc in trial_docs:
            recs = doc.get("records", [])
            k = [r["k"] for r in recs if "precision" in r]
            ax_p.plot(k, [r["precision"] for r in recs if "precision" in r], lw=0.8, alpha=0.7)
            ax_r.plot(k, [r["recall"] for r in recs if "recall" in r], lw=0.8, alpha=0.7)
        for ax, name in ((ax_p, "precision"), (ax_r, "recall")):
            ax.axhline(threshold, color="k", ls="--", lw=0.8)
            ax.set_xlabel("iteration k")
            ax.xaxis.set_major_locator(MaxNLocator(integer=True))
            ax.set_title(name)
            ax.set_ylim(-0.02, 1.02)
        return _save(fig, path)


def plot_errors(rows, path, rotation_limit_deg: float = 1.0) -> Path:
    """Final rotation error per trial and method against the initial misalignment angle."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for method in sorted({r["method"] for r in rows}):
            ok = [r for r in rows if r["method"] == method and r["status"] == "ok"]
            if not ok:
                continue
            x = [float(r["initial_angle_deg"]) for r in ok]
            y = [max(float(r["e_r_mdeg"]) / 1000.0, 1e-6) for r in ok]
            ax.scatter(x, y, s=18, label=method, color=COLORS.get(method))
        ax.axhline(rotation_limit_deg, color="k", ls="--", lw=0.8)
        ax.set_yscale("log")
        ax.set_xlabel("initial rotation (deg)")
        ax.set_ylabel("final rotation error (deg)")
        ax.legend()
        return _save(fig, path)


def plot_convergence(report_doc: dict, path) -> Path:
    """Per-iteration update size and match count for a single registration report."""
    recs = report_doc["records"]
    k = [r["k"] for r in recs]
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(6.4, 5))
        ax1.semilogy(k, [max(math.degrees(r["delta_r"]), 1e-12) for r in recs], "o-", ms=3, label="rotation update (deg)")
        ax1.semilogy(k, [max(r["delta_t"], 1e-12) for r in recs], "s-", ms=3, label="translation update")
        ax1.legend()
        ax2.plot(k, [r["match_count"] for r in recs], "o-", ms=3, color="tab:green")
        ax2.set_ylabel("matched pairs")
        ax2.set_xlabel("iteration k")
        ax2.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax1.set_title(f"{report_doc['method']}  converged={report_doc['converged']}")
        return _save(fig, path)


def plot_benchmark(out_dir, rows) -> list[Path]:
    out_dir = Path(out_dir)
    figs = [plot_errors(rows, out_dir / "figures" / "rotation_error.png")]
    docs = []
    for p in sorted((out_dir / "trials").glob("trial_*_igsp.json")):
        with open(p, encoding="utf-8") as fh:
            docs.append(json.load(fh))
    if docs:
        figs.append(plot_iteration_pr(docs, out_dir / "figures" / "igsp_precision_recall.png"))
    return figs

