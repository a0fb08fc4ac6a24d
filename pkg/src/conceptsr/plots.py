"""Figures written next to the CSV reports."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_frontier(frontier, path):
    """Loss against complexity for the Pareto front (log-scaled loss)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        pts = [(h.complexity, max(h.loss, 1e-300)) for h in frontier.best if math.isfinite(h.loss)]
        if pts:
            xs, ys = zip(*pts)
            ax.step(xs, ys, where="post", color="0.6", lw=1)
            ax.plot(xs, ys, "o", color="C0", label="Pareto front")
        bad = [(h.complexity, h.loss) for h in frontier.worst if math.isfinite(h.loss) and h.loss > 0]
        if bad:
            xs, ys = zip(*bad)
            ax.plot(xs, ys, "x", color="C3", label="worst exemplars")
        ax.set_yscale("log")
        ax.set_xlabel("complexity (nodes)")
        ax.set_ylabel("MSE")
        if pts or bad:
            ax.legend(frameon=False)
        return _save(fig, path)


def plot_history(history, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        its = [r["iteration"] for r in history]
        loss = [max(r["best_loss"], 1e-300) for r in history]
        ax.plot(its, loss, "-o", ms=3, color="C0")
        ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel("best MSE")
        calls = [r.get("llm_calls", 0) for r in history]
        if any(calls):
            ax2 = ax.twinx()
            ax2.bar(its, calls, color="C1", alpha=0.3, width=0.8)
            ax2.set_ylabel("LLM calls")
            ax2.grid(False)
        return _save(fig, path)


def plot_scaling_fit(rows, path):
    """Validation MSE per skeleton; ``rows`` are (name, val_mse, n_params)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        names = [r[0] for r in rows]
        vals = [r[1] for r in rows]
        ax.barh(names, vals, color="C0")
        for i, (v, k) in enumerate(zip(vals, (r[2] for r in rows))):
            ax.annotate(f"{v:.5f} ({k} params)", (v, i), xytext=(3, 0), textcoords="offset points", va="center")
        ax.set_xlabel("validation MSE")
        ax.invert_yaxis()
        return _save(fig, path)


def plot_solve_summary(report, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        rows = report.rows
        names = [r.name for r in rows]
        r2 = [r.r2 if math.isfinite(r.r2) else -1.0 for r in rows]
        colors = ["C2" if r.exact_solve else ("C0" if r.mse_solved else "C7") for r in rows]
        ax.barh(names, r2, color=colors)
        ax.set_xlabel("R² (green: exact solve, blue: MSE solve)")
        ax.set_xlim(min(-0.05, min(r2, default=0)), 1.05)
        ax.invert_yaxis()
        return _save(fig, path)
