"""Figures for run directories.  Uses the non-interactive Agg backend so it
works headless."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .model import Certificate, Distribution, ProblemSpec  # noqa: E402
from .pipeline import RunReport  # noqa: E402


def plot_trace(problem: ProblemSpec, trace: Sequence[Distribution], path: str | Path) -> Path:
    """Value of every target and safety row along the distribution stream.
    A row holds while its curve is at or above zero."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = range(len(trace))
    for j, r in enumerate(problem.target.rows):
        ax.plot(steps, [float(r.value(x)) for x in trace], label=f"target row {j}")
    for j, r in enumerate(problem.safe.rows):
        ax.plot(steps, [float(r.value(x)) for x in trace], linestyle="--", label=f"safe row {j}")
    ax.axhline(0, color="black", linewidth=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("row value")
    ax.set_title(f"{problem.name}: distribution stream")
    ax.legend(fontsize="small")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_rank(cert: Certificate, trace: Sequence[Distribution], path: str | Path,
              name: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    values = [float(cert.rank.value(x)) for x in trace]
    ax.plot(range(len(values)), values, marker=".")
    ax.axhline(0, color="black", linewidth=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("R")
    ax.set_title(f"{name}: ranking function" if name else "ranking function")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_bench(reports: Sequence[RunReport], path: str | Path) -> Path:
    """Solver time per benchmark, timeouts drawn at the budget."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    labels = [f"{r.model}\n{r.command}" for r in reports]
    times = [r.timings.get("solve", 0.0) / 1000.0 for r in reports]
    colors = ["tab:green" if r.exit_code == 0 else
              "tab:orange" if r.verdict == "timeout" else "tab:red" for r in reports]
    ax.bar(range(len(reports)), times, color=colors)
    ax.set_xticks(range(len(reports)), labels, fontsize="x-small", rotation=60, ha="right")
    ax.set_ylabel("solver time (s)")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
