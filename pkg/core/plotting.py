#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

"""SVG figures from the CSV logs of a run directory."""

import re
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from config import app_logger, debug_logger  # noqa: E402
from core.csvlog import read_csv  # noqa: E402

METRIC_COLUMNS = ("sr", "os", "cr")
MASK_TAG = re.compile(r"_m([0-9.]+)$")


def _column(rows: Sequence[Dict[str, str]], x: str, y: str) -> Tuple[np.ndarray, np.ndarray]:
    """Numeric (x, y) pairs, skipping rows where either cell is empty."""
    xs, ys = [], []
    for row in rows:
        if row.get(x, "") == "" or row.get(y, "") == "":
            continue
        xs.append(float(row[x]))
        ys.append(float(row[y]))
    return np.asarray(xs), np.asarray(ys)


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)
    debug_logger.debug(f"Wrote figure {path}")
    return path


def plot_curves(series: Dict[str, Path], x: str, y: str, path: Path, title: str,
                ylabel: Optional[str] = None) -> Optional[Path]:
    """One line per CSV file; nothing is written when no file has data."""
    fig, ax = plt.subplots(figsize=(6, 4))
    drawn = 0
    for label, csv_path in sorted(series.items()):
        _, _, rows = read_csv(csv_path)
        xs, ys = _column(rows, x, y)
        if xs.size:
            ax.plot(xs, ys, label=label, linewidth=1.2)
            drawn += 1
    if not drawn:
        plt.close(fig)
        return None
    ax.set_xlabel(x.replace("_", " "))
    ax.set_ylabel(ylabel or y.replace("_", " "))
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_metrics(reports: Dict[str, Path], path: Path) -> Optional[Path]:
    """Grouped bars of SR, OS and CR (percent) per evaluated policy."""
    rows = []
    for label, csv_path in sorted(reports.items()):
        _, _, data = read_csv(csv_path)
        rows.extend((label, row) for row in data)
    if not rows:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / len(rows)
    positions = np.arange(len(METRIC_COLUMNS))
    for i, (label, row) in enumerate(rows):
        heights = [float(row[c]) for c in METRIC_COLUMNS]
        ax.bar(positions + i * width, heights, width, label=f"{label} (SPL {float(row['spl']):.2f})")
    ax.set_xticks(positions + width * (len(rows) - 1) / 2)
    ax.set_xticklabels([c.upper() for c in METRIC_COLUMNS])
    ax.set_ylabel("%")
    ax.set_ylim(0, 100)
    ax.set_title("Navigation metrics")
    ax.legend(fontsize=8)
    return _save(fig, path)


def _sweep_label(csv_path: Path) -> str:
    stem = csv_path.stem
    match = MASK_TAG.search(stem)
    if match:
        return f"p={match.group(1)}"
    return "curl" if "curl" in stem else stem


def plot_all(output_dir) -> List[Path]:
    """Render every figure the run directory has data for into ``<output_dir>/plots``.

    Args:
        output_dir: Run directory holding ``upstream/``, ``teach/``, ``distill/`` and ``eval/``.

    Returns:
        Paths of the written SVG files.
    """
    root = Path(output_dir)
    plots = root / "plots"
    written: List[Optional[Path]] = []

    pretrain = {_sweep_label(p): p for p in sorted((root / "upstream").glob("pretrain*.csv"))}
    drift = {_sweep_label(p): p for p in sorted((root / "upstream").glob("drift*.csv"))}
    if pretrain:
        written.append(plot_curves(pretrain, "step", "loss", plots / "pretrain_loss.svg", "Contrastive loss"))
        written.append(plot_curves(pretrain, "step", "retrieval_acc", plots / "pretrain_retrieval.svg",
                                   "Masked retrieval accuracy"))
    if drift:
        written.append(plot_curves(drift, "step", "drift", plots / "drift.svg", "Representation drift"))

    rewards = {}
    for stage in ("teach", "distill"):
        csv_path = root / stage / f"{stage}.csv"
        if csv_path.exists():
            rewards[stage] = csv_path
    if rewards:
        written.append(plot_curves(rewards, "env_step", "return", plots / "reward.svg", "Episode return",
                                   ylabel="mean episode return"))
    distill = root / "distill" / "distill.csv"
    if distill.exists():
        written.append(plot_curves({"alpha": distill}, "env_step", "alpha", plots / "alpha.svg",
                                   "Distillation weight"))

    reports = {p.name[:-len("_report.csv")]: p for p in sorted(root.glob("*/*_report.csv"))}
    if reports:
        written.append(plot_metrics(reports, plots / "metrics.svg"))

    paths = [p for p in written if p is not None]
    if not paths:
        app_logger.warning(f"No CSV logs with data under {root}; nothing to plot")
    else:
        app_logger.info(f"Wrote {len(paths)} figures to {plots}")
    return paths
