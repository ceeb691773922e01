"""
Per-episode training curves

Renders episodes.csv files (one per run) into a three-panel PNG: total
progress, pure progress and catastrophe reward per episode.
"""

import logging
from pathlib import Path
from typing import Dict, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import EpisodeSummary, read_episodes_csv  # noqa: E402

logger = logging.getLogger(__name__)

PANELS = (
    ("progress_total", "progress reward (total)"),
    ("progress_pure", "progress reward (pure)"),
    ("catastrophe_reward", "catastrophe reward"),
)


def smooth(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average; the first points average what is available."""
    values = np.asarray(values, dtype=np.float64)
    if window <= 1 or values.size == 0:
        return values
    csum = np.cumsum(np.insert(values, 0, 0.0))
    idx = np.arange(1, values.size + 1)
    start = np.maximum(idx - window, 0)
    return (csum[idx] - csum[start]) / (idx - start)


def plot_episode_curves(
    runs: Dict[str, Sequence[EpisodeSummary]],
    out_path: Union[str, Path],
    window: int = 20,
    title: str = "",
) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(len(PANELS), 1, figsize=(8, 9), sharex=True)
    for label, episodes in runs.items():
        x = [e.episode for e in episodes]
        for ax, (name, _) in zip(axes, PANELS):
            ax.plot(x, smooth([getattr(e, name) for e in episodes], window), label=label, linewidth=1.2)
    for ax, (_, ylabel) in zip(axes, PANELS):
        ax.set_ylabel(ylabel)
        ax.grid(alpha=0.3)
    axes[-1].set_xlabel("episode")
    if len(runs) > 1:
        axes[0].legend(loc="best", fontsize="small")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    logger.info(f"Wrote {out_path}")
    return out_path


def plot_episode_files(paths: Sequence[Union[str, Path]], out_path: Union[str, Path], window: int = 20) -> Path:
    runs = {}
    for p in paths:
        p = Path(p)
        label = p.parent.name or p.stem
        runs[str(p) if label in runs else label] = read_episodes_csv(p)
    return plot_episode_curves(runs, out_path, window)
