"""
RARARL Output Formatting Utilities

Log lines, console summaries and CSV cell formatting shared by the trainer,
the evaluation harness and the CLI.
"""

import logging
import math
from typing import Iterable, Optional, Sequence

logger = logging.getLogger(__name__)

# console tables are cut to this width
MAX_TABLE_WIDTH = 120


def format_float(value: float) -> str:
    """Shortest round-tripping text for a float (CSV cells)."""
    value = float(value)
    if math.isnan(value):
        return "nan"
    return repr(value)


def format_optional(value: Optional[float], digits: int = 4) -> str:
    if value is None:
        return "-"
    return f"{value:.{digits}f}"


def format_duration(seconds: float) -> str:
    """3725.0 -> '1h02m05s'"""
    seconds = max(0, int(round(seconds)))
    hours, rest = divmod(seconds, 3600)
    minutes, secs = divmod(rest, 60)
    if hours:
        return f"{hours}h{minutes:02d}m{secs:02d}s"
    if minutes:
        return f"{minutes}m{secs:02d}s"
    return f"{secs}s"


def format_episode_log(
    step: int,
    eps: float,
    episodes: Sequence,
    loss_p: Optional[float] = None,
    loss_a: Optional[float] = None,
) -> str:
    """
    One training progress line over a batch of finished episodes

    ``episodes`` are EpisodeSummary-like objects (progress_total,
    catastrophes, steps attributes).
    """
    if not episodes:
        return f"step={step} eps={eps:.3f} (no finished episodes)"
    n = len(episodes)
    progress = sum(e.progress_total for e in episodes) / n
    crashes = sum(e.catastrophes for e in episodes)
    length = sum(e.steps for e in episodes) / n
    return (
        f"step={step} eps={eps:.3f} episodes={episodes[-1].episode + 1} "
        f"progress={progress:.3f} crashes={crashes}/{n} len={length:.0f} "
        f"loss_P={format_optional(loss_p)} loss_A={format_optional(loss_a)}"
    )


def format_eval_summary(report, label: str = "") -> str:
    """Short multi-line summary of an EvalReport."""
    prefix = f"[{label}] " if label else ""
    lines = [f"{prefix}regime={report.regime.value} episodes={len(report.episodes)}"]
    for name in ("progress_total", "progress_pure", "catastrophe_reward"):
        lines.append(f"  {name:<20} mean={report.mean(name):9.4f}  std={report.std(name):8.4f}")
    return "\n".join(lines)


def format_comparison_table(table) -> str:
    """Fixed-width text rendering of a ComparisonTable (higher is better)."""
    name_width = max([len("model")] + [len(m) for m in table.models])
    header = "model".ljust(name_width) + "".join(f"  {r.value:>12}" for r in table.regimes)
    lines = [header, "-" * min(len(header), MAX_TABLE_WIDTH)]
    for name in table.models:
        cells = "".join(f"  {table.cells[name][r]:12.4f}" for r in table.regimes)
        lines.append((name.ljust(name_width) + cells)[:MAX_TABLE_WIDTH])
    return "\n".join(lines)


def format_error_message(error, details: Iterable[str] = ()) -> str:
    """Console error text: one headline plus indented details."""
    lines = [f"❌ {error}"]
    lines.extend(f"   {d}" for d in details)
    return "\n".join(lines)
