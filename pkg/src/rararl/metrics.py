"""
Training metrics

Step-indexed MetricsLog rows plus per-episode summaries, written as CSV.
Floats are written with repr() so identical runs give identical bytes.
"""

import csv
import io
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Union

from ..utils.formatters import format_float

logger = logging.getLogger(__name__)

METRICS_HEADER = (
    "t",
    "episode",
    "acting_role",
    "eps",
    "reward_total",
    "reward_progress_total",
    "reward_progress_pure",
    "catastrophes_this_episode",
    "loss_P",
    "loss_A",
    "mean_variance_selected_actions",
)


@dataclass
class MetricsRow:
    t: int
    episode: int
    acting_role: str
    eps: float
    reward_total: float
    reward_progress_total: float
    reward_progress_pure: float
    catastrophes_this_episode: int
    loss_P: Optional[float]
    loss_A: Optional[float]
    mean_variance_selected_actions: float

    def to_list(self) -> List[str]:
        return [_cell(getattr(self, name)) for name in METRICS_HEADER]


@dataclass
class EpisodeSummary:
    """Totals for one finished training episode."""
    episode: int
    end_t: int
    steps: int
    adversary_steps: int
    reward_total: float
    progress_total: float
    progress_pure: float
    catastrophe_reward: float
    catastrophes: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EpisodeSummary":
        kinds = {f.name: f.type for f in fields(cls)}
        return cls(**{k: (int(v) if kinds[k] in (int, "int") else float(v)) for k, v in data.items() if k in kinds})


EPISODE_HEADER = tuple(f.name for f in fields(EpisodeSummary))


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format_float(value)
    return str(value)


def _write_rows(path: Union[str, Path], header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


@dataclass
class MetricsLog:
    rows: List[MetricsRow] = field(default_factory=list)
    episodes: List[EpisodeSummary] = field(default_factory=list)

    def append(self, row: MetricsRow) -> None:
        if self.rows and row.t <= self.rows[-1].t:
            raise ValueError(f"metrics rows must be monotone in t ({row.t} after {self.rows[-1].t})")
        self.rows.append(row)

    def append_episode(self, summary: EpisodeSummary) -> None:
        self.episodes.append(summary)

    def __len__(self) -> int:
        return len(self.rows)

    def recent_episodes(self, n: int) -> List[EpisodeSummary]:
        return self.episodes[-n:] if n > 0 else []

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        writer.writerows(r.to_list() for r in self.rows)
        return buf.getvalue()

    def write_csv(self, path: Union[str, Path]) -> Path:
        return _write_rows(path, METRICS_HEADER, (r.to_list() for r in self.rows))

    def write_episodes_csv(self, path: Union[str, Path]) -> Path:
        return _write_rows(
            path,
            EPISODE_HEADER,
            ([_cell(getattr(e, name)) for name in EPISODE_HEADER] for e in self.episodes),
        )


def read_episodes_csv(path: Union[str, Path]) -> List[EpisodeSummary]:
    with open(path, newline="", encoding="utf-8") as f:
        return [EpisodeSummary.from_dict(row) for row in csv.DictReader(f)]
