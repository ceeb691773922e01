"""
Robustness evaluation

Runs a frozen protagonist for a number of episodes under one of three
regimes: undisturbed, with a uniform-random foreign action after every ten
protagonist actions, or with a trained adversary's action in that slot.
Per-episode progress and catastrophe totals are aggregated into an
EvalReport; ``compare_models`` builds the model x regime table of best
average catastrophe reward.
"""

import csv
import logging
import zlib
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..utils.formatters import format_float
from .checkpoint import Checkpoint
from .ensemble import AgentRole, EnsembleQNetwork, RiskConfig, select_action_test
from .errors import ConfigError
from .speedway import NUM_ACTIONS, SpeedwayEnv, TrackConfig
from .trainer import ScheduleXi, active_agent

logger = logging.getLogger(__name__)

# one perturber action after every ten protagonist actions
EVAL_SCHEDULE = ScheduleXi(xi=0, m=10, n=1)
DEFAULT_EPISODES = 10

Policy = Callable[[np.ndarray], int]


class Regime(str, Enum):
    NONE = "none"
    RANDOM = "random"
    ADVERSARIAL = "adversarial"


# stable codes so a cell's seed does not depend on which other regimes are requested
_REGIME_CODES = {Regime.NONE: 0, Regime.RANDOM: 1, Regime.ADVERSARIAL: 2}


@dataclass(eq=False)
class GreedyPolicy:
    """Deterministic test-time policy: argmax of the risk-modified head mean."""
    net: EnsembleQNetwork
    role: AgentRole = AgentRole.PROTAGONIST
    risk: RiskConfig = field(default_factory=lambda: RiskConfig(lambda_p=0.0, lambda_a=0.0))

    def __call__(self, obs: np.ndarray) -> int:
        return select_action_test(self.net, obs, self.role, self.risk)


def as_policy(agent: Union[EnsembleQNetwork, Policy, None], role: AgentRole, risk: Optional[RiskConfig] = None) -> Optional[Policy]:
    if agent is None or not isinstance(agent, EnsembleQNetwork):
        return agent
    return GreedyPolicy(agent, role, risk or RiskConfig(lambda_p=0.0, lambda_a=0.0))


@dataclass
class EpisodeResult:
    episode: int
    steps: int
    perturber_steps: int
    progress_total: float
    progress_pure: float
    catastrophe_reward: float
    catastrophes: int

    def to_dict(self) -> dict:
        return asdict(self)


EVAL_HEADER = ("episode", "steps", "perturber_steps", "progress_total", "progress_pure", "catastrophe_reward", "catastrophes")


@dataclass
class EvalReport:
    regime: Regime
    episodes: List[EpisodeResult] = field(default_factory=list)

    def mean(self, name: str) -> float:
        if not self.episodes:
            return 0.0
        return float(np.mean([getattr(e, name) for e in self.episodes]))

    def std(self, name: str) -> float:
        if not self.episodes:
            return 0.0
        return float(np.std([getattr(e, name) for e in self.episodes]))

    @property
    def mean_catastrophe_reward(self) -> float:
        return self.mean("catastrophe_reward")

    @property
    def perturbation_fraction(self) -> float:
        steps = sum(e.steps for e in self.episodes)
        return sum(e.perturber_steps for e in self.episodes) / steps if steps else 0.0

    def to_rows(self) -> List[List[str]]:
        rows = [[_cell(getattr(e, name)) for name in EVAL_HEADER] for e in sorted(self.episodes, key=lambda e: e.episode)]
        if self.episodes:
            aggregate = ["mean"]
            for name in EVAL_HEADER[1:]:
                aggregate.append(format_float(self.mean(name)))
            rows.append(aggregate)
        return rows

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(EVAL_HEADER)
            writer.writerows(self.to_rows())
        return path


def _cell(value) -> str:
    return format_float(value) if isinstance(value, float) else str(value)


def best_catastrophe_reward(reports: Sequence[EvalReport]) -> float:
    """Best (highest) mean per-episode catastrophe reward across checkpoints."""
    if not reports:
        raise ValueError("need at least one report")
    return max(r.mean_catastrophe_reward for r in reports)


# =====================================
# Rollouts
# =====================================

def run_episode(
    protagonist: Policy,
    perturber: Optional[Policy],
    regime: Regime,
    track: TrackConfig,
    seed: int,
    index: int = 0,
) -> EpisodeResult:
    env_seed, perturb_seed = np.random.SeedSequence(seed).spawn(2)
    env = SpeedwayEnv(track, np.random.default_rng(env_seed))
    perturb_rng = np.random.default_rng(perturb_seed)
    obs = env.reset()
    result = EpisodeResult(index, 0, 0, 0.0, 0.0, 0.0, 0)
    done = False
    while not done:
        perturbing = regime is not Regime.NONE and active_agent(result.steps, EVAL_SCHEDULE) is AgentRole.ADVERSARY
        if not perturbing:
            action = protagonist(obs.vector)
        elif regime is Regime.RANDOM:
            action = int(perturb_rng.integers(NUM_ACTIONS))
        else:
            action = perturber(obs.vector)
        obs, rewards, done = env.step(action)
        result.steps += 1
        result.perturber_steps += int(perturbing)
        result.progress_total += rewards.progress_total
        result.progress_pure += rewards.progress_pure
        result.catastrophe_reward += rewards.catastrophe
        result.catastrophes += rewards.C
    return result


def evaluate(
    protagonist: Union[EnsembleQNetwork, Policy],
    adversary: Union[EnsembleQNetwork, Policy, None],
    regime: Union[Regime, str],
    episodes: int,
    track: TrackConfig,
    rng: np.random.Generator,
    protagonist_risk: Optional[RiskConfig] = None,
    adversary_risk: Optional[RiskConfig] = None,
) -> EvalReport:
    """Roll out ``episodes`` test episodes; networks are only read, never updated."""
    regime = Regime(regime)
    if episodes < 0:
        raise ValueError(f"episodes must be >= 0, got {episodes}")
    if regime is Regime.ADVERSARIAL and adversary is None:
        raise ConfigError("the adversarial regime needs an adversary")
    prot_policy = as_policy(protagonist, AgentRole.PROTAGONIST, protagonist_risk)
    adv_policy = as_policy(adversary, AgentRole.ADVERSARY, adversary_risk) if regime is Regime.ADVERSARIAL else None

    seeds = rng.integers(0, 2**63 - 1, size=episodes)
    report = EvalReport(regime)
    for i, s in enumerate(seeds):
        report.episodes.append(run_episode(prot_policy, adv_policy, regime, track, int(s), i))
    report.episodes.sort(key=lambda e: e.episode)
    return report


def evaluate_checkpoint(
    ckpt: Checkpoint,
    regime: Union[Regime, str],
    episodes: int,
    track: TrackConfig,
    rng: np.random.Generator,
    adversary: Optional[Checkpoint] = None,
) -> EvalReport:
    """Evaluate a checkpoint's protagonist; the adversary comes from ``adversary`` or the checkpoint itself."""
    regime = Regime(regime)
    source = adversary or ckpt
    adv_net, adv_risk = None, None
    if regime is Regime.ADVERSARIAL:
        adv_net, adv_risk = source.require_adversary(), source.adversary_risk
    return evaluate(ckpt.protagonist, adv_net, regime, episodes, track, rng, ckpt.protagonist_risk, adv_risk)


# =====================================
# Cross-model comparison
# =====================================

@dataclass
class ComparisonTable:
    regimes: List[Regime]
    cells: Dict[str, Dict[Regime, float]] = field(default_factory=dict)

    @property
    def models(self) -> List[str]:
        return list(self.cells)

    def to_rows(self) -> List[List[str]]:
        return [[name] + [format_float(self.cells[name][r]) for r in self.regimes] for name in self.cells]

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["model"] + [r.value for r in self.regimes])
            writer.writerows(self.to_rows())
        return path


def cell_seed(seed: int, model: str, regime: Regime, checkpoint_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(model.encode("utf-8")), _REGIME_CODES[regime], checkpoint_index])


def compare_models(
    models: Sequence[Tuple[str, Sequence[Checkpoint]]],
    regimes: Sequence[Union[Regime, str]],
    episodes: int,
    track: TrackConfig,
    seed: int = 0,
    adversary: Optional[Checkpoint] = None,
) -> ComparisonTable:
    """Average best catastrophe reward per (model, regime); higher is better."""
    if not models:
        raise ValueError("compare_models needs at least one model")
    table = ComparisonTable([Regime(r) for r in regimes])
    for name, checkpoints in models:
        if not checkpoints:
            raise ValueError(f"model {name!r} has no checkpoints")
        row = {}
        for regime in table.regimes:
            reports = [
                evaluate_checkpoint(ckpt, regime, episodes, track, cell_seed(seed, name, regime, i), adversary)
                for i, ckpt in enumerate(checkpoints)
            ]
            row[regime] = best_catastrophe_reward(reports)
        table.cells[name] = row
    return table
