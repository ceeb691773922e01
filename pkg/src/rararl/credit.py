"""
Credit assignment between protagonist and adversary

Splits the change of a role-signed value along one episode into the part
accumulated on protagonist steps (TD_P) and on adversary steps (TD_A).
The signed value flips sign on adversary steps, and each step's temporal
difference is credited to whoever acted at that step. The two totals always
telescope to the signed value change between the first and last state.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Sequence, Tuple, Union

import numpy as np

from ..utils.formatters import format_float
from .checkpoint import Checkpoint
from .ensemble import AgentRole, EnsembleQNetwork, mean_q, q_all_heads, select_action_test
from .speedway import SpeedwayEnv, TrackConfig
from .trainer import ScheduleXi, active_agent

logger = logging.getLogger(__name__)

ValueFn = Callable[[np.ndarray], float]
CREDIT_STEP_HEADER = ("episode", "step", "role", "V", "V_tilde", "TD")
CREDIT_TOTALS_HEADER = ("episode", "TD_P", "TD_A", "delta_V_tilde")


@dataclass(eq=False)
class CreditTrace:
    roles: List[AgentRole]
    indicators: np.ndarray  # +1 protagonist, -1 adversary
    values: np.ndarray
    values_tilde: np.ndarray
    td: np.ndarray  # one entry per transition, len(values) - 1
    td_p: float
    td_a: float

    @property
    def delta_v_tilde(self) -> float:
        return float(self.values_tilde[-1] - self.values_tilde[0])

    def __len__(self) -> int:
        return len(self.roles)

    def step_rows(self, episode: int) -> List[List[str]]:
        rows = []
        for i, role in enumerate(self.roles):
            td = format_float(float(self.td[i])) if i < len(self.td) else ""
            rows.append([
                str(episode), str(i), role.value,
                format_float(float(self.values[i])), format_float(float(self.values_tilde[i])), td,
            ])
        return rows

    def totals_row(self, episode: int) -> List[str]:
        return [str(episode), format_float(self.td_p), format_float(self.td_a), format_float(self.delta_v_tilde)]


def credit_decompose(trajectory: Sequence[Tuple[np.ndarray, AgentRole]], value_fn: ValueFn) -> CreditTrace:
    """Role-attributed temporal value differences for one episode of (state, acting role) pairs."""
    if len(trajectory) < 2:
        raise ValueError(f"credit decomposition needs at least 2 states, got {len(trajectory)}")
    roles = [AgentRole(role) for _, role in trajectory]
    indicators = np.array([1.0 if r is AgentRole.PROTAGONIST else -1.0 for r in roles])
    values = np.array([float(value_fn(state)) for state, _ in trajectory], dtype=np.float64)
    values_tilde = indicators * values
    td = values_tilde[1:] - values_tilde[:-1]
    weights = indicators[:-1]
    td_p = float(np.sum((1.0 + weights) / 2.0 * td))
    td_a = float(np.sum((1.0 - weights) / 2.0 * td))
    return CreditTrace(roles, indicators, values, values_tilde, td, td_p, td_a)


def target_value_fn(net: EnsembleQNetwork) -> ValueFn:
    """V*(s) = max over actions of the head-mean of ``net``."""
    def value(obs: np.ndarray) -> float:
        return float(np.max(mean_q(q_all_heads(net, obs))))
    return value


def rollout_trajectory(
    ckpt: Checkpoint,
    track: TrackConfig,
    rng: np.random.Generator,
    schedule: ScheduleXi = ScheduleXi(xi=0, m=10, n=1),
) -> List[Tuple[np.ndarray, AgentRole]]:
    """One greedy two-agent episode; the final state is labelled with the role due to act next."""
    adversary = ckpt.require_adversary()
    env = SpeedwayEnv(track, rng)
    obs = env.reset()
    trajectory = []
    t, done = 0, False
    while not done:
        role = active_agent(t, schedule)
        trajectory.append((obs.vector, role))
        if role is AgentRole.PROTAGONIST:
            action = select_action_test(ckpt.protagonist, obs.vector, role, ckpt.protagonist_risk)
        else:
            action = select_action_test(adversary, obs.vector, role, ckpt.adversary_risk)
        obs, _, done = env.step(action)
        t += 1
    trajectory.append((obs.vector, active_agent(t, schedule)))
    return trajectory


def credit_episodes(ckpt: Checkpoint, track: TrackConfig, episodes: int, seed: int) -> List[CreditTrace]:
    ckpt.require_adversary()
    value_fn = target_value_fn(ckpt.value_network())
    traces = []
    for child in np.random.SeedSequence(seed).spawn(episodes):
        trace = credit_decompose(rollout_trajectory(ckpt, track, np.random.default_rng(child)), value_fn)
        logger.debug(f"credit episode {len(traces)}: TD_P={trace.td_p:.4f} TD_A={trace.td_a:.4f}")
        traces.append(trace)
    return traces


def totals_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}_totals{path.suffix or '.csv'}")


def write_credit_csv(traces: Sequence[CreditTrace], path: Union[str, Path]) -> Tuple[Path, Path]:
    """Per-step rows to ``path`` and per-episode totals next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    totals = totals_path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CREDIT_STEP_HEADER)
        for episode, trace in enumerate(traces):
            writer.writerows(trace.step_rows(episode))
    with open(totals, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CREDIT_TOTALS_HEADER)
        writer.writerows(trace.totals_row(episode) for episode, trace in enumerate(traces))
    return path, totals
