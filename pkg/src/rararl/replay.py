"""
Replay storage and cross-agent n-step windows

A role's window starts at its own transition and runs through every
intervening transition of the other role until the role decides again (or the
episode ends). Each window collapses into one NStepTransition that goes into
the role's own buffer; the other role's experience never enters it.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .ensemble import AgentRole, BootstrapMask, EnsembleQNetwork, bootstrap_values
from .errors import SequencingError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Transition:
    """One environment step as seen by whoever acted."""
    obs: np.ndarray
    action: int
    reward: float  # environment reward, protagonist sign
    next_obs: np.ndarray
    done: bool
    role: AgentRole
    t: int


@dataclass(frozen=True, eq=False)
class NStepTransition:
    role: AgentRole
    obs: np.ndarray
    action: int
    cumulative_reward: float
    horizon: int
    bootstrap_obs: np.ndarray
    done_within_window: bool
    gamma: float
    t: int
    target: Optional[float] = None


def collapse_window(window: Sequence[Transition], role: AgentRole, gamma: float) -> NStepTransition:
    """Discounted, role-signed reward sum over a window; no bootstrap attached yet."""
    if not window:
        raise SequencingError("empty window")
    if window[0].role is not role:
        raise SequencingError(f"window for {role.value} starts with a {window[0].role.value} step")
    for i, tr in enumerate(window[1:], start=1):
        if tr.role is role:
            raise SequencingError(f"{role.value} acts again inside its own window at position {i}")
        if window[i - 1].done:
            raise SequencingError(f"window continues past a terminal step at position {i - 1}")
    sign = role.reward_sign
    total = 0.0
    for i, tr in enumerate(window):
        total += (gamma ** i) * (sign * tr.reward)
    head = window[0]
    return NStepTransition(
        role=role,
        obs=head.obs,
        action=head.action,
        cumulative_reward=total,
        horizon=len(window),
        bootstrap_obs=window[-1].next_obs,
        done_within_window=window[-1].done,
        gamma=gamma,
        t=head.t,
    )


def build_nstep_target(
    window: Sequence[Transition],
    role: AgentRole,
    gamma: float,
    target_net: EnsembleQNetwork,
    mask: Optional[BootstrapMask] = None,
) -> NStepTransition:
    """Collapse ``window`` and attach its scalar TD target.

    The bootstrap term is gamma**horizon times the per-head max of the target
    network at the role's next decision state, averaged over the mask's active
    heads (all heads without a mask); it is dropped when the window ends in a
    terminal step.
    """
    item = collapse_window(window, role, gamma)
    target = item.cumulative_reward
    if not item.done_within_window:
        counts = mask.counts if mask is not None else np.ones(target_net.k, dtype=np.int64)
        boot = bootstrap_values(target_net, item.bootstrap_obs[None, :], counts[None, :])[0]
        target = target + gamma ** item.horizon * boot
    return replace(item, target=float(target))


class WindowTracker:
    """Keeps each role's open window and closes it when the role is about to act again."""

    def __init__(self, gamma: float):
        self.gamma = gamma
        self.pending: Dict[AgentRole, List[Transition]] = {}

    def record(self, tr: Transition, next_role: Optional[AgentRole]) -> List[NStepTransition]:
        """Add ``tr``; ``next_role`` is who acts on the following step (ignored when ``tr.done``)."""
        for role, window in self.pending.items():
            if role is not tr.role and window:
                window.append(tr)
        self.pending[tr.role] = [tr]

        closed = []
        if tr.done:
            for role, window in self.pending.items():
                if window:
                    closed.append(collapse_window(window, role, self.gamma))
            self.pending.clear()
        elif next_role is not None and self.pending.get(next_role):
            closed.append(collapse_window(self.pending[next_role], next_role, self.gamma))
            self.pending[next_role] = []
        return closed

    def clear(self) -> None:
        self.pending.clear()


class ReplayBuffer:
    """Fixed-capacity FIFO ring of one role's n-step transitions."""

    def __init__(self, role: AgentRole, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.role = role
        self.capacity = capacity
        self._items: List[NStepTransition] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def add(self, item: NStepTransition) -> None:
        if item.role is not self.role:
            raise SequencingError(f"{item.role.value} transition offered to the {self.role.value} buffer")
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def sample(self, rng: np.random.Generator, batch_size: int) -> List[NStepTransition]:
        """Uniform sample with replacement."""
        if not self._items:
            raise ValueError(f"{self.role.value} buffer is empty")
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]

    def items(self) -> List[NStepTransition]:
        """Contents oldest first."""
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._next:] + self._items[:self._next]
