"""Tests for cross-agent n-step windows and the replay buffers."""

import numpy as np
import pytest

from src.rararl.ensemble import AgentRole, BootstrapMask, EnsembleQNetwork, sample_masks
from src.rararl.errors import SequencingError
from src.rararl.nn import forward
from src.rararl.replay import (
    NStepTransition,
    ReplayBuffer,
    Transition,
    WindowTracker,
    build_nstep_target,
    collapse_window,
)

P, A = AgentRole.PROTAGONIST, AgentRole.ADVERSARY
OBS = 4


def tr(role, reward, t=0, done=False, rng=None, action=0):
    rng = rng or np.random.default_rng(t)
    return Transition(rng.normal(size=OBS), action, reward, rng.normal(size=OBS), done, role, t)


@pytest.fixture
def target_net():
    return EnsembleQNetwork.create(OBS, 3, 3, np.random.default_rng(5), trunk_hidden=(6,))


def brute_force_target(window, role, gamma, net, counts):
    """Explicit sum over the window plus the averaged per-head max, one head at a time."""
    sign = 1.0 if role is P else -1.0
    value = sum(gamma ** i * sign * step.reward for i, step in enumerate(window))
    if window[-1].done:
        return value
    features, _ = forward(net.trunk, window[-1].next_obs)
    maxima = [float(np.max(forward(head, features)[0])) for head in net.heads]
    active = [m for m, c in zip(maxima, counts) if c > 0] or maxima
    return value + gamma ** len(window) * sum(active) / len(active)


class TestCollapse:
    def test_adversary_crash_inside_protagonist_window(self, target_net):
        window = [tr(P, 0.1, 0), tr(A, -2.5, 1, done=True)]
        item = build_nstep_target(window, P, 0.9, target_net)
        assert item.done_within_window
        assert item.horizon == 2
        assert item.target == pytest.approx(-2.15, abs=1e-12)

    def test_roles_swapped_negates_rewards(self, target_net):
        window = [tr(A, 0.1, 0), tr(P, -2.5, 1, done=True)]
        assert build_nstep_target(window, A, 0.9, target_net).target == pytest.approx(2.15, abs=1e-12)

    def test_single_step_is_one_step_dqn(self, target_net):
        step = tr(P, 0.3, 0)
        item = build_nstep_target([step], P, 0.9, target_net)
        features, _ = forward(target_net.trunk, step.next_obs)
        maxima = [np.max(forward(h, features)[0]) for h in target_net.heads]
        assert item.target == pytest.approx(0.3 + 0.9 * np.mean(maxima), abs=1e-12)

    def test_matches_brute_force(self, target_net):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            role = P if rng.random() < 0.5 else A
            length = int(rng.integers(1, 12))
            done = bool(rng.random() < 0.3)
            window = [
                tr(role if i == 0 else role.other, float(rng.normal()), i,
                   done=done and i == length - 1, rng=rng, action=int(rng.integers(3)))
                for i in range(length)
            ]
            gamma = float(rng.uniform(0.5, 1.0))
            counts = sample_masks(3, 0.03, int(rng.integers(1, 4)), rng, 1)[0]
            item = build_nstep_target(window, role, gamma, target_net, BootstrapMask(counts))
            expected = brute_force_target(window, role, gamma, target_net, counts)
            assert item.target == pytest.approx(expected, abs=1e-12)
            assert item.obs is window[0].obs
            assert item.action == window[0].action

    def test_swapped_roles_cancel_without_discount(self, target_net):
        rewards = [0.7, -1.3, 0.25]
        mine = [tr(P, rewards[0], 0), tr(A, rewards[1], 1), tr(A, rewards[2], 2, done=True)]
        theirs = [tr(A, rewards[0], 0), tr(P, rewards[1], 1), tr(P, rewards[2], 2, done=True)]
        p = build_nstep_target(mine, P, 1.0, target_net)
        a = build_nstep_target(theirs, A, 1.0, target_net)
        assert p.target + a.target == 0.0

    def test_empty_window(self):
        with pytest.raises(SequencingError):
            collapse_window([], P, 0.9)

    def test_window_must_start_with_owner(self):
        with pytest.raises(SequencingError):
            collapse_window([tr(A, 0.0)], P, 0.9)

    def test_owner_cannot_act_twice(self):
        with pytest.raises(SequencingError):
            collapse_window([tr(P, 0.0, 0), tr(A, 0.0, 1), tr(P, 0.0, 2)], P, 0.9)

    def test_nothing_after_terminal(self):
        with pytest.raises(SequencingError):
            collapse_window([tr(P, 0.0, 0, done=True), tr(A, 0.0, 1)], P, 0.9)


class TestWindowTracker:
    def test_windows_follow_the_schedule(self):
        # P P A P P A(done)
        roles = [P, P, A, P, P, A]
        rewards = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
        tracker = WindowTracker(gamma=0.5)
        closed = []
        for t, (role, r) in enumerate(zip(roles, rewards)):
            done = t == len(roles) - 1
            nxt = None if done else roles[t + 1]
            closed.extend(tracker.record(tr(role, r, t, done=done), nxt))

        summary = [(c.role, c.t, c.horizon, c.done_within_window) for c in closed]
        assert summary == [
            (P, 0, 1, False),
            (P, 1, 2, False),
            (P, 3, 1, False),
            (A, 2, 3, False),
            (P, 4, 2, True),
            (A, 5, 1, True),
        ]
        by_start = {(c.role, c.t): c for c in closed}
        assert by_start[(P, 1)].cumulative_reward == 2.0 + 0.5 * 3.0
        assert by_start[(A, 2)].cumulative_reward == -(3.0 + 0.5 * 4.0 + 0.25 * 5.0)
        assert by_start[(A, 5)].cumulative_reward == -6.0
        assert tracker.pending == {}

    def test_bootstrap_state_is_next_decision(self):
        tracker = WindowTracker(gamma=0.9)
        first, second = tr(P, 0.0, 0), tr(A, 0.0, 1)
        tracker.record(first, A)
        (item,) = tracker.record(second, P)
        assert item.bootstrap_obs is second.next_obs

    def test_clear_drops_open_windows(self):
        tracker = WindowTracker(gamma=0.9)
        tracker.record(tr(P, 1.0, 0), A)
        tracker.clear()
        assert tracker.record(tr(A, 1.0, 1), P) == []


def item_for(role, t):
    return NStepTransition(role, np.zeros(OBS), 0, 0.0, 1, np.zeros(OBS), False, 0.9, t)


class TestReplayBuffer:
    def test_fifo_eviction(self):
        buf = ReplayBuffer(P, capacity=3)
        for t in range(5):
            buf.add(item_for(P, t))
        assert len(buf) == 3
        assert [i.t for i in buf.items()] == [2, 3, 4]

    def test_rejects_other_role(self):
        buf = ReplayBuffer(P, capacity=3)
        with pytest.raises(SequencingError):
            buf.add(item_for(A, 0))

    def test_sample(self, rng):
        buf = ReplayBuffer(A, capacity=10)
        with pytest.raises(ValueError):
            buf.sample(rng, 4)
        for t in range(6):
            buf.add(item_for(A, t))
        batch = buf.sample(rng, 32)
        assert len(batch) == 32
        assert {i.t for i in batch} <= set(range(6))

    def test_capacity_must_be_positive(self):
        with pytest.raises(ValueError):
            ReplayBuffer(P, capacity=0)
