"""
Risk-averse adversarial training loop

Alternating two-agent control of one car: the protagonist drives alone for a
warmup period, then hands one step in every m+n to the perturber (a random
driver or a co-trained adversary). Each learning agent keeps its own replay
buffer of cross-agent n-step transitions and its own ensemble plus target
network.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..utils.formatters import format_episode_log
from .ensemble import (
    MASK_MODES,
    AgentRole,
    BootstrapMask,
    EnsembleQNetwork,
    RiskConfig,
    choose_action,
    q_all_heads,
    sample_masks,
    sync_target,
    td_update,
    variance_q,
)
from .errors import ConfigError
from .metrics import EpisodeSummary, MetricsLog, MetricsRow
from .replay import ReplayBuffer, Transition, WindowTracker
from .speedway import NUM_ACTIONS, OBS_DIM, SpeedwayEnv, TrackConfig

logger = logging.getLogger(__name__)


# =====================================
# Schedule
# =====================================

class ScheduleXi(BaseModel):
    """Who drives when: ``xi`` protagonist-only steps, then cycles of m protagonist and n perturber steps."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    xi: int = Field(55_000, ge=0)
    m: int = Field(10, ge=1)
    n: int = Field(1, ge=0)


PROTAGONIST_ONLY = ScheduleXi(xi=0, m=1, n=0)


def active_agent(t: int, sched: ScheduleXi) -> AgentRole:
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    if t < sched.xi or sched.n == 0:
        return AgentRole.PROTAGONIST
    phase = (t - sched.xi) % (sched.m + sched.n)
    return AgentRole.PROTAGONIST if phase < sched.m else AgentRole.ADVERSARY


def epsilon(t: int, start: float = 1.0, end: float = 0.02, t0: int = 1_000, t1: int = 50_000) -> float:
    """Linear decay from ``start`` at t0 to ``end`` at t1, flat outside."""
    if not t0 < t1:
        raise ValueError(f"epsilon schedule needs t0 < t1 (got {t0}, {t1})")
    if t <= t0:
        return start
    if t >= t1:
        return end
    return start + (end - start) * (t - t0) / (t1 - t0)


# =====================================
# Configuration
# =====================================

class Variant(str, Enum):
    DQN = "dqn"
    BSDQN = "bsdqn"
    BSDQN_RAND = "bsdqnrand"
    BSDQN_RAND_RISKAVERSE = "bsdqnrandriskaverse"
    BSDQN_ADV = "bsdqnadv"
    BSDQN_ADV_RISKAVERSE = "bsdqnadvriskaverse"


class PerturberKind(str, Enum):
    NONE = "none"
    RANDOM = "random"
    ADVERSARY = "adversary"


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variant: Variant = Variant.BSDQN_ADV_RISKAVERSE
    seed: int = 0
    total_steps: int = Field(100_000, ge=0)
    train_freq: int = Field(4, ge=1)
    target_update_freq: int = Field(1_000, ge=1)
    batch_size: int = Field(32, ge=1)
    gamma: float = Field(0.99, ge=0.0, le=1.0)
    lr: float = Field(1e-4, gt=0.0)
    max_grad_norm: float = Field(10.0, ge=0.0)
    eps_start: float = Field(1.0, ge=0.0, le=1.0)
    eps_end: float = Field(0.02, ge=0.0, le=1.0)
    eps_t0: int = Field(1_000, ge=0)
    eps_t1: int = Field(50_000, ge=1)
    buffer_capacity: int = Field(10_000, ge=1)
    learning_starts: int = Field(1_000, ge=0)
    num_heads: Optional[int] = Field(None, ge=1)
    heads_per_update: int = Field(5, ge=1)
    mask_rate: float = Field(0.03, ge=0.0)
    mask_mode: str = "subset"
    trunk_hidden: Tuple[int, ...] = (64, 64)
    checkpoint_every: int = Field(10_000, ge=0)
    log_every_episodes: int = Field(20, ge=1)
    schedule: ScheduleXi = Field(default_factory=ScheduleXi)
    risk: RiskConfig = Field(default_factory=RiskConfig)

    @field_validator("mask_mode")
    @classmethod
    def _known_mask_mode(cls, v):
        if v not in MASK_MODES:
            raise ValueError(f"must be one of {', '.join(MASK_MODES)}")
        return v

    @field_validator("trunk_hidden")
    @classmethod
    def _positive_widths(cls, v):
        if any(width < 1 for width in v):
            raise ValueError("hidden widths must be >= 1")
        return v

    @model_validator(mode="after")
    def _epsilon_window(self):
        if not self.eps_t0 < self.eps_t1:
            raise ValueError(f"eps_t0 ({self.eps_t0}) must be < eps_t1 ({self.eps_t1})")
        return self

    def epsilon_at(self, t: int) -> float:
        return epsilon(t, self.eps_start, self.eps_end, self.eps_t0, self.eps_t1)


@dataclass(frozen=True)
class AgentSpec:
    """Everything a learning agent needs beyond the shared training knobs."""
    role: AgentRole
    k: int
    risk: RiskConfig
    heads_per_update: int
    mask_rate: float
    mask_mode: str


@dataclass(frozen=True)
class PerturberSpec:
    kind: PerturberKind
    agent: Optional[AgentSpec] = None


DEFAULT_HEADS = 10


def make_variant(cfg: TrainConfig) -> Tuple[AgentSpec, PerturberSpec]:
    """Resolve the variant name into the protagonist and perturber set-up."""
    try:
        variant = Variant(cfg.variant)
    except ValueError:
        raise ConfigError(f"unknown variant {cfg.variant!r}")

    if variant is Variant.DQN:
        if cfg.num_heads not in (None, 1):
            raise ConfigError(f"variant dqn uses a single head, got num_heads={cfg.num_heads}")
        spec = AgentSpec(AgentRole.PROTAGONIST, 1, RiskConfig(lambda_p=0.0, lambda_a=0.0), 1, 0.0, "subset")
        return spec, PerturberSpec(PerturberKind.NONE)

    k = cfg.num_heads or DEFAULT_HEADS
    hpu = min(cfg.heads_per_update, k)
    neutral = RiskConfig(lambda_p=0.0, lambda_a=0.0)

    def agent(role: AgentRole, risk: RiskConfig) -> AgentSpec:
        return AgentSpec(role, k, risk, hpu, cfg.mask_rate, cfg.mask_mode)

    if variant in (Variant.BSDQN_RAND_RISKAVERSE, Variant.BSDQN_ADV_RISKAVERSE) and cfg.risk.lambda_p <= 0:
        raise ConfigError(f"variant {variant.value} needs risk.lambda_p > 0")

    if variant is Variant.BSDQN:
        return agent(AgentRole.PROTAGONIST, neutral), PerturberSpec(PerturberKind.NONE)
    if variant is Variant.BSDQN_RAND:
        return agent(AgentRole.PROTAGONIST, neutral), PerturberSpec(PerturberKind.RANDOM)
    if variant is Variant.BSDQN_RAND_RISKAVERSE:
        risk = RiskConfig(lambda_p=cfg.risk.lambda_p, lambda_a=0.0)
        return agent(AgentRole.PROTAGONIST, risk), PerturberSpec(PerturberKind.RANDOM)
    if variant is Variant.BSDQN_ADV:
        return (
            agent(AgentRole.PROTAGONIST, neutral),
            PerturberSpec(PerturberKind.ADVERSARY, agent(AgentRole.ADVERSARY, neutral)),
        )
    if cfg.risk.lambda_a <= 0:
        raise ConfigError("variant bsdqnadvriskaverse needs risk.lambda_a > 0")
    return (
        agent(AgentRole.PROTAGONIST, cfg.risk),
        PerturberSpec(PerturberKind.ADVERSARY, agent(AgentRole.ADVERSARY, cfg.risk)),
    )


def effective_schedule(cfg: TrainConfig, perturber: PerturberSpec) -> ScheduleXi:
    return PROTAGONIST_ONLY if perturber.kind is PerturberKind.NONE else cfg.schedule


# =====================================
# Random streams
# =====================================

@dataclass
class RngStreams:
    """One generator per consumer; drawing from one never shifts another."""
    init: np.random.Generator
    env: np.random.Generator
    protagonist_actions: np.random.Generator
    perturber_actions: np.random.Generator
    masks: np.random.Generator
    replay: np.random.Generator
    heads: np.random.Generator


STREAM_NAMES = ("init", "env", "protagonist_actions", "perturber_actions", "masks", "replay", "heads")


def make_rng_streams(seed: int) -> RngStreams:
    children = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
    return RngStreams(**{name: np.random.default_rng(s) for name, s in zip(STREAM_NAMES, children)})


# =====================================
# Training
# =====================================

@dataclass(eq=False)
class Learner:
    spec: AgentSpec
    net: EnsembleQNetwork
    target: EnsembleQNetwork
    buffer: ReplayBuffer
    head: int = 0

    @property
    def role(self) -> AgentRole:
        return self.spec.role

    def update(self, cfg: TrainConfig, streams: RngStreams) -> float:
        batch = self.buffer.sample(streams.replay, cfg.batch_size)
        counts = sample_masks(
            self.spec.k, self.spec.mask_rate, self.spec.heads_per_update,
            streams.masks, len(batch), self.spec.mask_mode,
        )
        masks = [BootstrapMask(row) for row in counts]
        return td_update(self.net, self.target, batch, masks, lr=cfg.lr, max_grad_norm=cfg.max_grad_norm)


def _make_learner(spec: AgentSpec, cfg: TrainConfig, rng: np.random.Generator) -> Learner:
    net = EnsembleQNetwork.create(OBS_DIM, NUM_ACTIONS, spec.k, rng, trunk_hidden=cfg.trunk_hidden)
    return Learner(spec, net, net.copy(with_optimizer=False), ReplayBuffer(spec.role, cfg.buffer_capacity))


@dataclass(eq=False)
class TrainResult:
    variant: Variant
    protagonist: Learner
    adversary: Optional[Learner]
    perturber: PerturberSpec
    metrics: MetricsLog
    global_step: int = 0

    @property
    def learners(self) -> List[Learner]:
        return [l for l in (self.protagonist, self.adversary) if l is not None]


CheckpointHook = Callable[[int, TrainResult], None]


@dataclass
class _EpisodeTally:
    steps: int = 0
    adversary_steps: int = 0
    reward_total: float = 0.0
    progress_total: float = 0.0
    progress_pure: float = 0.0
    catastrophe_reward: float = 0.0
    catastrophes: int = 0
    variance_sum: float = 0.0
    variance_count: int = 0

    @property
    def mean_variance(self) -> float:
        return self.variance_sum / self.variance_count if self.variance_count else 0.0


def train(
    cfg: TrainConfig,
    track: Optional[TrackConfig] = None,
    seed: Optional[int] = None,
    on_checkpoint: Optional[CheckpointHook] = None,
) -> TrainResult:
    """Run ``cfg.total_steps`` environment steps and return the final agents and metrics."""
    track = track or TrackConfig()
    seed = cfg.seed if seed is None else seed
    prot_spec, perturber = make_variant(cfg)
    schedule = effective_schedule(cfg, perturber)
    streams = make_rng_streams(seed)

    protagonist = _make_learner(prot_spec, cfg, streams.init)
    adversary = _make_learner(perturber.agent, cfg, streams.init) if perturber.kind is PerturberKind.ADVERSARY else None
    learners: Dict[AgentRole, Learner] = {l.role: l for l in (protagonist, adversary) if l is not None}
    result = TrainResult(Variant(cfg.variant), protagonist, adversary, perturber, MetricsLog())

    logger.info(
        f"Training {result.variant.value}: T={cfg.total_steps}, k={prot_spec.k}, "
        f"perturber={perturber.kind.value}, seed={seed}"
    )

    env = SpeedwayEnv(track, streams.env)
    obs = env.reset()
    for learner in learners.values():
        learner.head = int(streams.heads.integers(learner.spec.k))
    tracker = WindowTracker(cfg.gamma)
    episode = 0
    tally = _EpisodeTally()
    last_loss: Dict[AgentRole, Optional[float]] = {role: None for role in AgentRole}

    for t in range(cfg.total_steps):
        role = active_agent(t, schedule)
        eps = cfg.epsilon_at(t)
        actor = learners.get(role)
        if actor is not None:
            rng = streams.protagonist_actions if role is AgentRole.PROTAGONIST else streams.perturber_actions
            matrix = q_all_heads(actor.net, obs.vector)
            action = choose_action(matrix, role, actor.head, actor.spec.risk, eps, rng)
            tally.variance_sum += float(variance_q(matrix)[action])
            tally.variance_count += 1
        else:
            action = int(streams.perturber_actions.integers(NUM_ACTIONS))

        next_obs, rewards, done = env.step(action)
        tr = Transition(obs.vector, action, rewards.total, next_obs.vector, done, role, t)
        next_role = None if done else active_agent(t + 1, schedule)
        for item in tracker.record(tr, next_role):
            owner = learners.get(item.role)
            if owner is not None:
                owner.buffer.add(item)

        losses: Dict[AgentRole, Optional[float]] = {r: None for r in AgentRole}
        if t % cfg.train_freq == 0 and t >= cfg.learning_starts:
            for learner in learners.values():
                if len(learner.buffer) == 0:
                    continue
                losses[learner.role] = learner.update(cfg, streams)
                last_loss[learner.role] = losses[learner.role]
        if t > 0 and t % cfg.target_update_freq == 0:
            for learner in learners.values():
                sync_target(learner.net, learner.target)

        tally.steps += 1
        tally.adversary_steps += int(role is AgentRole.ADVERSARY)
        tally.reward_total += rewards.total
        tally.progress_total += rewards.progress_total
        tally.progress_pure += rewards.progress_pure
        tally.catastrophe_reward += rewards.catastrophe
        tally.catastrophes += rewards.C

        result.metrics.append(MetricsRow(
            t=t,
            episode=episode,
            acting_role=role.value,
            eps=eps,
            reward_total=rewards.total,
            reward_progress_total=rewards.progress_total,
            reward_progress_pure=rewards.progress_pure,
            catastrophes_this_episode=tally.catastrophes,
            loss_P=losses[AgentRole.PROTAGONIST],
            loss_A=losses[AgentRole.ADVERSARY],
            mean_variance_selected_actions=tally.mean_variance,
        ))
        result.global_step = t + 1

        if done:
            result.metrics.append_episode(EpisodeSummary(
                episode=episode,
                end_t=t,
                steps=tally.steps,
                adversary_steps=tally.adversary_steps,
                reward_total=tally.reward_total,
                progress_total=tally.progress_total,
                progress_pure=tally.progress_pure,
                catastrophe_reward=tally.catastrophe_reward,
                catastrophes=tally.catastrophes,
            ))
            episode += 1
            if episode % cfg.log_every_episodes == 0:
                logger.info(format_episode_log(
                    t + 1, eps, result.metrics.recent_episodes(cfg.log_every_episodes),
                    last_loss[AgentRole.PROTAGONIST], last_loss[AgentRole.ADVERSARY],
                ))
            tally = _EpisodeTally()
            tracker.clear()
            obs = env.reset()
            for learner in learners.values():
                learner.head = int(streams.heads.integers(learner.spec.k))
        else:
            obs = next_obs

        if on_checkpoint is not None and cfg.checkpoint_every and (t + 1) % cfg.checkpoint_every == 0:
            on_checkpoint(t + 1, result)

    logger.info(f"Training finished after {result.global_step} steps and {episode} episodes")
    return result
