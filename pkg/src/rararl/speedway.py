"""
Speedway simulator

Deterministic kinematic car on a closed loop made of straight and
constant-curvature segments. Nine discrete actions (steer x throttle),
asymmetric reward with a large catastrophe penalty for stuck or damaged cars,
and observations made of four stacked feature frames.

Sign conventions: positive lateral offset ``p`` and positive heading error
``alpha`` point to the left of the road direction; positive curvature bends
the road to the left.
"""

import bisect
import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .errors import EnvUsageError

logger = logging.getLogger(__name__)

NUM_ACTIONS = 9
FRAME_DIM = 9
STACK_SIZE = 4
OBS_DIM = FRAME_DIM * STACK_SIZE

# rows: accelerate / none / decelerate, columns: left / ahead / right
_THROTTLE = (1.0, 0.0, -1.0)
_STEER = (1.0, 0.0, -1.0)
ACTION_NAMES = (
    "left+accelerate", "ahead+accelerate", "right+accelerate",
    "left", "nothing", "right",
    "left+decelerate", "ahead+decelerate", "right+decelerate",
)
DO_NOTHING = 4
AHEAD_ACCELERATE = 1
STEER_RIGHT = 5


def _default_oval() -> Tuple[Tuple[float, float], ...]:
    radius = 40.0
    arc = math.pi * radius
    return ((150.0, 0.0), (arc, 1.0 / radius), (150.0, 0.0), (arc, 1.0 / radius))


class TrackConfig(BaseModel):
    """Track geometry and vehicle/reward constants."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    # (length in metres, curvature in 1/m) per segment, driven in order and looped
    segments: Tuple[Tuple[float, float], ...] = Field(default_factory=_default_oval)
    w: float = Field(12.0, gt=0, description="road width (m)")
    wall_margin: float = Field(0.5, ge=0)
    beta: float = Field(0.025, gt=0)
    r_cat: float = Field(-2.5, lt=0)
    dt: float = Field(0.1, gt=0)
    accel: float = Field(1.0, gt=0, description="speed change per step (m/s)")
    steer: float = Field(0.1, gt=0, description="heading change per step (rad)")
    v_max: float = Field(20.0, gt=0)
    stuck_speed_fraction: float = Field(0.05, ge=0, lt=1)
    stuck_patience: int = Field(20, ge=1)
    stuck_warmup: int = Field(10, ge=0)
    max_episode_steps: int = Field(1000, ge=1)
    start_jitter: float = Field(5.0, ge=0)
    lookahead: Tuple[float, float, float] = (5.0, 15.0, 30.0)

    @field_validator("segments")
    @classmethod
    def _segments_have_length(cls, v):
        if not v:
            raise ValueError("track needs at least one segment")
        for i, (length, _) in enumerate(v):
            if not length > 0:
                raise ValueError(f"segment {i} has non-positive length {length}")
        return v

    @property
    def track_length(self) -> float:
        return _geometry(self.segments)[0][-1]

    @property
    def stuck_speed_threshold(self) -> float:
        return self.stuck_speed_fraction * self.v_max

    @property
    def wall_offset(self) -> float:
        """Lateral offset beyond which the car touches the wall."""
        return self.w / 2.0 + self.wall_margin


@lru_cache(maxsize=32)
def _geometry(segments: Tuple[Tuple[float, float], ...]) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    ends, total = [], 0.0
    for length, _ in segments:
        total += length
        ends.append(total)
    return tuple(ends), tuple(k for _, k in segments)


def curvature_at(s: float, cfg: TrackConfig) -> float:
    ends, curvatures = _geometry(cfg.segments)
    s = s % ends[-1]
    return curvatures[min(bisect.bisect_right(ends, s), len(ends) - 1)]


def decode_action(action: int) -> Tuple[float, float]:
    """Action index -> (throttle, steer) with throttle/steer in {-1, 0, +1}."""
    row, col = divmod(action, 3)
    return _THROTTLE[row], _STEER[col]


def _wrap_angle(a: float) -> float:
    a = math.remainder(a, 2.0 * math.pi)
    return math.pi if a == -math.pi else a


# =====================================
# State types
# =====================================

@dataclass(frozen=True, eq=False)
class Observation:
    """Four stacked feature frames, oldest first."""
    frames: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return self.frames.reshape(-1)


@dataclass(frozen=True, eq=False)
class TrackState:
    s_pos: float
    p: float
    heading_err: float
    v: float
    stuck_counter: int = 0
    stuck: bool = False
    damaged: bool = False
    step_count: int = 0
    done: bool = False
    frames: Tuple[np.ndarray, ...] = ()


@dataclass(frozen=True)
class RewardBreakdown:
    total: float
    progress_total: float
    progress_pure: float
    catastrophe: float
    C: int


# =====================================
# Operations
# =====================================

def frame_features(state: TrackState, cfg: TrackConfig) -> np.ndarray:
    half = cfg.wall_offset
    return np.array(
        [
            state.v / cfg.v_max,
            math.sin(state.heading_err),
            math.cos(state.heading_err),
            2.0 * state.p / cfg.w,
            (half - state.p) / cfg.w,
            (half + state.p) / cfg.w,
            *(curvature_at(state.s_pos + d, cfg) for d in cfg.lookahead),
        ],
        dtype=np.float64,
    )


def observe(state: TrackState, history: Sequence[np.ndarray], cfg: TrackConfig) -> Observation:
    """Append the newest frame to at most three prior frames, padding with the oldest."""
    frames = list(history)[-(STACK_SIZE - 1):] + [frame_features(state, cfg)]
    while len(frames) < STACK_SIZE:
        frames.insert(0, frames[0])
    stacked = np.stack(frames)
    stacked.setflags(write=False)
    return Observation(stacked)


def reset(cfg: TrackConfig, rng: np.random.Generator) -> Tuple[TrackState, Observation]:
    state = TrackState(s_pos=float(rng.uniform(0.0, cfg.start_jitter)), p=0.0, heading_err=0.0, v=0.0)
    obs = observe(state, (), cfg)
    return replace(state, frames=tuple(obs.frames)), obs


def detect_flags(state: TrackState, cfg: TrackConfig) -> Tuple[bool, bool]:
    """(stuck, damaged) for a state whose counters are already advanced."""
    damaged = abs(state.p) > cfg.wall_offset
    stuck = state.stuck_counter >= cfg.stuck_patience
    return stuck, damaged


def reward(state_after: TrackState, cfg: TrackConfig) -> RewardBreakdown:
    alive = (1 - int(state_after.stuck)) * (1 - int(state_after.damaged))
    c = math.ceil((int(state_after.stuck) + int(state_after.damaged)) / 2)
    alpha = state_after.heading_err
    heading = math.cos(alpha) - abs(math.sin(alpha))
    scale = cfg.beta * state_after.v
    progress_total = scale * (heading - 2.0 * abs(state_after.p) / cfg.w) * alive
    progress_pure = scale * heading * alive
    catastrophe = cfg.r_cat * c
    return RewardBreakdown(
        total=progress_total + catastrophe,
        progress_total=progress_total,
        progress_pure=progress_pure,
        catastrophe=catastrophe,
        C=c,
    )


def step(
    state: TrackState,
    action: int,
    cfg: TrackConfig,
) -> Tuple[TrackState, Observation, RewardBreakdown, bool]:
    if state.done:
        raise EnvUsageError("step() called on a finished episode; reset first")
    if not 0 <= action < NUM_ACTIONS:
        raise EnvUsageError(f"action {action} outside 0..{NUM_ACTIONS - 1}")
    throttle, steer = decode_action(int(action))

    v = min(max(state.v + throttle * cfg.accel, 0.0), cfg.v_max)
    road_turn = curvature_at(state.s_pos, cfg) * v * math.cos(state.heading_err) * cfg.dt
    alpha = state.heading_err + steer * cfg.steer - road_turn
    if alpha != state.heading_err:
        alpha = _wrap_angle(alpha)
    p = state.p + v * math.sin(alpha) * cfg.dt
    s_pos = state.s_pos + v * math.cos(alpha) * cfg.dt
    if not 0.0 <= s_pos < cfg.track_length:
        s_pos = s_pos % cfg.track_length
    step_count = state.step_count + 1
    slow = step_count > cfg.stuck_warmup and v < cfg.stuck_speed_threshold
    moved = replace(
        state,
        s_pos=s_pos,
        p=p,
        heading_err=alpha,
        v=v,
        stuck_counter=state.stuck_counter + 1 if slow else 0,
        step_count=step_count,
    )
    stuck, damaged = detect_flags(moved, cfg)
    moved = replace(moved, stuck=stuck, damaged=damaged)
    rewards = reward(moved, cfg)
    done = rewards.C == 1 or step_count >= cfg.max_episode_steps
    obs = observe(moved, state.frames, cfg)
    return replace(moved, done=done, frames=tuple(obs.frames)), obs, rewards, done


class SpeedwayEnv:
    """Stateful wrapper used by the trainer and the evaluation harness."""

    def __init__(self, cfg: TrackConfig, rng: Optional[np.random.Generator] = None):
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.state: Optional[TrackState] = None

    def reset(self) -> Observation:
        self.state, obs = reset(self.cfg, self.rng)
        return obs

    def step(self, action: int) -> Tuple[Observation, RewardBreakdown, bool]:
        if self.state is None:
            raise EnvUsageError("reset() must be called before step()")
        self.state, obs, rewards, done = step(self.state, action, self.cfg)
        if rewards.C:
            logger.debug(
                f"catastrophe after {ACTION_NAMES[action]} "
                f"(stuck={self.state.stuck}, damaged={self.state.damaged})"
            )
        return obs, rewards, done
