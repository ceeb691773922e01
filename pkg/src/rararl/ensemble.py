"""
Ensemble Q-network

Shared ReLU trunk feeding k single-layer value heads. Head disagreement
(population variance over the k heads) is the risk estimate: the protagonist
subtracts it from its action values, the adversary adds it.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import NumericError, ShapeError
from .nn import AdamState, DenseNet, GradientSet, adam_step, backward, clip_global_norm, forward

if TYPE_CHECKING:
    from .replay import NStepTransition

logger = logging.getLogger(__name__)


class AgentRole(str, Enum):
    """Who controls the car on a given step."""
    PROTAGONIST = "protagonist"
    ADVERSARY = "adversary"

    @property
    def reward_sign(self) -> float:
        """The adversary is paid the negative of the environment reward."""
        return 1.0 if self is AgentRole.PROTAGONIST else -1.0

    @property
    def other(self) -> "AgentRole":
        return AgentRole.ADVERSARY if self is AgentRole.PROTAGONIST else AgentRole.PROTAGONIST


class RiskConfig(BaseModel):
    """Variance weights of the risk-modified action values."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    lambda_p: float = Field(0.1, ge=0.0)
    lambda_a: float = Field(0.1, ge=0.0)
    zero_sum: bool = False

    @model_validator(mode="after")
    def _zero_sum_needs_equal_lambdas(self):
        if self.zero_sum and self.lambda_a != self.lambda_p:
            raise ValueError(
                f"zero_sum requires lambda_a == lambda_p (got {self.lambda_a} vs {self.lambda_p})"
            )
        return self


@dataclass(eq=False)
class BootstrapMask:
    """Per-head sample weights for one transition."""
    counts: np.ndarray

    @property
    def k(self) -> int:
        return int(self.counts.shape[0])

    def active_heads(self) -> np.ndarray:
        return np.flatnonzero(self.counts)


# =====================================
# Network
# =====================================

@dataclass(eq=False)
class EnsembleAdam:
    """Adam state for the trunk and each head."""
    trunk: AdamState
    heads: List[AdamState]

    @classmethod
    def for_network(cls, net: "EnsembleQNetwork") -> "EnsembleAdam":
        return cls(AdamState.for_net(net.trunk), [AdamState.for_net(h) for h in net.heads])

    def copy(self) -> "EnsembleAdam":
        return EnsembleAdam(self.trunk.copy(), [s.copy() for s in self.heads])


@dataclass(eq=False)
class EnsembleQNetwork:
    trunk: DenseNet
    heads: List[DenseNet]
    optimizer: Optional[EnsembleAdam] = field(default=None)

    def __post_init__(self):
        if not self.heads:
            raise ShapeError("an ensemble needs at least one head")
        first = self.heads[0]
        for i, head in enumerate(self.heads):
            if head.input_dim != self.trunk.output_dim:
                raise ShapeError(f"head {i} expects {head.input_dim} features, trunk emits {self.trunk.output_dim}")
            if head.layer_dims != first.layer_dims:
                raise ShapeError(f"head {i} has dims {head.layer_dims}, head 0 has {first.layer_dims}")

    @classmethod
    def create(
        cls,
        obs_dim: int,
        num_actions: int,
        k: int,
        rng: np.random.Generator,
        trunk_hidden: Sequence[int] = (64, 64),
        head_hidden: Sequence[int] = (),
        identical_heads: bool = False,
    ) -> "EnsembleQNetwork":
        if k < 1 or num_actions < 1:
            raise ShapeError(f"k and num_actions must be >= 1 (got k={k}, num_actions={num_actions})")
        trunk_dims = [obs_dim, *trunk_hidden] if trunk_hidden else [obs_dim, obs_dim]
        trunk = DenseNet.initialize(trunk_dims, rng, output_relu=True)
        head_dims = [trunk.output_dim, *head_hidden, num_actions]
        if identical_heads:
            template = DenseNet.initialize(head_dims, rng)
            heads = [template.copy() for _ in range(k)]
        else:
            heads = [DenseNet.initialize(head_dims, rng) for _ in range(k)]
        return cls(trunk, heads)

    @property
    def k(self) -> int:
        return len(self.heads)

    @property
    def num_actions(self) -> int:
        return self.heads[0].output_dim

    @property
    def obs_dim(self) -> int:
        return self.trunk.input_dim

    def networks(self) -> List[DenseNet]:
        return [self.trunk, *self.heads]

    def copy(self, with_optimizer: bool = True) -> "EnsembleQNetwork":
        opt = self.optimizer.copy() if (with_optimizer and self.optimizer is not None) else None
        return EnsembleQNetwork(self.trunk.copy(), [h.copy() for h in self.heads], opt)

    def same_shape(self, other: "EnsembleQNetwork") -> bool:
        return self.k == other.k and all(a.same_shape(b) for a, b in zip(self.networks(), other.networks()))

    def parameters_equal(self, other: "EnsembleQNetwork") -> bool:
        return self.same_shape(other) and all(
            a.parameters_equal(b) for a, b in zip(self.networks(), other.networks())
        )


# =====================================
# Value statistics
# =====================================

def q_all_heads(net: EnsembleQNetwork, obs: np.ndarray) -> np.ndarray:
    """Row i holds Q^i(s, .); a batch of observations gives shape (k, B, |A|)."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1] != net.obs_dim:
        raise ShapeError(f"observation width {obs.shape[-1]} != trunk input {net.obs_dim}")
    features, _ = forward(net.trunk, obs)
    return np.stack([forward(head, features)[0] for head in net.heads])


def mean_q(matrix: np.ndarray) -> np.ndarray:
    """Column means over heads."""
    return matrix.sum(axis=0) / matrix.shape[0]


def variance_q(matrix: np.ndarray) -> np.ndarray:
    """Population variance over heads (divisor k)."""
    centred = matrix - mean_q(matrix)
    return (centred * centred).sum(axis=0) / matrix.shape[0]


def modified_q(role: AgentRole, q: np.ndarray, var: np.ndarray, cfg: RiskConfig) -> np.ndarray:
    if np.shape(q) != np.shape(var):
        raise ShapeError(f"q {np.shape(q)} and var {np.shape(var)} differ")
    if role is AgentRole.PROTAGONIST:
        return q - cfg.lambda_p * var
    return q + cfg.lambda_a * var


def choose_action(
    matrix: np.ndarray,
    role: AgentRole,
    head_index: int,
    cfg: RiskConfig,
    epsilon: float,
    rng: np.random.Generator,
) -> int:
    """Epsilon-greedy over the risk-modified values of one head; variance uses all heads."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    k, num_actions = matrix.shape
    if not 0 <= head_index < k:
        raise ShapeError(f"head_index {head_index} outside 0..{k - 1}")
    if rng.random() < epsilon:
        return int(rng.integers(num_actions))
    values = modified_q(role, matrix[head_index], variance_q(matrix), cfg)
    return int(np.argmax(values))


def select_action(
    net: EnsembleQNetwork,
    obs: np.ndarray,
    role: AgentRole,
    head_index: int,
    cfg: RiskConfig,
    epsilon: float,
    rng: np.random.Generator,
) -> int:
    return choose_action(q_all_heads(net, obs), role, head_index, cfg, epsilon, rng)


def select_action_test(net: EnsembleQNetwork, obs: np.ndarray, role: AgentRole, cfg: RiskConfig) -> int:
    """Deterministic test-time choice from the head mean."""
    matrix = q_all_heads(net, obs)
    return int(np.argmax(modified_q(role, mean_q(matrix), variance_q(matrix), cfg)))


# =====================================
# Bootstrap masks
# =====================================

MASK_MODES = ("subset", "poisson")


def sample_masks(
    k: int,
    rate: float,
    heads_per_update: int,
    rng: np.random.Generator,
    count: int,
    mode: str = "subset",
) -> np.ndarray:
    """``count`` mask rows of shape (count, k).

    ``subset``: heads_per_update distinct heads drawn uniformly, each weighted
    1 + Poisson(rate). ``poisson``: every head weighted Poisson(rate).
    """
    if rate < 0:
        raise ValueError(f"mask rate must be >= 0, got {rate}")
    if not 1 <= heads_per_update <= k:
        raise ValueError(f"heads_per_update must be in 1..{k}, got {heads_per_update}")
    if mode == "poisson":
        return rng.poisson(rate, size=(count, k)).astype(np.int64)
    if mode != "subset":
        raise ValueError(f"unknown mask mode {mode!r}, expected one of {MASK_MODES}")
    chosen = np.argsort(rng.random((count, k)), axis=1)[:, :heads_per_update]
    counts = np.zeros((count, k), dtype=np.int64)
    np.put_along_axis(counts, chosen, 1 + rng.poisson(rate, size=(count, heads_per_update)), axis=1)
    return counts


def sample_mask(
    k: int,
    rate: float,
    heads_per_update: int,
    rng: np.random.Generator,
    mode: str = "subset",
) -> BootstrapMask:
    return BootstrapMask(sample_masks(k, rate, heads_per_update, rng, 1, mode)[0])


# =====================================
# Training
# =====================================

def bootstrap_values(target_net: EnsembleQNetwork, obs_batch: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Per-head max of plain target Q, averaged over the heads active in each row's mask.

    Rows whose mask is all zero fall back to the mean over every head.
    """
    per_head_max = q_all_heads(target_net, obs_batch).max(axis=2).T  # (B, k)
    active = (counts > 0).astype(np.float64)
    empty = active.sum(axis=1) == 0
    active[empty] = 1.0
    return (per_head_max * active).sum(axis=1) / active.sum(axis=1)


def _targets_for(batch: Sequence["NStepTransition"], counts: np.ndarray, target_net: Optional[EnsembleQNetwork]) -> np.ndarray:
    targets = np.array([np.nan if tr.target is None else tr.target for tr in batch], dtype=np.float64)
    missing = np.flatnonzero(np.isnan(targets))
    if missing.size:
        if target_net is None:
            raise ValueError("transitions without a precomputed target need a target network")
        pending = [batch[j] for j in missing]
        boot = bootstrap_values(target_net, np.stack([tr.bootstrap_obs for tr in pending]), counts[missing])
        for slot, j, tr in zip(range(len(pending)), missing, pending):
            value = tr.cumulative_reward
            if not tr.done_within_window:
                value = value + tr.gamma ** tr.horizon * boot[slot]
            targets[j] = value
    if not np.all(np.isfinite(targets)):
        raise NumericError("non-finite TD target")
    return targets


def td_gradients(
    net: EnsembleQNetwork,
    target_net: Optional[EnsembleQNetwork],
    batch: Sequence["NStepTransition"],
    masks: Sequence[BootstrapMask],
) -> Tuple[float, GradientSet, List[GradientSet]]:
    """Mask-weighted squared TD error and its gradients (no parameter change)."""
    if not batch:
        raise ValueError("td update needs a non-empty batch")
    if len(masks) != len(batch):
        raise ShapeError(f"{len(masks)} masks for {len(batch)} transitions")
    counts = np.stack([m.counts for m in masks]).astype(np.float64)
    if counts.shape[1] != net.k:
        raise ShapeError(f"masks cover {counts.shape[1]} heads, network has {net.k}")
    targets = _targets_for(batch, counts, target_net)

    size = len(batch)
    rows = np.arange(size)
    obs = np.stack([tr.obs for tr in batch])
    actions = np.array([tr.action for tr in batch], dtype=np.int64)

    features, trunk_cache = forward(net.trunk, obs)
    feature_grad = np.zeros_like(features)
    loss = 0.0
    head_grads = []
    for i, head in enumerate(net.heads):
        q, cache = forward(head, features)
        delta = q[rows, actions] - targets
        weight = counts[:, i]
        loss += float(np.sum(weight * delta * delta))
        grad_q = np.zeros_like(q)
        grad_q[rows, actions] = (2.0 * weight) * delta / size
        grads = backward(head, cache, grad_q)
        feature_grad += grads.input_grad
        head_grads.append(grads)
    trunk_grads = backward(net.trunk, trunk_cache, feature_grad)
    return loss / size, trunk_grads, head_grads


def td_update(
    net: EnsembleQNetwork,
    target_net: Optional[EnsembleQNetwork],
    batch: Sequence["NStepTransition"],
    masks: Sequence[BootstrapMask],
    gamma: Optional[float] = None,
    lr: float = 1e-4,
    max_grad_norm: float = 10.0,
) -> float:
    """One Adam step on trunk and heads; returns the mean weighted loss.

    ``gamma`` is carried by each transition; when given it must agree with them.
    """
    if gamma is not None and any(tr.gamma != gamma for tr in batch):
        raise ValueError("batch transitions were collapsed with a different gamma")
    loss, trunk_grads, head_grads = td_gradients(net, target_net, batch, masks)
    clip_global_norm([trunk_grads, *head_grads], max_grad_norm)
    if net.optimizer is None:
        net.optimizer = EnsembleAdam.for_network(net)
    adam_step(net.trunk, net.optimizer.trunk, trunk_grads, lr)
    for head, state, grads in zip(net.heads, net.optimizer.heads, head_grads):
        adam_step(head, state, grads, lr)
    return loss


def sync_target(net: EnsembleQNetwork, target_net: EnsembleQNetwork) -> None:
    if not net.same_shape(target_net):
        raise ShapeError("online and target ensembles differ in shape")
    for src, dst in zip(net.networks(), target_net.networks()):
        dst.copy_from(src)
