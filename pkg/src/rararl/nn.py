"""
Dense network engine

Fully connected ReLU networks on float64 numpy arrays with exact manual
backpropagation, an Adam optimizer and a central-difference gradient oracle.
Inputs may be a single vector ``(d,)`` or a batch ``(B, d)``; gradients of a
batch are summed over its rows.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import CacheError, NumericError, ShapeError

logger = logging.getLogger(__name__)


# =====================================
# Network
# =====================================

@dataclass(eq=False)
class DenseNet:
    """ReLU on every hidden layer, identity (or ReLU when ``output_relu``) on the output."""
    layer_dims: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    output_relu: bool = False
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2 or any(d <= 0 for d in self.layer_dims):
            raise ShapeError(f"layer_dims must hold at least two positive sizes, got {self.layer_dims}")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("one weight matrix and one bias vector per layer required")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_dims[l + 1], self.layer_dims[l])
            if w.shape != expected or b.shape != (self.layer_dims[l + 1],):
                raise ShapeError(
                    f"layer {l}: weight {w.shape} / bias {b.shape}, expected {expected} / ({expected[0]},)"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericError("non-finite parameter", layer_index=l)

    @classmethod
    def initialize(
        cls,
        layer_dims: Sequence[int],
        rng: np.random.Generator,
        output_relu: bool = False,
    ) -> "DenseNet":
        """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(list(layer_dims), weights, biases, output_relu=output_relu)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def num_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "DenseNet":
        return DenseNet(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            output_relu=self.output_relu,
        )

    def same_shape(self, other: "DenseNet") -> bool:
        return self.layer_dims == other.layer_dims and self.output_relu == other.output_relu

    def copy_from(self, other: "DenseNet") -> None:
        """Overwrite parameters in place with ``other``'s values."""
        if not self.same_shape(other):
            raise ShapeError(f"cannot copy {other.layer_dims} into {self.layer_dims}")
        for l in range(self.num_layers):
            self.weights[l][...] = other.weights[l]
            self.biases[l][...] = other.biases[l]
        self.version += 1

    def parameters_equal(self, other: "DenseNet") -> bool:
        """Bitwise parameter equality."""
        if not self.same_shape(other):
            return False
        return all(
            np.array_equal(a, b) for a, b in zip(self.weights + self.biases, other.weights + other.biases)
        )


@dataclass(eq=False)
class ForwardCache:
    """Layer activations kept by ``forward`` for ``backward``."""
    owner_id: int
    version: int
    activations: List[np.ndarray]  # input of every layer, 2-D
    pre_activations: List[np.ndarray]
    batched: bool


def _as_batch(x: np.ndarray, width: int, what: str) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim not in (1, 2) or x.shape[-1] != width:
        raise ShapeError(f"{what} has shape {x.shape}, expected (..., {width})")
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite {what}")
    return (x if batched else x[None, :]), batched


def forward(net: DenseNet, x: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """Run ``x`` through ``net``; returns the output and the cache for ``backward``."""
    a, batched = _as_batch(x, net.input_dim, "input")
    activations, pre_activations = [], []
    last = net.num_layers - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        activations.append(a)
        z = a @ w.T + b
        pre_activations.append(z)
        a = np.maximum(z, 0.0) if (l < last or net.output_relu) else z
    cache = ForwardCache(id(net), net.version, activations, pre_activations, batched)
    return (a if batched else a[0]), cache


# =====================================
# Gradients
# =====================================

@dataclass(eq=False)
class GradientSet:
    """Per-parameter gradients, shape-congruent with one DenseNet."""
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    input_grad: Optional[np.ndarray] = None

    @classmethod
    def zeros_like(cls, net: DenseNet) -> "GradientSet":
        return cls([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])

    def arrays(self) -> List[np.ndarray]:
        return self.weights + self.biases

    def matches(self, net: DenseNet) -> bool:
        return (
            len(self.weights) == net.num_layers
            and all(g.shape == w.shape for g, w in zip(self.weights, net.weights))
            and all(g.shape == b.shape for g, b in zip(self.biases, net.biases))
        )

    def scale(self, factor: float) -> None:
        for g in self.arrays():
            g *= factor

    def add(self, other: "GradientSet") -> None:
        for g, o in zip(self.arrays(), other.arrays()):
            g += o

    def squared_norm(self) -> float:
        return float(sum(np.sum(g * g) for g in self.arrays()))

    def is_zero(self) -> bool:
        return all(not np.any(g) for g in self.arrays())

    def copy(self) -> "GradientSet":
        return GradientSet(
            [g.copy() for g in self.weights],
            [g.copy() for g in self.biases],
            None if self.input_grad is None else self.input_grad.copy(),
        )


def backward(net: DenseNet, cache: ForwardCache, grad_output: np.ndarray) -> GradientSet:
    """Exact gradients of ``sum(output * grad_output)`` w.r.t. every parameter and the input."""
    if cache.owner_id != id(net) or cache.version != net.version:
        raise CacheError("forward cache does not belong to this network state")
    if len(cache.activations) != net.num_layers:
        raise CacheError("forward cache depth does not match the network")
    delta, batched = _as_batch(grad_output, net.output_dim, "grad_output")
    if batched != cache.batched or delta.shape[0] != cache.activations[0].shape[0]:
        raise CacheError("grad_output batch does not match the cached forward pass")

    grads = GradientSet.zeros_like(net)
    last = net.num_layers - 1
    for l in range(last, -1, -1):
        if l < last or net.output_relu:
            delta = delta * (cache.pre_activations[l] > 0.0)
        grads.weights[l] = delta.T @ cache.activations[l]
        grads.biases[l] = delta.sum(axis=0)
        delta = delta @ net.weights[l]
    grads.input_grad = delta if batched else delta[0]
    return grads


def clip_global_norm(grad_sets: Sequence[GradientSet], max_norm: float) -> float:
    """Scale all sets together so their joint L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = float(np.sqrt(sum(g.squared_norm() for g in grad_sets)))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for g in grad_sets:
            g.scale(factor)
    return norm


def finite_diff_grad(
    net: DenseNet,
    x: np.ndarray,
    grad_output: np.ndarray,
    h: float = 1e-5,
) -> GradientSet:
    """Central-difference estimate of ``backward(net, forward(net, x)[1], grad_output)``."""
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")
    nudged = net.copy()
    g_out = np.asarray(grad_output, dtype=np.float64)

    def objective() -> float:
        out, _ = forward(nudged, x)
        return float(np.sum(out * g_out))

    grads = GradientSet.zeros_like(net)
    for params, estimates in zip(nudged.weights + nudged.biases, grads.arrays()):
        flat_p = params.reshape(-1)
        flat_e = estimates.reshape(-1)
        for i in range(flat_p.size):
            original = flat_p[i]
            flat_p[i] = original + h
            f_plus = objective()
            flat_p[i] = original - h
            f_minus = objective()
            flat_p[i] = original
            flat_e[i] = (f_plus - f_minus) / (2.0 * h)
    return grads


# =====================================
# Adam
# =====================================

@dataclass(eq=False)
class AdamState:
    """First/second moment accumulators for one DenseNet."""
    m: GradientSet
    v: GradientSet
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_num: float = 1e-8

    @classmethod
    def for_net(cls, net: DenseNet, beta1: float = 0.9, beta2: float = 0.999, epsilon_num: float = 1e-8) -> "AdamState":
        return cls(GradientSet.zeros_like(net), GradientSet.zeros_like(net), 0, beta1, beta2, epsilon_num)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.beta1, self.beta2, self.epsilon_num)


def adam_step(net: DenseNet, state: AdamState, grads: GradientSet, lr: float) -> Tuple[DenseNet, AdamState]:
    """One bias-corrected Adam update, in place. An all-zero gradient set leaves parameters untouched."""
    if not (grads.matches(net) and state.m.matches(net) and state.v.matches(net)):
        raise ShapeError("gradient / optimizer state shapes do not match the network")
    for l in range(net.num_layers):
        if not (np.all(np.isfinite(grads.weights[l])) and np.all(np.isfinite(grads.biases[l]))):
            raise NumericError("non-finite gradient", layer_index=l)

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    if grads.is_zero():
        for m, v in zip(state.m.arrays(), state.v.arrays()):
            m *= b1
            v *= b2
        return net, state

    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    params = net.weights + net.biases
    for p, g, m, v in zip(params, grads.arrays(), state.m.arrays(), state.v.arrays()):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon_num)
    net.version += 1
    return net, state
