"""Minimal differentiable kernels: MLPs with explicit backward passes, a focal
loss with exact logit gradients, and Adam.

Everything is plain numpy. Training math runs in float32; every container can
be cloned to a float64 twin for finite-difference gradient checking, and the
kernels follow their parameter dtype throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DivergenceError, InputError, StructuralError

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")


class Param:
    """One parameter tensor with its gradient buffer and Adam moments."""

    __slots__ = ("name", "value", "grad", "m", "v")

    def __init__(self, value: np.ndarray, name: str = "") -> None:
        self.name = name
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad.fill(0)

    def clone(self, dtype=None) -> "Param":
        return Param(self.value.astype(dtype or self.value.dtype), self.name)


class ParamGroup:
    """Base for modules owning parameters; tracks the Adam step counter and a
    version stamp used to detect stale forward caches."""

    def __init__(self) -> None:
        self.step = 0
        self.version = 0

    def params(self) -> list[Param]:
        raise NotImplementedError

    def zero_grads(self) -> None:
        for p in self.params():
            p.zero_grad()

    @property
    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.params())


def _activate(z: np.ndarray, tag: str) -> np.ndarray:
    if tag == "relu":
        return np.maximum(z, 0)
    if tag == "tanh":
        return np.tanh(z)
    if tag == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if tag == "identity":
        return z
    raise InputError(f"unknown activation {tag!r}")


def _activate_grad(z: np.ndarray, a: np.ndarray, tag: str) -> np.ndarray:
    if tag == "relu":
        return (z > 0).astype(a.dtype)
    if tag == "tanh":
        return 1.0 - a * a
    if tag == "sigmoid":
        return a * (1.0 - a)
    if tag == "identity":
        return np.ones_like(a)
    raise InputError(f"unknown activation {tag!r}")


@dataclass
class MlpCache:
    """Intermediate activations retained by a forward pass for backward."""

    owner: "Mlp"
    version: int
    x0: np.ndarray
    preacts: list[np.ndarray]
    acts: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.acts[-1]

    def layer_input(self, i: int) -> np.ndarray:
        return self.x0 if i == 0 else self.acts[i - 1]


class Mlp(ParamGroup):
    """Affine-then-activation stack with hand-rolled backward.

    Layer i maps width sizes[i] to sizes[i+1]; weights are stored (in, out) so
    the forward pass is x @ W + b.
    """

    def __init__(self, weights: Sequence[Param], biases: Sequence[Param], activations: Sequence[str]) -> None:
        super().__init__()
        if not (len(weights) == len(biases) == len(activations)):
            raise InputError("mismatched layer lists")
        for tag in activations:
            if tag not in ACTIVATIONS:
                raise InputError(f"unknown activation {tag!r}")
        for i in range(len(weights) - 1):
            if weights[i].value.shape[1] != weights[i + 1].value.shape[0]:
                raise InputError(
                    f"layer {i} output width {weights[i].value.shape[1]} != "
                    f"layer {i + 1} input width {weights[i + 1].value.shape[0]}"
                )
        self.weights = list(weights)
        self.biases = list(biases)
        self.activations = list(activations)

    @property
    def in_width(self) -> int:
        return self.weights[0].value.shape[0]

    @property
    def out_width(self) -> int:
        return self.weights[-1].value.shape[1]

    @property
    def dtype(self):
        return self.weights[0].value.dtype

    def params(self) -> list[Param]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
        x = np.asarray(x)
        if x.ndim != 2:
            raise InputError(f"mlp input must be 2-d, got shape {x.shape}")
        if x.shape[1] != self.in_width:
            raise StructuralError(
                f"mlp input width {x.shape[1]} != expected {self.in_width}"
            )
        x = x.astype(self.dtype, copy=False)
        preacts: list[np.ndarray] = []
        acts: list[np.ndarray] = []
        a = x
        for w, b, tag in zip(self.weights, self.biases, self.activations):
            z = a @ w.value + b.value
            a = _activate(z, tag)
            preacts.append(z)
            acts.append(a)
        return a, MlpCache(self, self.version, x, preacts, acts)

    def backward(self, cache: MlpCache, upstream: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; return the input gradient."""
        if cache.owner is not self or cache.version != self.version:
            raise StructuralError("stale cache: parameters changed since forward")
        d = np.asarray(upstream).astype(self.dtype, copy=False)
        if d.shape != cache.output.shape:
            raise StructuralError(
                f"upstream gradient shape {d.shape} != output shape {cache.output.shape}"
            )
        for i in range(len(self.weights) - 1, -1, -1):
            dz = d * _activate_grad(cache.preacts[i], cache.acts[i], self.activations[i])
            layer_in = cache.layer_input(i)
            self.weights[i].grad += layer_in.T @ dz
            self.biases[i].grad += dz.sum(axis=0)
            d = dz @ self.weights[i].value.T
        return d

    def clone(self, dtype=None) -> "Mlp":
        return Mlp(
            [w.clone(dtype) for w in self.weights],
            [b.clone(dtype) for b in self.biases],
            list(self.activations),
        )


def make_mlp(
    sizes: Sequence[int],
    activations: Sequence[str],
    rng: np.random.Generator,
    dtype=np.float32,
    zero_init_final: bool = False,
    name: str = "mlp",
) -> Mlp:
    """Build an MLP with Kaiming-uniform init for ReLU layers and
    Xavier-uniform for the rest; biases start at zero.

    ``zero_init_final`` zeroes the last layer's weights so a residual head
    starts as an exact identity.
    """
    if len(activations) != len(sizes) - 1:
        raise InputError("need one activation per layer")
    weights, biases = [], []
    for i, tag in enumerate(activations):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        if zero_init_final and i == len(activations) - 1:
            w = np.zeros((fan_in, fan_out))
        else:
            if tag == "relu":
                bound = np.sqrt(6.0 / fan_in)
            else:
                bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        weights.append(Param(w.astype(dtype), f"{name}.layer{i}.weight"))
        biases.append(Param(np.zeros(fan_out, dtype=dtype), f"{name}.layer{i}.bias"))
    return Mlp(weights, biases, activations)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax computed in float64 so each row sums to 1 within 1e-9."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_backward(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """Gradient of row-wise softmax: y * (dy - (dy . y))."""
    inner = np.einsum("ij,ij->i", dprobs, probs)[:, None]
    return probs * (dprobs - inner)


@dataclass(frozen=True)
class FocalLossConfig:
    """Focal loss hyperparameters. ``focusing`` is the exponent on (1 - p_t);
    zero recovers plain cross-entropy."""

    focusing: float = 2.0
    class_weights: Optional[np.ndarray] = None
    ignore_ids: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        if self.focusing < 0:
            raise InputError(f"focusing exponent must be >= 0, got {self.focusing}")


@dataclass
class FocalLossResult:
    loss: float
    grad: np.ndarray
    valid_count: int

    @property
    def all_ignored(self) -> bool:
        return self.valid_count == 0


def focal_loss(logits: np.ndarray, targets: np.ndarray, config: FocalLossConfig) -> FocalLossResult:
    """Mean over non-ignored points of -(1 - p_t)^focusing * log(p_t), with
    exact gradients with respect to the logits.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n, c = logits.shape
    if targets.shape != (n,):
        raise InputError(f"targets shape {targets.shape} != ({n},)")
    valid = np.ones(n, dtype=bool)
    for ig in config.ignore_ids:
        valid &= targets != ig
    if ((targets < 0) | (targets >= c))[valid].any():
        raise InputError("target id outside class range")
    if config.class_weights is not None and len(config.class_weights) != c:
        raise InputError("class_weights length must equal class count")

    grad = np.zeros_like(logits)
    n_valid = int(valid.sum())
    if n_valid == 0:
        return FocalLossResult(0.0, grad, 0)

    z = logits[valid]
    t = targets[valid]
    logp = log_softmax(z)
    p = np.exp(logp)
    rows = np.arange(len(t))
    logpt = logp[rows, t]
    pt = p[rows, t]
    s = 1.0 - pt

    weights = np.ones(len(t), dtype=z.dtype)
    if config.class_weights is not None:
        weights = np.asarray(config.class_weights, dtype=z.dtype)[t]

    g = config.focusing
    losses = -weights * s**g * logpt
    loss = float(losses.sum() / n_valid)

    # d/dz_j of -(1-p_t)^g log p_t is (delta_tj - p_j) * coef with
    # coef = g * p_t * (1-p_t)^(g-1) * log p_t - (1-p_t)^g.
    if g > 0:
        pow_term = np.zeros_like(s)
        pos = s > 0.0  # limit of the product at s=0 is 0 for every g > 0
        pow_term[pos] = s[pos] ** (g - 1.0)
        first = g * pt * pow_term * logpt
    else:
        first = np.zeros_like(pt)
    coef = first - s**g
    delta = np.zeros_like(z)
    delta[rows, t] = 1.0
    grad_valid = (weights * coef)[:, None] * (delta - p) / n_valid
    grad[valid] = grad_valid.astype(logits.dtype, copy=False)
    return FocalLossResult(loss, grad, n_valid)


def adam_step(
    group: ParamGroup,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Standard Adam with bias correction over one parameter group.

    Aborts without touching any parameter if a gradient is non-finite.
    """
    for p in group.params():
        if not np.isfinite(p.grad).all():
            raise DivergenceError(f"non-finite gradient in parameter {p.name or '<unnamed>'}")
    group.step += 1
    group.version += 1
    t = group.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p in group.params():
        p.m *= beta1
        p.m += (1.0 - beta1) * p.grad
        p.v *= beta2
        p.v += (1.0 - beta2) * np.square(p.grad)
        m_hat = p.m / bc1
        v_hat = p.v / bc2
        p.value -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.value.dtype, copy=False)


def adam_step_all(groups: Iterable[ParamGroup], **kwargs) -> None:
    for g in groups:
        adam_step(g, **kwargs)


def zero_grads_all(groups: Iterable[ParamGroup]) -> None:
    for g in groups:
        g.zero_grads()
