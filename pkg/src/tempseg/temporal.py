"""Cross-frame mechanisms, each with a hand-rolled backward pass:

- global channel attention: a sigmoid mask over current-frame channels derived
  from max-pooled previous-frame features;
- variation-aware interpolation: kNN-weighted aggregation of previous-frame
  features concatenated with their difference to the current feature;
- the voxel-point refiner: a directed previous-to-current kNN graph at point
  resolution whose graph convolution residually adjusts per-point logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import InputError, StructuralError
from .geometry import NeighborSet, interpolation_weights
from .nn import Mlp, MlpCache, make_mlp

PROB_ROW_TOL = 1e-6


# ---------------------------------------------------------------------------
# Cross-frame global attention
# ---------------------------------------------------------------------------

@dataclass
class AttentionCache:
    mlp_cache: MlpCache
    mask: np.ndarray
    argmax_rows: np.ndarray
    features_current: np.ndarray


def cross_frame_attention(
    features_current: np.ndarray,
    features_previous: np.ndarray,
    mlp: Mlp,
) -> tuple[np.ndarray, AttentionCache]:
    """Scale current channels by sigmoid(mlp(channel-wise max of previous)).

    The attention MLP's final activation must be sigmoid so the mask lies in
    (0, 1).
    """
    if features_current.shape[1] != features_previous.shape[1]:
        raise StructuralError(
            f"channel mismatch: {features_current.shape[1]} vs {features_previous.shape[1]}"
        )
    if mlp.activations[-1] != "sigmoid":
        raise StructuralError("attention mlp must end in a sigmoid activation")
    pooled = features_previous.max(axis=0, keepdims=True)
    argmax_rows = features_previous.argmax(axis=0)
    mask, cache = mlp.forward(pooled)
    out = features_current * mask
    return out, AttentionCache(cache, mask, argmax_rows, features_current)


def cross_frame_attention_backward(
    mlp: Mlp, cache: AttentionCache, upstream: np.ndarray, n_previous: int
) -> tuple[np.ndarray, np.ndarray]:
    """Return gradients for (current, previous) features."""
    d_current = upstream * cache.mask
    d_mask = (upstream * cache.features_current).sum(axis=0, keepdims=True)
    d_pooled = mlp.backward(cache.mlp_cache, d_mask)
    d_previous = np.zeros((n_previous, upstream.shape[1]), dtype=upstream.dtype)
    cols = np.arange(upstream.shape[1])
    d_previous[cache.argmax_rows, cols] = d_pooled[0]
    return d_current, d_previous


# ---------------------------------------------------------------------------
# Variation-aware temporal interpolation
# ---------------------------------------------------------------------------

@dataclass
class InterpolationConfig:
    """Neighbor count, distance-weight constants, and the shared MLP mapping
    [previous feature, current - previous] to the feature width."""

    mlp: Mlp
    k: int = 5
    alpha: float = 0.5
    beta: float = 2.0
    gamma: float = 128.0

    def __post_init__(self) -> None:
        if self.mlp.in_width != 2 * self.mlp.out_width:
            raise InputError(
                f"interpolation mlp must map 2F -> F, got {self.mlp.in_width} -> {self.mlp.out_width}"
            )
        if self.k < 1:
            raise InputError(f"k must be >= 1, got {self.k}")

    @property
    def feature_width(self) -> int:
        return self.mlp.out_width


@dataclass
class InterpolationCache:
    mlp_cache: MlpCache
    indices: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    n_previous: int
    feature_width: int


def temporal_interpolation(
    neighbors: NeighborSet,
    features_previous: np.ndarray,
    features_current: np.ndarray,
    config: InterpolationConfig,
) -> tuple[np.ndarray, InterpolationCache]:
    """Weighted sum over neighbors of ReLU(mlp([f_prev, f_cur - f_prev])).

    Weights come from the neighbor set (assigned on the fly from the config's
    alpha/beta if missing); neighbors past the saturation distance contribute
    exactly zero.
    """
    f = config.feature_width
    if features_previous.shape[1] != f or features_current.shape[1] != f:
        raise StructuralError("feature widths do not match the interpolation mlp")
    if neighbors.indices.shape[0] != features_current.shape[0]:
        raise StructuralError("neighbor set rows do not match current feature rows")
    if neighbors.weights is None:
        neighbors = interpolation_weights(neighbors, config.alpha, config.beta)
    n, k = neighbors.indices.shape
    dtype = features_current.dtype

    gathered = features_previous[neighbors.indices]  # (n, k, f)
    diff = features_current[:, None, :] - gathered
    stacked = np.concatenate([gathered, diff], axis=2).reshape(n * k, 2 * f)
    values, mlp_cache = config.mlp.forward(stacked)
    weights = neighbors.weights.astype(dtype, copy=False)
    h = (weights[:, :, None] * values.reshape(n, k, f)).sum(axis=1)
    cache = InterpolationCache(
        mlp_cache, neighbors.indices, weights, values, features_previous.shape[0], f
    )
    return h, cache


def temporal_interpolation_backward(
    config: InterpolationConfig, cache: InterpolationCache, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Return gradients for (previous, current) features."""
    n, k = cache.indices.shape
    f = cache.feature_width
    d_values = (cache.weights[:, :, None] * upstream[:, None, :]).reshape(n * k, f)
    d_stacked = config.mlp.backward(cache.mlp_cache, d_values).reshape(n, k, 2 * f)
    d_gathered = d_stacked[:, :, :f] - d_stacked[:, :, f:]
    d_current = d_stacked[:, :, f:].sum(axis=1)
    d_previous = np.zeros((cache.n_previous, f), dtype=upstream.dtype)
    np.add.at(d_previous, cache.indices, d_gathered)
    return d_previous, d_current


# ---------------------------------------------------------------------------
# Temporal graph over continuous coordinates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TemporalGraph:
    """Directed previous-to-current kNN edges at continuous point resolution.

    ``position_weights`` holds 1 - |tanh(offset)| per axis, each component in
    (0, 1]; ``offsets`` are the raw previous-minus-current displacements in
    meters.
    """

    indices: np.ndarray
    offsets: np.ndarray
    position_weights: np.ndarray
    k: int
    shortfall: int = 0

    @property
    def num_points(self) -> int:
        return self.indices.shape[0]

    @property
    def k_effective(self) -> int:
        return self.indices.shape[1]


def build_temporal_graph(
    coords_current: np.ndarray, coords_previous: np.ndarray, k: int
) -> TemporalGraph:
    """Exact-Euclid kNN from previous points to every current point.

    The search runs on continuous (not voxelized) coordinates; equal distances
    are ordered by the smaller previous index.
    """
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    cur = np.asarray(coords_current, dtype=np.float64)
    prev = np.asarray(coords_previous, dtype=np.float64)
    if prev.shape[0] == 0:
        raise StructuralError("previous frame is empty; caller must substitute the frame itself")
    if cur.shape[0] == 0:
        raise InputError("current frame is empty")
    k_eff = min(k, prev.shape[0])
    tree = cKDTree(prev, balanced_tree=False, compact_nodes=False)
    dist, idx = tree.query(cur, k=k_eff, workers=-1)
    if k_eff == 1:
        dist = dist[:, None]
        idx = idx[:, None]
    idx = idx.astype(np.int64, copy=False)
    # Enforce the (distance, index) tie order within each row; rows come back
    # distance-sorted already, so a pass is only needed when exact ties exist.
    if k_eff > 1 and not (np.diff(dist, axis=1) > 0).all():
        n = cur.shape[0]
        rows = np.repeat(np.arange(n), k_eff)
        order = np.lexsort((idx.ravel(), dist.ravel(), rows)).reshape(n, k_eff)
        order -= (np.arange(n) * k_eff)[:, None]
        idx = np.take_along_axis(idx, order, axis=1)
    offsets = prev[idx]
    offsets -= cur[:, None, :]
    # tanh rounds to exactly 1 beyond ~19 m; keep the weights strictly positive.
    position_weights = np.tanh(offsets)
    np.abs(position_weights, out=position_weights)
    np.subtract(1.0, position_weights, out=position_weights)
    np.maximum(position_weights, np.finfo(np.float64).tiny, out=position_weights)
    return TemporalGraph(idx, offsets, position_weights, k=k, shortfall=k - k_eff)


# ---------------------------------------------------------------------------
# Temporal voxel-point refiner
# ---------------------------------------------------------------------------

@dataclass
class RefinerParams:
    """Edge, message, and output MLPs of the point-level refiner.

    The output MLP's final layer is zero-initialized so a fresh refiner is an
    exact identity on the logits.
    """

    edge: Mlp
    message: Mlp
    output: Mlp
    k: int = 5

    def __post_init__(self) -> None:
        f = self.edge.out_width
        if self.edge.in_width != 3:
            raise InputError("edge mlp must take 3 relative position weights")
        if self.message.out_width != f or self.output.in_width != f:
            raise InputError("edge, message, and output widths disagree")
        if self.message.in_width != 2 * self.output.out_width:
            raise InputError("message mlp must take [prev probs, current - prev] (width 2C)")
        if self.edge.activations[-1] != "tanh":
            raise InputError("edge mlp must end in tanh")

    @property
    def feature_width(self) -> int:
        return self.edge.out_width

    @property
    def num_classes(self) -> int:
        return self.output.out_width

    @property
    def num_parameters(self) -> int:
        return sum(g.num_parameters for g in self.groups())

    def groups(self) -> list[Mlp]:
        return [self.edge, self.message, self.output]

    def params(self):
        return [p for g in self.groups() for p in g.params()]

    def clone(self, dtype=None) -> "RefinerParams":
        return RefinerParams(
            self.edge.clone(dtype), self.message.clone(dtype), self.output.clone(dtype), self.k
        )


def make_refiner(
    feature_width: int,
    num_classes: int,
    rng: np.random.Generator,
    hidden: int = 16,
    k: int = 5,
    dtype=np.float32,
) -> RefinerParams:
    edge = make_mlp([3, hidden, feature_width], ["relu", "tanh"], rng, dtype, name="refiner.edge")
    message = make_mlp(
        [2 * num_classes, hidden, feature_width], ["relu", "identity"], rng, dtype,
        name="refiner.message",
    )
    output = make_mlp(
        [feature_width, num_classes], ["identity"], rng, dtype,
        zero_init_final=True, name="refiner.output",
    )
    return RefinerParams(edge, message, output, k=k)


def _check_prob_rows(name: str, probs: np.ndarray) -> None:
    sums = probs.sum(axis=1)
    bad = np.abs(sums - 1.0) > PROB_ROW_TOL
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise InputError(f"{name} row {row} sums to {sums[row]:.8f}, not 1 within {PROB_ROW_TOL}")


@dataclass
class RefinerCache:
    graph: TemporalGraph
    edge_cache: MlpCache
    message_cache: MlpCache
    output_cache: MlpCache
    edge_out: np.ndarray
    message_out: np.ndarray
    argmax: np.ndarray
    n_previous: int


@dataclass
class RefinerInputGrads:
    logits_current: np.ndarray
    features_current: np.ndarray
    probs_current: np.ndarray
    probs_previous: np.ndarray


def _apply_mlp_fast(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    """Forward without cache, reusing buffers where possible."""
    a = x
    for w, b, tag in zip(mlp.weights, mlp.biases, mlp.activations):
        z = a @ w.value
        z += b.value
        if tag == "relu":
            np.maximum(z, 0, out=z)
        elif tag == "tanh":
            np.tanh(z, out=z)
        elif tag == "sigmoid":
            np.negative(z, out=z)
            np.exp(z, out=z)
            z += 1.0
            np.reciprocal(z, out=z)
        a = z
    return a


def refine_predictions(
    graph: TemporalGraph,
    probs_previous: np.ndarray,
    probs_current: np.ndarray,
    logits_current: np.ndarray,
    features_current: np.ndarray,
    params: RefinerParams,
    want_cache: bool = True,
    chunk_rows: int = 16384,
) -> tuple[np.ndarray, Optional[RefinerCache]]:
    """Residually refine per-point logits with previous-frame predictions.

    Per edge: weight = tanh(mlp(position weights)); message = weight *
    mlp([prev probs, current - prev probs]); per point the channel-wise max of
    its messages is added to the decoder feature, and the output MLP's result
    is added to the raw logits.

    With ``want_cache=False`` the computation streams over row chunks and no
    backward is possible (inference/benchmark path).
    """
    n = graph.num_points
    c = params.num_classes
    f = params.feature_width
    if probs_current.shape != (n, c) or logits_current.shape != (n, c):
        raise StructuralError("current probabilities/logits do not match graph size")
    if features_current.shape != (n, f):
        raise StructuralError("decoder features do not match the refiner feature width")
    if probs_previous.ndim != 2 or probs_previous.shape[1] != c:
        raise StructuralError("previous probabilities have wrong width")
    if graph.indices.max(initial=-1) >= probs_previous.shape[0]:
        raise StructuralError("graph references points beyond the previous frame")
    _check_prob_rows("previous probabilities", probs_previous)
    _check_prob_rows("current probabilities", probs_current)

    dtype = params.output.dtype
    k = graph.k_effective
    yp_all = probs_previous.astype(dtype, copy=False)
    yc = probs_current.astype(dtype, copy=False)
    pos_w = graph.position_weights.astype(dtype, copy=False)

    if want_cache:
        d = pos_w.reshape(n * k, 3)
        edge_out, edge_cache = params.edge.forward(d)
        yp = yp_all[graph.indices]
        msg_in = np.concatenate([yp, yc[:, None, :] - yp], axis=2).reshape(n * k, 2 * c)
        message_out, message_cache = params.message.forward(msg_in)
        m = (edge_out * message_out).reshape(n, k, f)
        argmax = m.argmax(axis=1)
        agg = np.take_along_axis(m, argmax[:, None, :], axis=1)[:, 0, :]
        fprime = features_current.astype(dtype, copy=False) + agg
        delta, output_cache = params.output.forward(fprime)
        refined = logits_current.astype(dtype, copy=False) + delta
        cache = RefinerCache(
            graph, edge_cache, message_cache, output_cache,
            edge_out, message_out, argmax, probs_previous.shape[0],
        )
        return refined, cache

    refined = np.empty((n, c), dtype=dtype)
    feats = features_current.astype(dtype, copy=False)
    logits = logits_current.astype(dtype, copy=False)
    for lo in range(0, n, chunk_rows):
        hi = min(lo + chunk_rows, n)
        rows = hi - lo
        e = _apply_mlp_fast(params.edge, pos_w[lo:hi].reshape(rows * k, 3))
        yp = yp_all[graph.indices[lo:hi]]
        msg_in = np.concatenate([yp, yc[lo:hi, None, :] - yp], axis=2).reshape(rows * k, 2 * c)
        m = _apply_mlp_fast(params.message, msg_in)
        m *= e
        agg = m.reshape(rows, k, f).max(axis=1)
        agg += feats[lo:hi]
        refined[lo:hi] = logits[lo:hi] + _apply_mlp_fast(params.output, agg)
    return refined, None


def refine_predictions_backward(
    params: RefinerParams, cache: RefinerCache, upstream: np.ndarray
) -> RefinerInputGrads:
    """Accumulate refiner parameter gradients; return input gradients."""
    n = cache.graph.num_points
    k = cache.graph.k_effective
    f = params.feature_width
    c = params.num_classes
    d_fprime = params.output.backward(cache.output_cache, upstream)
    d_m = np.zeros((n, k, f), dtype=upstream.dtype)
    np.put_along_axis(d_m, cache.argmax[:, None, :], d_fprime[:, None, :], axis=1)
    d_m = d_m.reshape(n * k, f)
    d_edge = d_m * cache.message_out
    d_message = d_m * cache.edge_out
    params.edge.backward(cache.edge_cache, d_edge)  # position weights are constants
    d_msg_in = params.message.backward(cache.message_cache, d_message).reshape(n, k, 2 * c)
    d_yp = d_msg_in[:, :, :c] - d_msg_in[:, :, c:]
    d_probs_current = d_msg_in[:, :, c:].sum(axis=1)
    d_probs_previous = np.zeros((cache.n_previous, c), dtype=upstream.dtype)
    np.add.at(d_probs_previous, cache.graph.indices, d_yp)
    return RefinerInputGrads(
        logits_current=upstream.copy(),
        features_current=d_fprime,
        probs_current=d_probs_current,
        probs_previous=d_probs_previous,
    )
