"""Sparse voxel backbone: per-voxel encoder, one submanifold 3x3x3
convolution, cross-frame attention and interpolation at the bottleneck, and a
decoder emitting per-voxel logits plus pre-logit features.

The convolution is evaluated only at occupied cells and reads only occupied
neighbors, so the occupancy pattern is preserved exactly. Both frame branches
share every weight.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InputError, StructuralError
from .frames import VoxelGrid
from .geometry import cross_frame_distances, interpolation_weights, knn_previous
from .nn import Mlp, MlpCache, Param, ParamGroup
from .temporal import (
    AttentionCache,
    InterpolationCache,
    InterpolationConfig,
    cross_frame_attention,
    cross_frame_attention_backward,
    temporal_interpolation,
    temporal_interpolation_backward,
)

# The 27 neighborhood offsets in lexicographic order; the center tap is the
# offset (0, 0, 0).
CONV_OFFSETS = np.array(sorted(itertools.product((-1, 0, 1), repeat=3)), dtype=np.int64)


class SparseConv(ParamGroup):
    """Submanifold 3x3x3 convolution followed by ReLU.

    Weights are indexed by the 27 integer offsets; missing neighbors simply do
    not contribute.
    """

    def __init__(self, weight: Param, bias: Param) -> None:
        super().__init__()
        if weight.value.ndim != 3 or weight.value.shape[0] != 27:
            raise InputError(f"conv weight must be (27, in, out), got {weight.value.shape}")
        self.weight = weight
        self.bias = bias

    @property
    def in_width(self) -> int:
        return self.weight.value.shape[1]

    @property
    def out_width(self) -> int:
        return self.weight.value.shape[2]

    @property
    def dtype(self):
        return self.weight.value.dtype

    def params(self) -> list[Param]:
        return [self.weight, self.bias]

    def clone(self, dtype=None) -> "SparseConv":
        return SparseConv(self.weight.clone(dtype), self.bias.clone(dtype))


def make_sparse_conv(width: int, rng: np.random.Generator, dtype=np.float32) -> SparseConv:
    bound = np.sqrt(6.0 / (27 * width))
    weight = rng.uniform(-bound, bound, size=(27, width, width)).astype(dtype)
    return SparseConv(
        Param(weight, "conv.weight"),
        Param(np.zeros(width, dtype=dtype), "conv.bias"),
    )


def build_neighbor_table(keys: np.ndarray) -> np.ndarray:
    """Row index of each cell's 27 neighbors (-1 where unoccupied).

    ``keys`` must be lexicographically sorted unique integer triples, as
    produced by voxelize.
    """
    n = keys.shape[0]
    mins = keys.min(axis=0)
    spans = keys.max(axis=0) - mins + 1
    shifted = keys - mins
    codes = (shifted[:, 0] * spans[1] + shifted[:, 1]) * spans[2] + shifted[:, 2]
    table = np.full((n, 27), -1, dtype=np.int64)
    for o, off in enumerate(CONV_OFFSETS):
        nb = shifted + off
        in_range = ((nb >= 0) & (nb < spans)).all(axis=1)
        nb_codes = (nb[:, 0] * spans[1] + nb[:, 1]) * spans[2] + nb[:, 2]
        pos = np.searchsorted(codes, nb_codes)
        pos_clipped = np.minimum(pos, n - 1)
        hit = in_range & (codes[pos_clipped] == nb_codes)
        table[hit, o] = pos_clipped[hit]
    return table


@dataclass
class ConvCache:
    x: np.ndarray
    table: np.ndarray
    preact: np.ndarray


def sparse_conv_forward(conv: SparseConv, x: np.ndarray, table: np.ndarray) -> tuple[np.ndarray, ConvCache]:
    x = x.astype(conv.dtype, copy=False)
    n = x.shape[0]
    z = np.broadcast_to(conv.bias.value, (n, conv.out_width)).copy()
    for o in range(27):
        rows = table[:, o]
        valid = rows >= 0
        if not valid.any():
            continue
        z[valid] += x[rows[valid]] @ conv.weight.value[o]
    out = np.maximum(z, 0)
    return out, ConvCache(x, table, z)


def sparse_conv_backward(conv: SparseConv, cache: ConvCache, upstream: np.ndarray) -> np.ndarray:
    dz = upstream * (cache.preact > 0)
    conv.bias.grad += dz.sum(axis=0)
    dx = np.zeros_like(cache.x)
    for o in range(27):
        rows = cache.table[:, o]
        valid = rows >= 0
        if not valid.any():
            continue
        src = rows[valid]
        conv.weight.grad[o] += cache.x[src].T @ dz[valid]
        np.add.at(dx, src, dz[valid] @ conv.weight.value[o].T)
    return dx


@dataclass
class BackboneParams:
    """Encoder MLP, one submanifold conv, decoder trunk (pre-logit features),
    and the classifier head (logits)."""

    encoder: Mlp
    conv: SparseConv
    decoder: Mlp
    classifier: Mlp

    def groups(self) -> list[ParamGroup]:
        return [self.encoder, self.conv, self.decoder, self.classifier]

    def params(self) -> list[Param]:
        return [p for g in self.groups() for p in g.params()]

    def clone(self, dtype=None) -> "BackboneParams":
        return BackboneParams(
            self.encoder.clone(dtype),
            self.conv.clone(dtype),
            self.decoder.clone(dtype),
            self.classifier.clone(dtype),
        )


def encoder_input(grid: VoxelGrid, use_height: bool, dtype=np.float32) -> np.ndarray:
    """Per-voxel encoder input: mean cell features, optionally with the cell
    center height appended (meters)."""
    feats = grid.features.astype(dtype, copy=False)
    if not use_height:
        return feats
    z = ((grid.keys[:, 2].astype(np.float64) + 0.5) * grid.unit).astype(dtype)
    return np.concatenate([feats, z[:, None]], axis=1)


@dataclass
class PairCache:
    grid_current: VoxelGrid
    grid_previous: VoxelGrid
    enc_current: MlpCache
    enc_previous: MlpCache
    conv_current: ConvCache
    conv_previous: ConvCache
    attention: AttentionCache
    interpolation: InterpolationCache
    decoder: MlpCache
    classifier: MlpCache


def backbone_forward(
    grid_current: VoxelGrid,
    grid_previous: VoxelGrid,
    backbone: BackboneParams,
    attention: Mlp,
    interp: InterpolationConfig,
    use_height: bool = True,
) -> tuple[np.ndarray, np.ndarray, PairCache]:
    """Run the two-branch backbone on a voxelized frame pair.

    Returns per-voxel logits and pre-logit features for the current frame.
    Both branches share the encoder and convolution weights; the previous
    branch feeds the attention mask and the interpolation neighbors.
    """
    if grid_current.unit != grid_previous.unit:
        raise StructuralError(
            f"voxel units differ: {grid_current.unit} vs {grid_previous.unit}"
        )
    dtype = backbone.encoder.dtype

    enc_in_cur = encoder_input(grid_current, use_height, dtype)
    enc_in_prev = encoder_input(grid_previous, use_height, dtype)
    f_cur, enc_cache_cur = backbone.encoder.forward(enc_in_cur)
    f_prev, enc_cache_prev = backbone.encoder.forward(enc_in_prev)

    table_cur = build_neighbor_table(grid_current.keys)
    table_prev = build_neighbor_table(grid_previous.keys)
    f_cur, conv_cache_cur = sparse_conv_forward(backbone.conv, f_cur, table_cur)
    f_prev, conv_cache_prev = sparse_conv_forward(backbone.conv, f_prev, table_prev)

    f_att, att_cache = cross_frame_attention(f_cur, f_prev, attention)

    distances = cross_frame_distances(
        grid_current.keys.astype(np.float64),
        grid_previous.keys.astype(np.float64),
        interp.gamma,
    )
    neighbors = interpolation_weights(knn_previous(distances, interp.k), interp.alpha, interp.beta)
    # Interpolation compares like with like: both sides are conv outputs, so a
    # frame paired with itself yields exactly zero variation channels. The
    # attention-masked features enter through the decoder concat instead.
    h, interp_cache = temporal_interpolation(neighbors, f_prev, f_cur, interp)

    decoder_in = np.concatenate([h, f_att], axis=1)
    features, dec_cache = backbone.decoder.forward(decoder_in)
    logits, cls_cache = backbone.classifier.forward(features)

    cache = PairCache(
        grid_current, grid_previous,
        enc_cache_cur, enc_cache_prev,
        conv_cache_cur, conv_cache_prev,
        att_cache, interp_cache, dec_cache, cls_cache,
    )
    return logits, features, cache


def backbone_backward(
    backbone: BackboneParams,
    attention: Mlp,
    interp: InterpolationConfig,
    cache: PairCache,
    d_logits: np.ndarray,
    d_features: Optional[np.ndarray] = None,
) -> None:
    """Accumulate gradients for every backbone, attention, and interpolation
    parameter given upstream gradients on voxel logits and (optionally) on the
    pre-logit features."""
    d_feat = backbone.classifier.backward(cache.classifier, d_logits)
    if d_features is not None:
        d_feat = d_feat + d_features
    d_dec_in = backbone.decoder.backward(cache.decoder, d_feat)
    width = interp.feature_width
    d_h = d_dec_in[:, :width]
    d_att = d_dec_in[:, width:]

    d_prev_interp, d_cur_interp = temporal_interpolation_backward(interp, cache.interpolation, d_h)

    n_prev = cache.grid_previous.num_cells
    d_conv_cur, d_prev_att = cross_frame_attention_backward(attention, cache.attention, d_att, n_prev)
    d_conv_cur = d_conv_cur + d_cur_interp
    d_conv_prev = d_prev_interp + d_prev_att

    d_enc_cur = sparse_conv_backward(backbone.conv, cache.conv_current, d_conv_cur)
    d_enc_prev = sparse_conv_backward(backbone.conv, cache.conv_previous, d_conv_prev)
    backbone.encoder.backward(cache.enc_current, d_enc_cur)
    backbone.encoder.backward(cache.enc_previous, d_enc_prev)
