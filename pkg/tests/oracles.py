"""Independent scalar-loop reference implementations used as test oracles.

Everything here is deliberately written with plain Python loops over float64
values, sharing no code with the library paths it checks.
"""

import math

import numpy as np


def pairwise_sq_distances(cur, prev, gamma):
    cur = np.asarray(cur, dtype=np.float64)
    prev = np.asarray(prev, dtype=np.float64)
    out = np.zeros((len(cur), len(prev)))
    for i in range(len(cur)):
        for j in range(len(prev)):
            d = 0.0
            for a in range(3):
                diff = cur[i, a] - prev[j, a]
                d += diff * diff
            out[i, j] = d / (gamma * gamma)
    return out


def knn_full_sort(distance_matrix, k):
    """Per row: the k smallest entries, ties broken by the smaller column."""
    indices, dists = [], []
    for row in distance_matrix:
        order = sorted(range(len(row)), key=lambda j: (row[j], j))[: min(k, len(row))]
        indices.append(order)
        dists.append([row[j] for j in order])
    return np.array(indices), np.array(dists)


def weight_of(distance, alpha, beta):
    return (alpha - min(distance, alpha)) * beta


def mlp_eval(mlp, x):
    """Scalar-loop evaluation of one input row through an Mlp's weights."""
    row = [float(v) for v in x]
    for w, b, tag in zip(mlp.weights, mlp.biases, mlp.activations):
        wv = w.value.astype(np.float64)
        bv = b.value.astype(np.float64)
        nxt = []
        for o in range(wv.shape[1]):
            acc = float(bv[o])
            for i in range(wv.shape[0]):
                acc += row[i] * float(wv[i, o])
            nxt.append(_act(acc, tag))
        row = nxt
    return np.array(row)


def _act(v, tag):
    if tag == "relu":
        return max(v, 0.0)
    if tag == "tanh":
        return math.tanh(v)
    if tag == "sigmoid":
        return 1.0 / (1.0 + math.exp(-v))
    if tag == "identity":
        return v
    raise ValueError(tag)


def softmax_row(row):
    m = max(row)
    exps = [math.exp(v - m) for v in row]
    s = sum(exps)
    return [e / s for e in exps]


def focal_loss_value(logits, targets, focusing, ignore_ids=frozenset()):
    total, count = 0.0, 0
    for row, t in zip(np.asarray(logits, dtype=np.float64), targets):
        if int(t) in ignore_ids:
            continue
        probs = softmax_row(list(row))
        pt = probs[int(t)]
        total += -((1.0 - pt) ** focusing) * math.log(pt)
        count += 1
    return total / count if count else 0.0


def attention_eval(mlp, features_current, features_previous):
    cur = np.asarray(features_current, dtype=np.float64)
    prev = np.asarray(features_previous, dtype=np.float64)
    pooled = [max(prev[i, c] for i in range(len(prev))) for c in range(prev.shape[1])]
    mask = mlp_eval(mlp, pooled)
    out = np.zeros_like(cur)
    for i in range(len(cur)):
        for c in range(cur.shape[1]):
            out[i, c] = cur[i, c] * mask[c]
    return out


def interpolation_eval(mlp, indices, weights, features_previous, features_current):
    """Per-neighbor loop: weighted sum of the variation features."""
    prev = np.asarray(features_previous, dtype=np.float64)
    cur = np.asarray(features_current, dtype=np.float64)
    f = cur.shape[1]
    out = np.zeros((len(cur), f))
    for i in range(len(cur)):
        for j, w in zip(indices[i], weights[i]):
            stacked = list(prev[j]) + list(cur[i] - prev[j])
            v = mlp_eval(mlp, stacked)
            for c in range(f):
                out[i, c] += w * v[c]
    return out


def graph_eval(coords_current, coords_previous, k):
    cur = np.asarray(coords_current, dtype=np.float64)
    prev = np.asarray(coords_previous, dtype=np.float64)
    sq = np.zeros((len(cur), len(prev)))
    for i in range(len(cur)):
        for j in range(len(prev)):
            sq[i, j] = sum((cur[i, a] - prev[j, a]) ** 2 for a in range(3))
    indices, _ = knn_full_sort(sq, k)
    offsets = np.zeros((len(cur), indices.shape[1], 3))
    pos_w = np.zeros_like(offsets)
    for i in range(len(cur)):
        for jj, j in enumerate(indices[i]):
            for a in range(3):
                off = prev[j, a] - cur[i, a]
                offsets[i, jj, a] = off
                pos_w[i, jj, a] = 1.0 - abs(math.tanh(off))
    return indices, offsets, pos_w


def refiner_eval(params, indices, pos_w, probs_previous, probs_current, logits_current, features_current):
    yp = np.asarray(probs_previous, dtype=np.float64)
    yc = np.asarray(probs_current, dtype=np.float64)
    lc = np.asarray(logits_current, dtype=np.float64)
    fc = np.asarray(features_current, dtype=np.float64)
    f = fc.shape[1]
    refined = np.zeros_like(lc)
    for i in range(len(lc)):
        messages = []
        for jj, j in enumerate(indices[i]):
            e = mlp_eval(params.edge, pos_w[i, jj])
            msg = mlp_eval(params.message, list(yp[j]) + list(yc[i] - yp[j]))
            messages.append([e[c] * msg[c] for c in range(f)])
        agg = [max(m[c] for m in messages) for c in range(f)]
        fprime = [fc[i, c] + agg[c] for c in range(f)]
        delta = mlp_eval(params.output, fprime)
        refined[i] = lc[i] + delta
    return refined


def conv_offset_index(delta):
    """Index of an integer offset in the lexicographic (-1..1)^3 ordering."""
    return (delta[0] + 1) * 9 + (delta[1] + 1) * 3 + (delta[2] + 1)


def backbone_eval(model, grid_current, grid_previous):
    """Scalar reference of the whole two-branch voxel pipeline."""
    cfg = model.config

    def encode(grid):
        rows = []
        for i in range(grid.num_cells):
            row = list(grid.features[i].astype(np.float64))
            if cfg.use_height:
                row.append((float(grid.keys[i, 2]) + 0.5) * grid.unit)
            rows.append(mlp_eval(model.backbone.encoder, row))
        return np.array(rows)

    def conv(grid, x):
        w = model.backbone.conv.weight.value.astype(np.float64)
        b = model.backbone.conv.bias.value.astype(np.float64)
        keys = [tuple(k) for k in grid.keys.tolist()]
        pos = {k: i for i, k in enumerate(keys)}
        out = np.zeros((len(keys), w.shape[2]))
        for i, key in enumerate(keys):
            acc = b.copy()
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    for dz in (-1, 0, 1):
                        nb = (key[0] + dx, key[1] + dy, key[2] + dz)
                        j = pos.get(nb)
                        if j is None:
                            continue
                        o = conv_offset_index((dx, dy, dz))
                        for c_out in range(w.shape[2]):
                            acc[c_out] += sum(
                                x[j, c_in] * w[o, c_in, c_out] for c_in in range(w.shape[1])
                            )
            out[i] = np.maximum(acc, 0.0)
        return out

    f_cur = conv(grid_current, encode(grid_current))
    f_prev = conv(grid_previous, encode(grid_previous))
    f_att = attention_eval(model.attention, f_cur, f_prev)

    sq = pairwise_sq_distances(
        grid_current.keys.astype(np.float64), grid_previous.keys.astype(np.float64), cfg.gamma
    )
    indices, dists = knn_full_sort(sq, cfg.k_interp)
    weights = np.array([[weight_of(d, cfg.alpha, cfg.beta) for d in row] for row in dists])
    h = interpolation_eval(model.interp.mlp, indices, weights, f_prev, f_cur)

    logits = np.zeros((grid_current.num_cells, cfg.num_classes))
    features = np.zeros((grid_current.num_cells, cfg.feature_width))
    for i in range(grid_current.num_cells):
        stacked = list(h[i]) + list(f_att[i])
        feat = mlp_eval(model.backbone.decoder, stacked)
        features[i] = feat
        logits[i] = mlp_eval(model.backbone.classifier, feat)
    return logits, features


def iou_counting(truth, predicted, num_classes, ignore_ids=frozenset()):
    """Per-class IoU via explicit per-point counting."""
    tp = [0] * num_classes
    fp = [0] * num_classes
    fn = [0] * num_classes
    for t, p in zip(truth, predicted):
        t, p = int(t), int(p)
        if t in ignore_ids:
            continue
        if t == p:
            tp[t] += 1
        else:
            fn[t] += 1
            fp[p] += 1
    out = []
    for c in range(num_classes):
        denom = tp[c] + fp[c] + fn[c]
        out.append(tp[c] / denom if denom else float("nan"))
    return out
