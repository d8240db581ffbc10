"""Throughput probes for the kNN graph build and the refiner pass.

Timings report the median over a configurable number of runs (default 20)
after three warmups, on synthetic uniform point clouds.
"""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from .model import ModelConfig, make_model
from .nn import softmax
from .synthetic import BASIC_SCHEME
from .temporal import build_temporal_graph, refine_predictions

WARMUPS = 3


def _time_median(fn: Callable[[], object], runs: int) -> tuple[float, float]:
    for _ in range(WARMUPS):
        fn()
    samples = []
    for _ in range(runs):
        start = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - start) * 1000.0)
    samples.sort()
    median = samples[len(samples) // 2] if runs % 2 else 0.5 * (
        samples[runs // 2 - 1] + samples[runs // 2]
    )
    p90 = samples[min(runs - 1, int(0.9 * runs))]
    return median, p90


def bench_refiner(
    num_points: int = 200_000,
    k: int = 5,
    runs: int = 20,
    seed: int = 0,
    feature_width: int = 16,
) -> list[dict]:
    """Benchmark graph building and one refinement pass at the given size.

    Inputs mimic an inference step on the basic synthetic scheme: random
    coordinates in a 50 m cube, random logits, and softmax probabilities.
    """
    if runs < 1:
        raise ValueError("need at least one run")
    rng = np.random.default_rng(seed)
    num_classes = BASIC_SCHEME.num_classes
    config = ModelConfig(
        num_classes=num_classes, feature_width=feature_width, k_refine=k, voxel_unit=0.3
    )
    model = make_model(config, BASIC_SCHEME, rng)
    # Leave the zero-initialized output head behind: bench realistic weights.
    for p in model.refiner.output.params():
        p.value[...] = rng.uniform(-0.1, 0.1, size=p.value.shape).astype(np.float32)

    cur = rng.uniform(0.0, 50.0, size=(num_points, 3))
    prev = rng.uniform(0.0, 50.0, size=(num_points, 3))
    logits = rng.normal(size=(num_points, num_classes)).astype(np.float32)
    probs_cur = softmax(logits)
    probs_prev = softmax(rng.normal(size=(num_points, num_classes)).astype(np.float32))
    features = rng.normal(size=(num_points, feature_width)).astype(np.float32)

    graph = build_temporal_graph(cur, prev, k)

    def run_build():
        return build_temporal_graph(cur, prev, k)

    def run_refine():
        return refine_predictions(
            graph, probs_prev, probs_cur, logits, features, model.refiner, want_cache=False
        )

    def run_total():
        g = build_temporal_graph(cur, prev, k)
        return refine_predictions(
            g, probs_prev, probs_cur, logits, features, model.refiner, want_cache=False
        )

    rows = []
    for name, fn in (
        ("temporal_graph_build", run_build),
        ("refine_pass", run_refine),
        ("refine_total", run_total),
    ):
        median, p90 = _time_median(fn, runs)
        rows.append({
            "operation": name,
            "points": num_points,
            "k": k,
            "runs": runs,
            "median_ms": round(median, 3),
            "p90_ms": round(p90, 3),
        })
    return rows
