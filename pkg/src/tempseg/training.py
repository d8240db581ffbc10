"""Three-phase training pipeline and sequence inference.

Phase 1 pre-trains on single frames (the frame stands in for its own previous
frame). Phase 2 trains the two-branch model on aligned, jointly-rotated,
independently-thinned frame pairs. Phase 3 freezes everything but the refiner
and trains it with recycled pseudo predictions: the first visit of a frame
feeds ground-truth one-hot probabilities for its predecessor, later visits
feed the predecessor's cached refined output.

Every stage is deterministic given its seed: shuffling, rotation angles and
drop masks all derive from per-step seed sequences.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .backbone import backbone_backward, backbone_forward
from .errors import DivergenceError, InputError, StructuralError
from .frames import Frame, VoxelGrid, align_to_previous, crop_centered, devoxelize, devoxelize_backward, voxelize
from .model import SequenceModel
from .nn import FocalLossConfig, adam_step, focal_loss, softmax
from .temporal import build_temporal_graph, refine_predictions, refine_predictions_backward

ONE_HOT_LOGIT = 50.0


@dataclass
class PredictionSet:
    """Per-point logits, probabilities, and class ids for one frame."""

    logits: np.ndarray
    probs: np.ndarray
    class_ids: np.ndarray
    frame_index: int
    provenance: str = "model"  # model | pseudo | ground-truth-bootstrap

    def __post_init__(self) -> None:
        if not np.allclose(self.probs, softmax(self.logits), atol=1e-6):
            raise InputError("probabilities are not the softmax of the logits")
        if not np.array_equal(self.class_ids, np.argmax(self.logits, axis=1)):
            raise InputError("class ids are not the argmax of the predictions")

    @classmethod
    def from_logits(cls, logits: np.ndarray, frame_index: int, provenance: str = "model") -> "PredictionSet":
        logits = np.asarray(logits, dtype=np.float32)
        return cls(logits, softmax(logits), np.argmax(logits, axis=1).astype(np.int64), frame_index, provenance)

    @classmethod
    def from_labels(cls, labels: np.ndarray, num_classes: int, frame_index: int) -> "PredictionSet":
        """Ground-truth bootstrap: exact one-hot probabilities with saturated logits."""
        labels = np.asarray(labels, dtype=np.int64)
        probs = np.zeros((len(labels), num_classes))
        probs[np.arange(len(labels)), labels] = 1.0
        logits = (probs * ONE_HOT_LOGIT).astype(np.float32)
        return cls(logits, probs, labels.copy(), frame_index, "ground-truth-bootstrap")

    def __len__(self) -> int:
        return self.logits.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    """Procedure knobs for one training stage."""

    stage: int
    seed: int = 0
    epochs: int = 1
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    drop_prob: float = 0.2
    rotation_range: tuple[float, float] = (0.0, 2.0 * math.pi)
    focal_gamma: float = 2.0
    crop_extent: Optional[tuple[float, float, float]] = None

    def __post_init__(self) -> None:
        if self.stage not in (1, 2, 3):
            raise InputError(f"stage must be 1, 2 or 3, got {self.stage}")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise InputError(f"drop probability must be in [0, 1], got {self.drop_prob}")

    def focal(self, ignore_ids) -> FocalLossConfig:
        return FocalLossConfig(focusing=self.focal_gamma, ignore_ids=frozenset(ignore_ids))


class TrainLog:
    """Append-only line-delimited training records."""

    def __init__(self, path=None) -> None:
        self.records: list[dict] = []
        self._fh = None
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "a", encoding="utf-8")
        self._start = time.perf_counter()

    def log(self, **fields) -> None:
        fields["wall"] = round(time.perf_counter() - self._start, 4)
        self.records.append(fields)
        if self._fh is not None:
            self._fh.write(json.dumps(fields) + "\n")
            self._fh.flush()

    def losses(self) -> list[float]:
        return [r["loss"] for r in self.records if "loss" in r]

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

def rotate_z(coords: np.ndarray, angle: float) -> np.ndarray:
    """Rotate points around the gravity axis by ``angle`` radians."""
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return coords @ rot.T


def _drop_mask(rng: np.random.Generator, n: int, prob: float) -> np.ndarray:
    keep = rng.random(n) >= prob
    if not keep.any():
        keep[:] = True  # never empty a frame
    return keep


def augment_pair(
    current: Frame,
    previous: Frame,
    seed: int,
    drop_prob: float = 0.2,
    rotation_range: tuple[float, float] = (0.0, 2.0 * math.pi),
) -> tuple[Frame, Frame]:
    """Shared-seed rotation plus independent point dropping.

    Both frames get the identical z rotation; dropping is sampled per frame.
    The result is bit-identical for equal seeds. Poses are left untouched, so
    augmented frames are for training only.
    """
    rng = np.random.default_rng(seed)
    angle = rng.uniform(rotation_range[0], rotation_range[1])
    frames = []
    for frame in (current, previous):
        coords = rotate_z(frame.coords, angle)
        features, labels = frame.features, frame.labels
        if drop_prob > 0.0:
            keep = _drop_mask(rng, len(frame), drop_prob)
            coords = coords[keep]
            features = features[keep]
            labels = None if labels is None else labels[keep]
        frames.append(Frame(coords, features, labels, frame.pose, frame.frame_index))
    return frames[0], frames[1]


# ---------------------------------------------------------------------------
# Forward passes shared by training and inference
# ---------------------------------------------------------------------------

@dataclass
class PairResult:
    grid_current: VoxelGrid
    grid_previous: VoxelGrid
    voxel_logits: np.ndarray
    voxel_features: np.ndarray
    point_logits: np.ndarray
    point_probs: np.ndarray
    point_features: np.ndarray
    cache: object


def pair_forward(model: SequenceModel, current: Frame, previous_aligned: Frame) -> PairResult:
    """Voxelize both frames, run the two-branch backbone, and copy voxel
    outputs down to points."""
    unit = model.config.voxel_unit
    grid_c = voxelize(current, unit)
    grid_p = voxelize(previous_aligned, unit)
    logits_v, feats_v, cache = backbone_forward(
        grid_c, grid_p, model.backbone, model.attention, model.interp, model.config.use_height
    )
    point_logits = devoxelize(grid_c, logits_v)
    point_features = devoxelize(grid_c, feats_v)
    return PairResult(
        grid_c, grid_p, logits_v, feats_v,
        point_logits, softmax(point_logits), point_features, cache,
    )


@dataclass
class RefinedResult:
    base: PairResult
    refined_logits: np.ndarray
    graph: object
    cache: object


def refined_forward(
    model: SequenceModel,
    current: Frame,
    previous_aligned: Frame,
    probs_previous_points: np.ndarray,
    want_cache: bool = True,
) -> RefinedResult:
    base = pair_forward(model, current, previous_aligned)
    graph = build_temporal_graph(current.coords, previous_aligned.coords, model.refiner.k)
    refined, cache = refine_predictions(
        graph, probs_previous_points, base.point_probs, base.point_logits,
        base.point_features, model.refiner, want_cache=want_cache,
    )
    return RefinedResult(base, refined, graph, cache)


# ---------------------------------------------------------------------------
# Training steps
# ---------------------------------------------------------------------------

def _check_finite_loss(loss: float, stage: int, step: int) -> None:
    if not math.isfinite(loss):
        raise DivergenceError(f"stage {stage} loss became {loss} at step {step}")


def backbone_training_step(
    model: SequenceModel, current: Frame, previous_aligned: Frame, cfg: TrainConfig
) -> float:
    """One focal-loss step on devoxelized point logits; updates every
    non-refiner parameter group."""
    if current.labels is None:
        raise InputError("training frames need labels")
    groups = model.backbone_groups()
    for g in groups:
        g.zero_grads()
    result = pair_forward(model, current, previous_aligned)
    fl = focal_loss(result.point_logits, current.labels, cfg.focal(model.class_map.ignore_ids))
    d_voxel = devoxelize_backward(result.grid_current, fl.grad)
    backbone_backward(model.backbone, model.attention, model.interp, result.cache, d_voxel)
    for g in groups:
        adam_step(g, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    return fl.loss


def refiner_training_step(
    model: SequenceModel,
    current: Frame,
    previous_aligned: Frame,
    probs_previous_points: np.ndarray,
    cfg: TrainConfig,
) -> tuple[float, np.ndarray]:
    """One focal-loss step on refined logits; only refiner groups update.

    Returns the loss and the refined probabilities (the new pseudo prediction
    for the current frame).
    """
    if current.labels is None:
        raise InputError("training frames need labels")
    for g in model.refiner.groups():
        g.zero_grads()
    res = refined_forward(model, current, previous_aligned, probs_previous_points, want_cache=True)
    fl = focal_loss(res.refined_logits, current.labels, cfg.focal(model.class_map.ignore_ids))
    refine_predictions_backward(model.refiner, res.cache, fl.grad)
    for g in model.refiner.groups():
        adam_step(g, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    return fl.loss, softmax(res.refined_logits)


def _step_seed(base_seed: int, stage: int, epoch: int, index: int) -> int:
    ss = np.random.SeedSequence([base_seed, stage, epoch, index])
    return int(ss.generate_state(1, np.uint64)[0] % (2**63))


def _maybe_crop(frame: Frame, cfg: TrainConfig) -> Frame:
    return frame if cfg.crop_extent is None else crop_centered(frame, cfg.crop_extent)


def train_stage1(
    frames: Sequence[Frame],
    model: SequenceModel,
    cfg: TrainConfig,
    log: Optional[TrainLog] = None,
) -> SequenceModel:
    """Single-frame pre-training: each frame stands in as its own previous frame."""
    if cfg.stage != 1:
        raise InputError("config stage must be 1")
    if not frames:
        raise InputError("empty training set")
    step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, 1, epoch]).permutation(len(frames))
        for idx in order:
            frame = _maybe_crop(frames[idx], cfg)
            seed = _step_seed(cfg.seed, 1, epoch, int(idx))
            aug, _ = augment_pair(frame, frame, seed, cfg.drop_prob, cfg.rotation_range)
            loss = backbone_training_step(model, aug, aug, cfg)
            _check_finite_loss(loss, 1, step)
            if log is not None:
                log.log(step=step, stage=1, loss=loss, lr=cfg.lr)
            step += 1
    return model


def _sequence_pairs(sequence: Sequence[Frame]) -> list[tuple[Frame, Frame]]:
    """(current, raw previous) pairs; the first frame pairs with itself."""
    if not sequence:
        return []
    pairs = [(sequence[0], sequence[0])]
    for i in range(1, len(sequence)):
        pairs.append((sequence[i], sequence[i - 1]))
    return pairs


def train_stage2(
    sequences: Sequence[Sequence[Frame]],
    model: SequenceModel,
    cfg: TrainConfig,
    log: Optional[TrainLog] = None,
    val_sequences: Optional[Sequence[Sequence[Frame]]] = None,
) -> SequenceModel:
    """Multi-frame training on aligned, augmented consecutive pairs."""
    if cfg.stage != 2:
        raise InputError("config stage must be 2")
    pairs = [p for seq in sequences for p in _sequence_pairs(seq)]
    if not pairs:
        raise InputError("empty training set")
    step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, 2, epoch]).permutation(len(pairs))
        for idx in order:
            current, previous = pairs[idx]
            prev_aligned = align_to_previous(current, previous)
            current = _maybe_crop(current, cfg)
            prev_aligned = _maybe_crop(prev_aligned, cfg)
            seed = _step_seed(cfg.seed, 2, epoch, int(idx))
            cur_aug, prev_aug = augment_pair(
                current, prev_aligned, seed, cfg.drop_prob, cfg.rotation_range
            )
            loss = backbone_training_step(model, cur_aug, prev_aug, cfg)
            _check_finite_loss(loss, 2, step)
            if log is not None:
                log.log(step=step, stage=2, loss=loss, lr=cfg.lr)
            step += 1
        if val_sequences is not None and log is not None:
            from .evaluation import evaluate  # local import to avoid a cycle

            predictions = [infer_sequence(model, seq, refine=False) for seq in val_sequences]
            report = evaluate(
                [p for ps in predictions for p in ps],
                [f for seq in val_sequences for f in seq],
                model.class_map,
            )
            log.log(stage=2, epoch=epoch, val_miou=report.miou)
    return model


class PseudoCache:
    """Latest refined probabilities per (sequence, frame), optionally mirrored
    to disk so refiner training is resumable.

    File layout per frame: uint32 point count, uint32 class count, then
    float32 row-major probabilities. The pass counter is encoded in the file
    name.
    """

    def __init__(self, directory=None) -> None:
        self.directory = Path(directory) if directory is not None else None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
        self._mem: dict[tuple[int, int], np.ndarray] = {}
        self._passes: dict[tuple[int, int], int] = {}

    def store(self, seq_id: int, frame_index: int, probs: np.ndarray) -> None:
        key = (seq_id, frame_index)
        probs32 = np.ascontiguousarray(probs, dtype=np.float32)
        self._mem[key] = probs32
        self._passes[key] = self._passes.get(key, -1) + 1
        if self.directory is not None:
            name = f"seq{seq_id:04d}_frame{frame_index:06d}_pass{self._passes[key]:04d}.prob"
            with open(self.directory / name, "wb") as fh:
                header = np.array([probs32.shape[0], probs32.shape[1]], dtype="<u4")
                fh.write(header.tobytes())
                fh.write(probs32.astype("<f4").tobytes())

    def load(self, seq_id: int, frame_index: int) -> np.ndarray:
        key = (seq_id, frame_index)
        if key in self._mem:
            return self._mem[key]
        if self.directory is not None:
            matches = sorted(self.directory.glob(f"seq{seq_id:04d}_frame{frame_index:06d}_pass*.prob"))
            if matches:
                raw = matches[-1].read_bytes()
                n, c = np.frombuffer(raw[:8], dtype="<u4")
                probs = np.frombuffer(raw[8:], dtype="<f4").reshape(int(n), int(c)).copy()
                self._mem[key] = probs
                return probs
        raise StructuralError(
            f"missing pseudo prediction for sequence {seq_id} frame {frame_index}"
        )

    def has(self, seq_id: int, frame_index: int) -> bool:
        try:
            self.load(seq_id, frame_index)
            return True
        except StructuralError:
            return False


def train_stage3(
    sequences: Sequence[Sequence[Frame]],
    model: SequenceModel,
    cfg: TrainConfig,
    log: Optional[TrainLog] = None,
    cache: Optional[PseudoCache] = None,
) -> SequenceModel:
    """Refiner training with pseudo-prediction recycling.

    All non-refiner parameters are frozen: their gradients are never
    populated and their values never touched. Point dropping is disabled
    because cached pseudo predictions are per point of the undropped frame.
    """
    if cfg.stage != 3:
        raise InputError("config stage must be 3")
    if not sequences or not any(len(s) for s in sequences):
        raise InputError("empty training set")
    if cfg.crop_extent is not None:
        # Crop once, per frame, in its own sensor coordinates: the pseudo cache
        # is indexed per point, so the point set of a frame must be identical
        # on every visit regardless of which pair it appears in.
        sequences = [
            [crop_centered(f, cfg.crop_extent) for f in seq] for seq in sequences
        ]
    cache = cache if cache is not None else PseudoCache()
    for g in model.backbone_groups():
        g.zero_grads()  # clear stage-2 leftovers so the freeze assertion bites
    visits: dict[tuple[int, int], int] = {}
    bootstrap: dict[tuple[int, int], np.ndarray] = {}
    samples = [
        (seq_id, frame_idx)
        for seq_id, seq in enumerate(sequences)
        for frame_idx in range(len(seq))
    ]
    step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, 3, epoch]).permutation(len(samples))
        for sample_idx in order:
            seq_id, frame_idx = samples[sample_idx]
            seq = sequences[seq_id]
            current = seq[frame_idx]
            key = (seq_id, frame_idx)
            visit = visits.get(key, 0)

            if frame_idx == 0:
                prev_aligned = current
                if key not in bootstrap:
                    bootstrap[key] = pair_forward(model, current, current).point_probs
                probs_prev = bootstrap[key]
            else:
                previous = seq[frame_idx - 1]
                prev_aligned = align_to_previous(current, previous)
                if visit == 0:
                    if previous.labels is None:
                        raise InputError("refiner bootstrap needs previous-frame labels")
                    probs_prev = PredictionSet.from_labels(
                        previous.labels, model.config.num_classes, previous.frame_index
                    ).probs
                else:
                    probs_prev = cache.load(seq_id, frame_idx - 1)

            if probs_prev.shape[0] != len(prev_aligned):
                raise StructuralError(
                    "pseudo prediction size does not match the previous frame"
                )
            seed = _step_seed(cfg.seed, 3, epoch, int(sample_idx))
            cur_aug, prev_aug = augment_pair(current, prev_aligned, seed, 0.0, cfg.rotation_range)
            loss, refined_probs = refiner_training_step(model, cur_aug, prev_aug, probs_prev, cfg)
            _check_finite_loss(loss, 3, step)
            cache.store(seq_id, frame_idx, refined_probs)
            visits[key] = visit + 1
            if log is not None:
                log.log(step=step, stage=3, loss=loss, lr=cfg.lr)
            step += 1
        for g in model.backbone_groups():
            for p in g.params():
                if p.grad.any():
                    raise StructuralError(f"frozen parameter {p.name!r} received gradient")
    return model


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def infer_sequence(
    model: SequenceModel,
    frames: Sequence[Frame],
    refine: bool = True,
    use_previous: bool = True,
) -> list[PredictionSet]:
    """Run the temporal recursion over an ordered sequence.

    Frame 0 uses itself as its previous frame; each later frame consumes the
    previous frame's refined prediction. With ``refine=False`` the refiner is
    skipped and devoxelized backbone predictions are returned; with
    ``use_previous=False`` every frame pairs with itself (single-frame mode).
    """
    if not frames:
        return []
    indices = [f.frame_index for f in frames]
    if any(b <= a for a, b in zip(indices, indices[1:])):
        raise InputError(f"frame indices must be strictly increasing, got {indices}")
    outputs: list[PredictionSet] = []
    previous_refined: Optional[PredictionSet] = None
    for i, current in enumerate(frames):
        if i == 0 or not use_previous:
            prev_aligned = current
        else:
            prev_aligned = align_to_previous(current, frames[i - 1])
        if not refine:
            base = pair_forward(model, current, prev_aligned)
            outputs.append(PredictionSet.from_logits(base.point_logits, current.frame_index))
            continue
        if i == 0:
            base = pair_forward(model, current, prev_aligned)
            probs_prev = base.point_probs
        else:
            probs_prev = previous_refined.probs
        res = refined_forward(model, current, prev_aligned, probs_prev, want_cache=False)
        previous_refined = PredictionSet.from_logits(res.refined_logits, current.frame_index)
        outputs.append(previous_refined)
    return outputs
