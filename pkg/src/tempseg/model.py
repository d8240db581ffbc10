"""Full model container: backbone, attention, interpolation, and refiner
parameters plus the architectural configuration and class map.

Checkpoints hold every parameter as a named float32 tensor with the config and
class map as JSON metadata, so a saved model rebuilds without outside context.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from .backbone import BackboneParams, make_sparse_conv
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import InputError, StructuralError
from .frames import ClassMap
from .nn import Mlp, ParamGroup, make_mlp
from .temporal import InterpolationConfig, RefinerParams, make_refiner


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and voxelization constants carried by a model."""

    num_classes: int
    input_dim: int = 1
    feature_width: int = 16
    encoder_hidden: tuple[int, ...] = ()
    attention_hidden: int = 16
    interp_hidden: tuple[int, ...] = ()
    refiner_hidden: int = 16
    voxel_unit: float = 0.05
    gamma: float = 128.0
    k_interp: int = 5
    k_refine: int = 5
    alpha: float = 0.5
    beta: float = 2.0
    use_height: bool = True

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise InputError("need at least two classes")
        if self.voxel_unit <= 0 or self.gamma <= 0:
            raise InputError("voxel_unit and gamma must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["interp_hidden"] = list(self.interp_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["encoder_hidden"] = tuple(d.get("encoder_hidden", ()))
        d["interp_hidden"] = tuple(d.get("interp_hidden", ()))
        return cls(**d)


@dataclass
class SequenceModel:
    config: ModelConfig
    class_map: ClassMap
    backbone: BackboneParams
    attention: Mlp
    interp: InterpolationConfig
    refiner: RefinerParams

    def param_groups(self) -> list[ParamGroup]:
        return self.backbone_groups() + self.refiner.groups()

    def backbone_groups(self) -> list[ParamGroup]:
        """Everything trained in the single/multi-frame stages (all but the refiner)."""
        return self.backbone.groups() + [self.attention, self.interp.mlp]

    def params(self):
        return [p for g in self.param_groups() for p in g.params()]

    @property
    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.params())

    def state_tensors(self) -> dict[str, np.ndarray]:
        tensors = {}
        for p in self.params():
            if not p.name:
                raise StructuralError("unnamed parameter cannot be checkpointed")
            if p.name in tensors:
                raise StructuralError(f"duplicate parameter name {p.name!r}")
            tensors[p.name] = p.value
        return tensors

    def non_refiner_checksum(self) -> str:
        """SHA-256 over the concatenated bytes of every non-refiner tensor."""
        digest = hashlib.sha256()
        params = [p for g in self.backbone_groups() for p in g.params()]
        for p in sorted(params, key=lambda q: q.name):
            digest.update(p.name.encode())
            digest.update(np.ascontiguousarray(p.value).tobytes())
        return digest.hexdigest()

    def save(self, path) -> None:
        metadata = {
            "config": self.config.to_dict(),
            "class_map": {
                "names": list(self.class_map.names),
                "ignore_ids": sorted(self.class_map.ignore_ids),
            },
        }
        save_checkpoint(path, self.state_tensors(), metadata)

    @classmethod
    def load(cls, path) -> "SequenceModel":
        tensors, metadata = load_checkpoint(path)
        config = ModelConfig.from_dict(metadata["config"])
        class_map = ClassMap(
            tuple(metadata["class_map"]["names"]),
            frozenset(metadata["class_map"]["ignore_ids"]),
        )
        model = make_model(config, class_map, np.random.default_rng(0))
        for p in model.params():
            if p.name not in tensors:
                raise StructuralError(f"checkpoint missing tensor {p.name!r}")
            stored = tensors[p.name]
            if stored.shape != p.value.shape:
                raise StructuralError(
                    f"tensor {p.name!r} shape {stored.shape} != expected {p.value.shape}"
                )
            p.value[...] = stored
        return model

    def clone(self, dtype=None) -> "SequenceModel":
        return SequenceModel(
            self.config,
            self.class_map,
            self.backbone.clone(dtype),
            self.attention.clone(dtype),
            InterpolationConfig(
                self.interp.mlp.clone(dtype),
                self.interp.k, self.interp.alpha, self.interp.beta, self.interp.gamma,
            ),
            self.refiner.clone(dtype),
        )


def make_model(
    config: ModelConfig,
    class_map: ClassMap,
    rng: np.random.Generator,
    dtype=np.float32,
) -> SequenceModel:
    """Build a fresh model; construction order is fixed so a given rng state
    always yields the same initialization."""
    if class_map.num_classes != config.num_classes:
        raise InputError(
            f"class map has {class_map.num_classes} classes, config says {config.num_classes}"
        )
    f = config.feature_width
    enc_in = config.input_dim + (1 if config.use_height else 0)
    encoder = make_mlp(
        [enc_in, *config.encoder_hidden, f],
        ["relu"] * (len(config.encoder_hidden) + 1),
        rng, dtype, name="encoder",
    )
    conv = make_sparse_conv(f, rng, dtype)
    attention = make_mlp([f, config.attention_hidden, f], ["relu", "sigmoid"], rng, dtype, name="attention")
    interp_mlp = make_mlp(
        [2 * f, *config.interp_hidden, f],
        ["relu"] * (len(config.interp_hidden) + 1),
        rng, dtype, name="interp",
    )
    interp = InterpolationConfig(
        interp_mlp, k=config.k_interp, alpha=config.alpha, beta=config.beta, gamma=config.gamma
    )
    decoder = make_mlp([2 * f, f], ["relu"], rng, dtype, name="decoder")
    classifier = make_mlp([f, config.num_classes], ["identity"], rng, dtype, name="classifier")
    refiner = make_refiner(
        f, config.num_classes, rng,
        hidden=config.refiner_hidden, k=config.k_refine, dtype=dtype,
    )
    return SequenceModel(
        config, class_map,
        BackboneParams(encoder, conv, decoder, classifier),
        attention, interp, refiner,
    )
