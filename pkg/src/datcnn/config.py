"""Experiment configuration: flat key=value files plus CLI overrides."""

from dataclasses import dataclass, fields

from .errors import DataError
from .preprocess import PipelineTag
from .training import LOSSES


@dataclass
class ExperimentConfig:
    manifest: str = ""
    model: str = "alexnet3d"
    tag: str = "int_u"
    loss: str = "cross_entropy"
    folds: int = 10
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    class_weight_mode: str = "inverse"
    conv_filters: str = ""          # comma list, empty = architecture default
    dense_units: str = ""
    kernel: int = 0                 # lenet conv kernel size, 0 = default
    dropout: float = -1.0           # negative = architecture default
    transforms: str = ""            # 'identity' or a transforms CSV path
    outdir: str = ""

    def validate(self):
        PipelineTag.parse(self.tag)
        if not self.manifest:
            raise DataError("config is missing the manifest path")
        if self.loss not in LOSSES:
            raise DataError(f"unknown loss {self.loss!r}")
        if self.folds < 2:
            raise DataError("folds must be >= 2")
        if self.epochs < 1 or self.batch_size < 1:
            raise DataError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise DataError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise DataError(f"unknown optimizer {self.optimizer!r}")
        if self.class_weight_mode not in ("inverse", "literal", "equal"):
            raise DataError(f"unknown class_weight_mode {self.class_weight_mode!r}")
        if self.seed < 0:
            raise DataError("seed must be >= 0")
        return self

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name: f.type for f in fields(cls)}
        values = {}
        for key, raw in mapping.items():
            if key not in known:
                raise DataError(f"unknown config key {key!r}")
            kind = known[key]
            try:
                values[key] = kind(raw) if kind in (int, float) else str(raw)
            except ValueError as exc:
                raise DataError(f"config key {key}: {exc}") from exc
        return cls(**values).validate()

    def to_mapping(self):
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = repr(value) if f.type is float else str(value)
        return out

    def parsed_filters(self):
        if not self.conv_filters:
            return None
        return tuple(int(v) for v in self.conv_filters.split(","))

    def parsed_dense(self):
        if not self.dense_units:
            return None
        return tuple(int(v) for v in self.dense_units.split(","))
