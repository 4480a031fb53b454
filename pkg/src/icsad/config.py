"""Run configuration: one JSON file aggregating every tunable of a run.

Unknown keys are rejected at every level so typos fail loudly. The
resolved form (defaults filled in) is what commands echo next to their
outputs; feeding it back reproduces the run.
"""
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .data import Schema
from .detector import DetectorConfig
from .errors import ConfigError
from .evaluate import DEFAULT_EXTENSION, DEFAULT_THRESHOLDS, DEFAULT_WINDOWS
from .nn import LayerSpec, ModelConfig, TrainConfig, block_cnn
from .plant import PlantConfig
from .workflow import PipelineConfig


def _build(cls, d, where):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class ModelSection:
    """Block-stack CNN options, or an explicit ``architecture`` layer list."""

    layers: int = 4
    base_filters: int = 32
    kernel: int = 2
    convs_per_block: int = 1
    pool: int = 2
    dropout: float = 0.25
    batchnorm: bool = False
    enrich_width: Optional[int] = None
    architecture: Optional[list] = None

    def model_config(self, sequence_length, feature_count, seed):
        if self.architecture is not None:
            return ModelConfig([LayerSpec.from_dict(s) for s in self.architecture], sequence_length, feature_count, seed)
        return block_cnn(
            self.layers, self.base_filters, self.kernel, sequence_length=sequence_length,
            feature_count=feature_count, seed=seed, convs_per_block=self.convs_per_block, pool=self.pool,
            dropout=self.dropout, batchnorm=self.batchnorm, enrich_width=self.enrich_width,
        )


@dataclass
class EvaluationSection:
    mode: str = "attack"
    extension: int = DEFAULT_EXTENSION
    exclude_ineffective: bool = False

    def __post_init__(self):
        if self.mode not in ("attack", "record"):
            raise ConfigError(f"evaluation mode must be 'attack' or 'record', got {self.mode!r}")
        if self.extension < 0:
            raise ConfigError(f"extension must be >= 0, got {self.extension}")


@dataclass
class GridSection:
    thresholds: list = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    windows: list = field(default_factory=lambda: list(DEFAULT_WINDOWS))

    def __post_init__(self):
        if not self.thresholds or not self.windows:
            raise ConfigError("grid thresholds and windows must be non-empty")


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    detector: DetectorConfig = field(default_factory=lambda: DetectorConfig(2.0, 150))
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    grid: GridSection = field(default_factory=GridSection)
    schema: Schema = field(default_factory=Schema)
    stages: dict = field(default_factory=lambda: PlantConfig().stage_groups())
    plant: PlantConfig = field(default_factory=PlantConfig)

    @classmethod
    def from_dict(cls, d):
        sections = {
            "model": ModelSection, "train": TrainConfig, "pipeline": PipelineConfig, "detector": DetectorConfig,
            "evaluation": EvaluationSection, "grid": GridSection, "schema": Schema, "plant": PlantConfig,
        }
        unknown = set(d) - set(sections) - {"seed", "stages"}
        if unknown:
            raise ConfigError(f"unknown top-level config keys {sorted(unknown)}")
        # absent sections keep the RunConfig defaults, which may differ from the bare class defaults
        kwargs = {name: _build(c, d[name], name) for name, c in sections.items() if d.get(name) is not None}
        stages = d.get("stages")
        if stages is not None:
            if not isinstance(stages, dict) or not all(isinstance(v, list) and v for v in stages.values()):
                raise ConfigError("stages must map stage names to non-empty feature lists")
            kwargs["stages"] = {k: list(v) for k, v in stages.items()}
        return cls(seed=int(d.get("seed", 0)), **kwargs)

    def to_dict(self):
        return asdict(self)

    def stage_features(self, stage):
        if stage not in self.stages:
            raise ConfigError(f"unknown stage {stage!r}; configured stages: {sorted(self.stages)}")
        return list(self.stages[stage])


def load_config(path=None):
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return RunConfig.from_dict(d)


def dump_config(cfg, path):
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
