"""Experiment configuration files.

An experiment is described by a JSON document with the sections ``model``
(:class:`~qasa.model.ModelConfig`), ``train`` (:class:`~qasa.train.TrainConfig`) and
``data`` (:class:`DataConfig`), plus ``output_dir``. Every field has a default, so ``{}``
is a valid configuration.
"""
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from ._variants import SCALE_TYPES, VARIANT_TYPES
from .data import TASK_TYPES, SeriesSpec
from .errors import ConfigurationError
from .model import ModelConfig, instantiate_config
from .train import TrainConfig

__all__ = ["DataConfig", "ExperimentConfig", "preset"]

# Series lengths per scale, chosen to give 2000 windows at the full scale and 800 at the desk scale.
SERIES_LENGTHS: Dict[SCALE_TYPES, int] = {"full": 2050, "desk": 832, "tiny": 64}

TRAIN_PRESETS: Dict[SCALE_TYPES, Dict[str, Any]] = {
    "full": {},
    "desk": {"lr": 1e-3},
    "tiny": {"lr": 1e-3, "epochs": 3, "batch_size": 8},
}


@dataclass
class DataConfig:
    """The series to generate and how to cut it.

    `task`, `length`, `dt`, `params` and `seed` are the fields of
    :class:`~qasa.data.SeriesSpec`; `window` must equal the model's `seq_len`.
    """

    task: TASK_TYPES = "damped_oscillator"
    length: int = 2050
    dt: float = 0.1
    params: Dict[str, Any] = field(default_factory=dict)
    seed: int = 42
    window: int = 50
    train_ratio: float = 0.8

    def series_spec(self) -> SeriesSpec:
        return SeriesSpec(self.task, self.length, self.dt, dict(self.params), self.seed)

    def validate(self) -> "DataConfig":
        self.series_spec().settings()
        if self.window < 1:
            raise ConfigurationError(f"data.window must be positive, got {self.window}.", field="data.window")
        if self.length < self.window + 2:
            raise ConfigurationError(
                f"data.length ({self.length}) must exceed window + 1 ({self.window + 1}).",
                field="data.length",
            )
        if not 0 < self.train_ratio < 1:
            raise ConfigurationError(
                f"data.train_ratio must lie in (0, 1), got {self.train_ratio}.",
                field="data.train_ratio",
            )
        return self


def _section(cls, name: str, raw: Any):
    if not isinstance(raw, Mapping):
        raise ConfigurationError(f"Section '{name}' must be an object, got {raw!r}.", field=name)
    known = {f.name for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigurationError(f"Unknown field '{name}.{key}'.", field=f"{name}.{key}")
    try:
        if hasattr(cls, "from_dict"):
            return cls.from_dict(raw)
        return cls(**raw).validate()
    except TypeError as e:
        # e.g. a string where a number is expected
        raise ConfigurationError(f"Invalid value in section '{name}': {e}", field=name)


@dataclass
class ExperimentConfig:
    """A complete, reproducible run description."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: str = "runs"

    def validate(self) -> "ExperimentConfig":
        self.model.validate()
        self.train.validate()
        self.data.validate()
        if self.data.window != self.model.seq_len:
            raise ConfigurationError(
                f"data.window ({self.data.window}) must equal model.seq_len ({self.model.seq_len}).",
                field="data.window",
            )
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "data": asdict(self.data),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ExperimentConfig":
        if not isinstance(raw, Mapping):
            raise ConfigurationError(f"A configuration must be a JSON object, got {type(raw).__name__}.")
        unknown = [key for key in raw if key not in ("model", "train", "data", "output_dir")]
        if unknown:
            raise ConfigurationError(f"Unknown field '{unknown[0]}'.", field=unknown[0])
        config = cls(
            model=_section(ModelConfig, "model", raw.get("model", {})),
            train=_section(TrainConfig, "train", raw.get("train", {})),
            data=_section(DataConfig, "data", raw.get("data", {})),
            output_dir=str(raw.get("output_dir", "runs")),
        )
        return config.validate()

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Invalid JSON: {e}")
        return cls.from_dict(raw)

    def save(self, path: Union[str, Path]):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigurationError(f"Cannot read configuration '{path}': {e}")
        return cls.from_json(text)


def preset(
    variant: VARIANT_TYPES = "qasa",
    scale: SCALE_TYPES = "desk",
    task: TASK_TYPES = "damped_oscillator",
    seed: int = 42,
    output_dir: str = "runs",
    train_overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """Experiment for `variant` on `task` at a preset `scale`.

    `seed` seeds the parameter initialization, the series, and the mini-batch order.
    """
    model = instantiate_config(variant, scale, seed=seed)
    train = TrainConfig(**{**TRAIN_PRESETS[scale], "seed": seed, **(train_overrides or {})})
    data = DataConfig(task=task, length=SERIES_LENGTHS[scale], seed=seed, window=model.seq_len)
    return ExperimentConfig(model, train, data, output_dir).validate()
