"""
Configuration management.

RunConfig holds every operator-facing setting. It is read from a
dotenv-style KEY=value file and overridden by command-line flags.
The narrow dataclass configs are what the library functions take.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from errors import ConfigError

logger = logging.getLogger(__name__)

LAYER_KINDS = ("gcn", "gin", "sum")


@dataclass(frozen=True)
class EncoderConfig:
    """GNN encoder shape: dims = (C_0, C_1, ..., C_L)."""
    layer_kind: str
    dims: Tuple[int, ...]

    @property
    def num_layers(self) -> int:
        return len(self.dims) - 1

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    def validate(self) -> None:
        if self.layer_kind not in LAYER_KINDS:
            raise ConfigError(f"Invalid layer_kind: {self.layer_kind}. Must be one of {LAYER_KINDS}")
        if self.num_layers < 1:
            raise ConfigError("Encoder needs at least one layer (dims must have length >= 2)")
        if any(d < 1 for d in self.dims):
            raise ConfigError(f"All channel dims must be >= 1, got {self.dims}")


@dataclass(frozen=True)
class TrainConfig:
    """Unsupervised training settings."""
    encoder: EncoderConfig
    decoder_hidden: int = 512
    lambda_nei: float = 0.1
    lambda_deg: float = 1.0
    learning_rate: float = 1e-3
    max_epochs: int = 500
    patience: int = 20
    tolerance: float = 1e-4
    seed: int = 0

    def validate(self) -> None:
        self.encoder.validate()
        if self.decoder_hidden < 1:
            raise ConfigError("decoder_hidden must be >= 1")
        if self.lambda_nei < 0 or self.lambda_deg < 0:
            raise ConfigError(
                f"lambda_nei and lambda_deg must be >= 0, got {self.lambda_nei}, {self.lambda_deg}"
            )
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.tolerance < 0:
            raise ConfigError(f"tolerance must be >= 0, got {self.tolerance}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


@dataclass(frozen=True)
class HeadConfig:
    """Downstream MLP head: `layers` affine layers, `hidden` wide."""
    hidden: int = 256
    layers: int = 4
    learning_rate: float = 1e-3
    max_epochs: int = 300
    patience: int = 30
    standardize: bool = True

    def validate(self) -> None:
        if self.layers < 1 or self.hidden < 1:
            raise ConfigError("Head needs layers >= 1 and hidden >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("Head learning_rate must be > 0")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("Head max_epochs and patience must be >= 1")


def _check_ratios(values: List[float], name: str) -> List[float]:
    if len(values) != 3:
        raise ValueError(f"{name} needs three values (train, val, test), got {len(values)}")
    if any(v < 0 for v in values):
        raise ValueError(f"{name} must be non-negative, got {values}")
    if abs(sum(values) - 1.0) > 1e-9:
        raise ValueError(f"{name} must sum to 1, got {values} (sum {sum(values):.6g})")
    return values


class RunConfig(BaseModel):
    """Every setting the CLI understands. Unknown keys are rejected."""
    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    task: Literal["node", "link", "graph"] = "node"
    dataset_name: str = "dataset"

    # single-graph (edge list) inputs
    edge_file: Optional[Path] = None
    feature_file: Optional[Path] = None
    label_file: Optional[Path] = None
    train_split_file: Optional[Path] = None
    val_split_file: Optional[Path] = None
    test_split_file: Optional[Path] = None
    # graph-collection (TU) inputs
    tu_directory: Optional[Path] = None
    max_degree_bucket: int = 64

    # encoder / decoder
    layer_kind: Optional[Literal["gcn", "gin", "sum"]] = None
    num_layers: int = 2
    hidden_dim: int = 512
    decoder_hidden: int = 512

    # unsupervised training
    lambda_nei: float = 0.1
    lambda_deg: float = 1.0
    learning_rate: float = 1e-3
    max_epochs: Optional[int] = None
    patience: int = 20
    tolerance: float = 1e-4
    seed: int = 0
    checkpoint_every: int = 0

    # downstream heads
    head_hidden: int = 256
    head_layers: int = 4
    head_learning_rate: float = 1e-3
    head_max_epochs: int = 300
    head_patience: int = 30
    standardize_embeddings: bool = True
    link_scorer: Literal["inner", "mlp"] = "inner"
    node_ratios: List[float] = [0.6, 0.2, 0.2]
    link_ratios: List[float] = [0.85, 0.05, 0.10]
    graph_ratios: List[float] = [0.5, 0.2, 0.3]
    eval_seeds: int = 1
    workers: int = 1

    output_dir: Path = Path("runs")

    @field_validator("node_ratios", "link_ratios", "graph_ratios", mode="before")
    @classmethod
    def _split_csv(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [float(v) for v in value.split(",") if v.strip()]
        return value

    @field_validator("node_ratios", "link_ratios", "graph_ratios")
    @classmethod
    def _ratios_sum_to_one(cls, value: List[float], info) -> List[float]:
        return _check_ratios(value, info.field_name)

    @field_validator("layer_kind", mode="before")
    @classmethod
    def _lower_kind(cls, value: Any) -> Any:
        return value.lower() if isinstance(value, str) else value

    @model_validator(mode="after")
    def _check_ranges(self) -> "RunConfig":
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.hidden_dim < 1 or self.decoder_hidden < 1:
            raise ValueError("hidden_dim and decoder_hidden must be >= 1")
        if self.lambda_nei < 0 or self.lambda_deg < 0:
            raise ValueError("lambda_nei and lambda_deg must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_epochs is not None and self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.eval_seeds < 1 or self.workers < 1:
            raise ValueError("eval_seeds and workers must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        return self

    # --- derived settings -------------------------------------------------

    @property
    def effective_layer_kind(self) -> str:
        if self.layer_kind is not None:
            return self.layer_kind
        return "gin" if self.task == "graph" else "gcn"

    @property
    def effective_max_epochs(self) -> int:
        if self.max_epochs is not None:
            return self.max_epochs
        return 300 if self.task == "graph" else 500

    def encoder_config(self, input_dim: int) -> EncoderConfig:
        return EncoderConfig(
            layer_kind=self.effective_layer_kind,
            dims=(input_dim,) + (self.hidden_dim,) * self.num_layers,
        )

    def train_config(self, input_dim: int, **changes: Any) -> TrainConfig:
        values = dict(
            encoder=self.encoder_config(input_dim),
            decoder_hidden=self.decoder_hidden,
            lambda_nei=self.lambda_nei,
            lambda_deg=self.lambda_deg,
            learning_rate=self.learning_rate,
            max_epochs=self.effective_max_epochs,
            patience=self.patience,
            tolerance=self.tolerance,
            seed=self.seed,
        )
        values.update(changes)
        config = TrainConfig(**values)
        config.validate()
        return config

    def head_config(self) -> HeadConfig:
        config = HeadConfig(
            hidden=self.head_hidden,
            layers=self.head_layers,
            learning_rate=self.head_learning_rate,
            max_epochs=self.head_max_epochs,
            patience=self.head_patience,
            standardize=self.standardize_embeddings,
        )
        config.validate()
        return config

    def to_record(self) -> Dict[str, Any]:
        """JSON-safe dump of the effective configuration."""
        record = self.model_dump(mode="json")
        record["layer_kind"] = self.effective_layer_kind
        record["max_epochs"] = self.effective_max_epochs
        return record

    # --- loading ------------------------------------------------------------

    @classmethod
    def from_sources(
        cls,
        config_file: Optional[Path] = None,
        overrides: Optional[Mapping[str, Any]] = None,
    ) -> "RunConfig":
        """
        Merge a KEY=value config file with flag overrides.

        Args:
            config_file: dotenv-style file; keys are case-insensitive field names
            overrides: Values from command-line flags (None entries are ignored)

        Returns:
            Validated RunConfig

        Raises:
            ConfigError: Missing file, unknown key or invalid value
        """
        values: Dict[str, Any] = {}
        if config_file is not None:
            path = Path(config_file)
            if not path.is_file():
                raise ConfigError(f"Config file not found: {path}")
            for key, value in dotenv_values(path).items():
                if value is None or value == "":
                    continue
                values[key.strip().lower()] = value
        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = value

        try:
            return cls(**values)
        except ValidationError as e:
            problems = "; ".join(
                f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}"
                for err in e.errors()
            )
            raise ConfigError(f"Invalid configuration: {problems}") from e

    def validate_paths(self) -> None:
        """Check that the dataset inputs required by the task are set and exist."""
        if self.task == "graph":
            required = {"tu_directory": self.tu_directory}
        else:
            required = {"edge_file": self.edge_file}
            if self.task == "node":
                required["label_file"] = self.label_file

        for key, value in required.items():
            if value is None:
                raise ConfigError(f"{key.upper()} is required for task={self.task}")

        optional = {
            "feature_file": self.feature_file,
            "train_split_file": self.train_split_file,
            "val_split_file": self.val_split_file,
            "test_split_file": self.test_split_file,
        }
        for key, value in {**required, **optional}.items():
            if value is not None and not Path(value).exists():
                raise ConfigError(f"{key.upper()} does not exist: {value}")

        if (self.train_split_file or self.val_split_file or self.test_split_file) and not (
            self.val_split_file and self.test_split_file
        ):
            raise ConfigError("Split files need both val and test (train defaults to the remaining nodes)")


def load_config(
    config_file: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    check_paths: bool = True,
) -> RunConfig:
    """Load and validate configuration."""
    config = RunConfig.from_sources(config_file, overrides)
    if check_paths:
        config.validate_paths()
    return config
