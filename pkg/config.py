"""
Configuration for the change detection tooling.

Process-wide defaults come from environment variables (optionally through a
.env file); run settings come from flat ``key = value`` files parsed into
pydantic models so that typos and out-of-range values fail loudly.
"""
import logging
import os
from pathlib import Path
from typing import Optional

import coloredlogs
from dotenv import load_dotenv, set_key
from dotenv.parser import parse_stream
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic import ValidationError as PydanticValidationError
from pythonjsonlogger.json import JsonFormatter

from errors import ConfigError

# Load environment variables from .env file
load_dotenv()


def _env_int(name, default):
    raw = os.getenv(name, str(default))
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}")


# Logging Configuration
LOG_LEVEL = os.getenv("DBTA_LOG_LEVEL", "INFO").upper()
LOG_JSON = os.getenv("DBTA_LOG_JSON", "false").lower() == "true"

# Runtime Configuration
NUM_THREADS = _env_int("DBTA_NUM_THREADS", 1)  # single-threaded keeps runs reproducible
OUTPUT_DIR = os.getenv("DBTA_OUTPUT_DIR", "./runs")
DEVICE = os.getenv("DBTA_DEVICE", "cpu")

# Application Configuration
DEBUG_MODE = os.getenv("DBTA_DEBUG", "False").lower() == "true"

LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"


def validate_config():
    """Validate the environment-derived settings."""
    if not isinstance(logging.getLevelName(LOG_LEVEL), int):
        raise ConfigError(f"DBTA_LOG_LEVEL is not a logging level: {LOG_LEVEL}")

    if NUM_THREADS < 1:
        raise ConfigError(f"DBTA_NUM_THREADS must be at least 1, got {NUM_THREADS}")

    if not (DEVICE == "cpu" or DEVICE.startswith("cuda")):
        raise ConfigError(f"DBTA_DEVICE must be 'cpu' or 'cuda[:N]', got {DEVICE!r}")


def setup_logging(level=None, json_output=None):
    """
    Install console logging for the whole process.

    Args:
        level (str, optional): Logging level name. Defaults to LOG_LEVEL
                               (DEBUG when DBTA_DEBUG is set).
        json_output (bool, optional): Emit JSON lines instead of coloured text.
                                      Defaults to LOG_JSON.
    """
    if level is None:
        level = "DEBUG" if DEBUG_MODE else LOG_LEVEL
    json_output = LOG_JSON if json_output is None else json_output

    root = logging.getLogger()
    if json_output:
        handler = logging.StreamHandler()
        handler.setFormatter(JsonFormatter(LOG_FORMAT))
        root.handlers = [handler]
        root.setLevel(level)
    else:
        coloredlogs.install(level=level, fmt=LOG_FORMAT, logger=root)


def _multiple_of_16(value):
    if value < 16 or value % 16:
        raise ValueError(f"must be a positive multiple of 16, got {value}")
    return value


def _open_unit_interval(value):
    if not 0.0 < value < 1.0:
        raise ValueError(f"must lie strictly between 0 and 1, got {value}")
    return value


class SceneSpec(BaseModel):
    """Parameters of one synthetic bi-temporal scene."""

    model_config = ConfigDict(extra="forbid")

    height: int = 64
    width: int = 64
    classes: int = Field(5, ge=3, le=256)
    num_shapes_min: int = Field(4, ge=0)
    num_shapes_max: int = Field(10, ge=0)
    max_mutations: int = Field(20, ge=0)
    change_ratio: float = 0.2
    noise_std: float = Field(0.03, ge=0.0)
    seed: int = 0

    check_size = field_validator("height", "width")(_multiple_of_16)
    check_ratio = field_validator("change_ratio")(_open_unit_interval)

    @model_validator(mode="after")
    def check_shape_range(self):
        if self.num_shapes_min > self.num_shapes_max:
            raise ValueError("num_shapes_min must not exceed num_shapes_max")
        return self


def _parse_int_list(value):
    if isinstance(value, str):
        parts = [part.strip() for part in value.split(",") if part.strip()]
        return tuple(int(part) for part in parts)
    return value


def _empty_to_none(value):
    if isinstance(value, str) and not value.strip():
        return None
    return value


class TrainConfig(BaseModel):
    """
    Everything a training, evaluation or ablation run needs.

    When ``data_root`` is unset the run uses synthetic scenes built from the
    scene fields below; ``train_samples``/``val_samples`` scenes are drawn with
    seeds derived from ``seed``.
    """

    model_config = ConfigDict(extra="forbid")

    # Data
    data_root: Optional[Path] = None
    val_root: Optional[Path] = None
    classes: int = Field(5, ge=3, le=256)
    height: int = 64
    width: int = 64
    num_shapes_min: int = Field(4, ge=0)
    num_shapes_max: int = Field(10, ge=0)
    max_mutations: int = Field(20, ge=0)
    change_ratio: float = 0.2
    noise_std: float = Field(0.03, ge=0.0)
    train_samples: int = Field(200, ge=1)
    val_samples: int = Field(50, ge=1)
    augment: bool = True

    # Optimisation
    epochs: int = Field(5, ge=1)
    batch_size: int = Field(8, ge=1)
    learning_rate: float = Field(0.001, gt=0.0)
    weight_decay: float = Field(0.01, ge=0.0)

    # Loss
    lambda_sem: float = Field(1.0, gt=0.0)
    lambda_cd: float = Field(1.0, gt=0.0)
    lambda_bd: float = Field(0.5, gt=0.0)
    lambda_sim: float = Field(0.1, gt=0.0)
    similarity_margin: float = Field(0.0, ge=-1.0, le=1.0)
    boundary_pos_weight: float = Field(5.0, gt=0.0)

    # Model
    alpha: float = Field(0.5, ge=0.0, le=1.0)
    use_sam_branch: bool = True
    use_gspm: bool = True
    use_btam: bool = True
    canonical_order: bool = True
    channels_shallow: int = Field(64, ge=1)
    channels_deep: int = Field(256, ge=1)
    channels_msa: int = Field(256, ge=1)
    decoder_width: int = Field(64, ge=1)
    stage_depths: tuple[int, ...] = (2, 2, 2, 2)
    prior_seed: int = 7
    prior_weights: Optional[Path] = None

    # Evaluation
    change_threshold: float = Field(0.5, gt=0.0, lt=1.0)

    # Runtime
    seed: int = 0
    num_threads: int = Field(NUM_THREADS, ge=1)
    device: str = DEVICE
    output_dir: Path = Path(OUTPUT_DIR)
    checkpoint: Optional[Path] = None

    parse_depths = field_validator("stage_depths", mode="before")(_parse_int_list)
    parse_optional = field_validator(
        "data_root", "val_root", "prior_weights", "checkpoint", mode="before"
    )(_empty_to_none)

    check_size = field_validator("height", "width")(_multiple_of_16)
    check_ratio = field_validator("change_ratio")(_open_unit_interval)

    @field_validator("stage_depths")
    @classmethod
    def check_stage_depths(cls, value):
        if len(value) != 4 or any(depth < 1 for depth in value):
            raise ValueError(f"expected four positive stage depths, got {value}")
        return value

    @model_validator(mode="after")
    def check_consistent(self):
        if self.num_shapes_min > self.num_shapes_max:
            raise ValueError("num_shapes_min must not exceed num_shapes_max")
        if self.val_root is not None and self.data_root is None:
            raise ValueError("val_root requires data_root")
        return self

    def scene_spec(self, seed):
        """Build the SceneSpec of one synthetic sample."""
        return SceneSpec(
            height=self.height,
            width=self.width,
            classes=self.classes,
            num_shapes_min=self.num_shapes_min,
            num_shapes_max=self.num_shapes_max,
            max_mutations=self.max_mutations,
            change_ratio=self.change_ratio,
            noise_std=self.noise_std,
            seed=seed,
        )

    @property
    def checkpoint_path(self):
        return self.checkpoint or self.output_dir / "best.ckpt"


def _line_number(binding):
    # the parser's mark sits before any leading blank lines of the binding
    text = binding.original.string
    leading = text[: len(text) - len(text.lstrip())]
    return binding.original.line + leading.count("\n")


def read_key_value_file(path):
    """
    Read a flat ``key = value`` UTF-8 text file with the dotenv parser.

    Args:
        path (str | Path): File to read

    Returns:
        dict: Raw string values keyed by name, in file order

    Raises:
        ConfigError: If the file is missing, a line is malformed or a key repeats
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")

    entries = {}
    try:
        with path.open(encoding="utf-8") as stream:
            for binding in parse_stream(stream):
                lineno = _line_number(binding)
                if binding.error:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {binding.original.string.strip()!r}")
                if binding.key is None:
                    continue
                if binding.value is None:
                    raise ConfigError(f"{path}:{lineno}: missing '=' after '{binding.key}'")
                if binding.key in entries:
                    raise ConfigError(f"{path}:{lineno}: duplicate key '{binding.key}'")
                entries[binding.key] = binding.value
    except UnicodeDecodeError:
        raise ConfigError(f"Config file is not encoded in UTF-8: {path}")
    return entries


def build_config(model_cls, entries, source="<config>"):
    """Validate raw entries into ``model_cls``, converting errors to ConfigError."""
    try:
        return model_cls.model_validate(entries)
    except PydanticValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}"
            for err in e.errors()
        )
        raise ConfigError(f"{source}: {problems}") from e


def load_train_config(path, **overrides):
    """Load a TrainConfig from a key = value file, applying keyword overrides."""
    entries = read_key_value_file(path)
    entries.update({k: v for k, v in overrides.items() if v is not None})
    return build_config(TrainConfig, entries, str(path))


def load_scene_spec(path):
    """Load a SceneSpec from a key = value file."""
    return build_config(SceneSpec, read_key_value_file(path), str(path))


def write_key_value_file(model, path):
    """Write a pydantic config back out in the key = value format."""
    path = Path(path)
    path.write_text("", encoding="utf-8")
    for key, value in model.model_dump(mode="json").items():
        if value is None:
            value = ""
        elif isinstance(value, bool):
            value = str(value).lower()
        elif isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        set_key(path, key, str(value), quote_mode="auto")


# Call validation function when this module is imported
validate_config()
