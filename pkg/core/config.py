"""
Configuration for the SPARK pipeline.

- Settings: process environment (loaded from .env when present)
- TrainConfig: every hyperparameter of a run, validated with pydantic
- load_config_file: flat key=value config files
"""

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from core.errors import ConfigError
from core.utils import canonical_json, sha256_hex

load_dotenv()

VARIANTS = (
    "full",
    "no-tucker",
    "no-svd-init",
    "no-hyperbolic",
    "no-contrastive",
    "no-popularity-gate",
)

# Desk-scale is the default; "full" uses the larger reference dimensions.
PROFILES: dict[str, dict[str, Any]] = {
    "desk": {
        "entity_dim": 32,
        "core_dim": 16,
        "embed_dim": 32,
        "svd_rank": 32,
        "batch_size": 128,
    },
    "full": {
        "entity_dim": 64,
        "core_dim": 64,
        "embed_dim": 384,
        "svd_rank": 64,
        "batch_size": 1024,
    },
}


# ── Environment ───────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Settings:
    data_dir: Path
    database_url: str
    log_level: str
    svd_cache_dir: Optional[Path]


def get_settings() -> Settings:
    """Read SPARK_* variables. Nothing is required; every value has a default."""
    data_dir = Path(os.environ.get("SPARK_DATA_DIR", "data"))
    database_url = os.environ.get(
        "SPARK_DATABASE_URL", f"sqlite:///{(data_dir / 'spark_runs.db').as_posix()}"
    )
    cache = os.environ.get("SPARK_SVD_CACHE_DIR")
    return Settings(
        data_dir=data_dir,
        database_url=database_url,
        log_level=os.environ.get("SPARK_LOG_LEVEL", "INFO"),
        svd_cache_dir=Path(cache) if cache else None,
    )


# ── Training configuration ────────────────────────────────────────────────────

class TrainConfig(BaseModel):
    """All hyperparameters of a run. Every field is addressable from a config file."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    profile: Literal["desk", "full"] = "desk"
    variant: str = "full"
    seed: int = 7
    threads: int = Field(0, ge=0)     # 0 = available parallelism
    deterministic: bool = True
    dtype: Literal["float64", "float32"] = "float64"

    # optimisation
    epochs: int = Field(50, ge=0)
    batch_size: int = Field(128, ge=1)
    kg_batch_size: Optional[int] = Field(None, ge=1)
    learning_rate: float = Field(2e-4, ge=0.0)
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    lambda_cl: float = Field(0.1, ge=0.0)
    lambda_tucker: float = Field(0.1, ge=0.0)
    lambda_reg: float = Field(1e-5, ge=0.0)
    kg_pretrain_epochs: int = Field(20, ge=0)
    checkpoint_every: int = Field(10, ge=1)

    # geometry
    curvature: float = Field(1.0, gt=0.0)
    max_tangent_norm: float = Field(10.0, gt=0.0)

    # dimensions
    entity_dim: int = Field(32, ge=1)
    core_dim: int = Field(16, ge=1)
    embed_dim: int = Field(32, ge=1)
    svd_rank: int = Field(32, ge=1)
    proj_dim: Optional[int] = Field(None, ge=1)
    attn_dim: Optional[int] = Field(None, ge=1)
    num_layers: int = Field(3, ge=1)

    # module hyperparameters
    temperature: float = Field(0.2, gt=0.0)
    spectral_beta: float = 1.0
    svd_oversampling: int = Field(8, ge=0)
    svd_power_iters: int = Field(4, ge=0)
    alpha_e: float = Field(0.8, ge=0.0, le=1.0)
    skip_weight: float = Field(0.5, ge=0.0, le=1.0)
    dropout: float = Field(0.2, ge=0.0, lt=1.0)
    activation: Literal["leaky_relu", "identity"] = "leaky_relu"
    leaky_slope: float = Field(0.2, ge=0.0)
    gate_a_init: float = 4.0
    gate_b_init: float = -2.0
    tucker_interaction_term: bool = False

    # evaluation
    cutoffs: list[int] = Field(default_factory=lambda: [10, 20])
    tail_fraction: float = Field(0.1, gt=0.0, le=0.5)

    @model_validator(mode="before")
    @classmethod
    def _apply_profile(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        profile = data.get("profile", "desk")
        defaults = PROFILES.get(profile, {})
        return {**defaults, **data}

    @field_validator("variant")
    @classmethod
    def _known_variant(cls, value: str) -> str:
        if value not in VARIANTS:
            raise ValueError(f"unknown variant {value!r}; expected one of {', '.join(VARIANTS)}")
        return value

    @field_validator("cutoffs")
    @classmethod
    def _positive_cutoffs(cls, value: list[int]) -> list[int]:
        if not value or any(n < 1 for n in value):
            raise ValueError("cutoffs must be positive integers")
        return sorted(set(value))

    @model_validator(mode="after")
    def _compression_contract(self) -> "TrainConfig":
        if self.core_dim > self.entity_dim:
            raise ValueError(f"core_dim ({self.core_dim}) must not exceed entity_dim ({self.entity_dim})")
        return self

    # ── Derived values ────────────────────────────────────────────────────────

    @property
    def effective_proj_dim(self) -> int:
        return self.proj_dim or self.embed_dim

    @property
    def effective_attn_dim(self) -> int:
        return self.attn_dim or self.embed_dim

    @property
    def effective_kg_batch_size(self) -> int:
        return self.kg_batch_size or self.batch_size

    @property
    def effective_lambda_cl(self) -> float:
        return 0.0 if self.variant == "no-contrastive" else self.lambda_cl

    def config_hash(self) -> str:
        """SHA-256 over the canonical JSON of the validated config."""
        return sha256_hex(canonical_json(self.model_dump(mode="json")).encode("utf-8"))

    def with_overrides(self, **overrides) -> "TrainConfig":
        """Return a validated copy with the given fields replaced (None values skipped)."""
        data = self.model_dump()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return build_config(data)


def build_config(values: dict[str, Any]) -> TrainConfig:
    """Validate raw values into a TrainConfig, raising ConfigError on any problem."""
    try:
        return TrainConfig(**values)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def _coerce(key: str, raw: str) -> Any:
    if key == "cutoffs":
        return [int(part) for part in raw.split(",") if part.strip()]
    lowered = raw.lower()
    if lowered in ("none", "null", ""):
        return None
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    """
    Parse flat key=value text.

    Args:
        text: File contents
        source: Name used in error messages

    Returns:
        Raw values keyed by field name (pydantic coerces the types)
    """
    values: dict[str, Any] = {}
    known = set(TrainConfig.model_fields)
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{line_no}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}:{line_no}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config_file(path: Optional[str], **overrides) -> TrainConfig:
    """
    Load a config file (optional) and layer overrides on top; overrides win.

    Args:
        path: key=value file or None
        **overrides: Field values from the command line (None = not given)

    Returns:
        Validated TrainConfig
    """
    values: dict[str, Any] = {}
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        values = parse_config_text(text, source=str(path))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return build_config(values)
