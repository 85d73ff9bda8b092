"""Strict JSON run configuration for the experiment harness."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from ..model import AGGREGATIONS, MODES, ModelConfig
from ..tokens import GridShape
from .synth import KINDS


class ConfigError(ValueError):
    """Bad configuration file or key."""


@dataclass(frozen=True)
class RunConfig:
    grid_rows: int = 8
    grid_cols: int = 8
    patch_size: int = 4
    in_channels: int = 3
    enc_dim: int = 32
    enc_depth: int = 2
    enc_heads: int = 2
    dec_dim: int = 16
    dec_depth: int = 1
    dec_heads: int = 2
    mlp_ratio: float = 4.0
    kernel_size: int = 3
    aggregation: str = "depthwise_conv"
    norm_pix: bool = True
    rho_e: float = 0.75
    rho_d: float = 0.5
    sampling: str = "furthest"
    mode: str = "progressive"
    seed: int = 2
    lr: float = 8e-3
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.05
    warmup_fraction: float = 0.1
    batch_size: int = 16
    steps: int = 200
    data_kind: str = "gradient"

    def __post_init__(self):
        if not 0.0 <= self.rho_e <= 1.0:
            raise ConfigError(f"rho_e must be in [0, 1], got {self.rho_e}")
        if not 0.0 <= self.rho_d <= self.rho_e:
            raise ConfigError(
                f"rho_d={self.rho_d} must lie in [0, rho_e={self.rho_e}]"
            )
        if self.sampling not in ("random", "furthest"):
            raise ConfigError(f"unknown sampling {self.sampling!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")
        if self.batch_size < 1 or self.steps < 1:
            raise ConfigError("batch_size and steps must be >= 1")
        if self.data_kind not in KINDS:
            raise ConfigError(f"unknown data_kind {self.data_kind!r}")
        self.model_config()  # validates the architecture fields

    def model_config(self):
        return ModelConfig(
            grid=GridShape(self.grid_rows, self.grid_cols),
            patch_size=self.patch_size,
            in_channels=self.in_channels,
            enc_dim=self.enc_dim,
            enc_depth=self.enc_depth,
            enc_heads=self.enc_heads,
            dec_dim=self.dec_dim,
            dec_depth=self.dec_depth,
            dec_heads=self.dec_heads,
            mlp_ratio=self.mlp_ratio,
            kernel_size=self.kernel_size,
            aggregation=self.aggregation,
            norm_pix=self.norm_pix,
        )

    def as_dict(self):
        return asdict(self)


def from_dict(obj):
    if not isinstance(obj, dict):
        raise ConfigError(f"config root must be an object, got {type(obj).__name__}")
    known = set(RunConfig.__dataclass_fields__)
    for key in obj:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        return RunConfig(**obj)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def parse_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    return from_dict(obj)


def emit_config(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
