from .checkpoint import apply_checkpoint, load_checkpoint, save_checkpoint
from .cli import run_cli
from .config import ConfigError, RunConfig, emit_config, parse_config
from .ppm import PpmError, read_ppm, write_ppm
from .synth import SynthImageSpec, synth_batch, synth_image

__all__ = [
    "ConfigError",
    "PpmError",
    "RunConfig",
    "SynthImageSpec",
    "apply_checkpoint",
    "emit_config",
    "load_checkpoint",
    "parse_config",
    "read_ppm",
    "run_cli",
    "save_checkpoint",
    "synth_batch",
    "synth_image",
    "write_ppm",
]
