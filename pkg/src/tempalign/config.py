"""Run configuration shared by the CLI subcommands.

Values are layered: command-line flag > TOML config file > built-in
default.  The config file path itself comes from an explicit flag or the
TEMPALIGN_CONFIG environment variable.  Every output artifact embeds the
effective configuration so results stay attributable.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .alignment import FusionConfig
from .errors import ConfigError, IoError

ENV_CONFIG_PATH = "TEMPALIGN_CONFIG"


@dataclass(frozen=True)
class RunConfig:
    """Scoring-stage settings plus input/output paths.

    eta_k and eta_s are seconds of audio per kernel window and per stride;
    gamma_k and gamma_t weight the kernel-wise and temporal attention
    scores in the fusion.
    """

    eta_k: float = 3.0
    eta_s: float = 3.0
    ref_window: float = 30.0
    gamma_k: float = 0.5
    gamma_t: float = 0.5
    temperature: float = 1.0
    normalize: bool = True
    symmetric_loss: bool = False
    seed: int = 0
    workers: int = 1
    text_store: str | None = None
    audio_store: str | None = None
    speech_store: str | None = None
    manifest: str | None = None
    checkpoint: str | None = None
    output: str | None = None

    def fusion(self) -> FusionConfig:
        return FusionConfig(self.gamma_k, self.gamma_t, self.normalize, self.temperature)

    def to_dict(self) -> dict:
        return asdict(self)


_BOOL_FIELDS = {"normalize", "symmetric_loss"}
_INT_FIELDS = {"seed", "workers"}
_FLOAT_FIELDS = {"eta_k", "eta_s", "ref_window", "gamma_k", "gamma_t", "temperature"}
_PATH_FIELDS = {"text_store", "audio_store", "speech_store", "manifest", "checkpoint", "output"}


def _validate_value(key: str, value):
    if key in _BOOL_FIELDS:
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r} must be a boolean, got {value!r}")
        return value
    if key in _INT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r} must be an integer, got {value!r}")
        return value
    if key in _FLOAT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} must be a number, got {value!r}")
        return float(value)
    if key in _PATH_FIELDS:
        if not isinstance(value, str):
            raise ConfigError(f"config key {key!r} must be a string path, got {value!r}")
        return value
    raise ConfigError(f"unknown config key {key!r}")


def read_config_file(path: str | Path) -> dict:
    """Parse a TOML config file into validated RunConfig field values."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = tomllib.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return {key: _validate_value(key, value) for key, value in raw.items()}


def resolve_config(
    config_path: str | Path | None = None,
    overrides: dict | None = None,
) -> tuple[RunConfig, dict]:
    """Layer defaults, config file, and explicit overrides.

    config_path=None falls back to the TEMPALIGN_CONFIG environment
    variable; an empty or unset variable means no file.  Returns the
    effective RunConfig plus the dict of explicitly set fields (file and
    override layers merged), which callers use to tell "set by the user"
    apart from "library default".
    """
    if config_path is None:
        env = os.environ.get(ENV_CONFIG_PATH, "").strip()
        config_path = env or None
    explicit: dict = {}
    if config_path is not None:
        explicit.update(read_config_file(config_path))
    if overrides:
        valid = {f.name for f in fields(RunConfig)}
        for key, value in overrides.items():
            if key not in valid:
                raise ConfigError(f"unknown config override {key!r}")
            if value is not None:
                explicit[key] = value
    return RunConfig(**explicit), explicit
