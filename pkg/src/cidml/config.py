from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import tomllib

from cidml.errors import ConfigError


def _default_home() -> Path:
    return Path(os.environ.get("CIDML_HOME", Path.home() / ".cidml")).expanduser()


def _safe_toml_str(value: str) -> str:
    # TOML basic string; settings values are plain paths
    escaped = value.replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'


@dataclass(frozen=True)
class CidmlSettings:
    """Local tool settings; never part of a pipeline's numeric inputs."""

    n_jobs: int = 1
    output_dir: str = "output"

    @property
    def home_dir(self) -> Path:
        return _default_home()

    @property
    def config_path(self) -> Path:
        return self.home_dir / "config.toml"

    @property
    def output_dir_path(self) -> Path:
        return Path(self.output_dir).expanduser()

    def as_dict(self) -> dict[str, Any]:
        return {
            "n_jobs": self.n_jobs,
            "output_dir": str(self.output_dir_path),
            "CIDML_HOME": str(self.home_dir),
            "config": str(self.config_path),
        }


def load_settings() -> CidmlSettings:
    path = _default_home() / "config.toml"
    if not path.exists():
        return CidmlSettings()
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid settings file {path}: {e}") from e

    unknown = set(data) - {"n_jobs", "output_dir"}
    if unknown:
        raise ConfigError(f"unknown settings in {path}: {sorted(unknown)}")
    n_jobs = data.get("n_jobs", 1)
    if not isinstance(n_jobs, int) or isinstance(n_jobs, bool) or n_jobs < 1:
        raise ConfigError(f"n_jobs must be a positive integer in {path}")
    return CidmlSettings(n_jobs=n_jobs, output_dir=str(data.get("output_dir", "output")))


def save_settings(settings: CidmlSettings) -> None:
    settings.home_dir.mkdir(parents=True, exist_ok=True)
    lines: list[str] = []
    for key, value in {"n_jobs": settings.n_jobs, "output_dir": settings.output_dir}.items():
        if not re.fullmatch(r"[a-zA-Z0-9_]+", key):
            raise ValueError(f"Invalid config key: {key}")
        if isinstance(value, int):
            lines.append(f"{key} = {value}")
        else:
            lines.append(f"{key} = {_safe_toml_str(str(value))}")
    settings.config_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
