from __future__ import annotations

from pathlib import Path

from cidml.errors import ConfigError
from cidml.pipeline_config import PipelineConfig, parse_config, parse_dgp_spec
from cidml.synthgen import DgpSpec


def read_text(path: str, what: str) -> str:
    p = Path(path).expanduser()
    if not p.is_file():
        raise ConfigError(f"{what} file not found: {p}")
    return p.read_text(encoding="utf-8")


def read_config(path: str) -> PipelineConfig:
    return parse_config(read_text(path, "config"))


def read_spec(path: str) -> DgpSpec:
    return parse_dgp_spec(read_text(path, "spec"))
