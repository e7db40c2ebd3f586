from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from cidml.dataset import Dataset
from cidml.models import NuisanceSpec
from cidml.synthgen import DgpSpec, EffectSpec, generate
from cidml.validation import EstimatorSettings

SEED = 20240611


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(SEED)


@pytest.fixture
def small_spec() -> DgpSpec:
    return DgpSpec(n=600, m=3, effect=EffectSpec(tau=5.0), seed=7)


@pytest.fixture
def small_ds(small_spec: DgpSpec) -> Dataset:
    ds, _ = generate(small_spec)
    return ds


@pytest.fixture
def fast_settings() -> EstimatorSettings:
    return EstimatorSettings(
        outcome=NuisanceSpec("ridge", penalty=1.0),
        propensity=NuisanceSpec("logistic", penalty=1.0),
        n_bootstrap=20,
    )


@pytest.fixture
def write_config(tmp_path: Path):
    """Write a pipeline config dict to disk; outputs default into tmp_path."""

    def _write(cfg: dict, name: str = "config.json") -> Path:
        cfg = dict(cfg)
        cfg.setdefault(
            "outputs",
            {
                "report": str(tmp_path / "out" / "report.json"),
                "effects": str(tmp_path / "out" / "effects.csv"),
                "explained_variance": str(tmp_path / "out" / "explained_variance.csv"),
                "plot_dir": str(tmp_path / "out" / "plots"),
            },
        )
        p = tmp_path / name
        p.write_text(json.dumps(cfg), encoding="utf-8")
        return p

    return _write


def synthetic_config(n: int = 800, *, tau: float = 5.0, seed: int = 3, **sections) -> dict:
    cfg = {
        "data": {"synthetic": {"n": n, "m": 4, "effect": {"kind": "constant", "tau": tau}, "seed": seed}},
        "outcome_model": {"name": "ridge", "penalty": 1.0},
        "propensity_model": {"name": "logistic", "penalty": 1.0},
        "hetero": {"k": 4, "n_init": 2},
    }
    cfg.update(sections)
    return cfg
