from __future__ import annotations

import json

import numpy as np
import pytest

from cidml.errors import ConfigError
from cidml.models import DEFAULT_GRID
from cidml.pipeline_config import parse_config, parse_config_object, parse_dgp_spec

MINIMAL = {
    "data": {"path": "customers.csv"},
    "outcome_model": "ridge",
    "propensity_model": "logistic",
}


def _parse(cfg: dict):
    return parse_config(json.dumps(cfg))


def test_defaults_filled_in():
    cfg = _parse(MINIMAL)
    assert cfg.folds.n_folds == 3
    assert cfg.weighting.estimand.kind == "ATT"
    assert cfg.weighting.estimand.alpha == 0.001
    assert cfg.weighting.estimand.rescale is True
    assert cfg.final_stage.intercept is False
    assert cfg.hetero.target_variance == 0.8
    assert cfg.hetero.k == 20
    assert cfg.baseline.enabled is False
    assert cfg.outcome_model.penalty is None
    assert cfg.outcome_model.grid == DEFAULT_GRID
    assert cfg.propensity_model.max_iter == 100
    assert cfg.confidence_level == 0.95
    assert cfg.data.schema.id == "customer_id"


@pytest.mark.parametrize(
    "patch, path",
    [
        ({"propencity_model": "logistic"}, "$.propencity_model"),
        ({"weighting": {"alpah": 0.01}}, "$.weighting.alpah"),
        ({"outcome_model": {"name": "ridge", "max_iter": 5}}, "$.outcome_model.max_iter"),
        ({"hetero": {"k": 1}}, "$.hetero.k"),
        ({"folds": {"n_folds": 1}}, "$.folds.n_folds"),
        ({"weighting": {"alpha": 0.5}}, "$.weighting.alpha"),
        ({"weighting": {"estimand": "ATC"}}, "$.weighting.estimand"),
        ({"confidence_level": 1.0}, "$.confidence_level"),
        ({"hetero": {"target_variance": 0.0}}, "$.hetero.target_variance"),
        ({"hetero": {"target_variance": 0.9, "n_components": 2}}, "$.hetero.target_variance"),
        ({"outcome_model": {"name": "ridge", "penalty": -1}}, "$.outcome_model.penalty"),
        ({"outcome_model": "forest"}, "$.outcome_model.name"),
        ({"baseline": {"n_bootstrap": "many"}}, "$.baseline.n_bootstrap"),
        ({"folds": {"n_folds": 3.0}}, "$.folds.n_folds"),
    ],
)
def test_invalid_values_name_their_path(patch, path):
    with pytest.raises(ConfigError) as exc:
        _parse({**MINIMAL, **patch})
    assert exc.value.path == path
    assert exc.value.exit_code == 2
    assert path in str(exc.value)


def test_unknown_model_lists_registered():
    with pytest.raises(ConfigError, match="ridge"):
        _parse({**MINIMAL, "outcome_model": "forest"})


def test_missing_required_sections():
    with pytest.raises(ConfigError) as exc:
        _parse({"data": {"path": "x.csv"}, "outcome_model": "ridge"})
    assert exc.value.path == "$.propensity_model"
    with pytest.raises(ConfigError):
        _parse({**MINIMAL, "data": {}})
    with pytest.raises(ConfigError):
        _parse({**MINIMAL, "data": {"path": "x.csv", "synthetic": {"n": 10}}})


def test_syntax_error_reports_position():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config('{"data":\n  {"path": }')


def test_non_finite_numbers_rejected():
    with pytest.raises(ConfigError):
        parse_config('{"data": {"path": "x"}, "outcome_model": "ridge", '
                     '"propensity_model": "logistic", "confidence_level": NaN}')


def test_top_level_must_be_object():
    with pytest.raises(ConfigError):
        parse_config("[1, 2]")


def test_synthetic_data_section():
    cfg = _parse(
        {
            **MINIMAL,
            "data": {
                "synthetic": {
                    "n": 100,
                    "m": 3,
                    "effect": {"kind": "segmented", "segment_taus": [1, 2, 3]},
                    "seed": 4,
                }
            },
        }
    )
    assert cfg.data.synthetic.n == 100
    assert cfg.data.synthetic.effect.segment_taus == (1.0, 2.0, 3.0)
    assert cfg.seeds()["data"] == 4
    assert cfg.with_seed(9).seeds() == {"folds": 9, "hetero": 9, "baseline": 9, "data": 9}


def test_dgp_spec_rejects_unknown_keys():
    assert parse_dgp_spec('{"n": 50, "m": 2}').n == 50
    with pytest.raises(ConfigError) as exc:
        parse_dgp_spec('{"n": 50, "effect": {"kind": "constant", "taus": 1}}')
    assert exc.value.path == "$.effect.taus"
    with pytest.raises(ConfigError):
        parse_dgp_spec('{"effect": {"kind": "segmented", "segment_taus": [1]}}')


def _random_config(rng: np.random.Generator) -> dict:
    cfg: dict = {
        "outcome_model": {"name": "ridge", "standardize": bool(rng.integers(2))},
        "propensity_model": {"name": "logistic", "max_iter": int(rng.integers(5, 200))},
        "folds": {"n_folds": int(rng.integers(2, 10)), "seed": int(rng.integers(1000))},
        "weighting": {
            "estimand": str(rng.choice(["ATT", "ATE"])),
            "alpha": float(rng.uniform(0, 0.2)),
            "rescale": bool(rng.integers(2)),
            "common_support": bool(rng.integers(2)),
            "compare_untrimmed": bool(rng.integers(2)),
        },
        "final_stage": {"intercept": bool(rng.integers(2))},
        "baseline": {"enabled": bool(rng.integers(2)), "n_bins": int(rng.integers(1, 10))},
        "confidence_level": float(rng.uniform(0.5, 0.99)),
    }
    if rng.integers(2):
        cfg["data"] = {"synthetic": {"n": int(rng.integers(10, 1000)), "seed": int(rng.integers(50))}}
    else:
        cfg["data"] = {"path": f"d{rng.integers(9)}.jsonl", "format": "jsonl"}
    if rng.integers(2):
        cfg["outcome_model"]["penalty"] = float(rng.uniform(0, 10))
    if rng.integers(2):
        cfg["hetero"] = {"n_components": int(rng.integers(1, 5)), "k": int(rng.integers(2, 30))}
    else:
        cfg["hetero"] = {"target_variance": float(rng.uniform(0.1, 1.0)), "variance": "homoscedastic"}
    return cfg


@pytest.mark.parametrize("seed", range(50))
def test_resolved_config_is_a_fixpoint(seed):
    cfg = parse_config_object(_random_config(np.random.default_rng(seed)))
    again = parse_config(cfg.to_json())
    assert again == cfg
    assert again.to_json() == cfg.to_json()
