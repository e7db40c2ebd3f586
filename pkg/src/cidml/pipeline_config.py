"""Strict JSON pipeline configuration.

Every object is closed: unknown keys are rejected with their JSON path. The
resolved configuration (all defaults filled in) serializes back to JSON that
parses to the same configuration.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any

from cidml.dataset import Schema
from cidml.errors import ArgumentError, ConfigError
from cidml.models import DEFAULT_GRID, NuisanceSpec, registered_names
from cidml.synthgen import DgpSpec, EffectSpec
from cidml.weighting import EstimandSpec

_MISSING = object()


class _Obj:
    """Reads one JSON object, tracking which keys were consumed."""

    def __init__(self, value: Any, path: str) -> None:
        if not isinstance(value, dict):
            raise ConfigError(f"expected an object, got {_type_name(value)}", path=path)
        self.value = value
        self.path = path
        self.seen: set[str] = set()

    def _get(self, key: str, default: Any) -> Any:
        self.seen.add(key)
        if key in self.value:
            return self.value[key]
        if default is _MISSING:
            raise ConfigError("required key is missing", path=f"{self.path}.{key}")
        return default

    def sub(self, key: str) -> str:
        return f"{self.path}.{key}"

    def bool(self, key: str, default: Any = _MISSING) -> bool:
        v = self._get(key, default)
        if not isinstance(v, bool):
            raise ConfigError(f"expected a boolean, got {_type_name(v)}", path=self.sub(key))
        return v

    def int(self, key: str, default: Any = _MISSING, *, minimum: int | None = None) -> int:
        v = self._get(key, default)
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"expected an integer, got {_type_name(v)}", path=self.sub(key))
        if minimum is not None and v < minimum:
            raise ConfigError(f"must be >= {minimum}, got {v}", path=self.sub(key))
        return v

    def opt_int(self, key: str, *, minimum: int | None = None) -> int | None:
        if self.value.get(key) is None:
            self.seen.add(key)
            return None
        return self.int(key, minimum=minimum)

    def float(self, key: str, default: Any = _MISSING) -> float:
        v = self._get(key, default)
        return _as_float(v, self.sub(key))

    def opt_float(self, key: str) -> float | None:
        if self.value.get(key) is None:
            self.seen.add(key)
            return None
        return self.float(key)

    def str(self, key: str, default: Any = _MISSING, *, choices: tuple[str, ...] | None = None) -> str:
        v = self._get(key, default)
        if not isinstance(v, str):
            raise ConfigError(f"expected a string, got {_type_name(v)}", path=self.sub(key))
        if choices is not None and v not in choices:
            raise ConfigError(f"must be one of {list(choices)}, got {v!r}", path=self.sub(key))
        return v

    def opt_str(self, key: str) -> str | None:
        if self.value.get(key) is None:
            self.seen.add(key)
            return None
        return self.str(key)

    def float_list(self, key: str, default: Any = _MISSING) -> tuple[float, ...]:
        v = self._get(key, default)
        if not isinstance(v, (list, tuple)):
            raise ConfigError(f"expected a list, got {_type_name(v)}", path=self.sub(key))
        return tuple(_as_float(x, f"{self.sub(key)}[{i}]") for i, x in enumerate(v))

    def obj(self, key: str, default: Any = _MISSING) -> _Obj:
        v = self._get(key, default)
        return _Obj(v, self.sub(key))

    def has(self, key: str) -> bool:
        return key in self.value and self.value[key] is not None

    def finish(self) -> None:
        unknown = sorted(set(self.value) - self.seen)
        if unknown:
            raise ConfigError(f"unknown key {unknown[0]!r}", path=f"{self.path}.{unknown[0]}")


def _type_name(v: Any) -> str:
    if v is None:
        return "null"
    return {bool: "boolean", int: "integer", float: "number", str: "string", list: "list", dict: "object"}.get(
        type(v), type(v).__name__
    )


def _as_float(v: Any, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {_type_name(v)}", path=path)
    f = float(v)
    if not math.isfinite(f):
        raise ConfigError("number must be finite", path=path)
    return f


def _checked(path: str, build):
    # domain validation inside the dataclasses raises ArgumentError; re-home it at `path`
    try:
        return build()
    except ArgumentError as e:
        raise ConfigError(e.message, path=path) from e


@dataclass(frozen=True)
class DataConfig:
    path: str | None = None
    format: str | None = None
    schema: Schema = field(default_factory=Schema)
    synthetic: DgpSpec | None = None

    def to_dict(self) -> dict[str, Any]:
        if self.synthetic is not None:
            return {"synthetic": self.synthetic.to_dict()}
        return {"path": self.path, "format": self.format, "schema": self.schema.to_dict()}


@dataclass(frozen=True)
class FoldsConfig:
    n_folds: int = 3
    seed: int = 0


@dataclass(frozen=True)
class WeightingConfig:
    estimand: EstimandSpec = field(default_factory=EstimandSpec)
    compare_untrimmed: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {**self.estimand.to_dict(), "compare_untrimmed": self.compare_untrimmed}


@dataclass(frozen=True)
class FinalStageConfig:
    intercept: bool = False


@dataclass(frozen=True)
class HeteroConfig:
    enabled: bool = True
    target_variance: float | None = 0.80
    n_components: int | None = None
    k: int = 20
    seed: int = 0
    n_init: int = 10
    max_iter: int = 300
    standardize: bool = True
    scale_components: bool = True
    include_controls: bool = False
    variance: str = "hc"
    histogram_bins: int = 30


@dataclass(frozen=True)
class BaselineConfig:
    enabled: bool = False
    n_bins: int = 5
    n_bootstrap: int = 200
    seed: int = 0
    penalty: float = 1.0
    standardize: bool = True


@dataclass(frozen=True)
class OutputsConfig:
    report: str = "output/report.json"
    effects: str = "output/customer_effects.csv"
    explained_variance: str = "output/explained_variance.csv"
    plots: bool = False
    plot_dir: str = "output/plots"


@dataclass(frozen=True)
class PipelineConfig:
    data: DataConfig
    outcome_model: NuisanceSpec
    propensity_model: NuisanceSpec
    folds: FoldsConfig = field(default_factory=FoldsConfig)
    weighting: WeightingConfig = field(default_factory=WeightingConfig)
    final_stage: FinalStageConfig = field(default_factory=FinalStageConfig)
    hetero: HeteroConfig = field(default_factory=HeteroConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    outputs: OutputsConfig = field(default_factory=OutputsConfig)
    confidence_level: float = 0.95

    def with_seed(self, seed: int) -> PipelineConfig:
        """Override every seed in the configuration (CLI --seed)."""
        data = self.data
        if data.synthetic is not None:
            data = replace(data, synthetic=data.synthetic.with_seed(seed))
        return replace(
            self,
            data=data,
            folds=replace(self.folds, seed=seed),
            hetero=replace(self.hetero, seed=seed),
            baseline=replace(self.baseline, seed=seed),
        )

    def seeds(self) -> dict[str, int]:
        out = {"folds": self.folds.seed, "hetero": self.hetero.seed, "baseline": self.baseline.seed}
        if self.data.synthetic is not None:
            out["data"] = self.data.synthetic.seed
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "data": self.data.to_dict(),
            "folds": {"n_folds": self.folds.n_folds, "seed": self.folds.seed},
            "outcome_model": self.outcome_model.to_dict(),
            "propensity_model": self.propensity_model.to_dict(),
            "weighting": self.weighting.to_dict(),
            "final_stage": {"intercept": self.final_stage.intercept},
            "hetero": dict(self.hetero.__dict__),
            "baseline": dict(self.baseline.__dict__),
            "outputs": dict(self.outputs.__dict__),
            "confidence_level": self.confidence_level,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _reject_constant(name: str) -> Any:
    raise ConfigError(f"{name} is not allowed in configuration numbers")


def load_json(text: str) -> Any:
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e


def _parse_schema(o: _Obj) -> Schema:
    features: tuple[str, ...] | None = None
    o.seen.add("features")
    raw = o.value.get("features")
    if raw is not None:
        if not isinstance(raw, list) or not raw or not all(isinstance(f, str) for f in raw):
            raise ConfigError("expected a non-empty list of column names", path=o.sub("features"))
        features = tuple(raw)
    schema = Schema(
        id=o.str("id", "customer_id"),
        treatment=o.str("treatment", "treatment"),
        outcome=o.str("outcome", "outcome"),
        features=features,
    )
    o.finish()
    return schema


def _parse_effect(o: _Obj) -> EffectSpec:
    kind = o.str("kind", "constant", choices=("constant", "segmented"))
    if kind == "constant":
        eff = _checked(o.path, lambda: EffectSpec(kind="constant", tau=o.float("tau", 5.0)))
    else:
        taus = o.float_list("segment_taus")
        shift = o.float("segment_shift", 3.0)
        eff = _checked(o.path, lambda: EffectSpec(kind="segmented", segment_taus=taus, segment_shift=shift))
    o.finish()
    return eff


def parse_dgp_object(value: Any, path: str = "$") -> DgpSpec:
    o = _Obj(value, path)
    effect = _parse_effect(o.obj("effect", {}))
    spec = _checked(
        path,
        lambda: DgpSpec(
            n=o.int("n", 20000, minimum=1),
            m=o.int("m", 5, minimum=1),
            effect=effect,
            confounding_strength=o.float("confounding_strength", 1.0),
            noise_sd=o.float("noise_sd", 1.0),
            heteroscedastic=o.bool("heteroscedastic", False),
            seed=o.int("seed", 0),
        ),
    )
    o.finish()
    return spec


def parse_dgp_spec(text: str) -> DgpSpec:
    return parse_dgp_object(load_json(text))


def _parse_data(o: _Obj) -> DataConfig:
    if o.has("synthetic") and o.has("path"):
        raise ConfigError("give either path or synthetic, not both", path=o.path)
    if o.has("synthetic"):
        cfg = DataConfig(synthetic=parse_dgp_object(o.value["synthetic"], o.sub("synthetic")))
        o.seen.add("synthetic")
    elif o.has("path"):
        cfg = DataConfig(
            path=o.str("path"),
            format=_opt_choice(o, "format", ("csv", "jsonl")),
            schema=_parse_schema(o.obj("schema", {})),
        )
    else:
        raise ConfigError("data needs a path or a synthetic spec", path=o.path)
    o.finish()
    return cfg


def _opt_choice(o: _Obj, key: str, choices: tuple[str, ...]) -> str | None:
    if o.value.get(key) is None:
        o.seen.add(key)
        return None
    return o.str(key, choices=choices)


def _parse_model(value: Any, path: str, role: str, default_name: str) -> NuisanceSpec:
    names = registered_names(role)  # type: ignore[arg-type]
    if isinstance(value, str):
        value = {"name": value}
    o = _Obj(value, path)
    name = o.str("name", default_name)
    if name not in names:
        raise ConfigError(f"unknown {role} model {name!r}; registered: {names}", path=o.sub("name"))
    spec = NuisanceSpec(name=name)
    allowed = spec.entry.options
    extra = sorted(set(o.value) - allowed)
    if extra:
        raise ConfigError(f"unknown key {extra[0]!r}", path=o.sub(extra[0]))

    penalty = o.opt_float("penalty")
    if penalty is not None and penalty < 0:
        raise ConfigError("penalty must be >= 0", path=o.sub("penalty"))
    grid = o.float_list("grid", list(DEFAULT_GRID))
    if penalty is None and not grid:
        raise ConfigError("grid must not be empty when penalty is null", path=o.sub("grid"))
    if any(g < 0 for g in grid):
        raise ConfigError("grid values must be >= 0", path=o.sub("grid"))
    spec = replace(spec, penalty=penalty, grid=grid, standardize=o.bool("standardize", True))
    if "max_iter" in allowed:
        spec = replace(spec, max_iter=o.int("max_iter", 100, minimum=1), tol=o.float("tol", 1e-8))
        if not spec.tol > 0:
            raise ConfigError("tol must be > 0", path=o.sub("tol"))
    o.finish()
    return spec


def _parse_weighting(o: _Obj) -> WeightingConfig:
    kind = o.str("estimand", "ATT", choices=("ATT", "ATE"))
    alpha = o.float("alpha", 0.001)
    if not 0.0 <= alpha < 0.5:
        raise ConfigError(f"must be in [0, 0.5), got {alpha}", path=o.sub("alpha"))
    cfg = WeightingConfig(
        estimand=EstimandSpec(
            kind=kind,  # type: ignore[arg-type]
            alpha=alpha,
            rescale=o.bool("rescale", True),
            common_support=o.bool("common_support", True),
        ),
        compare_untrimmed=o.bool("compare_untrimmed", False),
    )
    o.finish()
    return cfg


def _parse_hetero(o: _Obj) -> HeteroConfig:
    n_components = o.opt_int("n_components", minimum=1)
    if n_components is not None:
        o.seen.add("target_variance")
        if o.value.get("target_variance") is not None:
            raise ConfigError("give target_variance or n_components, not both", path=o.sub("target_variance"))
        target = None
    else:
        target = o.float("target_variance", 0.80)
        if not 0.0 < target <= 1.0:
            raise ConfigError(f"must be in (0, 1], got {target}", path=o.sub("target_variance"))
    cfg = HeteroConfig(
        enabled=o.bool("enabled", True),
        target_variance=target,
        n_components=n_components,
        k=o.int("k", 20, minimum=2),
        seed=o.int("seed", 0),
        n_init=o.int("n_init", 10, minimum=1),
        max_iter=o.int("max_iter", 300, minimum=1),
        standardize=o.bool("standardize", True),
        scale_components=o.bool("scale_components", True),
        include_controls=o.bool("include_controls", False),
        variance=o.str("variance", "hc", choices=("hc", "homoscedastic")),
        histogram_bins=o.int("histogram_bins", 30, minimum=1),
    )
    o.finish()
    return cfg


def _parse_baseline(o: _Obj) -> BaselineConfig:
    penalty = o.float("penalty", 1.0)
    if penalty < 0:
        raise ConfigError("penalty must be >= 0", path=o.sub("penalty"))
    cfg = BaselineConfig(
        enabled=o.bool("enabled", False),
        n_bins=o.int("n_bins", 5, minimum=1),
        n_bootstrap=o.int("n_bootstrap", 200, minimum=0),
        seed=o.int("seed", 0),
        penalty=penalty,
        standardize=o.bool("standardize", True),
    )
    o.finish()
    return cfg


def _parse_outputs(o: _Obj) -> OutputsConfig:
    d = OutputsConfig()
    cfg = OutputsConfig(
        report=o.str("report", d.report),
        effects=o.str("effects", d.effects),
        explained_variance=o.str("explained_variance", d.explained_variance),
        plots=o.bool("plots", d.plots),
        plot_dir=o.str("plot_dir", d.plot_dir),
    )
    o.finish()
    return cfg


def parse_config_object(value: Any) -> PipelineConfig:
    root = _Obj(value, "$")
    data = _parse_data(root.obj("data"))
    root.seen.update({"outcome_model", "propensity_model"})
    if "outcome_model" not in root.value:
        raise ConfigError("required key is missing", path="$.outcome_model")
    if "propensity_model" not in root.value:
        raise ConfigError("required key is missing", path="$.propensity_model")
    outcome = _parse_model(root.value["outcome_model"], "$.outcome_model", "outcome", "ridge")
    propensity = _parse_model(root.value["propensity_model"], "$.propensity_model", "propensity", "logistic")

    folds_o = root.obj("folds", {})
    folds = FoldsConfig(n_folds=folds_o.int("n_folds", 3, minimum=2), seed=folds_o.int("seed", 0))
    folds_o.finish()

    final_o = root.obj("final_stage", {})
    final = FinalStageConfig(intercept=final_o.bool("intercept", False))
    final_o.finish()

    level = root.float("confidence_level", 0.95)
    if not 0.0 < level < 1.0:
        raise ConfigError(f"must be in (0, 1), got {level}", path="$.confidence_level")

    cfg = PipelineConfig(
        data=data,
        outcome_model=outcome,
        propensity_model=propensity,
        folds=folds,
        weighting=_parse_weighting(root.obj("weighting", {})),
        final_stage=final,
        hetero=_parse_hetero(root.obj("hetero", {})),
        baseline=_parse_baseline(root.obj("baseline", {})),
        outputs=_parse_outputs(root.obj("outputs", {})),
        confidence_level=level,
    )
    root.finish()
    return cfg


def parse_config(text: str) -> PipelineConfig:
    """Parse and validate a JSON pipeline configuration, filling defaults."""
    return parse_config_object(load_json(text))
