"""Monte Carlo validation studies on synthetic data with known truth.

Every study is a pure function of (dgp spec, reps, seed, settings). Replication
`r` draws its data with seed `derive_seed(seed, r)`; replications may run on
several workers without changing any number. Estimator failures are recorded
per replication and never abort a study.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy.stats import binomtest

from cidml.baseline import estimate_po
from cidml.crossfit import CrossFitResult, cross_fit
from cidml.dataset import Dataset, assign_folds
from cidml.errors import ArgumentError, CidmlError, EstimationError
from cidml.final_stage import AttEstimate, estimate_att
from cidml.models import NuisanceSpec
from cidml.reports import digest, json_safe, write_json
from cidml.synthgen import DgpSpec, generate, make_placebo
from cidml.weighting import EstimandSpec, apply_support_and_trim
from cidml.workers import derive_seed, map_ordered

log = logging.getLogger(__name__)

ESTIMATORS = ("dml", "po")
STUDY_KINDS = ("placebo", "ci_width", "coverage", "trimming")
MIN_COVERAGE_REPS = 50


@dataclass(frozen=True)
class EstimatorSettings:
    """Estimator knobs shared by all studies. Fixed penalties keep replications fast."""

    n_folds: int = 3
    outcome: NuisanceSpec = field(default_factory=lambda: NuisanceSpec("ridge", penalty=1.0))
    propensity: NuisanceSpec = field(default_factory=lambda: NuisanceSpec("logistic", penalty=1.0))
    estimand: EstimandSpec = field(default_factory=EstimandSpec)
    intercept: bool = False
    level: float = 0.95
    n_bins: int = 5
    n_bootstrap: int = 200
    po_penalty: float = 1.0

    @classmethod
    def from_pipeline(cls, cfg: Any) -> EstimatorSettings:
        """Take the estimator sections of a PipelineConfig."""
        return cls(
            n_folds=cfg.folds.n_folds,
            outcome=cfg.outcome_model,
            propensity=cfg.propensity_model,
            estimand=cfg.weighting.estimand,
            intercept=cfg.final_stage.intercept,
            level=cfg.confidence_level,
            n_bins=cfg.baseline.n_bins,
            n_bootstrap=cfg.baseline.n_bootstrap,
            po_penalty=cfg.baseline.penalty,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_folds": self.n_folds,
            "outcome_model": self.outcome.to_dict(),
            "propensity_model": self.propensity.to_dict(),
            "weighting": self.estimand.to_dict(),
            "intercept": self.intercept,
            "confidence_level": self.level,
            "n_bins": self.n_bins,
            "n_bootstrap": self.n_bootstrap,
            "po_penalty": self.po_penalty,
        }


@dataclass(frozen=True)
class StudyReport:
    kind: str
    records: list[dict[str, Any]]
    aggregates: dict[str, Any]
    config: dict[str, Any]
    seeds: dict[str, Any]
    failures: int = 0

    def to_dict(self) -> dict[str, Any]:
        body = {
            "kind": self.kind,
            "config": self.config,
            "seeds": self.seeds,
            "failures": self.failures,
            "aggregates": self.aggregates,
            "records": self.records,
        }
        body = json_safe(body)
        body["digest"] = digest(body)
        return body

    def records_frame(self) -> pd.DataFrame:
        return pd.DataFrame.from_records(self.records)

    def check_consistency(self) -> None:
        """Recompute aggregates from the stored records; they must match exactly."""
        again = json_safe(aggregate_records(self.kind, self.records, self.config))
        if again != json_safe(self.aggregates):
            raise EstimationError(f"{self.kind} study aggregates do not match its records")

    def write(self, json_path: str | Path, csv_path: str | Path | None = None) -> Path:
        self.check_consistency()
        out = write_json(json_path, self.to_dict())
        if csv_path is not None:
            p = Path(csv_path).expanduser()
            p.parent.mkdir(parents=True, exist_ok=True)
            self.records_frame().to_csv(p, index=False)
        return out


# -- shared estimator plumbing ---------------------------------------------


def _crossfit(ds: Dataset, settings: EstimatorSettings, seed: int) -> CrossFitResult:
    plan = assign_folds(ds.n, settings.n_folds, seed)
    return cross_fit(ds, plan, settings.outcome, settings.propensity, seed=seed)


def _dml(cf: CrossFitResult, settings: EstimatorSettings, estimand: EstimandSpec | None = None) -> AttEstimate:
    ws = apply_support_and_trim(cf, estimand or settings.estimand)
    return estimate_att(cf, ws, settings.level, intercept=settings.intercept)


def _po(ds: Dataset, cf: CrossFitResult, settings: EstimatorSettings, seed: int, n_bootstrap: int):
    return estimate_po(
        ds,
        cf.e_hat,
        n_bins=settings.n_bins,
        n_bootstrap=n_bootstrap,
        seed=seed,
        penalty=settings.po_penalty,
        level=settings.level,
    )


def _failure(e: CidmlError) -> str:
    return f"{type(e).__name__}: {e}"


def _finite(values: Iterable[Any]) -> np.ndarray:
    arr = np.array([np.nan if v is None else float(v) for v in values], dtype=float)
    return arr[np.isfinite(arr)]


def _mean(values: Iterable[Any]) -> float | None:
    a = _finite(values)
    return float(np.mean(a)) if a.size else None


def _mcse(values: Iterable[Any]) -> float | None:
    a = _finite(values)
    return float(np.std(a, ddof=1) / np.sqrt(a.size)) if a.size > 1 else None


def _sd(values: Iterable[Any]) -> float | None:
    a = _finite(values)
    return float(np.std(a, ddof=1)) if a.size > 1 else None


def _quantiles(values: Iterable[Any], qs: tuple[float, ...] = (0.05, 0.5, 0.95)) -> dict[str, float] | None:
    a = _finite(values)
    if not a.size:
        return None
    return {f"q{int(round(q * 100)):02d}": float(np.quantile(a, q)) for q in qs}


def _rate(values: Iterable[Any]) -> float | None:
    a = [bool(v) for v in values if v is not None]
    return float(np.mean(a)) if a else None


def _count_failed(records: list[dict[str, Any]]) -> int:
    return sum(1 for r in records for k, v in r.items() if k.endswith("_error") and v)


def _run_reps(
    one: Callable[[int, int], dict[str, Any]],
    reps: int,
    seed: int,
    n_jobs: int,
    progress: Callable[[], None] | None,
) -> tuple[list[dict[str, Any]], list[int]]:
    seeds = [derive_seed(seed, r) for r in range(reps)]

    def _task(r: int) -> dict[str, Any]:
        rec = {"rep": r, "seed": seeds[r], **one(r, seeds[r])}
        if progress is not None:
            progress()
        return rec

    return map_ordered(_task, list(range(reps)), n_jobs), seeds


def _check_reps(reps: int, minimum: int) -> None:
    if reps < minimum:
        raise ArgumentError(f"reps must be >= {minimum}, got {reps}")


# -- aggregates --------------------------------------------------------------


def _placebo_aggregates(records: list[dict[str, Any]], config: dict[str, Any]) -> dict[str, Any]:
    out: dict[str, Any] = {"n_records": len(records), "estimators": {}}
    for name in config["estimators"]:
        placebo = [r.get(f"{name}_placebo") for r in records]
        abs_err = [None if v is None else abs(v) for v in placebo]
        rel = [r.get(f"{name}_relative_error") for r in records]
        stats: dict[str, Any] = {
            "n_ok": int(_finite(placebo).size),
            "failures": sum(1 for r in records if r.get(f"{name}_error")),
            "mean_placebo": _mean(placebo),
            "mcse_placebo": _mcse(placebo),
            "mean_abs_placebo_error": _mean(abs_err),
            "mcse_abs_placebo_error": _mcse(abs_err),
            "mean_relative_placebo_error": _mean(rel),
        }
        if name == "dml":
            stats["ci_contains_zero_rate"] = _rate(r.get("dml_ci_contains_zero") for r in records)
        out["estimators"][name] = stats

    if set(ESTIMATORS) <= set(config["estimators"]):
        diffs = [
            abs(r["dml_placebo"]) - abs(r["po_placebo"])
            for r in records
            if r.get("dml_placebo") is not None and r.get("po_placebo") is not None
        ]
        nonzero = [d for d in diffs if d != 0.0]
        n_better = sum(1 for d in nonzero if d < 0)
        p_value = float(binomtest(n_better, len(nonzero), 0.5).pvalue) if nonzero else 1.0
        out["paired"] = {
            "n_pairs": len(diffs),
            "mean_abs_error_difference": _mean(diffs),
            "mcse_difference": _mcse(diffs),
            "n_dml_smaller": n_better,
            "n_ties": len(diffs) - len(nonzero),
            "sign_test_p_value": p_value,
        }
    return out


def _ci_width_aggregates(records: list[dict[str, Any]], config: dict[str, Any]) -> dict[str, Any]:
    ratio = [r.get("width_ratio") for r in records]
    dml_s = _mean(r.get("dml_seconds") for r in records)
    po_s = _mean(r.get("po_seconds") for r in records)
    return {
        "n_records": len(records),
        "failures": _count_failed(records),
        "mean_width_ratio": _mean(ratio),
        "sd_width_ratio": _sd(ratio),
        "width_ratio_quantiles": _quantiles(ratio),
        "mean_dml_scaled_width": _mean(r.get("dml_scaled_width") for r in records),
        "mean_po_scaled_width": _mean(r.get("po_scaled_width") for r in records),
        "mean_dml_width": _mean(r.get("dml_width") for r in records),
        "mean_po_width": _mean(r.get("po_width") for r in records),
        "mean_dml_seconds": dml_s,
        "mean_po_seconds": po_s,
        "runtime_ratio_seconds": None if not dml_s or po_s is None else po_s / dml_s,
    }


def _coverage_aggregates(records: list[dict[str, Any]], config: dict[str, Any]) -> dict[str, Any]:
    err = [
        None if r.get("beta") is None else r["beta"] - r["truth"]
        for r in records
    ]
    e = _finite(err)
    return {
        "n_records": len(records),
        "failures": _count_failed(records),
        "level": config["settings"]["confidence_level"],
        "coverage_hc": _rate(r.get("covered_hc") for r in records),
        "coverage_homoscedastic": _rate(r.get("covered_homoscedastic") for r in records),
        "bias": _mean(err),
        "mcse_bias": _mcse(err),
        "rmse": float(np.sqrt(np.mean(e**2))) if e.size else None,
        "mean_beta": _mean(r.get("beta") for r in records),
        "mean_width_hc": _mean(r.get("width_hc") for r in records),
        "mean_width_homoscedastic": _mean(r.get("width_homoscedastic") for r in records),
    }


def _trimming_aggregates(records: list[dict[str, Any]], config: dict[str, Any]) -> dict[str, Any]:
    paired = [r for r in records if r.get("width_trimmed") is not None and r.get("width_untrimmed") is not None]
    return {
        "n_records": len(records),
        "failures": _count_failed(records),
        "n_pairs": len(paired),
        "fraction_trimmed_narrower": _rate(r["width_trimmed"] < r["width_untrimmed"] for r in paired),
        "mean_width_trimmed": _mean(r["width_trimmed"] for r in paired),
        "mean_width_untrimmed": _mean(r["width_untrimmed"] for r in paired),
        "mean_abs_error_trimmed": _mean(abs(r["beta_trimmed"] - r["truth"]) for r in paired),
        "mean_abs_error_untrimmed": _mean(abs(r["beta_untrimmed"] - r["truth"]) for r in paired),
        "mean_dropped": _mean(r.get("n_dropped") for r in records),
    }


_AGGREGATORS: dict[str, Callable[[list[dict[str, Any]], dict[str, Any]], dict[str, Any]]] = {
    "placebo": _placebo_aggregates,
    "ci_width": _ci_width_aggregates,
    "coverage": _coverage_aggregates,
    "trimming": _trimming_aggregates,
}


def aggregate_records(kind: str, records: list[dict[str, Any]], config: dict[str, Any]) -> dict[str, Any]:
    try:
        fn = _AGGREGATORS[kind]
    except KeyError:
        raise ArgumentError(f"unknown study kind {kind!r}; expected one of {list(STUDY_KINDS)}") from None
    return json_safe(fn(json_safe(records), config))


def _report(
    kind: str,
    records: list[dict[str, Any]],
    config: dict[str, Any],
    master_seed: int,
    rep_seeds: list[int],
) -> StudyReport:
    records = json_safe(records)
    config = json_safe(config)
    report = StudyReport(
        kind=kind,
        records=records,
        aggregates=aggregate_records(kind, records, config),
        config=config,
        seeds={"master": master_seed, "replications": rep_seeds},
        failures=_count_failed(records),
    )
    if report.failures:
        log.warning("%s study: %d estimator failures over %d replications", kind, report.failures, len(records))
    return report


def _study_config(spec: DgpSpec, reps: int, settings: EstimatorSettings, **extra: Any) -> dict[str, Any]:
    return {"dgp": spec.to_dict(), "reps": reps, "settings": settings.to_dict(), **extra}


# -- studies -----------------------------------------------------------------


def run_placebo_study(
    spec: DgpSpec,
    estimators: Iterable[str] = ESTIMATORS,
    reps: int = 20,
    seed: int = 0,
    *,
    settings: EstimatorSettings | None = None,
    n_jobs: int = 1,
    progress: Callable[[], None] | None = None,
) -> StudyReport:
    """Estimate a fabricated event (true effect 0) next to the real one, per estimator.

    Both estimators see the same datasets and the same cross-fitted propensities.
    """
    _check_reps(reps, 2)
    chosen = tuple(sorted(set(estimators)))
    unknown = [e for e in chosen if e not in ESTIMATORS]
    if unknown or not chosen:
        raise ArgumentError(f"estimators must be a non-empty subset of {list(ESTIMATORS)}, got {list(estimators)}")
    settings = settings or EstimatorSettings()

    def _one(r: int, rep_seed: int) -> dict[str, Any]:
        ds, truth = generate(spec.with_seed(rep_seed))
        placebo = make_placebo(ds, truth, spec.with_seed(rep_seed))
        rec: dict[str, Any] = {"truth": truth.true_att}
        fits: dict[str, CrossFitResult | None] = {}
        for label, data in (("event", ds), ("placebo", placebo)):
            try:
                fits[label] = _crossfit(data, settings, rep_seed)
            except CidmlError as e:
                fits[label] = None
                for name in chosen:
                    rec[f"{name}_error"] = _failure(e)

        for name in chosen:
            values: dict[str, float | None] = {"event": None, "placebo": None}
            for label, data in (("event", ds), ("placebo", placebo)):
                cf = fits[label]
                if cf is None:
                    continue
                try:
                    if name == "dml":
                        att = _dml(cf, settings)
                        values[label] = att.beta
                        if label == "placebo":
                            rec["dml_placebo_se"] = att.se_hc
                            rec["dml_ci_contains_zero"] = att.ci_hc[0] <= 0.0 <= att.ci_hc[1]
                    else:
                        values[label] = _po(data, cf, settings, rep_seed, 0).att
                except CidmlError as e:
                    rec[f"{name}_error"] = _failure(e)
            rec[f"{name}_placebo"] = values["placebo"]
            rec[f"{name}_event"] = values["event"]
            ev, pl = values["event"], values["placebo"]
            rec[f"{name}_relative_error"] = abs(pl) / abs(ev) if pl is not None and ev else None
            rec.setdefault(f"{name}_error", None)
        return rec

    records, seeds = _run_reps(_one, reps, seed, n_jobs, progress)
    config = _study_config(spec, reps, settings, estimators=list(chosen))
    return _report("placebo", records, config, seed, seeds)


def run_ci_width_study(
    spec: DgpSpec,
    reps: int = 20,
    seed: int = 0,
    *,
    settings: EstimatorSettings | None = None,
    n_jobs: int = 1,
    progress: Callable[[], None] | None = None,
) -> StudyReport:
    """DML HC interval against the bootstrap PO interval, both scaled by the PO point estimate."""
    _check_reps(reps, 2)
    settings = settings or EstimatorSettings()
    if settings.n_bootstrap <= 0:
        raise ArgumentError("the CI-width study needs n_bootstrap > 0")

    def _one(r: int, rep_seed: int) -> dict[str, Any]:
        ds, truth = generate(spec.with_seed(rep_seed))
        rec: dict[str, Any] = {"truth": truth.true_att, "dml_error": None, "po_error": None}
        try:
            t0 = time.perf_counter()
            cf = _crossfit(ds, settings, rep_seed)
            t1 = time.perf_counter()
            att = _dml(cf, settings)
            t2 = time.perf_counter()
        except CidmlError as e:
            rec["dml_error"] = _failure(e)
            return rec
        rec.update(
            dml_beta=att.beta,
            dml_width=att.width_hc,
            crossfit_seconds=t1 - t0,
            dml_seconds=t2 - t0,
        )
        try:
            po = _po(ds, cf, settings, rep_seed, settings.n_bootstrap)
        except CidmlError as e:
            rec["po_error"] = _failure(e)
            return rec
        scale = abs(po.att)
        rec.update(
            po_att=po.att,
            po_width=po.width,
            po_bootstrap_failed=po.n_bootstrap_failed,
            po_seconds=po.runtime_seconds,
            dml_scaled_width=att.width_hc / scale if scale > 0 else None,
            po_scaled_width=po.width / scale if scale > 0 and po.width is not None else None,
            width_ratio=att.width_hc / po.width if po.width else None,
        )
        return rec

    records, seeds = _run_reps(_one, reps, seed, n_jobs, progress)
    return _report("ci_width", records, _study_config(spec, reps, settings), seed, seeds)


def run_coverage_study(
    spec: DgpSpec,
    reps: int = 200,
    level: float = 0.95,
    seed: int = 0,
    *,
    settings: EstimatorSettings | None = None,
    n_jobs: int = 1,
    progress: Callable[[], None] | None = None,
) -> StudyReport:
    """Share of replications whose interval contains the DGP's true effect; bias and RMSE of beta."""
    _check_reps(reps, MIN_COVERAGE_REPS)
    if not 0.0 < level < 1.0:
        raise ArgumentError(f"level must be in (0, 1), got {level}")
    base = settings or EstimatorSettings()
    settings = replace(base, level=level)

    def _one(r: int, rep_seed: int) -> dict[str, Any]:
        ds, truth = generate(spec.with_seed(rep_seed))
        target = truth.true_att if settings.estimand.kind == "ATT" else truth.true_ate
        rec: dict[str, Any] = {"truth": target, "dml_error": None}
        try:
            att = _dml(_crossfit(ds, settings, rep_seed), settings)
        except CidmlError as e:
            rec["dml_error"] = _failure(e)
            return rec
        rec.update(
            beta=att.beta,
            se_hc=att.se_hc,
            se_homoscedastic=att.se_homoscedastic,
            covered_hc=att.ci_hc[0] <= target <= att.ci_hc[1],
            covered_homoscedastic=att.ci_homoscedastic[0] <= target <= att.ci_homoscedastic[1],
            width_hc=att.width_hc,
            width_homoscedastic=att.width_homoscedastic,
        )
        return rec

    records, seeds = _run_reps(_one, reps, seed, n_jobs, progress)
    return _report("coverage", records, _study_config(spec, reps, settings, level=level), seed, seeds)


def run_trimming_study(
    spec: DgpSpec,
    reps: int = 100,
    seed: int = 0,
    *,
    settings: EstimatorSettings | None = None,
    n_jobs: int = 1,
    progress: Callable[[], None] | None = None,
) -> StudyReport:
    """Paired comparison of the filtered estimate against rescaling, support and trimming all off."""
    _check_reps(reps, 2)
    settings = settings or EstimatorSettings()
    raw = EstimandSpec.unfiltered(settings.estimand.kind)

    def _one(r: int, rep_seed: int) -> dict[str, Any]:
        ds, truth = generate(spec.with_seed(rep_seed))
        rec: dict[str, Any] = {"truth": truth.true_att, "dml_error": None}
        try:
            cf = _crossfit(ds, settings, rep_seed)
            ws = apply_support_and_trim(cf, settings.estimand)
            trimmed = estimate_att(cf, ws, settings.level, intercept=settings.intercept)
            untrimmed = _dml(cf, settings, raw)
        except CidmlError as e:
            rec["dml_error"] = _failure(e)
            return rec
        rec.update(
            beta_trimmed=trimmed.beta,
            beta_untrimmed=untrimmed.beta,
            width_trimmed=trimmed.width_hc,
            width_untrimmed=untrimmed.width_hc,
            n_dropped=ws.drop_log.total,
        )
        return rec

    records, seeds = _run_reps(_one, reps, seed, n_jobs, progress)
    return _report("trimming", records, _study_config(spec, reps, settings), seed, seeds)
