"""End-to-end pipeline: load, folds, cross-fit, weighting, final stage, heterogeneity, baseline.

`run_pipeline` is a sequential stage graph. Any stage error is re-raised with the
stage name attached and the timings recorded so far in its details.
"""

from __future__ import annotations

import hashlib
import logging
import time
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from cidml import __version__
from cidml.baseline import PoEstimate, estimate_po
from cidml.crossfit import CrossFitResult, cross_fit
from cidml.dataset import Dataset, FoldPlan, assign_folds, load_dataset
from cidml.errors import ArgumentError, CidmlError, ConfigError, EstimationError
from cidml.final_stage import AttEstimate, estimate_att
from cidml.hetero import (
    EffectTable,
    HeteroModel,
    HeteroSummary,
    PcaBasis,
    cluster_score_matrix,
    customer_effects,
    fit_hetero_stage,
    fit_kmeans,
    fit_pca,
    summarize_effects,
)
from cidml.pipeline_config import PipelineConfig
from cidml.reports import SCHEMA_VERSION, digest, json_safe, write_json
from cidml.synthgen import DgpTruth, generate
from cidml.weighting import EstimandSpec, WeightedSample, apply_support_and_trim

log = logging.getLogger(__name__)

OVERLAP_QUANTILES = (0.0, 0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99, 1.0)


@dataclass
class RunReport:
    config: PipelineConfig
    dataset: Dataset
    fold_plan: FoldPlan
    crossfit: CrossFitResult
    weighted: WeightedSample
    att: AttEstimate
    untrimmed: AttEstimate | None = None
    truth: DgpTruth | None = None
    basis: PcaBasis | None = None
    hetero: HeteroModel | None = None
    effects: EffectTable | None = None
    effects_mask: np.ndarray | None = None
    hetero_summary: HeteroSummary | None = None
    baseline: PoEstimate | None = None
    timings: dict[str, float] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)

    def effects_frame(self) -> pd.DataFrame | None:
        if self.effects is None:
            return None
        frame = self.effects.to_frame()
        in_sample = np.zeros(self.dataset.n, dtype=bool)
        in_sample[self.weighted.kept_indices] = True
        frame["treated"] = self.dataset.treatment.astype(int)
        frame["in_sample"] = in_sample.astype(int)
        return frame

    def _overlap(self) -> dict[str, Any]:
        e, d = self.crossfit.e_hat, self.dataset.treatment
        out: dict[str, Any] = {"quantiles": list(OVERLAP_QUANTILES)}
        for label, mask in (("treated", d == 1), ("control", d == 0)):
            out[label] = np.quantile(e[mask], OVERLAP_QUANTILES).tolist()
        out["support"] = None if self.weighted.support is None else list(self.weighted.support)
        return out

    def _hetero_dict(self) -> dict[str, Any] | None:
        if self.hetero is None or self.effects is None or self.hetero_summary is None:
            return None
        basis, clusters = self.basis, self.hetero.clusters
        frame = self.effects_frame()
        sha = hashlib.sha256(
            pd.util.hash_pandas_object(frame, index=False).to_numpy().tobytes()
        ).hexdigest()
        return {
            "n_components": None if basis is None else basis.n_components,
            "explained_variance_ratio": None if basis is None else basis.explained_variance_ratio,
            "cumulative_explained_variance": (
                None if basis is None else float(np.sum(basis.explained_variance_ratio))
            ),
            "k": self.hetero.k,
            "kmeans_inertia": None if clusters is None else clusters.inertia,
            "kmeans_iterations": None if clusters is None else clusters.n_iter,
            "beta": self.hetero.beta,
            "beta_se": np.sqrt(np.diag(self.hetero.beta_cov(self.config.hetero.variance))),
            "variance": self.config.hetero.variance,
            "n_used": self.hetero.n_used,
            "summary": self.hetero_summary.to_dict(),
            "mean_h_minus_beta": self.hetero_summary.mean_h - self.att.beta,
            "effects_sha256": sha,
        }

    def _baseline_dict(self) -> dict[str, Any] | None:
        if self.baseline is None:
            return None
        out = self.baseline.to_dict()
        out["gap_po_minus_dml"] = self.baseline.att - self.att.beta
        ci = self.baseline.ci_bootstrap
        if ci is not None:
            lo, hi = self.att.ci_hc
            out["ci_overlap_with_dml"] = bool(ci[0] <= hi and lo <= ci[1])
        return out

    def to_dict(self) -> dict[str, Any]:
        ds = self.dataset
        body: dict[str, Any] = {
            "schema_version": SCHEMA_VERSION,
            "version": __version__,
            "config": self.config.to_dict(),
            "seeds": self.config.seeds(),
            "data": {
                "n": ds.n,
                "m": ds.m,
                "n_treated": int(ds.treatment.sum()),
                "n_control": int(ds.n - ds.treatment.sum()),
                "feature_names": list(ds.feature_names),
            },
            "folds": {"n_folds": self.fold_plan.n_folds, "sizes": self.fold_plan.sizes()},
            "fit_metrics": self.crossfit.metrics_summary(),
            "propensity_overlap": self._overlap(),
            "weighting": {
                **self.weighted.estimand.to_dict(),
                "n_kept": self.weighted.n_kept,
                "drop_log": self.weighted.drop_log.to_dict(),
            },
            "att": self.att.to_dict(),
            "timings": dict(self.timings),
        }
        if self.truth is not None:
            body["truth"] = self.truth.to_dict()
        if self.untrimmed is not None:
            body["att_untrimmed"] = self.untrimmed.to_dict()
        hetero = self._hetero_dict()
        if hetero is not None:
            body["hetero"] = hetero
        baseline = self._baseline_dict()
        if baseline is not None:
            body["baseline"] = baseline
        body = json_safe(body)
        body["digest"] = digest(body)
        return body


class _Stages:
    def __init__(self) -> None:
        self.timings: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        started = time.perf_counter()
        try:
            yield
        except CidmlError as e:
            self.timings[name] = time.perf_counter() - started
            if isinstance(e, ArgumentError):
                # argument checks that fail mid-run are estimation failures
                err: CidmlError = EstimationError(e.message, details=e.details)
            else:
                err = e
            err.stage = err.stage or name
            err.details.setdefault("timings", dict(self.timings))
            if err is e:
                raise
            raise err from e
        self.timings[name] = time.perf_counter() - started
        log.info("stage %s finished in %.3fs", name, self.timings[name])


def _load(cfg: PipelineConfig) -> tuple[Dataset, DgpTruth | None]:
    if cfg.data.synthetic is not None:
        return generate(cfg.data.synthetic)
    if cfg.data.path is None:
        raise ConfigError("data needs a path or a synthetic spec", path="$.data")
    return load_dataset(cfg.data.path, cfg.data.schema, fmt=cfg.data.format), None


def _fit_hetero(report: RunReport, cfg: PipelineConfig) -> None:
    h = cfg.hetero
    ds, ws = report.dataset, report.weighted
    # basis and centroids come from the kept sample; psi covers every customer
    x_kept = ds.features[ws.kept_indices]
    basis = fit_pca(
        x_kept,
        h.target_variance,
        n_components=h.n_components,
        standardize=h.standardize,
        scale_components=h.scale_components,
    )
    clusters = fit_kmeans(basis.cluster_space(x_kept), h.k, h.seed, max_iter=h.max_iter, n_init=h.n_init)
    psi = cluster_score_matrix(basis.cluster_space(ds.features), clusters)
    model = fit_hetero_stage(report.crossfit, ws, psi, basis=basis, clusters=clusters)
    table = customer_effects(
        model, psi, cfg.confidence_level, customer_ids=ds.customer_ids, variance=h.variance  # type: ignore[arg-type]
    )

    kept = np.zeros(ds.n, dtype=bool)
    kept[ws.kept_indices] = True
    if h.include_controls:
        weights = np.zeros(ds.n)
        weights[ws.kept_indices] = ws.weights
        summary = summarize_effects(table, kept, weights=weights, bins=h.histogram_bins, population="all")
        mask = kept
    else:
        mask = kept & (ds.treatment == 1)
        summary = summarize_effects(table, mask, bins=h.histogram_bins, population="treated")

    report.basis = basis
    report.hetero = model
    report.effects = table
    report.effects_mask = mask
    report.hetero_summary = summary


def run_pipeline(cfg: PipelineConfig, *, n_jobs: int = 1, write: bool = True) -> RunReport:
    """Execute every configured stage; with `write`, persist the configured outputs."""
    stages = _Stages()

    with stages.stage("load"):
        ds, truth = _load(cfg)
    with stages.stage("folds"):
        plan = assign_folds(ds.n, cfg.folds.n_folds, cfg.folds.seed)
    with stages.stage("cross_fit"):
        cf = cross_fit(
            ds, plan, cfg.outcome_model, cfg.propensity_model, seed=cfg.folds.seed, n_jobs=n_jobs
        )
    with stages.stage("weighting"):
        ws = apply_support_and_trim(cf, cfg.weighting.estimand)
    with stages.stage("final_stage"):
        att = estimate_att(cf, ws, cfg.confidence_level, intercept=cfg.final_stage.intercept)

    report = RunReport(
        config=cfg, dataset=ds, fold_plan=plan, crossfit=cf, weighted=ws, att=att, truth=truth
    )

    if cfg.weighting.compare_untrimmed:
        with stages.stage("untrimmed"):
            raw = apply_support_and_trim(cf, EstimandSpec.unfiltered(cfg.weighting.estimand.kind))
            report.untrimmed = estimate_att(
                cf, raw, cfg.confidence_level, intercept=cfg.final_stage.intercept
            )
    if cfg.hetero.enabled:
        with stages.stage("hetero"):
            _fit_hetero(report, cfg)
    if cfg.baseline.enabled:
        with stages.stage("baseline"):
            b = cfg.baseline
            report.baseline = estimate_po(
                ds,
                cf.e_hat,
                n_bins=b.n_bins,
                n_bootstrap=b.n_bootstrap,
                seed=b.seed,
                penalty=b.penalty,
                standardize=b.standardize,
                level=cfg.confidence_level,
                n_jobs=n_jobs,
            )

    report.timings = stages.timings
    if write:
        with stages.stage("outputs"):
            report.outputs = write_outputs(report)
        report.timings = stages.timings
    return report


def write_outputs(report: RunReport) -> dict[str, str]:
    out = report.config.outputs
    paths: dict[str, str] = {}

    frame = report.effects_frame()
    if frame is not None:
        p = Path(out.effects).expanduser()
        p.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(p, index=False)
        paths["effects"] = str(p)
    if report.basis is not None:
        p = Path(out.explained_variance).expanduser()
        p.parent.mkdir(parents=True, exist_ok=True)
        report.basis.curve_frame().to_csv(p, index=False)
        paths["explained_variance"] = str(p)
    if out.plots:
        paths.update(write_plots(report, Path(out.plot_dir).expanduser()))

    report.outputs = paths
    paths["report"] = str(write_json(out.report, report.to_dict()))
    return paths


def write_plots(report: RunReport, plot_dir: Path) -> dict[str, str]:
    from cidml import visualize

    paths = {
        "plot_propensity": visualize.plot_propensity_overlap(
            e_hat=report.crossfit.e_hat,
            treatment=report.dataset.treatment,
            output=plot_dir / "propensity_overlap.svg",
        )
    }
    if report.untrimmed is not None:
        paths["plot_trimming"] = visualize.plot_trimming_comparison(
            estimates={
                "rescaled + support + trimmed": report.att.to_dict(),
                "no filtering": report.untrimmed.to_dict(),
            },
            truth=None if report.truth is None else report.truth.true_att,
            output=plot_dir / "trimming_comparison.svg",
        )
    if report.basis is not None:
        paths["plot_explained_variance"] = visualize.plot_explained_variance(
            curve=report.basis.curve_frame(),
            target=report.config.hetero.target_variance,
            n_kept=report.basis.n_components,
            output=plot_dir / "explained_variance.svg",
        )
    if report.effects is not None and report.effects_mask is not None:
        paths["plot_htt"] = visualize.plot_htt_histogram(
            h=report.effects.h[report.effects_mask],
            att=report.att.beta,
            bins=report.config.hetero.histogram_bins,
            output=plot_dir / "htt_histogram.svg",
        )
    return {k: str(v) for k, v in paths.items()}


@dataclass(frozen=True)
class BatchRow:
    action: str
    report_path: str
    status: str
    exit_code: int
    values: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {
            "action": self.action,
            "status": self.status,
            "exit_code": self.exit_code,
            "report": self.report_path,
            **self.values,
        }


def summary_values(report: RunReport) -> dict[str, Any]:
    """One row of the per-action results table."""
    att = report.att
    metrics = report.crossfit.metrics_summary()
    row: dict[str, Any] = {
        "att": att.beta,
        "ci_homo_lo": att.ci_homoscedastic[0],
        "ci_homo_hi": att.ci_homoscedastic[1],
        "ci_hc_lo": att.ci_hc[0],
        "ci_hc_hi": att.ci_hc[1],
        "n_used": att.n_used,
        "pct_ci_crossing_zero": None,
        "outcome_r2": metrics["outcome_r2_mean"],
        "propensity_auc": metrics["propensity_auc_mean"],
        "po_att": None,
        "po_dml_agree": None,
    }
    if report.hetero_summary is not None:
        row["pct_ci_crossing_zero"] = report.hetero_summary.pct_ci_crossing_zero
    if report.baseline is not None:
        row["po_att"] = report.baseline.att
        ci = report.baseline.ci_bootstrap
        if ci is not None:
            row["po_dml_agree"] = bool(ci[0] <= att.ci_hc[1] and att.ci_hc[0] <= ci[1])
    return row


def run_batch(
    configs: list[tuple[str, PipelineConfig]], summary_path: str | Path, *, n_jobs: int = 1
) -> list[BatchRow]:
    """Run one pipeline per (action, config); failures are recorded and the batch continues."""
    rows: list[BatchRow] = []
    for action, cfg in configs:
        try:
            report = run_pipeline(cfg, n_jobs=n_jobs)
        except CidmlError as e:
            log.warning("batch action %s failed: %s", action, e)
            rows.append(BatchRow(action, cfg.outputs.report, "failed", e.exit_code, {"error": str(e)}))
            continue
        rows.append(BatchRow(action, cfg.outputs.report, "ok", 0, summary_values(report)))

    p = Path(summary_path).expanduser()
    p.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([r.to_dict() for r in rows]).to_csv(p, index=False)
    return rows
