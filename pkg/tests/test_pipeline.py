from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from conftest import synthetic_config

from cidml.errors import DataError, EstimationError
from cidml.pipeline import run_batch, run_pipeline
from cidml.pipeline_config import parse_config_object


def _outputs(tmp_path, **extra) -> dict:
    return {
        "report": str(tmp_path / "report.json"),
        "effects": str(tmp_path / "effects.csv"),
        "explained_variance": str(tmp_path / "ev.csv"),
        "plot_dir": str(tmp_path / "plots"),
        **extra,
    }


def test_run_writes_report_and_effects(tmp_path):
    cfg = parse_config_object(synthetic_config(outputs=_outputs(tmp_path)))
    report = run_pipeline(cfg)

    body = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
    assert body["schema_version"] == 1
    assert body["att"]["beta"] == pytest.approx(5.0, abs=1.0)
    assert body["truth"]["true_att"] == 5.0
    assert body["data"]["n"] == 800
    assert sum(body["folds"]["sizes"]) == 800
    assert set(body["timings"]) >= {"load", "folds", "cross_fit", "weighting", "final_stage", "hetero"}
    assert body["hetero"]["k"] == 4
    assert body["digest"] == report.to_dict()["digest"]

    effects = pd.read_csv(tmp_path / "effects.csv", dtype={"customer_id": str})
    assert list(effects.columns) == ["customer_id", "h", "se", "ci_lo", "ci_hi", "treated", "in_sample"]
    assert len(effects) == 800
    curve = pd.read_csv(tmp_path / "ev.csv")
    assert curve["cumulative"].iloc[-1] == pytest.approx(1.0)


def test_same_config_same_digest(tmp_path):
    cfg = parse_config_object(synthetic_config(outputs=_outputs(tmp_path)))
    a = run_pipeline(cfg, write=False).to_dict()
    b = run_pipeline(cfg, n_jobs=3, write=False).to_dict()
    assert a["digest"] == b["digest"]
    assert a["hetero"]["effects_sha256"] == b["hetero"]["effects_sha256"]


def test_disabling_hetero_keeps_att(tmp_path):
    base = synthetic_config(outputs=_outputs(tmp_path))
    with_h = run_pipeline(parse_config_object(base), write=False)
    without = run_pipeline(
        parse_config_object({**base, "hetero": {"enabled": False}}), write=False
    )
    assert without.att.beta == with_h.att.beta
    assert without.effects is None
    assert "hetero" not in without.to_dict()


def test_hetero_mean_close_to_att(tmp_path):
    report = run_pipeline(parse_config_object(synthetic_config()), write=False)
    gap = report.to_dict()["hetero"]["mean_h_minus_beta"]
    assert abs(gap) < 3 * report.att.se_hc


def test_hetero_basis_fit_on_kept_sample():
    report = run_pipeline(parse_config_object(synthetic_config(weighting={"alpha": 0.1})), write=False)
    kept = report.weighted.kept_indices
    assert kept.size < report.dataset.n
    np.testing.assert_allclose(
        report.basis.standardizer.mean, report.dataset.features[kept].mean(axis=0), atol=1e-12
    )
    # scores still cover every customer
    assert len(report.effects) == report.dataset.n


def test_untrimmed_and_baseline_sections(tmp_path):
    cfg = synthetic_config(
        outputs=_outputs(tmp_path),
        weighting={"compare_untrimmed": True},
        baseline={"enabled": True, "n_bootstrap": 20},
        hetero={"enabled": False},
    )
    body = run_pipeline(parse_config_object(cfg), write=False).to_dict()
    assert body["att_untrimmed"]["beta"] is not None
    assert "ci_overlap_with_dml" in body["baseline"]
    assert body["baseline"]["gap_po_minus_dml"] == pytest.approx(
        body["baseline"]["att"] - body["att"]["beta"]
    )


def test_plots_written(tmp_path):
    cfg = synthetic_config(
        n=400, outputs=_outputs(tmp_path, plots=True), weighting={"compare_untrimmed": True}
    )
    report = run_pipeline(parse_config_object(cfg))
    for key in ("plot_propensity", "plot_trimming", "plot_explained_variance", "plot_htt"):
        assert Path(report.outputs[key]).parent == tmp_path / "plots"
        assert Path(report.outputs[key]).exists()


def test_missing_data_file_fails_in_load_stage(tmp_path):
    cfg = parse_config_object(
        {
            "data": {"path": str(tmp_path / "missing.csv")},
            "outcome_model": "ridge",
            "propensity_model": "logistic",
        }
    )
    with pytest.raises(DataError) as exc:
        run_pipeline(cfg, write=False)
    assert exc.value.stage == "load"
    assert "load" in exc.value.details["timings"]


def test_single_arm_fails_in_cross_fit_stage(tmp_path):
    path = tmp_path / "treated.csv"
    rows = ["customer_id,treatment,outcome,x0"] + [f"c{i},1,{i},{i % 3}" for i in range(12)]
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    cfg = parse_config_object(
        {"data": {"path": str(path)}, "outcome_model": "ridge", "propensity_model": "logistic"}
    )
    with pytest.raises(EstimationError) as exc:
        run_pipeline(cfg, write=False)
    assert exc.value.stage == "cross_fit"
    assert exc.value.exit_code == 4
    assert str(exc.value).startswith("[cross_fit]")


def test_too_many_clusters_is_estimation_error(tmp_path):
    cfg = parse_config_object(synthetic_config(n=60, hetero={"k": 100}))
    with pytest.raises(EstimationError) as exc:
        run_pipeline(cfg, write=False)
    assert exc.value.stage == "hetero"


def test_batch_records_failures_and_continues(tmp_path):
    good = parse_config_object(synthetic_config(n=300, outputs=_outputs(tmp_path / "a")))
    bad = parse_config_object(
        {
            "data": {"path": str(tmp_path / "nope.csv")},
            "outcome_model": "ridge",
            "propensity_model": "logistic",
            "outputs": _outputs(tmp_path / "b"),
        }
    )
    rows = run_batch([("good", good), ("bad", bad)], tmp_path / "summary.csv")
    assert [r.status for r in rows] == ["ok", "failed"]
    assert rows[1].exit_code == 3
    summary = pd.read_csv(tmp_path / "summary.csv")
    assert summary["action"].tolist() == ["good", "bad"]
    assert np.isfinite(summary.loc[0, "att"])
