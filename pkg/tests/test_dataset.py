from __future__ import annotations

import json

import numpy as np
import pytest

from cidml.dataset import Dataset, Schema, assign_folds, load_dataset, write_dataset
from cidml.errors import ArgumentError, EstimationError, SchemaError, ValidationError


def _csv(tmp_path, text: str, name: str = "data.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_csv_with_custom_schema(tmp_path):
    p = _csv(tmp_path, "id,d,y,f0\na,0,1.5,0.1\nb,1,2.5,0.2\nc,0,3.5,0.3\nd,1,4.5,0.4\n")
    ds = load_dataset(p, Schema(id="id", treatment="d", outcome="y"))
    assert ds.n == 4
    assert ds.m == 1
    assert ds.customer_ids == ("a", "b", "c", "d")
    assert ds.treatment.tolist() == [0, 1, 0, 1]
    np.testing.assert_array_equal(ds.outcome, [1.5, 2.5, 3.5, 4.5])
    assert ds.feature_names == ("f0",)


def test_non_binary_treatment_cites_row(tmp_path):
    p = _csv(tmp_path, "id,d,y,f0\na,0,1,0\nb,2,1,0\n")
    with pytest.raises(ValidationError) as exc:
        load_dataset(p, Schema(id="id", treatment="d", outcome="y"))
    assert exc.value.row == 2
    assert exc.value.column == "d"
    assert exc.value.exit_code == 3


def test_float_treatment_is_not_thresholded(tmp_path):
    p = _csv(tmp_path, "customer_id,treatment,outcome,x0\na,1.0,1,0\nb,0,1,0\n")
    with pytest.raises(ValidationError):
        load_dataset(p)


@pytest.mark.parametrize("bad", ["nan", "inf", "-inf", "abc", ""])
def test_non_finite_cell_names_row_and_column(tmp_path, bad):
    p = _csv(tmp_path, f"customer_id,treatment,outcome,x0\na,0,1,0\nb,1,1,{bad}\n")
    with pytest.raises(ValidationError) as exc:
        load_dataset(p)
    assert exc.value.row == 2
    assert exc.value.column == "x0"
    assert "row 2" in str(exc.value)


def test_missing_column_is_schema_error(tmp_path):
    p = _csv(tmp_path, "customer_id,treatment,x0\na,0,1\n")
    with pytest.raises(SchemaError):
        load_dataset(p)


def test_missing_file_is_data_error(tmp_path):
    with pytest.raises(SchemaError):
        load_dataset(tmp_path / "nope.csv")


def test_duplicate_ids_rejected(tmp_path):
    p = _csv(tmp_path, "customer_id,treatment,outcome,x0\na,0,1,0\na,1,1,0\n")
    with pytest.raises(ValidationError):
        load_dataset(p)


def test_all_treated_loads_but_estimation_rejects(tmp_path):
    p = _csv(tmp_path, "customer_id,treatment,outcome,x0\na,1,1,0\nb,1,2,1\n")
    ds = load_dataset(p)
    assert ds.n == 2
    with pytest.raises(EstimationError):
        ds.require_both_arms()


def test_jsonl_maps_to_same_schema(tmp_path):
    rows = [
        {"customer_id": "a", "treatment": 0, "outcome": 1.25, "x0": 0.5},
        {"customer_id": "b", "treatment": 1, "outcome": -2.0, "x0": 1.5},
    ]
    p = tmp_path / "data.jsonl"
    p.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
    ds = load_dataset(p)
    assert ds.treatment.tolist() == [0, 1]
    np.testing.assert_array_equal(ds.features[:, 0], [0.5, 1.5])


def test_jsonl_boolean_treatment_rejected(tmp_path):
    p = tmp_path / "data.jsonl"
    p.write_text('{"customer_id": "a", "treatment": true, "outcome": 1, "x0": 0}\n', encoding="utf-8")
    with pytest.raises(ValidationError):
        load_dataset(p)


def test_csv_round_trip_is_bit_exact(tmp_path, rng):
    n = 50
    ds = Dataset(
        customer_ids=tuple(f"id{i}" for i in range(n)),
        features=rng.standard_normal((n, 3)) * 1e3,
        treatment=rng.integers(0, 2, n),
        outcome=rng.standard_normal(n) / 7.0,
        feature_names=("a", "b", "c"),
    )
    path = write_dataset(ds, tmp_path / "rt.csv")
    back = load_dataset(path)
    assert back.customer_ids == ds.customer_ids
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.outcome, ds.outcome)
    assert np.array_equal(back.treatment, ds.treatment)


def test_dataset_is_read_only(small_ds):
    with pytest.raises(ValueError):
        small_ds.features[0, 0] = 1.0


@pytest.mark.parametrize("n, expected", [(6, [2, 2, 2]), (7, [2, 2, 3])])
def test_fold_sizes_balanced(n, expected):
    plan = assign_folds(n, 3, seed=7)
    assert sorted(plan.sizes()) == expected
    assert sum(plan.sizes()) == n


def test_folds_deterministic_and_partition():
    a = assign_folds(1000, 3, seed=1)
    b = assign_folds(1000, 3, seed=1)
    assert np.array_equal(a.fold_of, b.fold_of)
    idx = np.concatenate([a.test_index(f) for f in range(3)])
    assert sorted(idx.tolist()) == list(range(1000))


def test_folds_need_enough_rows():
    with pytest.raises(ArgumentError):
        assign_folds(2, 3, seed=0)
    with pytest.raises(ArgumentError):
        assign_folds(10, 1, seed=0)
