from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from cidml.errors import ArgumentError, EstimationError, SchemaError, ValidationError


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Schema:
    """Column names of a customer table. `features=None` means every other column."""

    id: str = "customer_id"
    treatment: str = "treatment"
    outcome: str = "outcome"
    features: tuple[str, ...] | None = None

    def resolve_features(self, columns: list[str]) -> tuple[str, ...]:
        if self.features is not None:
            return tuple(self.features)
        reserved = {self.id, self.treatment, self.outcome}
        return tuple(c for c in columns if c not in reserved)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "treatment": self.treatment,
            "outcome": self.outcome,
            "features": None if self.features is None else list(self.features),
        }


@dataclass(frozen=True)
class Dataset:
    customer_ids: tuple[str, ...]
    features: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    feature_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        x = np.asarray(self.features, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        d = np.asarray(self.treatment)
        y = np.asarray(self.outcome, dtype=float)
        n = len(self.customer_ids)

        if n < 1:
            raise ValidationError("dataset is empty")
        if x.shape[0] != n or d.shape != (n,) or y.shape != (n,):
            raise ValidationError(
                f"length mismatch: ids={n} features={x.shape[0]} treatment={d.shape} outcome={y.shape}"
            )
        if len(set(self.customer_ids)) != n:
            raise ValidationError("customer_ids are not unique")
        if not np.all(np.isin(d, (0, 1))):
            raise ValidationError("treatment must contain only 0/1")
        if not np.all(np.isfinite(x)):
            r, c = np.argwhere(~np.isfinite(x))[0]
            raise ValidationError("non-finite feature value", row=int(r) + 1, column=self._name(int(c)))
        if not np.all(np.isfinite(y)):
            r = int(np.flatnonzero(~np.isfinite(y))[0])
            raise ValidationError("non-finite outcome value", row=r + 1, column="outcome")

        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise ValidationError("feature_names does not match the feature matrix")

        object.__setattr__(self, "customer_ids", tuple(str(c) for c in self.customer_ids))
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "treatment", _frozen(d.astype(np.int8)))
        object.__setattr__(self, "outcome", _frozen(y))
        object.__setattr__(self, "feature_names", names)

    def _name(self, j: int) -> str:
        if self.feature_names and j < len(self.feature_names):
            return self.feature_names[j]
        return f"x{j}"

    @property
    def n(self) -> int:
        return len(self.customer_ids)

    @property
    def m(self) -> int:
        return int(self.features.shape[1])

    @property
    def treated_share(self) -> float:
        return float(self.treatment.mean())

    def require_both_arms(self) -> None:
        n_treated = int(self.treatment.sum())
        if n_treated == 0 or n_treated == self.n:
            raise EstimationError(
                "estimation needs both treated and control customers",
                details={"n": self.n, "n_treated": n_treated},
            )

    def subset(self, indices: np.ndarray) -> Dataset:
        idx = np.asarray(indices, dtype=int)
        ids = [self.customer_ids[i] for i in idx]
        if len(set(ids)) != len(ids):
            # bootstrap draws repeat customers; suffix keeps ids unique
            ids = [f"{cid}#{k}" for k, cid in enumerate(ids)]
        return Dataset(
            customer_ids=tuple(ids),
            features=self.features[idx],
            treatment=self.treatment[idx],
            outcome=self.outcome[idx],
            feature_names=self.feature_names,
        )

    def to_frame(self, schema: Schema | None = None) -> pd.DataFrame:
        s = schema or Schema()
        frame = pd.DataFrame(
            {
                s.id: list(self.customer_ids),
                s.treatment: self.treatment.astype(int),
                s.outcome: self.outcome,
            }
        )
        feats = pd.DataFrame(self.features, columns=list(self.feature_names))
        return pd.concat([frame, feats], axis=1)


@dataclass(frozen=True)
class FoldPlan:
    fold_of: np.ndarray
    n_folds: int
    seed: int | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        f = np.asarray(self.fold_of, dtype=int)
        if self.n_folds < 2:
            raise ArgumentError("n_folds must be >= 2")
        if f.ndim != 1 or f.size < self.n_folds:
            raise ArgumentError("fold plan needs at least one row per fold")
        if f.min() < 0 or f.max() >= self.n_folds:
            raise ArgumentError("fold index out of range")
        if np.unique(f).size != self.n_folds:
            raise ArgumentError("every fold must contain at least one row")
        object.__setattr__(self, "fold_of", _frozen(f))

    @property
    def n(self) -> int:
        return int(self.fold_of.size)

    def sizes(self) -> list[int]:
        return np.bincount(self.fold_of, minlength=self.n_folds).tolist()

    def test_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def train_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)

    def permuted(self, perm: np.ndarray) -> FoldPlan:
        return FoldPlan(fold_of=self.fold_of[np.asarray(perm)], n_folds=self.n_folds, seed=self.seed)


def assign_folds(n: int, n_folds: int, seed: int) -> FoldPlan:
    """Seeded shuffle, then round-robin; fold sizes differ by at most one."""
    if n_folds < 2:
        raise ArgumentError(f"n_folds must be >= 2, got {n_folds}")
    if n < n_folds:
        raise ArgumentError(f"cannot split {n} rows into {n_folds} folds")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    fold_of = np.empty(n, dtype=int)
    fold_of[perm] = np.arange(n) % n_folds
    return FoldPlan(fold_of=fold_of, n_folds=n_folds, seed=seed)


def _detect_format(path: Path, fmt: str | None) -> str:
    if fmt:
        if fmt not in {"csv", "jsonl"}:
            raise SchemaError(f"unsupported format {fmt!r} (csv or jsonl)")
        return fmt
    suffix = path.suffix.lower()
    if suffix in {".jsonl", ".ndjson"}:
        return "jsonl"
    return "csv"


def _require_columns(columns: list[str], schema: Schema, features: tuple[str, ...], path: Path) -> None:
    wanted = [schema.id, schema.treatment, schema.outcome, *features]
    missing = [c for c in wanted if c not in columns]
    if missing:
        raise SchemaError(
            f"{path}: missing column(s) {missing}; available: {columns}",
            details={"missing": missing},
        )
    if not features:
        raise SchemaError(f"{path}: schema selects no feature columns")


def _parse_treatment_csv(raw: pd.Series, column: str) -> np.ndarray:
    s = raw.str.strip()
    bad = ~s.isin(["0", "1"])
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        raise ValidationError(f"treatment must be 0 or 1, got {raw.iloc[i]!r}", row=i + 1, column=column)
    return (s == "1").to_numpy().astype(np.int8)


def _parse_treatment_json(raw: pd.Series, column: str) -> np.ndarray:
    values = raw.to_numpy(dtype=object)
    for i, v in enumerate(values):
        ok = isinstance(v, (int, np.integer)) and not isinstance(v, (bool, np.bool_)) and v in (0, 1)
        if not ok:
            raise ValidationError(f"treatment must be integer 0 or 1, got {v!r}", row=i + 1, column=column)
    return values.astype(np.int8)


def _text_to_float(text: np.ndarray) -> np.ndarray:
    # numpy's string -> float64 cast is correctly rounded, which keeps the CSV round-trip exact
    try:
        return text.astype(float)
    except ValueError:
        out = np.empty(text.size, dtype=float)
        for i, v in enumerate(text):
            try:
                out[i] = float(v)
            except ValueError:
                out[i] = np.nan
        return out


def _parse_numeric(raw: pd.Series, column: str) -> np.ndarray:
    if raw.dtype == object:
        values = _text_to_float(raw.astype(str).str.strip().to_numpy(dtype=str))
    else:
        values = raw.to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ValidationError(f"not a finite number: {raw.iloc[i]!r}", row=i + 1, column=column)
    return values


def load_dataset(path: str | Path, schema: Schema | None = None, *, fmt: str | None = None) -> Dataset:
    """Load a CSV (header row) or JSON-lines customer table; row order is preserved.

    Row numbers in validation errors count data rows from 1.
    """
    p = Path(path).expanduser()
    s = schema or Schema()
    if not p.exists():
        raise SchemaError(f"data file not found: {p}")

    kind = _detect_format(p, fmt)
    try:
        if kind == "csv":
            frame = pd.read_csv(p, dtype=str, keep_default_na=False, encoding="utf-8")
        else:
            frame = pd.read_json(p, lines=True, dtype=False, convert_dates=False)
    except (ValueError, pd.errors.ParserError) as e:
        raise SchemaError(f"{p}: cannot parse {kind}: {e}") from e

    columns = [str(c) for c in frame.columns]
    features = s.resolve_features(columns)
    _require_columns(columns, s, features, p)

    if kind == "csv":
        treatment = _parse_treatment_csv(frame[s.treatment], s.treatment)
    else:
        treatment = _parse_treatment_json(frame[s.treatment], s.treatment)
    outcome = _parse_numeric(frame[s.outcome], s.outcome)
    x = np.column_stack([_parse_numeric(frame[c], c) for c in features])
    ids = tuple(str(v) for v in frame[s.id].tolist())

    return Dataset(
        customer_ids=ids,
        features=x,
        treatment=treatment,
        outcome=outcome,
        feature_names=features,
    )


def write_dataset(ds: Dataset, path: str | Path, schema: Schema | None = None) -> Path:
    """Canonical CSV; floats use shortest round-trip repr so reload is bit-exact."""
    p = Path(path).expanduser()
    p.parent.mkdir(parents=True, exist_ok=True)
    frame = ds.to_frame(schema)
    frame.to_csv(p, index=False, float_format=None, encoding="utf-8")
    return p
