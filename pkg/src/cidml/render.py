from __future__ import annotations

from collections.abc import Sequence
from typing import Any

from rich.table import Table


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:,.4f}"
    if isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(x, float) for x in v):
        return f"[{v[0]:,.4f}, {v[1]:,.4f}]"
    return str(v)


def to_rich_table(columns: Sequence[str], rows: Sequence[Sequence[Any]], title: str | None = None) -> Table:
    t = Table(title=title, show_lines=False)
    for c in columns:
        t.add_column(str(c))
    for r in rows:
        t.add_row(*[_fmt(v) for v in r])
    return t


def run_table(report: dict[str, Any]) -> Table:
    """Point estimate and both interval flavors, plus the optional sections."""
    att = report["att"]
    rows: list[tuple[str, Any]] = [
        ("estimand", att["estimand"]),
        ("beta", att["beta"]),
        ("se (HC)", att["se_hc"]),
        ("CI (HC)", att["ci_hc"]),
        ("se (homoscedastic)", att["se_homo"]),
        ("CI (homoscedastic)", att["ci_homo"]),
        ("n used", att["n_used"]),
        ("dropped", report["weighting"]["drop_log"]["total"]),
        ("outcome R2", report["fit_metrics"]["outcome_r2_mean"]),
        ("propensity AUC", report["fit_metrics"]["propensity_auc_mean"]),
    ]
    if "att_untrimmed" in report:
        rows.append(("CI (HC), no filtering", report["att_untrimmed"]["ci_hc"]))
    if "hetero" in report:
        s = report["hetero"]["summary"]
        rows += [
            ("clusters", report["hetero"]["k"]),
            ("principal components", report["hetero"]["n_components"]),
            (f"mean h ({s['population']})", s["mean_h"]),
            ("% customer CIs crossing 0", s["pct_ci_crossing_zero"]),
        ]
    if "baseline" in report:
        b = report["baseline"]
        rows += [("PO att", b["att"]), ("PO CI (bootstrap)", b["ci_bootstrap"])]
        if "ci_overlap_with_dml" in b:
            rows.append(("PO / DML intervals overlap", b["ci_overlap_with_dml"]))
    if "truth" in report:
        rows.append(("true ATT", report["truth"]["true_att"]))
    return to_rich_table(["metric", "value"], rows, title="CI-DML")


def study_table(kind: str, aggregates: dict[str, Any]) -> Table:
    rows: list[tuple[str, Any]] = []
    for key, value in aggregates.items():
        if isinstance(value, dict):
            for sub, v in value.items():
                if isinstance(v, dict):
                    rows += [(f"{key}.{sub}.{k}", x) for k, x in v.items()]
                else:
                    rows.append((f"{key}.{sub}", v))
        else:
            rows.append((key, value))
    return to_rich_table(["aggregate", "value"], rows, title=f"{kind} study")
