from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import typer
from rich.console import Console

from cidml.commands._io import read_config
from cidml.config import load_settings
from cidml.errors import ArgumentError
from cidml.pipeline import run_batch, run_pipeline
from cidml.render import run_table, to_rich_table

console = Console()


def run_cmd(
    config: str = typer.Option(..., "--config", "-c", help="流水线 JSON 配置文件"),
    out: str | None = typer.Option(None, "--out", "-o", help="报告 JSON 输出路径（覆盖 outputs.report）"),
    effects: str | None = typer.Option(None, "--effects", help="客户级效应 CSV 输出路径（覆盖 outputs.effects）"),
    plots: bool = typer.Option(False, "--plots", help="输出 SVG 图（等同 outputs.plots=true）"),
    plot_dir: str | None = typer.Option(None, "--plot-dir", help="图输出目录"),
    seed: int | None = typer.Option(None, "--seed", help="覆盖配置中的全部随机种子"),
    n_jobs: int | None = typer.Option(None, "--n-jobs", min=1, help="并行 worker 数（默认取本地配置）"),
) -> None:
    """按 JSON 配置执行完整 CI-DML 流水线。"""
    cfg = read_config(config)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    outputs = cfg.outputs
    if out is not None:
        outputs = replace(outputs, report=out)
    if effects is not None:
        outputs = replace(outputs, effects=effects)
    if plots:
        outputs = replace(outputs, plots=True)
    if plot_dir is not None:
        outputs = replace(outputs, plot_dir=plot_dir)
    cfg = replace(cfg, outputs=outputs)

    jobs = n_jobs or load_settings().n_jobs
    report = run_pipeline(cfg, n_jobs=jobs)
    console.print(run_table(report.to_dict()))
    console.print(report.outputs)


def validate_config_cmd(
    config: str = typer.Option(..., "--config", "-c", help="流水线 JSON 配置文件"),
) -> None:
    """只解析并校验配置，输出补全默认值后的配置。"""
    cfg = read_config(config)
    console.print_json(cfg.to_json())


def batch_cmd(
    configs: list[str] = typer.Option(..., "--config", "-c", help="流水线配置文件（可重复，每个对应一个 action）"),
    summary: str | None = typer.Option(None, "--summary", help="汇总 CSV 输出路径（默认 <output_dir>/summary.csv）"),
    seed: int | None = typer.Option(None, "--seed", help="覆盖每个配置中的随机种子"),
    n_jobs: int | None = typer.Option(None, "--n-jobs", min=1, help="并行 worker 数（默认取本地配置）"),
) -> int:
    """批量运行多个 action 的配置，并输出一张结果汇总表。"""
    if not configs:
        raise ArgumentError("batch needs at least one --config")
    settings = load_settings()
    summary = summary or str(settings.output_dir_path / "summary.csv")
    loaded = []
    for path in configs:
        cfg = read_config(path)
        loaded.append((Path(path).stem, cfg if seed is None else cfg.with_seed(seed)))
    rows = run_batch(loaded, summary, n_jobs=n_jobs or settings.n_jobs)

    table_rows = [
        (r.action, r.status, r.values.get("att"), r.values.get("ci_hc_lo"), r.values.get("ci_hc_hi"),
         r.values.get("pct_ci_crossing_zero"), r.values.get("error"))
        for r in rows
    ]
    console.print(
        to_rich_table(
            ["action", "status", "att", "ci_hc_lo", "ci_hc_hi", "% crossing 0", "error"],
            table_rows,
            title="batch",
        )
    )
    console.print({"summary": summary})
    return max((r.exit_code for r in rows), default=0)
