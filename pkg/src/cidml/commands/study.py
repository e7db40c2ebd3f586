from __future__ import annotations

from collections.abc import Callable, Iterator
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import typer
from rich.console import Console
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn

from cidml.commands._io import read_config, read_spec
from cidml.config import load_settings
from cidml.errors import ArgumentError
from cidml.render import study_table
from cidml.validation import (
    ESTIMATORS,
    EstimatorSettings,
    StudyReport,
    run_ci_width_study,
    run_coverage_study,
    run_placebo_study,
    run_trimming_study,
)

console = Console()

SPEC_HELP = "DGP JSON 配置文件"
CONFIG_HELP = "可选：从流水线配置中读取估计器设置（模型、折数、加权）"
OUT_HELP = "StudyReport JSON 输出路径（默认 <output_dir>/<kind>_study.json）"


@contextmanager
def _progress(total: int, label: str) -> Iterator[Callable[[], None] | None]:
    if not console.is_terminal:
        yield None
        return
    with Progress(
        TextColumn("[bold cyan]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=console,
        transient=True,
    ) as progress:
        task = progress.add_task(label, total=total)
        yield lambda: progress.advance(task)


def _settings(config: str | None) -> EstimatorSettings:
    return EstimatorSettings() if config is None else EstimatorSettings.from_pipeline(read_config(config))


def _finish(report: StudyReport, out: str | None, records: str | None, plot: str | None) -> None:
    if out is None:
        out = str(load_settings().output_dir_path / f"{report.kind}_study.json")
    records_path = records or str(Path(out).with_suffix(".csv"))
    report.write(out, records_path)
    if plot is not None:
        from cidml import visualize

        if report.kind == "placebo":
            visualize.plot_placebo_study(aggregates=report.aggregates, output=Path(plot))
        elif report.kind == "ci_width":
            if visualize.plot_width_comparison(records=report.records_frame(), output=Path(plot)) is None:
                plot = None
        else:
            raise ArgumentError(f"no plot for {report.kind} studies")
    console.print(study_table(report.kind, report.aggregates))
    console.print({"report": out, "records": records_path, "plot": plot, "digest": report.to_dict()["digest"]})


def placebo_study_cmd(
    spec: str = typer.Option(..., "--spec", help=SPEC_HELP),
    reps: int = typer.Option(20, "--reps", help="重复次数（>= 2）"),
    seed: int = typer.Option(0, "--seed", help="主随机种子"),
    estimators: str = typer.Option(",".join(ESTIMATORS), "--estimators", help="估计器，逗号分隔：dml,po"),
    config: str | None = typer.Option(None, "--config", help=CONFIG_HELP),
    out: str | None = typer.Option(None, "--out", "-o", help=OUT_HELP),
    records: str | None = typer.Option(None, "--records", help="逐次记录 CSV 路径（默认与 --out 同名 .csv）"),
    plot: str | None = typer.Option(None, "--plot", help="安慰剂误差柱状图 SVG 路径"),
    n_jobs: int | None = typer.Option(None, "--n-jobs", min=1, help="并行 worker 数"),
) -> None:
    """安慰剂检验：对效应为 0 的伪事件估计，比较 DML 与 PO 的安慰剂误差。"""
    dgp = read_spec(spec)
    chosen = [e.strip() for e in estimators.split(",") if e.strip()]
    with _progress(reps, "placebo") as tick:
        report = run_placebo_study(
            dgp,
            chosen,
            reps,
            seed,
            settings=_settings(config),
            n_jobs=n_jobs or load_settings().n_jobs,
            progress=tick,
        )
    _finish(report, out, records, plot)


def ci_width_study_cmd(
    spec: str = typer.Option(..., "--spec", help=SPEC_HELP),
    reps: int = typer.Option(20, "--reps", help="重复次数（>= 2）"),
    seed: int = typer.Option(0, "--seed", help="主随机种子"),
    n_bootstrap: int | None = typer.Option(None, "--n-bootstrap", help="PO bootstrap 次数（必须 > 0）"),
    config: str | None = typer.Option(None, "--config", help=CONFIG_HELP),
    out: str | None = typer.Option(None, "--out", "-o", help=OUT_HELP),
    records: str | None = typer.Option(None, "--records", help="逐次记录 CSV 路径"),
    plot: str | None = typer.Option(None, "--plot", help="区间宽度对比图 SVG 路径"),
    n_jobs: int | None = typer.Option(None, "--n-jobs", min=1, help="并行 worker 数"),
) -> None:
    """置信区间宽度对比：DML 闭式 HC 区间 vs PO bootstrap 区间。"""
    dgp = read_spec(spec)
    settings = _settings(config)
    if n_bootstrap is not None:
        settings = replace(settings, n_bootstrap=n_bootstrap)
    with _progress(reps, "ci-width") as tick:
        report = run_ci_width_study(
            dgp, reps, seed, settings=settings, n_jobs=n_jobs or load_settings().n_jobs, progress=tick
        )
    _finish(report, out, records, plot)


def coverage_study_cmd(
    spec: str = typer.Option(..., "--spec", help=SPEC_HELP),
    reps: int = typer.Option(200, "--reps", help="重复次数（>= 50）"),
    level: float = typer.Option(0.95, "--level", help="置信水平"),
    seed: int = typer.Option(0, "--seed", help="主随机种子"),
    config: str | None = typer.Option(None, "--config", help=CONFIG_HELP),
    out: str | None = typer.Option(None, "--out", "-o", help=OUT_HELP),
    records: str | None = typer.Option(None, "--records", help="逐次记录 CSV 路径"),
    n_jobs: int | None = typer.Option(None, "--n-jobs", min=1, help="并行 worker 数"),
) -> None:
    """覆盖率检验：区间包含真实效应的比例，以及偏差与 RMSE。"""
    dgp = read_spec(spec)
    with _progress(reps, "coverage") as tick:
        report = run_coverage_study(
            dgp,
            reps,
            level,
            seed,
            settings=_settings(config),
            n_jobs=n_jobs or load_settings().n_jobs,
            progress=tick,
        )
    _finish(report, out, records, None)


def trimming_study_cmd(
    spec: str = typer.Option(..., "--spec", help=SPEC_HELP),
    reps: int = typer.Option(100, "--reps", help="重复次数（>= 2）"),
    seed: int = typer.Option(0, "--seed", help="主随机种子"),
    config: str | None = typer.Option(None, "--config", help=CONFIG_HELP),
    out: str | None = typer.Option(None, "--out", "-o", help=OUT_HELP),
    records: str | None = typer.Option(None, "--records", help="逐次记录 CSV 路径"),
    n_jobs: int | None = typer.Option(None, "--n-jobs", min=1, help="并行 worker 数"),
) -> None:
    """修剪/重标定对比：开启与关闭 rescale+common support+trimming 的区间宽度。"""
    dgp = read_spec(spec)
    with _progress(reps, "trimming") as tick:
        report = run_trimming_study(
            dgp, reps, seed, settings=_settings(config), n_jobs=n_jobs or load_settings().n_jobs, progress=tick
        )
    _finish(report, out, records, None)
