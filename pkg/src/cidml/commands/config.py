from __future__ import annotations

import typer
from rich.console import Console

from cidml.config import CidmlSettings, load_settings, save_settings

config_app = typer.Typer(help="管理本地工具配置（并行度、默认输出目录）。", add_completion=False)
console = Console()


@config_app.command("set")
def config_set(
    n_jobs: int = typer.Option(1, min=1, help="并行 worker 数（不影响任何数值结果）"),
    output_dir: str = typer.Option("output", help="默认输出目录"),
) -> None:
    save_settings(CidmlSettings(n_jobs=n_jobs, output_dir=output_dir))
    console.print("[green]已保存配置：[/green]")
    console.print(load_settings().as_dict())


@config_app.command("show")
def config_show() -> None:
    console.print(load_settings().as_dict())


@config_app.command("path")
def config_path() -> None:
    s = load_settings()
    console.print({"config": str(s.config_path), "home": str(s.home_dir), "output_dir": str(s.output_dir_path)})
