from __future__ import annotations

import logging
from collections.abc import Sequence

import click
import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape

from cidml.commands.config import config_app
from cidml.commands.generate import generate_cmd
from cidml.commands.run import batch_cmd, run_cmd, validate_config_cmd
from cidml.commands.study import (
    ci_width_study_cmd,
    coverage_study_cmd,
    placebo_study_cmd,
    trimming_study_cmd,
)
from cidml.errors import CidmlError

app = typer.Typer(
    name="cidml",
    help="cidml - causal impact estimation with double machine learning.",
    add_completion=False,
    no_args_is_help=True,
)

app.add_typer(config_app, name="config")
app.command("run")(run_cmd)
app.command("validate-config")(validate_config_cmd)
app.command("batch")(batch_cmd)
app.command("generate")(generate_cmd)
app.command("placebo-study")(placebo_study_cmd)
app.command("ci-width-study")(ci_width_study_cmd)
app.command("coverage-study")(coverage_study_cmd)
app.command("trimming-study")(trimming_study_cmd)

err_console = Console(stderr=True)

EXIT_OK = 0
EXIT_USAGE = 1


@app.callback()
def _root_callback(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="输出 INFO 级别日志（stderr）"),
) -> None:
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(message)s",
        handlers=[RichHandler(console=err_console, show_path=False, rich_tracebacks=False)],
        force=True,
    )


def main(argv: Sequence[str] | None = None) -> int:
    """Console entry point; returns the documented exit status."""
    try:
        rv = app(args=list(argv) if argv is not None else None, standalone_mode=False)
    except click.UsageError as e:
        err_console.print(f"[red]usage error:[/red] {escape(e.format_message())}", soft_wrap=True)
        return EXIT_USAGE
    except click.Abort:
        err_console.print("[red]aborted[/red]")
        return EXIT_USAGE
    except click.ClickException as e:
        err_console.print(f"[red]error:[/red] {escape(e.format_message())}", soft_wrap=True)
        return EXIT_USAGE
    except CidmlError as e:
        err_console.print(f"[red]error:[/red] {escape(str(e))}", highlight=False, soft_wrap=True)
        if e.details and "timings" in e.details:
            err_console.print({"timings": e.details["timings"]})
        return e.exit_code
    return rv if isinstance(rv, int) else EXIT_OK
