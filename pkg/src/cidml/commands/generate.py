from __future__ import annotations

import typer
from rich.console import Console

from cidml.commands._io import read_spec
from cidml.dataset import write_dataset
from cidml.reports import write_json
from cidml.synthgen import DgpSpec, EffectSpec, generate, make_placebo

console = Console()


def generate_cmd(
    out: str = typer.Option(..., "--out", "-o", help="输出数据 CSV 路径"),
    spec: str | None = typer.Option(None, "--spec", help="DGP JSON 配置文件（不传则用命令行参数）"),
    n: int = typer.Option(20000, min=1, help="客户数"),
    m: int = typer.Option(5, min=1, help="特征数"),
    tau: float = typer.Option(5.0, help="常数真实效应"),
    confounding: float = typer.Option(1.0, help="混杂强度（倾向得分斜率）"),
    seed: int | None = typer.Option(None, "--seed", help="随机种子（覆盖 spec 中的 seed）"),
    truth_out: str | None = typer.Option(None, "--truth-out", help="真实值 JSON 输出路径"),
    placebo_out: str | None = typer.Option(None, "--placebo-out", help="安慰剂数据 CSV 输出路径"),
) -> None:
    """按 DGP 生成带真实效应的合成数据（标准 CSV 格式）。"""
    if spec is not None:
        dgp = read_spec(spec)
    else:
        dgp = DgpSpec(n=n, m=m, effect=EffectSpec(tau=tau), confounding_strength=confounding)
    if seed is not None:
        dgp = dgp.with_seed(seed)

    ds, truth = generate(dgp)
    written = {"data": str(write_dataset(ds, out))}
    if truth_out is not None:
        written["truth"] = str(write_json(truth_out, {"spec": dgp.to_dict(), **truth.to_dict()}))
    if placebo_out is not None:
        written["placebo"] = str(write_dataset(make_placebo(ds, truth, dgp), placebo_out))
    console.print({"n": ds.n, "m": ds.m, "treated_share": ds.treated_share, "true_att": truth.true_att, **written})
