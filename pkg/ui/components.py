import json
from typing import Any, Dict, Iterable, Optional

import click
import pandas as pd

from core.schemas import GreedyReport


def render_header(subcommand: str, digest: str):
    """Banner printed before every subcommand"""
    click.echo(click.style(f"♻️  RecycleLab {subcommand}", fg="cyan", bold=True) + f"  (config {digest})")


def render_config(config: Dict[str, Any]):
    click.echo(click.style("Resolved config:", bold=True))
    click.echo(json.dumps(config, indent=2, sort_keys=True))


def render_manifest(files: Iterable[str], output_dir: str):
    files = list(files)
    click.echo(click.style(f"✅ wrote {len(files)} file(s) to {output_dir}", fg="green"))
    for name in files:
        click.echo(f"   - {name}")


def render_greedy_report(report: GreedyReport):
    accepted = set(report.accepted)
    marks = " ".join(f"{i}{'✓' if i in accepted else '✗'}" for i in report.candidate_order)
    click.echo(f"Greedy soup: {marks}  -> id-val acc {report.final_id_val_acc:.4f}")


def render_frame(frame: pd.DataFrame, title: Optional[str] = None, max_rows: int = 30):
    """Plain-text table of a results frame; long frames are truncated"""
    if title:
        click.echo(click.style(title, bold=True))
    if frame.empty:
        click.echo("   (no rows)")
        return
    click.echo(frame.head(max_rows).to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    if len(frame) > max_rows:
        click.echo(f"   ... {len(frame) - max_rows} more rows")


def render_strategy_summary(results: pd.DataFrame):
    """Mean OOD / ID-val accuracy per strategy, best first"""
    if results.empty:
        return
    summary = (results.groupby("strategy")[["ood_acc", "id_val_acc"]].mean()
               .sort_values("ood_acc", ascending=False).reset_index())
    render_frame(summary, "Mean accuracy per strategy")


def render_error(err: Exception, exit_code: int):
    click.echo(click.style(f"❌ {type(err).__name__} (exit {exit_code}): {err}", fg="red"), err=True)
