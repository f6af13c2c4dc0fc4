"""
Report Templates Module

Contains templates and formatting functions for ablation tables (markdown,
JSON and rich console output) and evaluation summaries.
"""
import json
from pathlib import Path

from rich.table import Table

CHECK = "✓"
CROSS = "✗"
FLAG_NAMES = ("sam", "gspm", "btam")

# Markdown table header for ablation reports
ABLATION_HEADER = """| SAM | GSPM | BTAM | mIoU | SeK |
|:---:|:----:|:----:|-----:|----:|"""

ABLATION_ROW = "| {sam} | {gspm} | {btam} | {miou:.4f} | {sek:.4f} |"

# Plain-text summary for evaluation runs
EVALUATION_SUMMARY = """Evaluated {labels} pixel labels, {classes} classes
  OA    {oa:.4f}
  mIoU  {miou:.4f}
  SeK   {sek:.4f}
  F1    {f1:.4f}
  change F1 {change_f1:.4f}"""


def flag_mark(enabled):
    return CHECK if enabled else CROSS


def format_flags(flags):
    """
    Render component flags as marks.

    Args:
        flags (dict): 'sam', 'gspm', 'btam' -> bool

    Returns:
        str: e.g. "✗ ✗ ✗" or "✓ ✓ ✓"
    """
    return " ".join(flag_mark(flags[name]) for name in FLAG_NAMES)


def ablation_markdown(rows):
    """
    Format ablation rows as a markdown table.

    Args:
        rows (list[AblationRow]): Rows in run order

    Returns:
        str: Markdown table with one line per row
    """
    lines = [ABLATION_HEADER]
    for row in rows:
        marks = {name: flag_mark(row.flags[name]) for name in FLAG_NAMES}
        lines.append(ABLATION_ROW.format(miou=row.miou, sek=row.sek, **marks))
    return "\n".join(lines) + "\n"


def ablation_records(rows):
    """Rows as JSON-ready dicts with keys flags, miou, sek."""
    return [
        {"flags": format_flags(row.flags), "miou": round(row.miou, 6), "sek": round(row.sek, 6)}
        for row in rows
    ]


def ablation_table(rows):
    """Rich table for console output."""
    table = Table(title="Component ablation")
    for name in FLAG_NAMES:
        table.add_column(name.upper(), justify="center")
    table.add_column("mIoU", justify="right")
    table.add_column("SeK", justify="right")
    for row in rows:
        table.add_row(*(flag_mark(row.flags[name]) for name in FLAG_NAMES), f"{row.miou:.4f}", f"{row.sek:.4f}")
    return table


def write_ablation(rows, out_dir):
    """
    Write ablation.md and ablation.json.

    Returns:
        tuple: (markdown path, JSON path)
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    md_path = out_dir / "ablation.md"
    json_path = out_dir / "ablation.json"
    md_path.write_text(ablation_markdown(rows), encoding="utf-8")
    json_path.write_text(json.dumps(ablation_records(rows), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return md_path, json_path


def evaluation_summary(result):
    return EVALUATION_SUMMARY.format(
        labels=result.matrix.total,
        classes=result.matrix.num_classes,
        oa=result.scores.oa,
        miou=result.scores.miou,
        sek=result.scores.sek,
        f1=result.scores.f1,
        change_f1=result.change_f1,
    )


def scores_table(result):
    """Rich table of one evaluation."""
    table = Table(title="Evaluation")
    table.add_column("Metric")
    table.add_column("Value", justify="right")
    for name in ("oa", "miou", "sek", "f1"):
        table.add_row(name, f"{getattr(result.scores, name):.4f}")
    table.add_row("change_f1", f"{result.change_f1:.4f}")
    return table
