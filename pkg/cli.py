"""
Command-line entry points.

    train     --config FILE [--resume CKPT]
    evaluate  --ckpt FILE --data DIR [--classes N] [--out FILE]
    predict   --ckpt FILE --t1 PNG --t2 PNG --out DIR
    ablate    --config FILE
    synth     --spec FILE --out DIR --count N

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""
import functools
import logging
import shutil
from pathlib import Path
from typing import Optional

import click
import typer
from rich.console import Console
from typer.core import TyperGroup

import config as settings
from config import load_scene_spec, load_train_config
from data import save_dataset, synthesize
from errors import ValidationError
from predict import predict as predict_pair
from report import ablation_table, evaluation_summary, scores_table, write_ablation
from train import evaluate as evaluate_checkpoint
from train import run_ablation, train as train_model

logger = logging.getLogger(__name__)

EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class CommandGroup(TyperGroup):
    """Report usage errors (missing options, unparsable values) with the validation exit code."""

    def make_context(self, *args, **kwargs):
        try:
            return super().make_context(*args, **kwargs)
        except click.UsageError as e:
            e.exit_code = EXIT_VALIDATION
            raise

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            e.exit_code = EXIT_VALIDATION
            raise


app = typer.Typer(cls=CommandGroup, add_completion=False, help="Semantic change detection: train, evaluate, predict, ablate, synth.")
console = Console()


def exit_codes(func):
    """Map ValidationError to exit code 1 and any other failure to 2."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ValidationError as e:
            logger.error("%s", e)
            raise typer.Exit(EXIT_VALIDATION)
        except typer.Exit:
            raise
        except Exception as e:
            logger.exception("Command failed: %s", e)
            raise typer.Exit(EXIT_RUNTIME)

    return wrapper


@app.callback()
def main(
    log_level: Optional[str] = typer.Option(None, help="Override DBTA_LOG_LEVEL."),
    json_logs: Optional[bool] = typer.Option(None, "--json-logs/--text-logs", help="Override DBTA_LOG_JSON."),
):
    settings.setup_logging(log_level.upper() if log_level else None, json_logs)


@app.command()
@exit_codes
def train(
    config: Path = typer.Option(..., "--config", help="key = value training config."),
    resume: Optional[Path] = typer.Option(None, "--resume", help="Checkpoint to continue from."),
):
    """Train a model and keep the best-SeK checkpoint."""
    run_config = load_train_config(config)
    result = train_model(run_config, resume=resume)
    console.print(result.history.summarize())
    console.print(f"Best checkpoint: {result.checkpoint_path}")


@app.command()
@exit_codes
def evaluate(
    ckpt: Path = typer.Option(..., "--ckpt", help="Trained checkpoint."),
    data: Path = typer.Option(..., "--data", help="Dataset root (im1/ im2/ label1/ label2/)."),
    classes: Optional[int] = typer.Option(None, "--classes", help="Expected class count."),
    out: Optional[Path] = typer.Option(None, "--out", help="Also write the metrics JSON here."),
):
    """Score a checkpoint on a dataset and print the metrics JSON."""
    result = evaluate_checkpoint(ckpt, data, classes)
    logger.info("%s", evaluation_summary(result))
    payload = result.scores.to_json()
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(payload + "\n", encoding="utf-8")
    console.print(scores_table(result))
    typer.echo(payload)


@app.command()
@exit_codes
def predict(
    ckpt: Path = typer.Option(..., "--ckpt", help="Trained checkpoint."),
    t1: Path = typer.Option(..., "--t1", help="Earlier image (PNG)."),
    t2: Path = typer.Option(..., "--t2", help="Later image (PNG)."),
    out: Path = typer.Option(..., "--out", help="Output directory."),
):
    """Render semantic, change and boundary maps for one pair."""
    paths = predict_pair(ckpt, t1, t2, out)
    for name, path in paths.items():
        console.print(f"{name}: {path}")


@app.command()
@exit_codes
def ablate(config: Path = typer.Option(..., "--config", help="key = value training config.")):
    """Train and score the four component configurations."""
    run_config = load_train_config(config)
    rows = run_ablation(run_config)
    md_path, json_path = write_ablation(rows, run_config.output_dir)
    console.print(ablation_table(rows))
    console.print(f"Wrote {md_path} and {json_path}")


@app.command()
@exit_codes
def synth(
    spec: Path = typer.Option(..., "--spec", help="key = value scene spec."),
    out: Path = typer.Option(..., "--out", help="Dataset root to create."),
    count: int = typer.Option(..., "--count", help="Number of pairs."),
):
    """Generate a synthetic dataset in the on-disk layout."""
    if count < 1:
        raise ValidationError(f"--count must be at least 1, got {count}")
    scene_spec = load_scene_spec(spec)
    written = save_dataset(synthesize(scene_spec, count), out, scene_spec.classes)
    shutil.copyfile(spec, out / "scene.spec")
    console.print(f"Wrote {written} pairs to {out}")


if __name__ == "__main__":
    app()
