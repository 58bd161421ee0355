"""Options and output helpers shared by the command modules."""

from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any, TypeVar

import click
from rich.console import Console
from rich.table import Table

from ..core.features import LABELS
from ..core.mf_grf import RATIO_GRID
from ..core.model import Ablation
from ..core.training import ConfusionMatrix, CvReport
from ..utils.config import Config

F = TypeVar("F", bound=Callable[..., Any])

console = Console()

ABLATE_CHOICES = [a.value for a in Ablation]


def _stack(func: F, options: Sequence[Callable[[F], F]]) -> F:
    for option in reversed(options):
        func = option(func)
    return func


def model_options(func: F) -> F:
    """--config, --seed and the model-shape flags."""
    return _stack(
        func,
        [
            click.option(
                "--config",
                "config_path",
                type=click.Path(dir_okay=False),
                help="YAML settings file (default: $MFHCA_CONFIG_PATH)",
            ),
            click.option("--seed", type=int, help="Master random seed"),
            click.option("--grf-channels", help="GRF block widths, e.g. 16,32,48"),
            click.option(
                "--ratio",
                type=click.Choice([str(r) for r in RATIO_GRID]),
                help="Context pooling ratio denominator (r = 1/ratio)",
            ),
            click.option("--ablate", type=click.Choice(ABLATE_CHOICES), help="Model variant"),
        ],
    )


def train_options(func: F) -> F:
    """--manifest plus the optimizer and loop flags."""
    return _stack(
        func,
        [
            click.option(
                "--manifest",
                type=click.Path(exists=True, dir_okay=False),
                required=True,
                help="JSON-Lines dataset manifest",
            ),
            click.option("--lr", type=float, help="Adam learning rate"),
            click.option("--batch", type=int, help="Mini-batch size (segments)"),
            click.option("--patience", type=int, help="Early-stopping patience in epochs"),
            click.option("--max-epochs", type=int, help="Upper bound on training epochs"),
            click.option("--workers", type=int, help="Folds trained concurrently"),
            click.option(
                "--out", type=click.Path(file_okay=False), help="Output directory for this run"
            ),
        ],
    )


def load_config(config_path: str | None, **flags: Any) -> Config:
    """Merge a config file with command-line flags; unset flags keep file values."""
    overrides = {
        "seed": flags.get("seed"),
        "grf_channels": flags.get("grf_channels"),
        "ratio": int(flags["ratio"]) if flags.get("ratio") else None,
        "ablate": flags.get("ablate"),
        "lr": flags.get("lr"),
        "batch": flags.get("batch"),
        "patience": flags.get("patience"),
        "max_epochs": flags.get("max_epochs"),
        "workers": flags.get("workers"),
    }
    return Config(config_path, overrides)


def prepare_out(out: str | None, config: Config) -> Path | None:
    """Create the run directory and write the settings snapshot into it."""
    if out is None:
        return None
    path = Path(out)
    config.write_snapshot(path)
    return path


def report_table(reports: Sequence[CvReport], title: str) -> Table:
    table = Table(title=title)
    if any("setting" in r.extra for r in reports):
        table.add_column("Setting", style="cyan")
    table.add_column("Model", style="green")
    table.add_column("Params", justify="right")
    table.add_column("WA", justify="right", style="yellow")
    table.add_column("UA", justify="right", style="yellow")
    for r in reports:
        row = [r.label, f"{r.params:,}", f"{r.wa:.4f}", f"{r.ua:.4f}"]
        if "setting" in r.extra:
            row.insert(0, str(r.extra["setting"]))
        table.add_row(*row)
    return table


def folds_table(report: CvReport) -> Table:
    table = Table(title=f"Leave-one-speaker-out: {report.label}")
    table.add_column("Fold", style="cyan")
    table.add_column("Test speaker", style="green")
    table.add_column("Val speaker", style="dim")
    table.add_column("Epochs", justify="right")
    table.add_column("WA", justify="right", style="yellow")
    table.add_column("UA", justify="right", style="yellow")
    for f in report.folds:
        table.add_row(
            str(f.fold_id),
            f.test_speaker,
            f.val_speaker or "-",
            f"{f.epochs} (best {f.best_epoch})",
            f"{f.wa:.4f}",
            f"{f.ua:.4f}",
        )
    table.add_row("mean", "", "", "", f"{report.wa:.4f}", f"{report.ua:.4f}", style="bold")
    return table


def confusion_table(cm: ConfusionMatrix) -> Table:
    table = Table(title="Confusion matrix (rows: true, columns: predicted)")
    table.add_column("", style="cyan")
    for name in LABELS:
        table.add_column(name, justify="right")
    for name, row in zip(LABELS, cm.to_list()):
        table.add_row(name, *(str(v) for v in row))
    return table
