"""Model inspection commands."""

import json
from pathlib import Path
from typing import Any

import click
from rich.table import Table

from ..core.errors import NumericalError, UsageError
from ..core.features import load_checkpoint, load_manifest, write_feature_file
from ..core.gradcheck import TOLERANCE, run_gradcheck_suite
from ..core.model import ABLATION_ROWS, MfhcaModel, count_params, parameter_breakdown
from ..core.runner import cli_command
from ..core.training import Corpus, utterance_logits
from ..utils.config import Config
from .common import console, load_config, model_options


def register_model_commands(cli: click.Group) -> None:
    """Register gradcheck, params and dump-embeddings on the main CLI group."""

    @cli.command()
    @click.option("--seed", type=int, default=0, show_default=True, help="First seed")
    @click.option("--seeds", type=int, default=1, show_default=True, help="Consecutive seeds")
    @click.option(
        "--max-elements",
        type=int,
        default=16,
        show_default=True,
        help="Entries checked per tensor",
    )
    @cli_command
    def gradcheck(seed: int, seeds: int, max_elements: int) -> None:
        """Finite-difference check of every operator and a tiny end-to-end model."""
        if seeds < 1 or max_elements < 1:
            raise UsageError("--seeds and --max-elements must be >= 1")
        worst: dict[str, float] = {}
        for s in range(seed, seed + seeds):
            for result in run_gradcheck_suite(s, max_elements):
                worst[result.name] = max(worst.get(result.name, 0.0), result.max_rel_error)

        table = Table(title=f"Gradient check (seeds {seed}..{seed + seeds - 1})")
        table.add_column("Operator", style="cyan")
        table.add_column("Max rel. error", justify="right")
        table.add_column("Status")
        for name, err in worst.items():
            status = "[green]ok[/green]" if err < TOLERANCE else "[red]FAIL[/red]"
            table.add_row(name, f"{err:.2e}", status)
        console.print(table)

        failed = [name for name, err in worst.items() if not err < TOLERANCE]
        if failed:
            raise NumericalError(f"gradient check failed for: {', '.join(failed)}")

    @cli.command()
    @model_options
    @click.option("--all-variants", is_flag=True, help="Also count every ablation variant")
    @cli_command
    def params(config_path: str | None, all_variants: bool, **flags: Any) -> None:
        """Print the learnable-parameter count and per-module breakdown."""
        model_config = load_config(config_path, **flags).model()
        model = MfhcaModel(model_config)

        table = Table(title=f"Parameters: {model_config.variant.label}")
        table.add_column("Module", style="cyan")
        table.add_column("Parameters", justify="right", style="green")
        for name, count in parameter_breakdown(model).items():
            table.add_row(name, f"{count:,}")
        table.add_row("total", f"{count_params(model):,}", style="bold")
        console.print(table)
        click.echo(f"Total learnable parameters: {count_params(model)}")

        if all_variants:
            variants = Table(title="Ablation variants")
            variants.add_column("Model", style="cyan")
            variants.add_column("Parameters", justify="right", style="green")
            for variant in ABLATION_ROWS:
                size = count_params(MfhcaModel(model_config.with_variant(variant)))
                variants.add_row(variant.label, f"{size:,}")
            console.print(variants)

    @cli.command("dump-embeddings")
    @click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
    @click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
    @click.option("--out", type=click.Path(file_okay=False), required=True)
    @click.option("--config", "config_path", type=click.Path(dir_okay=False))
    @cli_command
    def dump_embeddings(manifest: str, checkpoint: str, out: str, config_path: str | None) -> None:
        """Write the pooled fused vector of every utterance as one MFH1 matrix.

        Row i of embeddings.mfh belongs to line i of embeddings.jsonl.
        """
        model = load_checkpoint(checkpoint)
        entries = load_manifest(manifest)
        corpus = Corpus.from_manifest(
            entries,
            Path(manifest).parent,
            Config(config_path).frontend(),
            model.config.variant,
            model.config.feature_frames,
        )
        vectors = utterance_logits(model, corpus, embed=True)
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_feature_file(out_dir / "embeddings.mfh", vectors)
        with open(out_dir / "embeddings.jsonl", "w", encoding="utf-8") as f:
            for row, entry in enumerate(entries):
                record = {"row": row, "utterance_id": entry.utterance_id, "label": entry.label}
                f.write(json.dumps(record) + "\n")
        click.echo(f"Wrote {vectors.shape[0]}x{vectors.shape[1]} embeddings to {out_dir}")
