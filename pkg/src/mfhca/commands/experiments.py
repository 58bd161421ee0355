"""Training and evaluation commands."""

import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Any

import click

from ..core.errors import ConfigError
from ..core.features import ManifestEntry, load_checkpoint, load_manifest, save_checkpoint
from ..core.model import ModelConfig, Variant
from ..core.runner import cli_command
from ..core.training import (
    Corpus,
    ablation_run,
    evaluate,
    loso_cv,
    sweep,
    train_fold,
    validation_split,
    write_results_jsonl,
)
from ..utils.config import Config
from .common import (
    confusion_table,
    console,
    folds_table,
    load_config,
    model_options,
    prepare_out,
    report_table,
    train_options,
)

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.mfc"
RESULTS_NAME = "results.jsonl"


def _corpus(
    manifest: str, config: Config, model_config: ModelConfig
) -> tuple[Corpus, list[ManifestEntry]]:
    entries = load_manifest(manifest)
    corpus = Corpus.from_manifest(
        entries,
        Path(manifest).parent,
        config.frontend(),
        model_config.variant,
        model_config.feature_frames,
    )
    return corpus, entries


def _full_corpus(
    manifest: str, config: Config, model_config: ModelConfig
) -> tuple[Corpus, list[ManifestEntry]]:
    """Corpus with both inputs loaded, for runs spanning several variants."""
    return _corpus(manifest, config, model_config.with_variant(Variant()))


def register_experiment_commands(cli: click.Group) -> None:
    """Register train, eval, loso, ablate and sweep on the main CLI group."""

    @cli.command()
    @model_options
    @train_options
    @cli_command
    def train(config_path: str | None, manifest: str, out: str | None, **flags: Any) -> None:
        """Train one model, holding out a seeded validation speaker for early stopping."""
        config = load_config(config_path, **flags)
        model_config, train_config = config.model(), config.train()
        out_dir = prepare_out(out, config)
        corpus, entries = _corpus(manifest, config, model_config)
        split = validation_split(entries, train_config.seed)
        train_set = corpus.subset(split.train_ids)
        val_set = corpus.subset(split.val_ids) if split.val_ids else train_set
        result = train_fold(train_set, val_set, model_config, train_config)
        click.echo(
            f"Best validation UA {result.best_ua:.4f} at epoch {result.best_epoch} "
            f"of {result.epochs} (validation speaker: {split.val_speaker or 'none'})"
        )
        if out_dir is not None:
            save_checkpoint(out_dir / CHECKPOINT_NAME, result.model)
            with open(out_dir / RESULTS_NAME, "w", encoding="utf-8") as f:
                for record in result.history:
                    f.write(json.dumps(asdict(record)) + "\n")
            click.echo(f"Checkpoint written to {out_dir / CHECKPOINT_NAME}")

    @cli.command("eval")
    @click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
    @click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
    @click.option("--config", "config_path", type=click.Path(dir_okay=False))
    @click.option("--batch", type=int, default=32, show_default=True)
    @click.option("--out", type=click.Path(file_okay=False))
    @cli_command
    def eval_command(
        manifest: str, checkpoint: str, config_path: str | None, batch: int, out: str | None
    ) -> None:
        """Score a checkpoint on a manifest (utterance-level WA/UA)."""
        config = Config(config_path)
        model = load_checkpoint(checkpoint)
        if model.config.spec_shape != config.frontend().spectrogram_shape:
            raise ConfigError(
                f"checkpoint expects {model.config.spec_shape} spectrograms, frontend "
                f"settings produce {config.frontend().spectrogram_shape}"
            )
        corpus, _ = _corpus(manifest, config, model.config)
        scored = evaluate(model, corpus, batch)
        console.print(confusion_table(scored.confusion))
        click.echo(f"WA {scored.wa:.4f}  UA {scored.ua:.4f}  ({len(corpus)} utterances)")
        if out is not None:
            out_dir = prepare_out(out, config)
            assert out_dir is not None
            line = {
                "checkpoint": checkpoint,
                "wa": scored.wa,
                "ua": scored.ua,
                "confusion": scored.confusion.to_list(),
            }
            (out_dir / RESULTS_NAME).write_text(json.dumps(line) + "\n", encoding="utf-8")

    @cli.command()
    @model_options
    @train_options
    @cli_command
    def loso(config_path: str | None, manifest: str, out: str | None, **flags: Any) -> None:
        """Leave-one-speaker-out cross-validation with per-fold and mean WA/UA."""
        config = load_config(config_path, **flags)
        model_config = config.model()
        out_dir = prepare_out(out, config)
        corpus, entries = _corpus(manifest, config, model_config)
        report = loso_cv(corpus, entries, model_config, config.train())
        console.print(folds_table(report))
        if out_dir is not None:
            write_results_jsonl(out_dir / RESULTS_NAME, [report])

    @cli.command()
    @model_options
    @train_options
    @cli_command
    def ablate(config_path: str | None, manifest: str, out: str | None, **flags: Any) -> None:
        """Cross-validate all seven input/module combinations on identical folds."""
        config = load_config(config_path, **flags)
        model_config = config.model()
        out_dir = prepare_out(out, config)
        corpus, entries = _full_corpus(manifest, config, model_config)
        reports = ablation_run(corpus, entries, model_config, config.train())
        console.print(report_table(reports, "Ablation"))
        if out_dir is not None:
            write_results_jsonl(out_dir / RESULTS_NAME, reports)

    @cli.command("sweep")
    @click.option(
        "--grid",
        type=click.Choice(["channels", "ratios"]),
        required=True,
        help="GRF width configurations or context pooling ratios",
    )
    @model_options
    @train_options
    @cli_command
    def sweep_command(
        grid: str, config_path: str | None, manifest: str, out: str | None, **flags: Any
    ) -> None:
        """Cross-validate every setting of one encoder grid."""
        config = load_config(config_path, **flags)
        model_config = config.model()
        out_dir = prepare_out(out, config)
        corpus, entries = _corpus(manifest, config, model_config)
        reports = sweep(corpus, entries, model_config, config.train(), grid)
        console.print(report_table(reports, f"Sweep over {grid}"))
        if out_dir is not None:
            write_results_jsonl(out_dir / RESULTS_NAME, reports)
