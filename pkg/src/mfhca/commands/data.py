"""Dataset preparation commands."""

import logging
from pathlib import Path

import click
import numpy as np

from ..core.features import load_manifest, resolve_path, write_feature_file
from ..core.frontend import load_wav, log_spectrogram, segment
from ..core.runner import cli_command
from ..core.training import make_synthetic
from ..utils.config import Config

logger = logging.getLogger(__name__)


def register_data_commands(cli: click.Group) -> None:
    """Register extract-features and synth-data on the main CLI group."""

    @cli.command("extract-features")
    @click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
    @click.option("--out", type=click.Path(file_okay=False), required=True)
    @click.option("--config", "config_path", type=click.Path(dir_okay=False))
    @cli_command
    def extract_features(manifest: str, out: str, config_path: str | None) -> None:
        """Write each utterance's log spectrogram as <utterance_id>.spec.mfh.

        Segments are stacked along the time axis.
        """
        frontend = Config(config_path).frontend()
        entries = load_manifest(manifest)
        base = Path(manifest).parent
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for entry in entries:
            audio = load_wav(resolve_path(entry.wav_path, base), frontend.sample_rate)
            frames = [
                log_spectrogram(s, frontend).frames
                for s in segment(audio, frontend.segment_seconds)
            ]
            write_feature_file(out_dir / f"{entry.utterance_id}.spec.mfh", np.concatenate(frames))
            logger.debug("%s: %d segment(s)", entry.utterance_id, len(frames))
        click.echo(f"Wrote {len(entries)} spectrogram file(s) to {out_dir}")

    @cli.command("synth-data")
    @click.option("--out", type=click.Path(file_okay=False), required=True)
    @click.option("--seed", type=int, default=0, show_default=True)
    @click.option("--per-class", type=int, default=16, show_default=True)
    @click.option("--hubert-dim", type=int, help="Feature width (default: config hubert_dim)")
    @click.option("--config", "config_path", type=click.Path(dir_okay=False))
    @cli_command
    def synth_data(
        out: str, seed: int, per_class: int, hubert_dim: int | None, config_path: str | None
    ) -> None:
        """Generate a separable four-class tone dataset with fake feature files."""
        if per_class < 1:
            raise click.BadParameter("must be >= 1", param_hint="--per-class")
        config = Config(config_path)
        dataset = make_synthetic(
            seed,
            per_class,
            hubert_dim=hubert_dim or int(config.get("hubert_dim")),
            frontend=config.frontend(),
            feature_frames=int(config.get("feature_frames")),
        )
        manifest = dataset.write(out)
        click.echo(f"Wrote {len(dataset.entries)} utterances; manifest: {manifest}")
