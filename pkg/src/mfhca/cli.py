"""Main CLI entry point for mfhca."""

import sys
from collections.abc import Sequence

import click

from . import __version__
from .commands.data import register_data_commands
from .commands.experiments import register_experiment_commands
from .commands.model import register_model_commands
from .utils.logging_setup import setup_logging


@click.group(invoke_without_command=True)
@click.version_option(version=__version__, prog_name="mfhca")
@click.option("--verbose", "-v", is_flag=True, help="Debug-level diagnostics on stderr")
@click.pass_context
def cli(ctx: click.Context, verbose: bool) -> None:
    """MFHCA - speech emotion recognition from spectrograms and speech features.

    Examples:
        \b
        # Generate a synthetic dataset and cross-validate on it
        mfhca synth-data --out data --per-class 16
        mfhca loso --manifest data/manifest.jsonl --lr 1e-3 --out runs/loso

        # Ablation over the seven input/module combinations
        mfhca ablate --manifest data/manifest.jsonl --out runs/ablation

        # Finite-difference check of every operator
        mfhca gradcheck --seed 7
    """
    setup_logging(verbose)
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


register_data_commands(cli)
register_experiment_commands(cli)
register_model_commands(cli)


def run(argv: Sequence[str] | None = None) -> int:
    """Run the CLI and return its exit code.

    0 success, 1 usage error, 2 data or validation error, 3 numerical failure.
    """
    try:
        rv = cli.main(
            args=list(argv) if argv is not None else None,
            prog_name="mfhca",
            standalone_mode=False,
        )
    except click.ClickException as e:
        e.show()
        return 1
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except SystemExit as e:
        if e.code is None:
            return 0
        return e.code if isinstance(e.code, int) else 1
    return rv if isinstance(rv, int) else 0


def main() -> None:
    """Main entry point."""
    sys.exit(run())


if __name__ == "__main__":
    main()
