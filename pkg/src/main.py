#!/usr/bin/env python3
"""
DenseExplain-CLI - Integrated-gradients explanations for dense retrievers
Main entry point that collects the commands of the click CLI
"""

import sys
import click

from . import __version__
from .cli.click_cli import get_cli
from .utils import log_message


@click.group()
@click.version_option(__version__, prog_name="DenseExplain-CLI")
def main() -> None:
    """
    DenseExplain-CLI - explain bi-encoder retrieval scores

    Attributes query-document scores to tokens with integrated gradients
    from a [PAD] baseline, on either side of the pair.

    Examples:
      dexplain index -c run.conf
      dexplain explain q1 d7 -c run.conf
      dexplain explain-ranking q1 -k 25 -c run.conf
      dexplain title-attrib --seed-b 7 -c run.conf
      dexplain eval -c run.conf
      dexplain config -c run.conf
    """


# Add CLI commands from click_cli module
cli_group = get_cli()
for cmd_name, cmd in cli_group.commands.items():
    if cmd_name not in main.commands:
        main.add_command(cmd, name=cmd_name)


if __name__ == "__main__":
    try:
        main()
    except KeyboardInterrupt:
        click.secho("\n\nInterrupted by user.", fg="yellow")
        sys.exit(0)
    except Exception as e:
        log_message(f"Fatal error: {e}", "ERROR")
        click.secho(f"\nFatal error: {e}", fg="red")
        sys.exit(1)
