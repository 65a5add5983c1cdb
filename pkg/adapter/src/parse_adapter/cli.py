"""CLI: convert parser output bundles into ingestion files."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .convert import MODES, AdapterJob, convert


@click.command()
@click.option("--mode", type=click.Choice(MODES), required=True)
@click.option("--in", "input_dirs", multiple=True, required=True, type=click.Path(exists=True))
@click.option("--out", "output_dir", required=True, type=click.Path())
@click.option("--dpi", default=144, type=int, show_default=True)
def main(mode, input_dirs, output_dir, dpi):
    """Convert document bundles under the input directories."""
    job = AdapterJob(
        input_dirs=[Path(p) for p in input_dirs],
        mode=mode,
        output_dir=Path(output_dir),
        dpi=dpi,
    )
    result = convert(job)
    for doc_id in result.converted:
        click.echo(doc_id)
    for name, error in sorted(result.failures.items()):
        click.echo(f"failed: {name}: {error}", err=True)
    if result.failures and not result.converted:
        sys.exit(1)


if __name__ == "__main__":
    main()
