"""Command-line entry point mirroring the ExportJob fields."""
from __future__ import annotations

import sys
from pathlib import Path

import click

from .aggregate import AGGREGATION_TAGS
from .backbones import LAYERS, BackboneError
from .export import ExportError, ExportJob, export

EXIT_USAGE = 2


@click.command()
@click.option("--manifest", required=True, help="image_id<TAB>path manifest")
@click.option("--backbone", required=True, type=click.Choice(sorted({b for b, _ in LAYERS})))
@click.option("--layer", required=True, help="named spatial layer of the backbone")
@click.option("--profile", type=click.Choice(["trademark", "landmark"]), default="trademark")
@click.option("--aggregation", type=click.Choice(sorted(AGGREGATION_TAGS)), default="mac")
@click.option("--pca-dim", type=int, default=None, help="whitened output dimension")
@click.option("--out", "out_path", required=True, help="cache file to write")
@click.option("--no-pretrained", is_flag=True, help="randomly initialized weights (testing)")
def main(manifest, backbone, layer, profile, aggregation, pca_dim, out_path, no_pretrained):
    """Export backbone features for the full transformation grid."""
    if not Path(manifest).is_file():
        click.echo(f"error: manifest not found: {manifest}", err=True)
        sys.exit(EXIT_USAGE)
    try:
        job = ExportJob(
            manifest=manifest,
            backbone=backbone,
            layer=layer,
            profile=profile,
            aggregation=aggregation,
            pca_dim=pca_dim,
            out_path=out_path,
            pretrained=not no_pretrained,
        )
        report = export(job)
    except (ExportError, BackboneError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(
        f"{report.entry_count} entries for {report.n_images} images, "
        f"dim {report.feature_dim}, written to {out_path}"
    )
    for image_id, path, reason in report.errors:
        click.echo(f"warning: skipped image {image_id} ({path}): {reason}", err=True)


if __name__ == "__main__":
    main()
