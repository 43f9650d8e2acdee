"""Exporter command line: convert checkpoints to FGM, emit fixtures."""

import json
import sys

import click

from . import __version__


@click.group()
@click.version_option(version=__version__, prog_name="fgcam-export")
def main():
    """Convert torch checkpoints into FGM and emit parity fixtures."""


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", default=20240901, show_default=True, type=int)
def tiny(out_dir, seed):
    """Train the seeded tiny digit classifier and write the full fixture
    bundle (model, images, eval list, golden blobs, manifest)."""
    from .fixtures import export_tiny
    manifest = export_tiny(out_dir, seed=seed)
    acc = manifest["training"]["val_accuracy"]
    click.echo(f"wrote {out_dir}: {len(manifest['checksums'])} files, "
               f"val accuracy {acc:.3f}")
    if acc < 0.9:
        click.echo("warning: validation accuracy below 0.9", err=True)
        sys.exit(1)


@main.command()
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def vgg(out_path):
    """Export torchvision's pretrained VGG-16-bn (downloads weights; run
    this outside restricted environments)."""
    from collections import OrderedDict

    import torch
    from torch import nn
    try:
        from torchvision.models import VGG16_BN_Weights, vgg16_bn
    except ImportError as exc:
        raise click.ClickException(f"torchvision is required: {exc}") from exc

    from .export import module_to_layers
    from .formats import write_fgm

    source = vgg16_bn(weights=VGG16_BN_Weights.IMAGENET1K_V1)
    source.eval()
    modules: list[tuple[str, nn.Module]] = []
    for i, mod in enumerate(source.features):
        modules.append((f"features.{i}", mod))
    modules.append(("avgpool", source.avgpool))
    modules.append(("flatten", nn.Flatten()))
    for i, mod in enumerate(source.classifier):
        modules.append((f"classifier.{i}", mod))
    seq = nn.Sequential(OrderedDict(modules))

    result = module_to_layers(seq, (3, 224, 224))
    write_fgm(out_path, result.layers, (3, 224, 224), 1000,
              [0.485, 0.456, 0.406], [0.229, 0.224, 0.225])
    pools = [l["name"] for l in result.layers if l["kind"] == "maxpool2d"]
    click.echo(f"wrote {out_path}: {len(result.layers)} layers")
    click.echo("maxpool layers (2nd/3rd/4th are the usual shallow targets): "
               + json.dumps(pools))


if __name__ == "__main__":
    main()
