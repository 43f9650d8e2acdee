"""Command-line surface: explain images, evaluate methods, inspect models.

Raw maps are written in the FGMAP format so downstream metrics never see
display scaling; PNGs are rendered at model-input resolution purely for
viewing.
"""

import json
import logging
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import __version__, mapfile, metrics, render
from . import model_graph as mg
from . import tensor_core as tc
from .cam_backends import Explanation, cam_explanation, gradcam_weights, \
    layercam_explanation, scorecam_weights
from .errors import FgcamError
from .relprop import fg_cam_explain, lrp_explain

METHODS = ("grad-cam", "score-cam", "layer-cam", "fg-grad-cam",
           "fg-score-cam", "lrp")

_log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    model: str
    method: str
    layer: str
    denoise: bool
    signed: bool
    seed: int


def _load_model(path) -> mg.ModelGraph:
    return mg.fold_batchnorm(mg.load_model(path))


def _resolve_layer(model: mg.ModelGraph, method: str, layer: str | None) -> str:
    if method == "lrp":
        if layer not in (None, "input"):
            raise click.UsageError("lrp always explains the input layer")
        return "input"
    if layer is None:
        return "input" if method.startswith("fg-") else model.last_conv_name()
    if layer != "input":
        try:
            model.layer_index(layer)
        except KeyError:
            raise click.UsageError(f"layer {layer!r} not in model")
    return layer


def _check_config(model: mg.ModelGraph, cfg: RunConfig) -> None:
    if cfg.method not in METHODS:
        raise click.UsageError(f"unknown method {cfg.method!r}")
    if cfg.denoise and not cfg.method.startswith("fg-"):
        raise click.UsageError("--denoise only applies to fg-grad-cam/fg-score-cam")
    if cfg.signed and not (cfg.method.startswith("fg-") or cfg.method == "lrp"):
        raise click.UsageError(f"--signed not supported by {cfg.method}")
    if cfg.method in ("grad-cam", "score-cam", "layer-cam") and cfg.layer == "input":
        raise click.UsageError(f"{cfg.method} cannot target the input layer; "
                               "use an fg- method or lrp")
    if cfg.method in ("grad-cam", "score-cam") and cfg.layer != model.last_conv_name():
        click.echo(f"warning: plain {cfg.method} away from the last conv layer "
                   f"({model.last_conv_name()}) tends to lose explanation "
                   "accuracy significantly", err=True)


def load_image(path, model: mg.ModelGraph) -> tuple[np.ndarray, tuple[int, int]]:
    """Read an image file into the model's preprocessed input tensor.

    Returns the tensor plus the original (width, height) for bbox
    scaling.  Pixels are resized to the model frame, scaled to [0, 1]
    and normalized with the model's per-channel mean/std.
    """
    c, h, w = model.input_shape
    img = Image.open(path).convert("L" if c == 1 else "RGB")
    orig_size = img.size
    raw = np.asarray(img, dtype=np.float32) / 255.0
    if c == 1:
        raw = raw[None]
    else:
        raw = raw.transpose(2, 0, 1)
    raw = tc.bilinear_resize(raw, h, w)
    norm = (raw - model.mean[:, None, None]) / model.std[:, None, None]
    return norm.astype(np.float32), orig_size


def compute_explanation(model: mg.ModelGraph, trace: mg.ActivationTrace,
                        x: np.ndarray, cfg: RunConfig,
                        class_index: int) -> Explanation:
    method, layer = cfg.method, cfg.layer
    if method == "grad-cam":
        return cam_explanation(gradcam_weights(model, trace, class_index, layer),
                               trace, layer)
    if method == "score-cam":
        return cam_explanation(
            scorecam_weights(model, trace, x, class_index, layer), trace, layer)
    if method == "layer-cam":
        return layercam_explanation(model, trace, class_index, layer)
    if method == "fg-grad-cam":
        return fg_cam_explain(model, trace, x, class_index, "grad", layer,
                              denoise=cfg.denoise, signed=cfg.signed)
    if method == "fg-score-cam":
        return fg_cam_explain(model, trace, x, class_index, "score", layer,
                              denoise=cfg.denoise, signed=cfg.signed)
    return lrp_explain(model, trace, class_index, signed=cfg.signed)


def _config_options(fn):
    fn = click.option("--model", "model_path", required=True,
                      type=click.Path(exists=True, dir_okay=False),
                      help="FGM model file.")(fn)
    fn = click.option("--method", required=True, type=click.Choice(METHODS))(fn)
    fn = click.option("--layer", default=None,
                      help="Target layer name, or 'input' (default: input for "
                           "fg-*/lrp, last conv otherwise).")(fn)
    fn = click.option("--denoise", is_flag=True,
                      help="Low-rank denoising of the explanation components.")(fn)
    fn = click.option("--signed", is_flag=True,
                      help="Keep negative contributions (skip the final ReLU).")(fn)
    fn = click.option("--seed", default=0, show_default=True, type=int)(fn)
    return fn


@click.group()
@click.version_option(version=__version__, prog_name="fgcam")
def main():
    """Fine-grained CAM explanations for sequential CNNs."""
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@_config_options
@click.option("--class-index", default=None, type=int,
              help="Class to explain (default: the predicted class).")
@click.option("--out-map", default=None, type=click.Path(dir_okay=False))
@click.option("--out-png", default=None, type=click.Path(dir_okay=False))
@click.option("--out-json", default=None, type=click.Path(dir_okay=False))
def explain(image, model_path, method, layer, denoise, signed, seed,
            class_index, out_map, out_png, out_json):
    """Explain one image and write the raw map, a PNG heatmap and a JSON
    sidecar (defaults: alongside the image, named <stem>.<method>.*)."""
    try:
        model = _load_model(model_path)
        cfg = RunConfig(model=str(model_path), method=method,
                        layer=_resolve_layer(model, method, layer),
                        denoise=denoise, signed=signed, seed=seed)
        _check_config(model, cfg)
        if out_map is None and out_png is None and out_json is None:
            stem = Path(image).with_suffix("")
            out_map = f"{stem}.{method}.map"
            out_png = f"{stem}.{method}.png"
            out_json = f"{stem}.{method}.json"
        x, _ = load_image(image, model)
        trace = mg.forward_trace(model, x)
        predicted = int(np.argmax(trace.logits))
        target = predicted if class_index is None else class_index
        if not 0 <= target < model.class_count:
            raise click.UsageError(f"class index {target} out of range")
        expl = compute_explanation(model, trace, x, cfg, target)
        if out_map:
            mapfile.write_map(out_map, expl.map[None])
        if out_png:
            render.save_heatmap_png(expl.map, out_png, expl.signed,
                                    upscale_to=model.input_shape[1:])
        if out_json:
            payload = {"config": {**asdict(cfg), "class_index": target},
                       "logits": [float(v) for v in trace.logits],
                       "predicted_class": predicted,
                       "map_shape": list(expl.map.shape),
                       "signed": expl.signed}
            Path(out_json).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        click.echo(f"predicted class {predicted}, explained class {target}, "
                   f"map {expl.map.shape[0]}x{expl.map.shape[1]}")
    except FgcamError as exc:
        raise click.ClickException(str(exc)) from exc


def _read_listfile(path) -> list[dict]:
    entries = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            entries.append(json.loads(line))
    if not entries:
        raise click.UsageError(f"listfile {path} is empty")
    return entries


def _scaled_bbox(entry: dict, orig_size, model: mg.ModelGraph) -> metrics.BBox | None:
    if "bbox" not in entry or entry["bbox"] is None:
        return None
    x1, y1, x2, y2 = entry["bbox"]
    ow, oh = orig_size
    _, mh, mw = model.input_shape
    sx, sy = mw / ow, mh / oh
    x1, x2 = int(round(x1 * sx)), int(round(x2 * sx))
    y1, y2 = int(round(y1 * sy)), int(round(y2 * sy))
    box = metrics.BBox(x1=min(x1, mw - 1), y1=min(y1, mh - 1),
                       x2=max(min(x2, mw), x1 + 1), y2=max(min(y2, mh), y1 + 1))
    box.validate(mh, mw)
    return box


@main.command(name="eval")
@click.argument("listfile", type=click.Path(exists=True, dir_okay=False))
@_config_options
@click.option("--metric", required=True, type=click.Choice(["ad-ai", "insdel", "loc"]))
@click.option("--sample", default=None, type=int,
              help="Evaluate a seeded random sample of N listfile entries.")
@click.option("--out-json", "out_json", default=None, type=click.Path(dir_okay=False),
              help="Report path (default: <listfile>.<metric>.report.json).")
@click.option("--step-pixels", default=448, show_default=True, type=int)
@click.option("--blur-ksize", default=51, show_default=True, type=int)
@click.option("--blur-sigma", default=50.0, show_default=True, type=float)
@click.option("--retain", default=0.5, show_default=True, type=float)
@click.option("--workers", default=1, show_default=True, type=int)
def eval_cmd(listfile, model_path, method, layer, denoise, signed, seed, metric,
             sample, out_json, step_pixels, blur_ksize, blur_sigma, retain,
             workers):
    """Run a faithfulness or localization metric over a JSON-lines
    listfile ({"path": ..., "class": ..., "bbox": [x1,y1,x2,y2]?})."""
    try:
        model = _load_model(model_path)
        cfg = RunConfig(model=str(model_path), method=method,
                        layer=_resolve_layer(model, method, layer),
                        denoise=denoise, signed=signed, seed=seed)
        _check_config(model, cfg)
        entries = _read_listfile(listfile)
        base = Path(listfile).parent
        indices = list(range(len(entries)))
        if sample is not None:
            random.Random(seed).shuffle(indices)
            indices = sorted(indices[:sample])
        if metric == "loc" and not any(
                entries[i].get("bbox") for i in indices):
            raise click.UsageError(f"loc metric needs bbox entries, none in {listfile}")

        def run_one(i: int) -> dict:
            entry = entries[i]
            img_path = Path(entry["path"])
            if not img_path.is_absolute():
                img_path = base / img_path
            x, orig_size = load_image(img_path, model)
            trace = mg.forward_trace(model, x)
            cls = int(entry["class"])
            expl = compute_explanation(model, trace, x, cfg, cls)
            out: dict = {"index": i}
            if metric == "loc":
                bbox = _scaled_bbox(entry, orig_size, model)
                if bbox is None:
                    out["skipped"] = "missing bbox"
                    return out
                m = expl.map
                _, mh, mw = model.input_shape
                if m.shape != (mh, mw):
                    m = tc.bilinear_resize(m[None], mh, mw)[0]
                out["proportion"] = metrics.proportion(
                    Explanation(layer=expl.layer, map=m, signed=expl.signed), bbox)
                return out
            blurred = tc.gaussian_blur(x, blur_ksize, blur_sigma)
            if metric == "ad-ai":
                y = float(tc.softmax(trace.logits)[cls])
                kept = metrics.retain_top_half(x, expl, blurred, fraction=retain)
                o = float(tc.softmax(mg.forward_logits(model, kept))[cls])
                out["y"], out["o"] = y, o
            else:
                curves = {
                    d: metrics.perturbation_curve(
                        model, x, expl, cls, d, step_pixels=step_pixels,
                        blurred=blurred)
                    for d in ("insertion", "deletion")}
                out["insertion_auc"] = metrics.auc(curves["insertion"])
                out["deletion_auc"] = metrics.auc(curves["deletion"])
                out["overall"] = metrics.overall_score(out["insertion_auc"],
                                                       out["deletion_auc"])
            return out

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run_one, indices))
        else:
            results = [run_one(i) for i in indices]
        results.sort(key=lambda r: r["index"])

        usable = [r for r in results if "skipped" not in r]
        counts = {"images": len(results), "skipped": len(results) - len(usable)}
        aggregates: dict = {}
        if metric == "ad-ai":
            records = [metrics.EvalRecord(y=r["y"], o=r["o"], class_index=-1)
                       for r in usable]
            counts["excluded_zero_prob"] = sum(1 for r in records if r.y <= 0)
            ad, ai = metrics.average_drop_increase(records)
            aggregates = {"average_drop": ad, "average_increase": ai}
        elif metric == "insdel":
            for key in ("insertion_auc", "deletion_auc", "overall"):
                aggregates[key] = float(np.mean([r[key] for r in usable]))
        else:
            aggregates["proportion"] = float(np.mean([r["proportion"] for r in usable]))

        report = {
            "listfile": str(listfile),
            "metric": metric,
            "seed": seed,
            "sample": sample,
            "methods": {cfg.method: {cfg.layer: {
                "config": asdict(cfg),
                "aggregates": aggregates,
                "counts": counts,
            }}},
        }
        if out_json is None:
            out_json = f"{listfile}.{metric}.report.json"
        Path(out_json).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
        click.echo(f"{metric} over {counts['images']} images -> {out_json}")
    except FgcamError as exc:
        raise click.ClickException(str(exc)) from exc


@main.command()
@click.argument("model_file", type=click.Path(exists=True, dir_okay=False))
def inspect(model_file):
    """Print the layer table, mark the last conv layer and verify
    checksums; graph findings are listed but do not fail the command."""
    try:
        model = mg.load_model(model_file, validate=False)
    except FgcamError as exc:
        raise click.ClickException(str(exc)) from exc
    findings = mg.validate_model(model)
    try:
        last_conv = model.last_conv_name()
    except FgcamError:
        last_conv = None
    from .model_graph import _static_shapes
    shapes, _ = _static_shapes(model)
    click.echo(f"input {tuple(model.input_shape)}  classes {model.class_count}")
    click.echo(f"{'name':<12} {'kind':<12} output")
    for layer, shape in zip(model.layers, shapes):
        mark = "  <- last conv (L)" if layer.name == last_conv else ""
        click.echo(f"{layer.name:<12} {layer.kind:<12} {tuple(shape)}{mark}")
    for finding in findings:
        click.echo(f"finding: {finding}", err=True)


if __name__ == "__main__":
    main()
