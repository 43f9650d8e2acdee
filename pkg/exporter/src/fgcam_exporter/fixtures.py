"""Fixture bundle emission for the tiny digit classifier.

The bundle a ``tiny`` export writes:

* ``tiny-cnn.fgm`` — the raw (unfolded) model;
* ``images/*.png`` — correctly classified digit images, two per class;
* ``eval_list.jsonl`` — path/class/bbox per image, bboxes from ink pixels;
* ``golden/`` — preprocessed inputs and source logits for five images,
  and per-layer activations for two of them;
* ``manifest.json`` — layer mapping, preprocessing constants, training
  stats and a CRC-32 for every emitted file.

Golden values are computed from the re-loaded PNG bytes, so the engine
sees byte-identical inputs.
"""

import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import formats
from .digits import SIZE, ink_bbox, render_digit
from .export import capture_activations, module_to_layers
from .tiny_cnn import MEAN, STD, build_tiny_cnn, train_tiny_cnn

INPUT_SHAPE = (1, SIZE, SIZE)
CLASS_COUNT = 10
GOLDEN_LOGITS = 5
GOLDEN_ACTIVATIONS = 2


def _select_fixture_images(model, seed: int, per_class: int = 2,
                           pool_per_class: int = 20):
    """Render a candidate pool and keep correctly classified images."""
    rng = np.random.default_rng(seed)
    chosen = []
    for digit in range(10):
        kept = 0
        for _ in range(pool_per_class):
            img = render_digit(digit, rng)
            quantized = np.round(img * 255.0).astype(np.uint8)
            reloaded = quantized.astype(np.float32) / 255.0
            x = (reloaded - MEAN[0]) / STD[0]
            with torch.no_grad():
                logits = model(torch.from_numpy(x[None, None]))[0].numpy()
            if int(np.argmax(logits)) == digit:
                chosen.append((digit, quantized))
                kept += 1
                if kept == per_class:
                    break
        if kept < per_class:
            raise RuntimeError(f"could not find {per_class} correctly "
                               f"classified samples for digit {digit}")
    return chosen


def export_tiny(out_dir, seed: int = 20240901) -> dict:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "golden").mkdir(parents=True, exist_ok=True)

    model, stats = train_tiny_cnn(seed=seed)
    result = module_to_layers(model, INPUT_SHAPE)
    model_path = out / "tiny-cnn.fgm"
    formats.write_fgm(model_path, result.layers, INPUT_SHAPE, CLASS_COUNT,
                      MEAN, STD)

    chosen = _select_fixture_images(model, seed=seed + 10)
    entries = []
    fixtures = []
    for i, (digit, quantized) in enumerate(chosen):
        rel = f"images/digit_{i:02d}_c{digit}.png"
        Image.fromarray(quantized, mode="L").save(out / rel, format="PNG")
        reloaded = np.asarray(Image.open(out / rel), dtype=np.float32) / 255.0
        x1, y1, x2, y2 = ink_bbox(reloaded)
        entries.append({"path": rel, "class": digit, "bbox": [x1, y1, x2, y2]})

        if i < GOLDEN_LOGITS:
            x = ((reloaded - MEAN[0]) / STD[0]).astype(np.float32)[None]
            with torch.no_grad():
                logits = model(torch.from_numpy(x[None]))[0].numpy()
            input_rel = f"golden/input_{i:02d}.map"
            logits_rel = f"golden/logits_{i:02d}.map"
            formats.write_map(out / input_rel, x)
            formats.write_map(out / logits_rel, logits)
            fixture = {"image": rel, "class": digit,
                       "input": input_rel, "logits": logits_rel}
            if i < GOLDEN_ACTIVATIONS:
                captured = capture_activations(model, torch.from_numpy(x[None]))
                engine_names = {l["name"] for l in result.layers
                                if l["kind"] != "batchnorm2d"}
                acts = {}
                for key, arr in captured.items():
                    base = key.removesuffix(".raw")
                    if base in engine_names or key.endswith(".raw"):
                        act_rel = f"golden/act_{i:02d}_{key}.map"
                        formats.write_map(out / act_rel, arr)
                        if not key.endswith(".raw"):
                            acts[key] = act_rel
                fixture["activations"] = acts
            fixtures.append(fixture)

    listfile = out / "eval_list.jsonl"
    listfile.write_text("".join(json.dumps(e, sort_keys=True) + "\n"
                                for e in entries))

    files = sorted(str(p.relative_to(out)) for p in out.rglob("*")
                   if p.is_file() and p.name != "manifest.json")
    manifest = {
        "source": "tiny-digits",
        "model": "tiny-cnn.fgm",
        "input_shape": list(INPUT_SHAPE),
        "class_count": CLASS_COUNT,
        "preprocessing": {"mean": MEAN, "std": STD},
        "layer_mapping": result.mapping,
        "training": stats,
        "fixtures": fixtures,
        "listfile": "eval_list.jsonl",
        "checksums": {rel: formats.file_crc32(out / rel) for rel in files},
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest
