"""Heatmap rendering to 8-bit RGB PNG files."""

import matplotlib
import numpy as np
from PIL import Image

from . import tensor_core as tc


def heatmap_rgb(map2d: np.ndarray, signed: bool) -> np.ndarray:
    """Color a single-channel map.

    Unsigned maps are min-max normalized and pushed through a perceptual
    colormap (brighter = more important).  Signed maps use a symmetric
    diverging scale: red for positive, blue for negative, white at zero.
    """
    if signed:
        extent = float(np.abs(map2d).max())
        v = 0.5 if extent == 0 else map2d / (2.0 * extent) + 0.5
        cmap = matplotlib.colormaps["bwr"]
    else:
        v = tc.minmax_normalize(map2d.astype(np.float32))
        cmap = matplotlib.colormaps["inferno"]
    rgba = cmap(np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0))
    return (rgba[..., :3] * 255.0 + 0.5).astype(np.uint8)


def save_heatmap_png(map2d: np.ndarray, path, signed: bool,
                     upscale_to: tuple[int, int] | None = None) -> None:
    """Write the colored map; small maps can be bilinearly upscaled
    (raw values are scaled before coloring, so hue ordering survives)."""
    m = map2d.astype(np.float32)
    if upscale_to is not None and m.shape != tuple(upscale_to):
        m = tc.bilinear_resize(m[None], upscale_to[0], upscale_to[1])[0]
    Image.fromarray(heatmap_rgb(m, signed), mode="RGB").save(path, format="PNG")
