"""Synthetic 28x28 digit images.

Glyphs are rasterized with Pillow's built-in bitmap font, jittered in
size, position and rotation, and lightly corrupted with noise.  Bounding
boxes come from thresholding the ink pixels.
"""

import numpy as np
from PIL import Image, ImageDraw, ImageFont

SIZE = 28
INK_THRESHOLD = 0.15


def render_digit(digit: int, rng: np.random.Generator) -> np.ndarray:
    """One (28, 28) float image in [0, 1], background 0, ink near 1."""
    font_size = int(rng.integers(16, 23))
    font = ImageFont.load_default(size=font_size)
    canvas = Image.new("L", (SIZE * 2, SIZE * 2), 0)
    draw = ImageDraw.Draw(canvas)
    draw.text((SIZE // 2, SIZE // 2), str(digit), fill=255, font=font)
    angle = float(rng.uniform(-12.0, 12.0))
    canvas = canvas.rotate(angle, resample=Image.BILINEAR, center=(SIZE, SIZE))

    arr = np.asarray(canvas, dtype=np.float32) / 255.0
    ys, xs = np.nonzero(arr > INK_THRESHOLD)
    cy, cx = int(ys.mean()), int(xs.mean())
    # move the ink centroid to the canvas center (the crop center), jittered
    dy = SIZE - cy + int(rng.integers(-2, 3))
    dx = SIZE - cx + int(rng.integers(-2, 3))
    shifted = np.zeros_like(arr)
    src_y = slice(max(0, -dy), min(arr.shape[0], arr.shape[0] - dy))
    src_x = slice(max(0, -dx), min(arr.shape[1], arr.shape[1] - dx))
    shifted[src_y.start + dy:src_y.stop + dy,
            src_x.start + dx:src_x.stop + dx] = arr[src_y, src_x]
    img = shifted[SIZE // 2:SIZE // 2 + SIZE, SIZE // 2:SIZE // 2 + SIZE]

    img = img + rng.normal(0.0, 0.03, img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def make_dataset(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """n images cycling through the ten digit classes."""
    rng = np.random.default_rng(seed)
    images = np.empty((n, 1, SIZE, SIZE), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        digit = i % 10
        images[i, 0] = render_digit(digit, rng)
        labels[i] = digit
    return images, labels


def ink_bbox(image: np.ndarray) -> tuple[int, int, int, int]:
    """Half-open (x1, y1, x2, y2) around pixels above the ink threshold."""
    mask = image > INK_THRESHOLD
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return 0, 0, image.shape[1], image.shape[0]
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1
