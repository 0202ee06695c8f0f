#!/usr/bin/env python3
"""Regenerates the bundled evaluation images in assets/images/.

The set stands in for the high-resolution photo collections used by the
similarity protocol, which cannot be redistributed. Each image is
synthesized with natural-photo statistics: smooth multi-octave luminance
fields, a dominant gradient, soft- and hard-edged shapes, fine texture,
and mild sensor noise. Generation is deterministic.

Usage: python3 tools/make_image_set.py [outdir]
"""

import sys
from pathlib import Path

import numpy as np
from PIL import Image

SIZE = 320
COUNT = 24


def value_noise(rng, size, octaves=5, persistence=0.55):
    """Multi-octave value noise in [0, 1], smooth like terrain/clouds."""
    field = np.zeros((size, size))
    amplitude, total = 1.0, 0.0
    for o in range(octaves):
        cells = 2 ** (o + 2)
        coarse = rng.random((cells, cells))
        img = Image.fromarray((coarse * 255).astype(np.uint8))
        img = img.resize((size, size), Image.BICUBIC)
        field += amplitude * (np.asarray(img, dtype=np.float64) / 255.0)
        total += amplitude
        amplitude *= persistence
    field /= total
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo + 1e-9)


def soft_disc(size, cx, cy, radius, softness):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    d = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
    return np.clip((radius - d) / max(softness, 1.0), 0.0, 1.0)


def make_image(rng):
    base = value_noise(rng, SIZE, octaves=int(rng.integers(4, 7)))

    # Dominant illumination gradient (sky / ground, window light, ...).
    angle = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64) / SIZE
    grad = (np.cos(angle) * xx + np.sin(angle) * yy)
    grad = (grad - grad.min()) / (grad.max() - grad.min() + 1e-9)
    lum = 0.55 * base + 0.45 * grad

    # A palette around two endpoint colors keeps channels correlated
    # the way photographs are.
    c0 = rng.uniform(0.05, 0.55, size=3)
    c1 = rng.uniform(0.45, 0.98, size=3)
    img = lum[..., None] * c1 + (1.0 - lum[..., None]) * c0

    # Objects: soft and hard discs with their own shading.
    for _ in range(int(rng.integers(3, 9))):
        cx, cy = rng.uniform(0, SIZE, size=2)
        radius = rng.uniform(12, 70)
        softness = rng.choice([1.5, 3.0, 12.0, 25.0])
        mask = soft_disc(SIZE, cx, cy, radius, softness)
        color = rng.uniform(0.0, 1.0, size=3)
        shade = value_noise(rng, SIZE, octaves=3)
        obj = color[None, None, :] * (0.6 + 0.4 * shade[..., None])
        alpha = mask[..., None] * rng.uniform(0.5, 1.0)
        img = img * (1.0 - alpha) + obj * alpha

    # Occasional horizon-like straight edge.
    if rng.random() < 0.5:
        cut = int(rng.uniform(0.25, 0.75) * SIZE)
        tint = rng.uniform(-0.25, 0.25, size=3)
        img[cut:, :, :] = np.clip(img[cut:, :, :] * rng.uniform(0.55, 0.9) + tint * 0.1, 0, 1)

    # Fine texture plus sensor noise.
    texture = rng.normal(0.0, rng.uniform(0.01, 0.04), size=(SIZE, SIZE, 1))
    noise = rng.normal(0.0, rng.uniform(0.004, 0.012), size=(SIZE, SIZE, 3))
    img = np.clip(img + texture + noise, 0.0, 1.0)
    return (img * 255.0).round().astype(np.uint8)


def main():
    outdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("assets/images")
    outdir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20240211)
    for i in range(COUNT):
        Image.fromarray(make_image(rng), mode="RGB").save(outdir / f"img_{i:02d}.png")
    print(f"wrote {COUNT} images to {outdir}")


if __name__ == "__main__":
    main()
