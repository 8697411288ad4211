"""Procedural stand-ins for the concrete-crack corpus.

Negatives are mottled grey concrete texture; positives add one dark,
jittered crack running between two image edges.  Written as RGB PNGs in the
``<root>/Negative`` / ``<root>/Positive`` layout so the real loader can be
exercised end to end when the real corpus is not available.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def _blur(a: np.ndarray, r: int) -> np.ndarray:
    k = 2 * r + 1
    pad = np.pad(a, r, mode="reflect")
    c = pad.cumsum(0).cumsum(1)
    c = np.pad(c, ((1, 0), (1, 0)))
    return (c[k:, k:] - c[:-k, k:] - c[k:, :-k] + c[:-k, :-k]) / (k * k)


def concrete_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(0.5, 0.75)
    coarse = _blur(rng.normal(0, 1, (size, size)), 6) * 0.25
    fine = rng.normal(0, 0.04, (size, size))
    pits = (rng.random((size, size)) < 0.004) * -rng.uniform(0.1, 0.3)
    return base + coarse + fine + _blur(pits, 1)


def draw_crack(img: np.ndarray, rng: np.random.Generator) -> None:
    size = img.shape[0]
    if rng.random() < 0.5:
        start, end = np.array([0.0, rng.uniform(0, size)]), np.array([size - 1.0, rng.uniform(0, size)])
    else:
        start, end = np.array([rng.uniform(0, size), 0.0]), np.array([rng.uniform(0, size), size - 1.0])
    steps = 4 * size
    width = rng.uniform(1.0, 3.5)
    depth = rng.uniform(0.3, 0.5)
    drift = np.cumsum(rng.normal(0, 0.8, (steps, 2)), axis=0)
    drift -= np.linspace(0, 1, steps)[:, None] * drift[-1]
    path = start + np.linspace(0, 1, steps)[:, None] * (end - start) + drift
    pix = np.clip(np.round(path).astype(int), 0, size - 1)
    mask = np.zeros_like(img)
    mask[pix[:, 0], pix[:, 1]] = 1.0
    r = max(1, int(round(width / 2)))
    mask = _blur(mask, r)
    img -= depth * mask / mask.max()


def write_crack_folder(root: str | Path, n_per_class: int, size: int = 227, seed: int = 0) -> Path:
    root = Path(root)
    rng = np.random.default_rng(seed)
    for name, crack in (("Negative", False), ("Positive", True)):
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        for i in range(n_per_class):
            img = concrete_texture(rng, size)
            if crack:
                draw_crack(img, rng)
            rgb = np.clip(img, 0, 1)[..., None] * np.array([1.0, 0.98, 0.95])
            Image.fromarray((rgb * 255).round().astype(np.uint8), "RGB").save(d / f"{i:05d}.png")
    return root
