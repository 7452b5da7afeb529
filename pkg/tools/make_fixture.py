"""Generate the bundled 32x32 synthetic image sets (deterministic)."""

from pathlib import Path

import numpy as np
from PIL import Image

OUT = Path(__file__).resolve().parents[1] / "src" / "iqarobust" / "data" / "fixture"
SIZE = 32
SETS = {"calibration": (32, 101), "test": (32, 202), "train-a": (8, 303), "train-b": (8, 404),
        "train-c": (8, 505)}


def value_noise(rng, cells):
    grid = rng.uniform(size=(cells + 1, cells + 1))
    t = np.linspace(0, cells, SIZE)
    i = np.minimum(t.astype(int), cells - 1)
    f = t - i
    rows = grid[i] * (1 - f)[:, None] + grid[i + 1] * f[:, None]
    return rows[:, i] * (1 - f)[None, :] + rows[:, i + 1] * f[None, :]


def layer(rng):
    yy, xx = np.mgrid[0:SIZE, 0:SIZE] / (SIZE - 1)
    kind = rng.integers(5)
    if kind == 0:
        a = rng.uniform(0, 2 * np.pi)
        return np.cos(a) * xx + np.sin(a) * yy
    if kind == 1:
        freq, a = rng.uniform(2, 8), rng.uniform(0, np.pi)
        return 0.5 + 0.5 * np.sin(2 * np.pi * freq * (np.cos(a) * xx + np.sin(a) * yy))
    if kind == 2:
        cx, cy, r = rng.uniform(0.2, 0.8, 2).tolist() + [rng.uniform(0.1, 0.4)]
        return ((xx - cx) ** 2 + (yy - cy) ** 2 < r * r).astype(float)
    if kind == 3:
        x0, y0 = rng.uniform(0, 0.6, 2)
        w, h = rng.uniform(0.2, 0.5, 2)
        return ((xx > x0) & (xx < x0 + w) & (yy > y0) & (yy < y0 + h)).astype(float)
    return value_noise(rng, int(rng.integers(3, 9)))


def make_image(rng):
    img = np.zeros((SIZE, SIZE, 3))
    base = rng.uniform(0.1, 0.9, 3)
    img[:] = base
    for _ in range(rng.integers(2, 4)):
        mask = layer(rng)
        mask = (mask - mask.min()) / max(mask.max() - mask.min(), 1e-9)
        color = rng.uniform(0, 1, 3)
        alpha = rng.uniform(0.3, 0.9)
        img = img * (1 - alpha * mask[..., None]) + color * alpha * mask[..., None]
    img += rng.normal(0, rng.uniform(0.0, 0.02), img.shape)
    return np.clip(np.round(img * 255), 0, 255).astype(np.uint8)


def main():
    for name, (count, seed) in SETS.items():
        rng = np.random.default_rng(seed)
        d = OUT / name
        d.mkdir(parents=True, exist_ok=True)
        for k in range(count):
            Image.fromarray(make_image(rng), "RGB").save(d / f"{name}-{k:03d}.png")
    print(f"wrote fixture images to {OUT}")


if __name__ == "__main__":
    main()
