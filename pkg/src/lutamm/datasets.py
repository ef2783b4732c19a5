"""Seeded toy datasets for the trainer tests and demos."""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError

# 4x4 core glyphs, upscaled to 8x8; enough structure for a conv toy task
_GLYPHS = {
    0: ["0110", "1001", "1001", "0110"],
    1: ["0010", "0110", "0010", "0111"],
    2: ["0110", "0001", "0110", "1111"],
    3: ["1110", "0110", "0001", "1110"],
}


def two_moons(n: int, noise: float = 0.15, seed: int = 0):
    """Two interleaving half-circles; returns (X: (n, 2), y: (n,) in {0, 1})."""
    if n < 2:
        raise InvalidInputError("need at least 2 samples")
    rng = np.random.default_rng(seed)
    n0 = n // 2
    n1 = n - n0
    t0 = rng.uniform(0.0, np.pi, n0)
    t1 = rng.uniform(0.0, np.pi, n1)
    upper = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    lower = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    x = np.concatenate([upper, lower]) + rng.normal(scale=noise, size=(n, 2))
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    perm = rng.permutation(n)
    return x[perm], y[perm]


def toy_digits(n_per_class: int, classes=(0, 1, 2, 3), noise: float = 0.25, seed: int = 0):
    """Noisy 8x8 glyph bitmaps as NCHW tensors; returns (X: (n,1,8,8), y)."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for cls in classes:
        glyph = np.array([[int(ch) for ch in row] for row in _GLYPHS[cls]], dtype=np.float64)
        base = np.kron(glyph, np.ones((2, 2)))
        for _ in range(n_per_class):
            img = base + rng.normal(scale=noise, size=(8, 8))
            images.append(img[None])
            labels.append(cls)
    x = np.stack(images)
    y = np.array(labels, dtype=np.int64)
    perm = rng.permutation(len(y))
    return x[perm], y[perm]


def split(x: np.ndarray, y: np.ndarray, train_frac: float = 0.7):
    """Deterministic front/back split (inputs are already shuffled)."""
    cut = max(1, int(len(y) * train_frac))
    return x[:cut], y[:cut], x[cut:], y[cut:]
