"""Between-class mixing of network inputs and their labels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class BetweenClassSample:
    S_bc: np.ndarray
    y_bc: np.ndarray
    r: float
    sources: tuple


def one_hot(label: int, n_classes: int) -> np.ndarray:
    y = np.zeros(n_classes)
    y[label] = 1.0
    return y


def mix_between_class(S1, y1, S2, y2, r: float, sources=(None, None)) -> BetweenClassSample:
    """Mix two samples of different classes with ratio ``r``.

    ``S = (r*S1 + (1-r)*S2) / sqrt(r^2 + (1-r)^2)`` and ``y = r*y1 + (1-r)*y2``.
    The divisor keeps the variance of zero-mean inputs unchanged.
    """
    S1, S2 = np.asarray(S1), np.asarray(S2)
    y1, y2 = np.asarray(y1, dtype=np.float64), np.asarray(y2, dtype=np.float64)
    if S1.shape != S2.shape:
        raise ValueError(f"cannot mix samples of shapes {S1.shape} and {S2.shape}")
    if y1.shape != y2.shape:
        raise ValueError(f"label shapes differ: {y1.shape} vs {y2.shape}")
    if np.argmax(y1) == np.argmax(y2):
        raise ValueError(f"between-class mixing needs two different classes, got class {np.argmax(y1)} twice")
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"mixing ratio {r} outside [0, 1]")
    q = 1.0 - r
    S_bc = (r * S1 + q * S2) / np.sqrt(r * r + q * q)
    return BetweenClassSample(S_bc.astype(S1.dtype, copy=False), r * y1 + q * y2, float(r), tuple(sources))


def sample_bc_batch(images: np.ndarray, labels: np.ndarray, n_classes: int, batch_size: int,
                    rng: np.random.Generator) -> list[BetweenClassSample]:
    """Draw ``batch_size`` mixes: two distinct classes uniformly, one sample of each, ``r ~ U(0, 1)``."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("between-class batches need at least two classes in the data")
    members = {c: np.flatnonzero(labels == c) for c in classes}
    out = []
    for _ in range(batch_size):
        c1, c2 = rng.choice(classes, size=2, replace=False)
        i = int(rng.choice(members[c1]))
        j = int(rng.choice(members[c2]))
        r = float(rng.random())
        out.append(mix_between_class(images[i], one_hot(c1, n_classes), images[j], one_hot(c2, n_classes),
                                     r, sources=(i, j)))
    return out


def stack_batch(samples: list[BetweenClassSample]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([s.S_bc for s in samples]), np.stack([s.y_bc for s in samples])
