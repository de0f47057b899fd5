"""Linear SVM on network features with Platt-scaled probabilities.

The per-class one-vs-rest SVMs minimise

    lambda/2 * |w|^2 + 1/n * sum_i max(0, 1 - y_i (w . x_i + b)),   lambda = 1 / (C n)

by averaged stochastic sub-gradient descent (Pegasos) with step ``1/(lambda t)``.
The bias is learned as the weight of a constant feature appended to ``x``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn

log = logging.getLogger(__name__)

SVM_C = 0.1


@dataclass
class SvmModel:
    weights: np.ndarray          # (n_classes, dim)
    bias: np.ndarray             # (n_classes,)
    platt_a: np.ndarray          # (n_classes,)
    platt_b: np.ndarray          # (n_classes,)
    C: float = SVM_C
    objective: list = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def decision(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x @ self.weights.T + self.bias


def extract_features(model, images, batch_size: int = 100) -> np.ndarray:
    """Pooled feature vectors in inference mode (dropout off, running BN statistics)."""
    feats, _ = model.predict(images, batch_size)
    return feats.astype(np.float64)


def svm_objective(W: np.ndarray, X: np.ndarray, Y: np.ndarray, lam: float) -> np.ndarray:
    """Per-class primal objective; ``W`` is (classes, dim + 1) acting on bias-augmented ``X``."""
    margins = np.maximum(0.0, 1.0 - Y * (X @ W.T))
    return 0.5 * lam * np.sum(W * W, axis=1) + margins.mean(axis=0)


def _augment(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def pegasos(X: np.ndarray, Y: np.ndarray, lam: float, epochs: int = 200, batch_size: int = 32,
            seed: int = 0) -> tuple[np.ndarray, list]:
    """Averaged mini-batch Pegasos for all one-vs-rest problems at once.

    ``X`` (n, d) already carries the bias column, ``Y`` (n, classes) is +-1.
    Returns the averaged weights (classes, d) and the objective of the
    running average after every epoch.
    """
    n, d = X.shape
    k = Y.shape[1]
    rng = np.random.default_rng(seed)
    W = np.zeros((k, d))
    avg = np.zeros((k, d))
    radius = 1.0 / np.sqrt(lam)
    t = 0
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            t += 1
            eta = 1.0 / (lam * t)
            xb, yb = X[idx], Y[idx]
            active = (yb * (xb @ W.T)) < 1.0
            grad = (active * yb).T @ xb / len(idx)
            W *= 1.0 - eta * lam
            W += eta * grad
            norms = np.linalg.norm(W, axis=1, keepdims=True)
            W *= np.minimum(1.0, radius / np.maximum(norms, 1e-300))
            avg += (W - avg) / t
        history.append(svm_objective(avg, X, Y, lam))
    return avg, history


def platt_fit(scores: np.ndarray, positive: np.ndarray, max_iter: int = 100) -> tuple[float, float]:
    """Fit ``P(y=1|f) = 1 / (1 + exp(a f + b))`` by Newton's method with Platt's smoothed targets."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    t = np.where(positive, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    a, b = 0.0, np.log((n_neg + 1.0) / (n_pos + 1.0))

    def nll(a, b):
        z = a * scores + b
        # log(1 + e^z) - (1 - t) z, written stably
        return float(np.sum(np.logaddexp(0.0, z) - (1.0 - t) * z))

    value = nll(a, b)
    for _ in range(max_iter):
        z = a * scores + b
        p = 0.5 * (1.0 - np.tanh(0.5 * z))       # 1 / (1 + e^z)
        d1 = t - p
        d2 = p * (1.0 - p)
        g = np.array([np.dot(scores, d1), d1.sum()])
        h11 = np.dot(scores * scores, d2) + 1e-12
        h22 = d2.sum() + 1e-12
        h21 = np.dot(scores, d2)
        if np.max(np.abs(g)) < 1e-7:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g[0] - h21 * g[1]) / det
        db = -(-h21 * g[0] + h11 * g[1]) / det
        gd = g[0] * da + g[1] * db
        step = 1.0
        while step >= 1e-10:
            na, nb = a + step * da, b + step * db
            new = nll(na, nb)
            if new < value + 1e-4 * step * gd:
                a, b, value = na, nb, new
                break
            step /= 2.0
        else:
            break
    return float(a), float(b)


def train_svm(features, labels, C: float = SVM_C, n_classes: int | None = None, epochs: int = 200,
              seed: int = 0, batch_size: int = 32) -> SvmModel:
    """One-vs-rest linear SVMs followed by per-class Platt scaling on the training scores."""
    X = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if X.ndim != 2 or X.shape[0] != labels.size:
        raise ValueError(f"features {X.shape} do not match {labels.size} labels")
    if C <= 0:
        raise ValueError("C must be positive")
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    counts = np.bincount(labels, minlength=n_classes)
    if n_classes < 2 or np.any(counts < 2):
        raise ValueError(f"need >= 2 classes with >= 2 samples each, got counts {counts.tolist()}")
    Y = np.where(labels[:, None] == np.arange(n_classes), 1.0, -1.0)
    lam = 1.0 / (C * X.shape[0])
    Wa, history = pegasos(_augment(X), Y, lam, epochs, batch_size, seed)
    W, b = Wa[:, :-1], Wa[:, -1]
    scores = X @ W.T + b
    platt = [platt_fit(scores[:, c], labels == c) for c in range(n_classes)]
    model = SvmModel(W, b, np.array([p[0] for p in platt]), np.array([p[1] for p in platt]), C,
                     [h.sum() for h in history])
    if np.any(model.platt_a >= 0):
        log.warning("Platt slope not negative for classes %s", np.flatnonzero(model.platt_a >= 0).tolist())
    return model


def platt_probability(scores, a, b) -> np.ndarray:
    z = a * np.asarray(scores, dtype=np.float64) + b
    return 0.5 * (1.0 - np.tanh(0.5 * z))


def svm_predict_proba(model: SvmModel, x) -> np.ndarray:
    """Per-class Platt probabilities renormalised to a distribution; ``x`` is (dim,) or (n, dim)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    p = platt_probability(model.decision(np.atleast_2d(x)), model.platt_a, model.platt_b)
    p = np.maximum(p, 1e-300)
    p /= p.sum(axis=1, keepdims=True)
    return p[0] if single else p


def save_svm(path, model: SvmModel):
    entries = {}
    for c in range(model.n_classes):
        entries[f"svm.w.{c}"] = model.weights[c]
        entries[f"svm.b.{c}"] = np.array([model.bias[c]])
        entries[f"platt.a.{c}"] = np.array([model.platt_a[c]])
        entries[f"platt.b.{c}"] = np.array([model.platt_b[c]])
    entries["svm.C"] = np.array([model.C])
    tn.save_params(path, entries)


def load_svm(path) -> SvmModel:
    entries = tn.load_params(path)
    k = sum(1 for name in entries if name.startswith("svm.w."))
    if k < 2:
        raise ValueError(f"{path}: not an SVM file (found {k} class weight vectors)")
    try:
        W = np.stack([entries[f"svm.w.{c}"] for c in range(k)]).astype(np.float64)
        col = lambda key: np.array([float(entries[f"{key}.{c}"][0]) for c in range(k)])
        b, a, pb = col("svm.b"), col("platt.a"), col("platt.b")
    except KeyError as exc:
        raise ValueError(f"{path}: missing SVM entry {exc}") from None
    C = float(entries["svm.C"][0]) if "svm.C" in entries else SVM_C
    return SvmModel(W, b, a, pb, C)
