"""Segment classification and recording-level multiplicative fusion."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .calibrate import SvmModel, extract_features, svm_predict_proba
from .dsp import AudioClip, FeatureConfig, recording_inputs

PROB_CLAMP = 1e-12


@dataclass
class RecordingPrediction:
    segment_posteriors: np.ndarray    # (n_segments, n_classes)
    fused: np.ndarray                 # (n_classes,)
    label: int


def fuse_multiplicative(posteriors) -> np.ndarray:
    """Normalised elementwise product of segment posteriors, computed as a sum of logs."""
    P = np.asarray(posteriors, dtype=np.float64)
    if P.ndim == 1:
        P = P[None]
    if P.ndim != 2 or P.size == 0:
        raise ValueError("fuse_multiplicative needs at least one posterior vector")
    s = np.log(np.maximum(P, PROB_CLAMP)).sum(axis=0)
    s -= s.max()
    out = np.exp(s)
    return out / out.sum()


def fuse_models(posterior_a, posterior_b, classes_a=None, classes_b=None) -> np.ndarray:
    """Multiplicative fusion of two models' recording posteriors over the same class set."""
    a = np.asarray(posterior_a, dtype=np.float64)
    b = np.asarray(posterior_b, dtype=np.float64)
    if classes_a is not None and classes_b is not None and list(classes_a) != list(classes_b):
        raise ValueError(f"class sets differ: {list(classes_a)} vs {list(classes_b)}")
    if a.shape != b.shape:
        raise ValueError(f"posterior shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        return np.stack([fuse_multiplicative([x, y]) for x, y in zip(a, b)])
    return fuse_multiplicative([a, b])


def segment_posteriors(model, images, svm: SvmModel | None = None, batch_size: int = 100) -> np.ndarray:
    """Per-segment posteriors from the softmax head, or from the SVM when one is given."""
    if svm is None:
        return model.predict(images, batch_size)[1].astype(np.float64)
    return svm_predict_proba(svm, extract_features(model, images, batch_size))


def fuse_by_recording(posteriors: np.ndarray, owner: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fuse segment posteriors grouped by recording index; returns (recording ids, fused rows)."""
    owner = np.asarray(owner)
    ids = np.unique(owner)
    return ids, np.stack([fuse_multiplicative(posteriors[owner == r]) for r in ids])


def classify_recording(model, svm: SvmModel | None, recording: AudioClip, config: FeatureConfig,
                       bank=None) -> RecordingPrediction:
    images = recording_inputs(recording, config, bank)
    seg = segment_posteriors(model, images, svm)
    fused = fuse_multiplicative(seg)
    return RecordingPrediction(seg, fused, int(np.argmax(fused)))


def write_predictions(path, ids, fused: np.ndarray, class_names):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["recording_id", "predicted_class"] + [f"p_{c}" for c in class_names])
        for rid, p in zip(ids, fused):
            writer.writerow([rid, class_names[int(np.argmax(p))]] + [f"{v:.6f}" for v in p])
