"""Spatio-temporal attention pooling over the recurrent output Z (2H x T).

Temporal weights come from scoring each column of Z, spatial weights from
scoring each row.  Their outer product is a rank-1 mask A, and the pooled
feature is ``x_s = sum_t tanh(A[s, t] * Z[s, t])``.

Each scorer maps its input vector to a scalar as
``v . tanh(W^T z + b)`` with a hidden width of ``att_size``.  All functions
accept leading batch axes.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .layers import ModelConfig, bigru_forward, conv_block_forward, dense_softmax, uniform_init
from .tensor import Tensor


def init_attention(cfg: ModelConfig, rng, dtype=tn.DEFAULT_DTYPE) -> dict:
    two_h, t, d = 2 * cfg.hidden, cfg.n_frames, cfg.att_size
    return {
        "att.tem.w": uniform_init(rng, (two_h, d), two_h, dtype),
        "att.tem.b": np.zeros(d, dtype),
        "att.tem.v": uniform_init(rng, (d,), d, dtype),
        "att.spa.w": uniform_init(rng, (t, d), t, dtype),
        "att.spa.b": np.zeros(d, dtype),
        "att.spa.v": uniform_init(rng, (d,), d, dtype),
    }


def attention_scores(vectors: Tensor, w: Tensor, b: Tensor, v: Tensor) -> Tensor:
    """Scalar score per row of ``vectors`` (..., n, d_in) -> (..., n)."""
    return tn.matmul(tn.tanh(tn.matmul(vectors, w) + b), v)


def temporal_attention(Z: Tensor, params: dict) -> Tensor:
    """Softmax over time of the per-column scores: (..., 2H, T) -> (..., T)."""
    cols = tn.transpose(Z, tuple(range(Z.ndim - 2)) + (Z.ndim - 1, Z.ndim - 2))
    scores = attention_scores(cols, params["att.tem.w"], params["att.tem.b"], params["att.tem.v"])
    return tn.softmax(scores, axis=-1)


def spatial_attention(Z: Tensor, params: dict) -> Tensor:
    """Softmax over feature rows of the per-row scores: (..., 2H, T) -> (..., 2H)."""
    if Z.shape[-1] != params["att.spa.w"].shape[0]:
        raise ValueError(f"spatial attention was built for T={params['att.spa.w'].shape[0]} frames, "
                         f"got Z with T={Z.shape[-1]}")
    scores = attention_scores(Z, params["att.spa.w"], params["att.spa.b"], params["att.spa.v"])
    return tn.softmax(scores, axis=-1)


def attention_mask(a_spa: Tensor, a_tem: Tensor) -> Tensor:
    """Rank-1 mask ``A[s, t] = a_spa[s] * a_tem[t]``."""
    return tn.outer_product(a_spa, a_tem)


def attention_pool(Z: Tensor, A: Tensor) -> Tensor:
    """``x_s = sum_t tanh(A[s, t] * Z[s, t])``; tanh acts on the masked value."""
    if Z.shape != A.shape:
        raise ValueError(f"attention_pool: Z {Z.shape} and mask {A.shape} differ")
    return tn.sum_(tn.tanh(A * Z), axis=-1)


@dataclass
class AttentionMask:
    A: np.ndarray
    a_spa: np.ndarray
    a_tem: np.ndarray


def att_crnn_forward(S: Tensor, params: dict, buffers: dict, cfg: ModelConfig, training: bool = False,
                     rng=None, return_mask: bool = False):
    """Full network: conv block -> bidirectional GRU stack -> attention pooling -> softmax.

    Returns ``(x, y_hat)`` with x the pooled feature (N, 2H) and y_hat the
    class posteriors (N, C); with ``return_mask`` an :class:`AttentionMask`
    of batched arrays is appended.
    """
    O = conv_block_forward(S, params, buffers, cfg, training, rng)
    Z = bigru_forward(O, params, cfg, training, rng)
    a_tem = temporal_attention(Z, params)
    a_spa = spatial_attention(Z, params)
    A = attention_mask(a_spa, a_tem)
    x = attention_pool(Z, A)
    y_hat = dense_softmax(x, params["out.w"], params["out.b"])
    if return_mask:
        return x, y_hat, AttentionMask(A.data, a_spa.data, a_tem.data)
    return x, y_hat


def write_mask_csv(path, mask: np.ndarray):
    """One row per spatial index, one column per frame."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["spatial_index"] + [f"t{t}" for t in range(mask.shape[1])])
        for s, row in enumerate(mask):
            writer.writerow([s] + [repr(float(v)) for v in row])
