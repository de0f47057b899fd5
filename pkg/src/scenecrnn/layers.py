"""Network building blocks: convolutional block, batch norm, GRU stack, dense output.

Tensors are batched: spectral images are ``(N, K, M, T)``, recurrent
sequences ``(N, T, features)``, and the recurrent output handed to the
attention layers is ``(N, 2H, T)``.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as tn
from .tensor import Tensor


@dataclass
class ModelConfig:
    n_freq: int = 64           # M
    n_frames: int = 80         # T
    n_channels: int = 2        # K
    n_classes: int = 19        # C
    conv_filters: tuple = (64, 128, 256)
    conv_kernels: tuple = ((5, 5), (3, 3), (2, 2))
    pool: tuple = (4, 1)
    hidden: int = 128          # H
    gru_layers: int = 2
    att_size: int = 64
    conv_dropout: float = 0.25
    rnn_dropout: float = 0.1
    bn_momentum: float = 0.99
    bn_eps: float = 1e-5

    def __post_init__(self):
        self.conv_filters = tuple(int(f) for f in self.conv_filters)
        self.conv_kernels = tuple(tuple(int(k) for k in ks) for ks in self.conv_kernels)
        self.pool = tuple(int(p) for p in self.pool)
        if len(self.conv_filters) != len(self.conv_kernels):
            raise ValueError("conv_filters and conv_kernels must have the same length")
        shrink = self.pool[0] ** len(self.conv_filters)
        if self.n_freq % shrink:
            raise ValueError(f"n_freq={self.n_freq} must be divisible by {shrink} "
                             f"(three {self.pool[0]}x1 frequency poolings)")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        for rate in (self.conv_dropout, self.rnn_dropout):
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"dropout rate {rate} outside [0, 1)")

    @property
    def conv_out_freq(self) -> int:
        return self.n_freq // self.pool[0] ** len(self.conv_filters)

    @property
    def conv_features(self) -> int:
        """F = (M / 64) * last filter count."""
        return self.conv_out_freq * self.conv_filters[-1]

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# initialisation


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=tn.DEFAULT_DTYPE) -> np.ndarray:
    limit = np.sqrt(3.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_conv_block(cfg: ModelConfig, rng, dtype=tn.DEFAULT_DTYPE):
    params, buffers = {}, {}
    in_ch = cfg.n_channels
    for i, (out_ch, (kh, kw)) in enumerate(zip(cfg.conv_filters, cfg.conv_kernels), start=1):
        params[f"conv{i}.w"] = uniform_init(rng, (out_ch, in_ch, kh, kw), in_ch * kh * kw, dtype)
        params[f"conv{i}.b"] = np.zeros(out_ch, dtype)
        params[f"bn{i}.gamma"] = np.ones(out_ch, dtype)
        params[f"bn{i}.beta"] = np.zeros(out_ch, dtype)
        buffers[f"bn{i}.mean"] = np.zeros(out_ch, dtype)
        buffers[f"bn{i}.var"] = np.ones(out_ch, dtype)
        in_ch = out_ch
    return params, buffers


def init_gru_stack(cfg: ModelConfig, rng, dtype=tn.DEFAULT_DTYPE):
    params = {}
    h = cfg.hidden
    in_dim = cfg.conv_features
    for layer in range(cfg.gru_layers):
        for d in ("fw", "bw"):
            prefix = f"gru{layer + 1}.{d}"
            params[f"{prefix}.w"] = uniform_init(rng, (in_dim, 3 * h), in_dim, dtype)
            params[f"{prefix}.u"] = uniform_init(rng, (h, 3 * h), h, dtype)
            params[f"{prefix}.b"] = np.zeros(3 * h, dtype)
        in_dim = 2 * h
    params["proj.w"] = uniform_init(rng, (2 * h, 2 * h), 2 * h, dtype)
    params["proj.b"] = np.zeros(2 * h, dtype)
    return params


def init_dense(in_dim: int, n_classes: int, rng, prefix="out", dtype=tn.DEFAULT_DTYPE):
    return {f"{prefix}.w": uniform_init(rng, (in_dim, n_classes), in_dim, dtype),
            f"{prefix}.b": np.zeros(n_classes, dtype)}


# ---------------------------------------------------------------------------
# dropout / batch norm


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; the drop probability is resolved to a multiple of 2**-16."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    bits = np.frombuffer(rng.bytes(2 * x.size), dtype=np.uint16).reshape(x.shape)
    keep = bits >= int(round(rate * 65536))
    return tn.dropout_mask_apply(x, keep * x.dtype.type(1.0 / (1.0 - rate)))


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.99, eps: float = 1e-5, channel_axis: int = 1) -> Tensor:
    """Per-channel normalisation over every axis except ``channel_axis``.

    Training mode uses batch statistics and updates ``running_mean`` /
    ``running_var`` in place with the given momentum; inference uses the
    running statistics.
    """
    axis = channel_axis % x.ndim
    axes = tuple(i for i in range(x.ndim) if i != axis)
    bshape = [1] * x.ndim
    bshape[axis] = x.shape[axis]
    g = gamma.data.reshape(bshape)
    b = beta.data.reshape(bshape)
    if not training:
        inv = 1.0 / np.sqrt(running_var.reshape(bshape) + eps)
        scale = tn.reshape(gamma, bshape) * Tensor(inv.astype(x.dtype))
        return (x - Tensor(running_mean.reshape(bshape).astype(x.dtype))) * scale + tn.reshape(beta, bshape)

    mu = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = g * xhat + b
    count = x.size // x.shape[axis]
    running_mean *= momentum
    running_mean += (1.0 - momentum) * mu.reshape(-1).astype(running_mean.dtype)
    running_var *= momentum
    running_var += (1.0 - momentum) * var.reshape(-1).astype(running_var.dtype)

    def back(grad):
        dgamma = (grad * xhat).sum(axis=axes) if gamma.requires_grad else None
        dbeta = grad.sum(axis=axes) if beta.requires_grad else None
        dx = None
        if x.requires_grad:
            dxhat = grad * g
            dx = (inv_std / count) * (count * dxhat - dxhat.sum(axis=axes, keepdims=True)
                                      - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
        return dx, dgamma, dbeta

    return Tensor.from_op(out.astype(x.dtype), (x, gamma, beta), back, "batch_norm")


# ---------------------------------------------------------------------------
# convolutional block


def conv_block_forward(S: Tensor, params: dict, buffers: dict, cfg: ModelConfig, training: bool = False,
                       rng=None, trace: list | None = None) -> Tensor:
    """conv -> ReLU -> batch norm -> dropout -> 4x1 max pool, three times; returns O as (N, F, T).

    ``trace``, when given, receives every intermediate feature map as
    ``(name, array)`` in layer order.
    """
    if S.ndim != 4 or S.shape[1:] != (cfg.n_channels, cfg.n_freq, cfg.n_frames):
        raise ValueError(f"conv block expects (N, {cfg.n_channels}, {cfg.n_freq}, {cfg.n_frames}), got {S.shape}")
    # run in channel-first layout (C, N, H, W); traces are reported as NCHW
    x = tn.transpose(S, (1, 0, 2, 3))
    for i in range(1, len(cfg.conv_filters) + 1):
        x = tn.conv_2d_same(x, params[f"conv{i}.w"], params[f"conv{i}.b"], layout="CNHW")
        x = tn.relu(x)
        x = batch_norm(x, params[f"bn{i}.gamma"], params[f"bn{i}.beta"], buffers[f"bn{i}.mean"],
                       buffers[f"bn{i}.var"], training, cfg.bn_momentum, cfg.bn_eps, channel_axis=0)
        x = dropout(x, cfg.conv_dropout, rng, training)
        if trace is not None:
            trace.append((f"conv{i}", x.data.transpose(1, 0, 2, 3)))
        x = tn.max_pool_2d(x, cfg.pool)
        if trace is not None:
            trace.append((f"pool{i}", x.data.transpose(1, 0, 2, 3)))
    c, n, m, t = x.shape
    return tn.reshape(tn.transpose(x, (1, 0, 2, 3)), (n, c * m, t))


# ---------------------------------------------------------------------------
# GRU


def gru_step(o_t: Tensor, h_prev: Tensor, w: Tensor, u: Tensor, b: Tensor) -> Tensor:
    """One GRU update built from primitive ops.

    Gate blocks in ``w`` (F, 3H), ``u`` (H, 3H), ``b`` (3H) are ordered
    update, reset, candidate.  The reset gate scales the previous state
    before the recurrent product; ``h = (1 - z) * h_prev + z * candidate``.
    """
    hsz = u.shape[0]
    xw = tn.matmul(o_t, w) + b
    zr = tn.sigmoid(tn.slice_(xw, (Ellipsis, slice(0, 2 * hsz)))
                    + tn.matmul(h_prev, tn.slice_(u, (slice(None), slice(0, 2 * hsz)))))
    z = tn.slice_(zr, (Ellipsis, slice(0, hsz)))
    r = tn.slice_(zr, (Ellipsis, slice(hsz, 2 * hsz)))
    cand = tn.tanh(tn.slice_(xw, (Ellipsis, slice(2 * hsz, 3 * hsz)))
                   + tn.matmul(r * h_prev, tn.slice_(u, (slice(None), slice(2 * hsz, 3 * hsz)))))
    return (1.0 - z) * h_prev + z * cand


def gru_sequence(x: Tensor, w: Tensor, u: Tensor, b: Tensor, reverse: bool = False) -> Tensor:
    """Run a GRU over ``x`` (N, T, F) from a zero state; returns hidden states (N, T, H).

    Same equations as :func:`gru_step`, fused into one op with a hand-written
    backpropagation-through-time.  With ``reverse`` the sequence is read
    from the last frame to the first; output index ``t`` still refers to
    input frame ``t``.
    """
    n, steps, f = x.shape
    hsz = u.shape[0]
    if w.shape != (f, 3 * hsz) or u.shape != (hsz, 3 * hsz) or b.shape != (3 * hsz,):
        raise ValueError(f"gru_sequence: incompatible shapes x{x.shape} w{w.shape} u{u.shape} b{b.shape}")
    W, U, B = w.data, u.data, b.data
    u_zr, u_c = U[:, :2 * hsz], U[:, 2 * hsz:]
    xw = x.data @ W + B
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    dtype = np.result_type(x.dtype, W.dtype)
    hs = np.zeros((n, steps, hsz), dtype=dtype)
    zs, rs, cs, hprevs = (np.zeros((n, steps, hsz), dtype=dtype) for _ in range(4))
    h = np.zeros((n, hsz), dtype=dtype)
    for t in order:
        zr = tn._sigmoid(xw[:, t, :2 * hsz] + h @ u_zr)
        z, r = zr[:, :hsz], zr[:, hsz:]
        c = np.tanh(xw[:, t, 2 * hsz:] + (r * h) @ u_c)
        hprevs[:, t], zs[:, t], rs[:, t], cs[:, t] = h, z, r, c
        h = (1.0 - z) * h + z * c
        hs[:, t] = h

    def back(g):
        dxw = np.zeros_like(xw)
        du = np.zeros_like(U)
        dh_next = np.zeros((n, hsz), dtype=g.dtype)
        for t in reversed(list(order)):
            hp, z, r, c = hprevs[:, t], zs[:, t], rs[:, t], cs[:, t]
            dh = g[:, t] + dh_next
            dac = dh * z * (1.0 - c * c)
            daz = dh * (c - hp) * z * (1.0 - z)
            du[:, 2 * hsz:] += (r * hp).T @ dac
            drh = dac @ u_c.T
            dar = drh * hp * r * (1.0 - r)
            dzr = np.concatenate([daz, dar], axis=1)
            du[:, :2 * hsz] += hp.T @ dzr
            dh_next = dh * (1.0 - z) + drh * r + dzr @ u_zr.T
            dxw[:, t, :2 * hsz] = dzr
            dxw[:, t, 2 * hsz:] = dac
        flat = dxw.reshape(-1, 3 * hsz)
        dx = dxw @ W.T if x.requires_grad else None
        dw = x.data.reshape(-1, f).T @ flat if w.requires_grad else None
        db = flat.sum(axis=0) if b.requires_grad else None
        return dx, dw, du if u.requires_grad else None, db

    return Tensor.from_op(hs, (x, w, u, b), back, "gru")


def bigru_forward(O: Tensor, params: dict, cfg: ModelConfig, training: bool = False, rng=None,
                  project: bool = True) -> Tensor:
    """Stacked bidirectional GRU over O (N, F, T); returns Z (N, 2H, T).

    Each layer emits ``[h_backward, h_forward]`` per frame.  After the top
    layer one shared affine map ``z_t = [h_b, h_f] W + b`` is applied
    (skipped when ``project`` is False).  Dropout hits each layer's input
    and output in training mode.
    """
    x = tn.transpose(O, (0, 2, 1))
    for layer in range(1, cfg.gru_layers + 1):
        x = dropout(x, cfg.rnn_dropout, rng, training)
        hf = gru_sequence(x, params[f"gru{layer}.fw.w"], params[f"gru{layer}.fw.u"], params[f"gru{layer}.fw.b"])
        hb = gru_sequence(x, params[f"gru{layer}.bw.w"], params[f"gru{layer}.bw.u"], params[f"gru{layer}.bw.b"],
                          reverse=True)
        x = tn.concat([hb, hf], axis=-1)
        x = dropout(x, cfg.rnn_dropout, rng, training)
    if project:
        x = tn.matmul(x, params["proj.w"]) + params["proj.b"]
    return tn.transpose(x, (0, 2, 1))


# ---------------------------------------------------------------------------
# output layers


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return tn.matmul(x, w) + b


def dense_softmax(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return tn.softmax(dense(x, w, b), axis=-1)


def global_max_pool(O: Tensor) -> Tensor:
    """Per-feature maximum over time: (N, F, T) -> (N, F)."""
    return tn.max_(O, axis=-1)


def cnn_baseline_forward(S: Tensor, params: dict, buffers: dict, cfg: ModelConfig, training: bool = False,
                         rng=None) -> tuple[Tensor, Tensor]:
    """Conv block, global max pooling over time, softmax output; returns (features, posteriors)."""
    O = conv_block_forward(S, params, buffers, cfg, training, rng)
    feats = global_max_pool(O)
    return feats, dense_softmax(feats, params["out.w"], params["out.b"])
