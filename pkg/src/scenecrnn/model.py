"""Trainable model objects wrapping the forward functions, plus checkpoint I/O.

A checkpoint is a parameter container (see :func:`scenecrnn.tensor.save_params`)
with a plain-text INI sidecar ``<checkpoint>.cfg`` holding the configuration.
"""
from __future__ import annotations

import configparser
import json
from pathlib import Path

import numpy as np

from . import tensor as tn
from .attention import att_crnn_forward, init_attention
from .layers import (ModelConfig, cnn_baseline_forward, init_conv_block, init_dense, init_gru_stack)
from .tensor import Tensor

MODEL_KINDS = ("att_crnn", "cnn_baseline")


class Model:
    kind = "base"

    def __init__(self, config: ModelConfig, params: dict, buffers: dict):
        self.config = config
        self.params = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
        self.buffers = {k: np.array(v) for k, v in buffers.items()}
        dtype = next(iter(self.params.values())).dtype
        shape = (config.n_channels, config.n_freq, 1)
        self.buffers.setdefault("input.mean", np.zeros(shape, dtype))
        self.buffers.setdefault("input.std", np.ones(shape, dtype))

    def fit_normalizer(self, images: np.ndarray):
        """Per (channel, frequency bin) standardisation statistics from training images (N, K, M, T)."""
        images = np.asarray(images, dtype=np.float64)
        self.buffers["input.mean"][...] = images.mean(axis=(0, 3))[..., None]
        self.buffers["input.std"][...] = np.maximum(images.std(axis=(0, 3)), 1e-6)[..., None]

    def standardize(self, S) -> Tensor:
        S = S if isinstance(S, Tensor) else Tensor(S)
        mean = self.buffers["input.mean"].astype(S.dtype)
        std = self.buffers["input.std"].astype(S.dtype)
        return Tensor.from_op((S.data - mean) / std, (S,), lambda g: (g / std,), "standardize")

    def forward(self, S, training=False, rng=None, **kwargs):
        """Return (features, posteriors) for a batch of images (N, K, M, T)."""
        return self._forward(self.standardize(S), training, rng, **kwargs)

    def _forward(self, S, training, rng, **kwargs):
        raise NotImplementedError

    def predict(self, images: np.ndarray, batch_size: int = 100) -> tuple[np.ndarray, np.ndarray]:
        """Inference-mode features and posteriors for an image array."""
        feats, probs = [], []
        dtype = next(iter(self.params.values())).dtype
        with tn.no_grad():
            for i in range(0, len(images), batch_size):
                x, y = self.forward(Tensor(np.asarray(images[i:i + batch_size], dtype=dtype)))
                feats.append(x.data)
                probs.append(y.data)
        return np.concatenate(feats), np.concatenate(probs)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def state(self) -> dict:
        out = {k: p.data for k, p in self.params.items()}
        out.update({f"buffer:{k}": v for k, v in self.buffers.items()})
        return out

    def copy_state(self) -> dict:
        return {k: np.array(v) for k, v in self.state().items()}

    def load_state(self, state: dict):
        for k, v in state.items():
            if k.startswith("buffer:"):
                self.buffers[k[len("buffer:"):]][...] = v
            else:
                self.params[k].data[...] = v

    def save(self, path, extra: dict | None = None):
        path = Path(path)
        tn.save_params(path, self.state())
        cp = configparser.ConfigParser()
        cp["model"] = {"kind": self.kind}
        cp["model"].update({k: json.dumps(v) for k, v in self.config.to_dict().items()})
        if extra:
            cp["run"] = {k: json.dumps(v) for k, v in extra.items()}
        with open(config_path(path), "w") as fh:
            cp.write(fh)


class AttCRNN(Model):
    kind = "att_crnn"

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0, dtype=tn.DEFAULT_DTYPE):
        rng = np.random.default_rng(seed)
        params, buffers = init_conv_block(config, rng, dtype)
        params.update(init_gru_stack(config, rng, dtype))
        params.update(init_attention(config, rng, dtype))
        params.update(init_dense(2 * config.hidden, config.n_classes, rng, dtype=dtype))
        return cls(config, params, buffers)

    def _forward(self, S, training, rng, return_mask=False):
        return att_crnn_forward(S, self.params, self.buffers, self.config, training, rng, return_mask)


class CNNBaseline(Model):
    kind = "cnn_baseline"

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0, dtype=tn.DEFAULT_DTYPE):
        rng = np.random.default_rng(seed)
        params, buffers = init_conv_block(config, rng, dtype)
        params.update(init_dense(config.conv_features, config.n_classes, rng, dtype=dtype))
        return cls(config, params, buffers)

    def _forward(self, S, training, rng):
        return cnn_baseline_forward(S, self.params, self.buffers, self.config, training, rng)


def build_model(kind: str, config: ModelConfig, seed: int = 0, dtype=tn.DEFAULT_DTYPE) -> Model:
    if kind == "att_crnn":
        return AttCRNN.init(config, seed, dtype)
    if kind == "cnn_baseline":
        return CNNBaseline.init(config, seed, dtype)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def config_path(checkpoint) -> Path:
    checkpoint = Path(checkpoint)
    return checkpoint.with_name(checkpoint.name + ".cfg")


def load_model(path) -> tuple[Model, dict]:
    """Load a checkpoint and its sidecar config; returns (model, run metadata)."""
    path = Path(path)
    cfg_file = config_path(path)
    if not path.exists() or not cfg_file.exists():
        raise FileNotFoundError(f"checkpoint {path} (or its config {cfg_file.name}) not found")
    cp = configparser.ConfigParser()
    cp.read(cfg_file)
    kind = cp["model"]["kind"]
    fields = {k: json.loads(v) for k, v in cp["model"].items() if k != "kind"}
    config = ModelConfig(**fields)
    extra = {k: json.loads(v) for k, v in cp["run"].items()} if cp.has_section("run") else {}
    model = build_model(kind, config)
    model.load_state(tn.load_params(path))
    return model, extra
