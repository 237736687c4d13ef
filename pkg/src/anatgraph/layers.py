"""Parameterized building blocks composed from the tensor ops.

A :class:`Module` owns trainable :class:`Tensor` leaves and possibly child
modules; ``named_parameters`` walks the attribute tree in a deterministic
order so checkpoints and optimizers see a stable naming scheme.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import CheckpointError
from .tensor import Tensor

CHECKPOINT_FORMAT_VERSION = 1


class Module:
    """Base class providing parameter discovery and train/eval switching."""

    def __init__(self):
        self.training = True

    def set_training(self, flag: bool) -> None:
        for _, child in self._children():
            child.set_training(flag)
        self.training = flag

    @property
    def mode(self) -> str:
        return "train" if self.training else "eval"

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Linear(Module):
    """Affine layer with weight shaped [in_dim, out_dim]."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Tensor(_glorot(rng, in_dim, out_dim, (in_dim, out_dim)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv1d(Module):
    """Valid 1-D convolution layer over [B, C_in, T] inputs."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1):
        super().__init__()
        self.stride = stride
        fan_in = in_channels * kernel_size
        self.kernels = Tensor(
            _glorot(rng, fan_in, out_channels, (out_channels, in_channels, kernel_size)),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.kernels, self.bias, stride=self.stride)


class BatchNorm1d(Module):
    """Per-feature batch normalization for [B, F] or per-channel for [B, C, T].

    Running statistics start at mean 0, variance 1 and are updated only in
    train mode.
    """

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.num_features = num_features
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(num_features), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features), requires_grad=True)
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 2:
            return T.batchnorm(x, self.gamma, self.beta, self.mode,
                               self.running_mean, self.running_var, self.eps, self.momentum)
        if x.ndim == 3:
            batch, channels, t_len = x.shape
            flat = T.reshape(T.transpose(x, (0, 2, 1)), (batch * t_len, channels))
            normed = T.batchnorm(flat, self.gamma, self.beta, self.mode,
                                 self.running_mean, self.running_var, self.eps, self.momentum)
            return T.transpose(T.reshape(normed, (batch, t_len, channels)), (0, 2, 1))
        raise T.ShapeError(f"BatchNorm1d expects 2-D or 3-D input, got shape {x.shape}")

    def reset_running_stats(self) -> None:
        self.running_mean[:] = 0.0
        self.running_var[:] = 1.0


class Embedding(Module):
    """Trainable lookup table mapping integer codes to dense rows."""

    def __init__(self, num_codes: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.table = Tensor(rng.normal(0.0, 0.1, size=(num_codes, dim)), requires_grad=True)

    def __call__(self, codes) -> Tensor:
        return T.embedding_lookup(self.table, codes)


class MLP(Module):
    """Stack of Linear layers with ReLU between them (none after the last)."""

    def __init__(self, dims: list[int], rng: np.random.Generator):
        super().__init__()
        self.layers = [Linear(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
        return x


# -- checkpointing -------------------------------------------------------------

def save_checkpoint(module: Module, path: str | Path) -> None:
    """Write all named parameters to a self-describing JSON document."""
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "parameters": {
            name: {"shape": list(p.shape), "values": p.data.ravel().tolist()}
            for name, p in module.named_parameters()
        },
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(module: Module, path: str | Path) -> None:
    """Load parameters saved by :func:`save_checkpoint` into ``module`` in place."""
    doc = json.loads(Path(path).read_text())
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r}")
    stored = doc.get("parameters", {})
    params = dict(module.named_parameters())
    missing = sorted(set(params) - set(stored))
    extra = sorted(set(stored) - set(params))
    if missing or extra:
        raise CheckpointError(f"parameter name mismatch: missing {missing}, unexpected {extra}")
    for name, p in params.items():
        entry = stored[name]
        shape = tuple(entry["shape"])
        if shape != p.shape:
            raise CheckpointError(f"parameter {name!r}: checkpoint shape {shape} does not match model shape {p.shape}")
        p.data = np.asarray(entry["values"], dtype=np.float64).reshape(shape)
