"""Position-invariant temporal encoder shared across all sensors.

One CNN stack processes every sensor's window identically (the sensor axis is
folded into the batch), so two sensors fed the same signal produce the same
feature vector and batch normalization pools statistics over batch x sensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .layers import BatchNorm1d, Conv1d, Module
from .tensor import Tensor


@dataclass
class WindowBatch:
    """A batch of fixed-length activity windows: x is [B, S, T, C]."""

    x: np.ndarray
    activity: np.ndarray
    user: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.activity = np.asarray(self.activity, dtype=np.intp)
        self.user = np.asarray(self.user, dtype=np.intp)
        if self.x.ndim != 4:
            raise ConfigError(f"window batch must be [B, S, T, C], got shape {self.x.shape}")
        if np.isnan(self.x).any():
            raise ConfigError("window batch contains NaN")
        if not (self.activity.shape == self.user.shape == (self.x.shape[0],)):
            raise ConfigError("labels must be one per window")

    def __len__(self) -> int:
        return self.x.shape[0]


class NodeEncoder(Module):
    """Two conv blocks (conv, BN, ReLU, max-pool) then flatten, per sensor."""

    def __init__(self, channels: int, t_len: int, conv1_channels: int, conv2_channels: int,
                 kernel_size: int, pool_width: int, rng: np.random.Generator):
        super().__init__()
        if t_len < 4 * kernel_size:
            raise ConfigError(f"window length {t_len} too short: need T >= 4 * kernel ({4 * kernel_size}) "
                              "to survive two conv+pool stages")
        self.channels = channels
        self.t_len = t_len
        self.pool_width = pool_width
        self.conv1 = Conv1d(channels, conv1_channels, kernel_size, rng)
        self.bn1 = BatchNorm1d(conv1_channels)
        self.conv2 = Conv1d(conv1_channels, conv2_channels, kernel_size, rng)
        self.bn2 = BatchNorm1d(conv2_channels)

        t1 = (t_len - kernel_size + 1) // pool_width
        t2 = (t1 - kernel_size + 1) // pool_width
        if t2 < 1:
            raise ConfigError(f"window length {t_len} leaves no samples after the second pool")
        self.out_dim = conv2_channels * t2

    def __call__(self, x: Tensor) -> Tensor:
        """Encode [B, S, T, C] into node features [B, S, D]."""
        batch, sensors, t_len, channels = x.shape
        if t_len != self.t_len or channels != self.channels:
            raise ConfigError(f"encoder built for T={self.t_len}, C={self.channels}; got T={t_len}, C={channels}")
        flat = T.transpose(T.reshape(x, (batch * sensors, t_len, channels)), (0, 2, 1))
        h = T.maxpool1d(T.relu(self.bn1(self.conv1(flat))), self.pool_width)
        h = T.maxpool1d(T.relu(self.bn2(self.conv2(h))), self.pool_width)
        h = T.reshape(h, (batch * sensors, self.out_dim))
        return T.reshape(h, (batch, sensors, self.out_dim))
