"""Decision heads on the pooled branch features, plus the two
classification losses.

The target head is a plain two-layer perceptron read through softmax; the
jamming head inserts dropout before its output layer and reads through
elementwise sigmoid, since several jamming kinds can be active at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class HeadConfig:
    hidden: int = 128
    c_tar: int = 3
    c_jam: int = 4
    dropout: float = 0.1

    def validate(self):
        if self.c_jam != 4:
            raise ValueError("c_jam is fixed at 4")
        if self.c_tar < 2:
            raise ValueError("need at least 2 target classes")
        if self.hidden < 1:
            raise ValueError("hidden width must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        return self


class TargetHead(nn.Module):
    """FC -> ReLU -> FC, softmax readout."""

    def __init__(self, in_dim: int, cfg: HeadConfig, rng):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.fc1 = nn.Linear(in_dim, cfg.hidden, rng)
        self.fc2 = nn.Linear(cfg.hidden, cfg.c_tar, rng)

    def features(self, f: Tensor) -> Tensor:
        """Hidden activation feeding the output layer (open-set feature)."""
        return T.relu(self.fc1.forward(f))

    def forward(self, f: Tensor):
        logits = self.fc2.forward(self.features(f))
        return logits, T.softmax(logits, axis=-1)


class JammingHead(nn.Module):
    """FC -> ReLU -> Dropout -> FC, independent sigmoid per jamming kind."""

    def __init__(self, in_dim: int, cfg: HeadConfig, rng):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.fc1 = nn.Linear(in_dim, cfg.hidden, rng)
        self.fc2 = nn.Linear(cfg.hidden, cfg.c_jam, rng)

    def forward(self, f: Tensor, rng=None):
        h = T.relu(self.fc1.forward(f))
        if self.training and self.cfg.dropout > 0.0:
            if rng is None:
                raise ValueError("training dropout needs an rng")
            h = T.dropout(h, self.cfg.dropout, rng, training=True)
        logits = self.fc2.forward(h)
        return logits, T.sigmoid(logits)


def ce_loss(logits: Tensor, y_t: np.ndarray) -> Tensor:
    """Mean cross-entropy over the batch; y_t holds class indices."""
    y = np.asarray(y_t)
    if y.ndim != 1 or y.shape[0] != logits.shape[0]:
        raise ValueError("y_t must be one class index per batch row")
    c = logits.shape[-1]
    if not np.issubdtype(y.dtype, np.integer):
        raise ValueError("y_t must be integer class indices")
    if np.any(y < 0) or np.any(y >= c):
        raise ValueError(f"class index out of range [0, {c})")
    return T.ce_with_logits(logits, y)


def bce_loss(logits: Tensor, y: np.ndarray) -> Tensor:
    """Mean binary cross-entropy over every (sample, label) cell."""
    yv = np.asarray(y, dtype=np.float64)
    if yv.shape != logits.shape:
        raise ValueError("label array must match logits shape")
    if not np.all((yv == 0.0) | (yv == 1.0)):
        raise ValueError("labels must be 0 or 1")
    return T.bce_with_logits(logits, yv)
