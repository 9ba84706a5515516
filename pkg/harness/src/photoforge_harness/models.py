"""Network definitions: a small convolutional backbone with task heads.

The default backbone is a four-stage convnet sized for desk-scale runs;
`build_model` also accepts any callable returning (backbone_module,
feature_channels) so a pretrained full-size backbone can be plugged in
when the budget allows. Heads follow the common transfer-learning shape:
global average pooling, a dense layer with ReLU, 50% dropout, and a
linear (regression) or logit (classification) output layer.

Angles are regressed as (sin, cos) pairs to avoid the wrap-around
discontinuity and decoded with atan2 at evaluation time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn

from .data import M_VALUES

TASKS = ("count", "magnitude", "impact", "tangent")


@dataclass(frozen=True)
class TaskSpec:
    """Which quantity a model predicts; regression tasks fix the force count."""

    task: str
    m: int | None = None

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.task == "count":
            if self.m is not None:
                raise ValueError("count classification carries no fixed m")
        else:
            if self.m is None or not M_VALUES[0] <= self.m <= M_VALUES[-1]:
                raise ValueError(f"regression tasks need m in {M_VALUES}, got {self.m}")

    @property
    def output_dim(self) -> int:
        if self.task == "count":
            return len(M_VALUES)
        if self.task == "magnitude":
            return self.m
        return 2 * self.m  # (sin, cos) per angle


class SmallBackbone(nn.Module):
    """Four conv-pool stages: 1x128x128 -> 64 feature channels at 8x8."""

    channels = 64

    def __init__(self):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(1, 16, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(32, 64, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(64, 64, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
        )

    def forward(self, x):
        return self.features(x)


class FringeModel(nn.Module):
    def __init__(self, spec: TaskSpec, backbone: nn.Module, feature_channels: int, dropout: float = 0.5):
        super().__init__()
        self.spec = spec
        self.backbone = backbone
        self.head = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
            nn.Linear(feature_channels, 128),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(128, spec.output_dim),
        )

    def forward(self, x):
        return self.head(self.backbone(x))


BackboneFactory = Callable[[], tuple[nn.Module, int]]


def build_model(
    spec: TaskSpec,
    backbone: str | BackboneFactory = "small",
    dropout: float = 0.5,
) -> FringeModel:
    """Model for one task; pass a factory to plug in a pretrained backbone."""
    if backbone == "small":
        net = SmallBackbone()
        return FringeModel(spec, net, net.channels, dropout)
    if callable(backbone):
        net, channels = backbone()
        return FringeModel(spec, net, channels, dropout)
    raise ValueError(f"unknown backbone {backbone!r}")


def decode_angles(pairs: np.ndarray, task: str) -> np.ndarray:
    """(sin, cos) pairs -> angles; impact in [0, 2pi), tangent clipped to [-pi/2, pi/2]."""
    pairs = np.asarray(pairs, dtype=np.float64)
    sin, cos = pairs[..., 0::2], pairs[..., 1::2]
    angles = np.arctan2(sin, cos)
    if task == "impact":
        return angles % (2.0 * math.pi)
    if task == "tangent":
        return np.clip(angles, -math.pi / 2, math.pi / 2)
    raise ValueError(f"not an angle task: {task!r}")


def predict_counts(logits: torch.Tensor) -> np.ndarray:
    return (logits.argmax(dim=1).cpu().numpy() + M_VALUES[0]).astype(int)
