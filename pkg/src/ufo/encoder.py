"""SAGE-style feature extractor and the growing multi-head classifier.

The extractor stops one weight short of a full stack: its output is the
aggregated feature ``CONCAT(h_v, mean_{u in N(v)} h_u)`` of the last hidden
representation. That vector is both the flow's data space and the classifier
input, so the final SAGE weight lives inside each classifier head.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Value
from .data import TaskView
from .rng import Rng


def glorot(fan_in: int, fan_out: int, rng: Rng) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, (fan_in, fan_out))


@dataclass
class EncoderParams:
    weights: list[Value]
    n_layers: int
    hidden: int

    @classmethod
    def init(cls, in_features: int, hidden: int, n_layers: int, rng: Rng) -> EncoderParams:
        if n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {n_layers}")
        weights = []
        d_in = in_features
        for layer in range(n_layers - 1):
            weights.append(ad.parameter(glorot(2 * d_in, hidden, rng.fork("layer", str(layer)))))
            d_in = hidden
        return cls(weights=weights, n_layers=n_layers, hidden=hidden)

    def output_dim(self, in_features: int) -> int:
        return 2 * (self.hidden if self.weights else in_features)

    def parameters(self) -> list[Value]:
        return list(self.weights)


@dataclass
class ClassifierHeads:
    weights: list[Value] = field(default_factory=list)
    biases: list[Value] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.weights)

    def add_head(self, in_dim: int, n_classes: int, rng: Rng) -> None:
        self.weights.append(ad.parameter(glorot(in_dim, n_classes, rng)))
        self.biases.append(ad.parameter(np.zeros((1, n_classes))))

    def parameters(self) -> list[Value]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


@dataclass(frozen=True)
class FrozenSnapshot:
    encoder: EncoderParams
    heads: ClassifierHeads
    flow: object | None = None
    task: int = -1


def _frozen_copy(obj):
    dup = copy.deepcopy(obj)
    for p in dup.parameters():
        p.requires_grad = False
        p.grad = None
    return dup


def snapshot(encoder: EncoderParams, heads: ClassifierHeads, flow=None, task: int = -1) -> FrozenSnapshot:
    """Deep, gradient-free copy of the live models."""
    return FrozenSnapshot(
        encoder=_frozen_copy(encoder),
        heads=_frozen_copy(heads),
        flow=None if flow is None else _frozen_copy(flow),
        task=task,
    )


def neighbor_mean(h: Value, tv: TaskView) -> Value:
    src, dst = tv.neighbor_index()
    return ad.segment_mean(ad.take_rows(h, src), dst, tv.n_nodes)


def sage_layer(h: Value, tv: TaskView, weight: Value) -> Value:
    if weight.shape[0] != 2 * h.shape[1]:
        raise DimensionError(f"sage weight {weight.shape} does not accept CONCAT width {2 * h.shape[1]}")
    return ad.relu(ad.concat_cols(h, neighbor_mean(h, tv)) @ weight)


def extract_features(tv: TaskView, encoder: EncoderParams) -> Value:
    """Aggregated feature for every local node of ``tv``."""
    h = Value(tv.features)
    for w in encoder.weights:
        h = sage_layer(h, tv, w)
    return ad.concat_cols(h, neighbor_mean(h, tv))


def classify(x: Value, heads: ClassifierHeads, task_id: int) -> Value:
    if not 0 <= task_id < len(heads):
        raise KeyError(f"no classifier head for task {task_id} (have {len(heads)})")
    return x @ heads.weights[task_id] + heads.biases[task_id]
