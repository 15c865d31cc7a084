"""Class-conditional affine-coupling flow with a shared standard Gaussian prior.

Layout: ``[permutation, coupling] * K``. Each coupling keeps the first block
of coordinates fixed and rescales/shifts the rest with a small conditioner
network fed ``CONCAT(passive half, one_hot(y))``. The conditioner's last layer
starts at zero, so a fresh flow is the identity map.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .encoder import glorot
from .optim import AdamState, adam_step
from .rng import Rng

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class FlowTrainingError(RuntimeError):
    pass


@dataclass
class Coupling:
    w1: Value
    b1: Value
    w2: Value
    b2: Value
    gate: Value

    def parameters(self) -> list[Value]:
        return [self.w1, self.b1, self.w2, self.b2, self.gate]


@dataclass
class FlowModel:
    dim: int
    n_classes: int
    perms: list[np.ndarray]
    inverse_perms: list[np.ndarray]
    couplings: list[Coupling] = field(default_factory=list)

    @classmethod
    def init(
        cls, dim: int, n_classes: int, n_couplings: int, hidden: int, rng: Rng, passive_scale: float = 1.0
    ) -> FlowModel:
        """``passive_scale`` shrinks the initial conditioner weights on the passive coordinates
        relative to the class one-hot, so early training learns class-wise shift/scale first."""
        perms, inverses, couplings = [], [], []
        n_passive = passive_width(dim)
        n_active = dim - n_passive
        for k in range(n_couplings):
            perm = rng.fork("perm", str(k)).permutation(dim)
            perms.append(perm)
            inverses.append(invert_permutation(perm))
            w1 = glorot(n_passive + n_classes, hidden, rng.fork("cond", str(k)))
            w1[:n_passive] *= passive_scale
            couplings.append(
                Coupling(
                    w1=ad.parameter(w1),
                    b1=ad.parameter(np.zeros((1, hidden))),
                    w2=ad.parameter(np.zeros((hidden, 2 * n_active))),
                    b2=ad.parameter(np.zeros((1, 2 * n_active))),
                    gate=ad.parameter(np.ones((1, 1))),
                )
            )
        return cls(dim=dim, n_classes=n_classes, perms=perms, inverse_perms=inverses, couplings=couplings)

    def __post_init__(self):
        for perm, inv in zip(self.perms, self.inverse_perms):
            if not np.array_equal(np.sort(perm), np.arange(self.dim)):
                raise ValueError("flow permutation is not a bijection")
            if not np.array_equal(perm[inv], np.arange(self.dim)):
                raise ValueError("stored inverse permutation is wrong")

    @property
    def n_passive(self) -> int:
        return passive_width(self.dim)

    def parameters(self) -> list[Value]:
        return [p for c in self.couplings for p in c.parameters()]

    def one_hot(self, labels) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError(f"class label outside [0, {self.n_classes})")
        out = np.zeros((labels.shape[0], self.n_classes))
        out[np.arange(labels.shape[0]), labels] = 1.0
        return out


def passive_width(dim: int) -> int:
    # a 1-D flow has no coordinate to condition on, so it transforms its only one
    return (dim + 1) // 2 if dim > 1 else 0


def invert_permutation(perm: np.ndarray) -> np.ndarray:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.shape[0])
    return inv


def _scale_shift(layer: Coupling, passive: Value, cond: np.ndarray, n_active: int) -> tuple[Value, Value]:
    hidden = ad.tanh(ad.concat_cols(passive, Value(cond)) @ layer.w1 + layer.b1)
    out = hidden @ layer.w2 + layer.b2
    s = ad.tanh(ad.slice_cols(out, 0, n_active)) * layer.gate
    t = ad.slice_cols(out, n_active, 2 * n_active)
    return s, t


def coupling_forward(u: Value, cond: np.ndarray, layer: Coupling) -> tuple[Value, Value]:
    """Returns the transformed rows and the per-row log|det J| (sum of log-scales)."""
    d = u.shape[1]
    n_passive = passive_width(d)
    passive = ad.slice_cols(u, 0, n_passive)
    active = ad.slice_cols(u, n_passive, d)
    s, t = _scale_shift(layer, passive, cond, d - n_passive)
    out = ad.concat_cols(passive, active * ad.exp(s) + t)
    return out, ad.sum(s, axis=1)


def coupling_inverse(v: np.ndarray, cond: np.ndarray, layer: Coupling) -> np.ndarray:
    d = v.shape[1]
    n_passive = passive_width(d)
    passive = Value(v[:, :n_passive])
    s, t = _scale_shift(layer, passive, cond, d - n_passive)
    active = (v[:, n_passive:] - t.data) * np.exp(-s.data)
    return np.concatenate([v[:, :n_passive], active], axis=1)


def flow_forward(flow: FlowModel, x: Value, labels) -> tuple[Value, Value]:
    x = ad.as_value(x)
    cond = flow.one_hot(labels)
    z = x
    logdet: Value = Value(np.zeros(x.shape[0]))
    for perm, layer in zip(flow.perms, flow.couplings):
        z = ad.take_cols(z, perm)
        z, ld = coupling_forward(z, cond, layer)
        logdet = logdet + ld
    return z, logdet


def flow_inverse(flow: FlowModel, z, labels) -> np.ndarray:
    """Exact inverse. Returns a plain array: generated features carry no gradient."""
    cond = flow.one_hot(labels)
    x = np.array(ad.as_value(z).data, dtype=np.float64)
    for inv, layer in zip(reversed(flow.inverse_perms), reversed(flow.couplings)):
        x = coupling_inverse(x, cond, layer)
        x = x[:, inv]
    return x


def gaussian_log_density(z: Value) -> Value:
    d = z.shape[1]
    return ad.sum(ad.square(z), axis=1) * -0.5 - 0.5 * d * LOG_2PI


def log_prob(flow: FlowModel, x, labels) -> Value:
    z, logdet = flow_forward(flow, x, labels)
    return gaussian_log_density(z) + logdet


def sample(flow: FlowModel, labels, rng: Rng) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    z = rng.normal((labels.shape[0], flow.dim))
    return flow_inverse(flow, z, labels)


def uniform_class_labels(classes, count: int, rng: Rng) -> np.ndarray:
    return np.asarray(classes, dtype=np.int64)[rng.integers(0, len(classes), size=count)]


def layer_norms(flow: FlowModel) -> list[float]:
    return [float(np.sqrt(np.sum([np.sum(p.data**2) for p in c.parameters()]))) for c in flow.couplings]


def train_flow(
    flow: FlowModel,
    x: np.ndarray,
    labels: np.ndarray,
    cfg,
    rng: Rng,
    prev_flow: FlowModel | None = None,
    prev_classes: list | None = None,
) -> list[float]:
    """Fit ``flow`` in place by minimising summed NLL; returns the per-epoch loss curve.

    With ``prev_flow`` given, every epoch also draws ``cfg.replay_batch``
    generated features per entry of ``prev_classes`` (one class list per
    earlier task) and adds their NLL under the live flow.
    """
    params = flow.parameters()
    opt = AdamState(lr=cfg.flow_lr)
    batch = min(cfg.replay_batch, x.shape[0])
    curve = []
    x_val = Value(x)
    for epoch in range(cfg.flow_epochs):
        loss = ad.sum(log_prob(flow, x_val, labels)) * -1.0
        if prev_flow is not None:
            for j, classes in enumerate(prev_classes or []):
                stream = rng.fork("flow-replay", str(epoch), str(j))
                y_tilde = uniform_class_labels(classes, batch, stream)
                x_tilde = sample(prev_flow, y_tilde, stream.fork("z"))
                loss = loss - ad.sum(log_prob(flow, Value(x_tilde), y_tilde))
        if not np.isfinite(loss.item()):
            raise FlowTrainingError(
                f"non-finite flow NLL at epoch {epoch}; coupling parameter norms {layer_norms(flow)}"
            )
        curve.append(loss.item())
        ad.zero_grads(params)
        ad.backward(loss)
        adam_step(params, opt)
    ad.zero_grads(params)
    log.debug("flow fit: NLL %.4f -> %.4f over %d epochs", curve[0] if curve else 0.0, curve[-1] if curve else 0.0, len(curve))
    return curve
