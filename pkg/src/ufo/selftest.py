"""Fast numerical self-checks: kernel gradients, flow exactness, score invariants."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .flow import FlowModel, flow_forward, flow_inverse
from .rng import Rng
from .scores import clip_scores, relative_scores


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.value <= self.tol

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name:<34} {self.value:.3e} <= {self.tol:.0e}"


def _const(x):
    return ad.Value(x)


def _kernel_cases(rng: Rng):
    a = rng.normal((4, 3))
    b = rng.normal((3, 5))
    pos = np.abs(rng.normal((4, 3))) + 0.5
    ids = np.array([0, 2, 2, 1])
    yield "add", lambda v: ad.sum(ad.square(v + _const(a))), a + 0.1
    yield "mul", lambda v: ad.sum(v * _const(pos)), a
    yield "exp", lambda v: ad.sum(ad.exp(v)), a
    yield "log", lambda v: ad.sum(ad.log(v)), pos
    yield "tanh", lambda v: ad.sum(ad.tanh(v) * _const(pos)), a
    yield "relu", lambda v: ad.sum(ad.square(ad.relu(v))), a + 0.05
    yield "matmul", lambda v: ad.sum(ad.square(v @ _const(b))), a
    yield "concat/slice", lambda v: ad.sum(ad.square(ad.slice_cols(ad.concat_cols(v, v * 2.0), 1, 5))), a
    yield "take_rows/cols", lambda v: ad.sum(ad.square(ad.take_cols(ad.take_rows(v, [3, 0, 0]), np.array([2, 0])))), a
    yield "segment_mean", lambda v: ad.sum(ad.square(ad.segment_mean(v, ids, 3))), a
    yield "log_softmax", lambda v: ad.sum(ad.log_softmax_rows(v) * _const(pos)), a
    yield "softmax", lambda v: ad.sum(ad.softmax_rows(v) * _const(pos)), a


def gradient_checks(seed: int = 0) -> list[Check]:
    rng = Rng(seed).fork("selftest", "grad")
    return [Check(f"grad {name}", ad.grad_check(f, x), 1e-6) for name, f, x in _kernel_cases(rng)]


def flow_checks(seed: int = 0) -> list[Check]:
    rng = Rng(seed).fork("selftest", "flow")
    out = []
    for dim in (4, 6):
        flow = FlowModel.init(dim, 3, 4, 8, rng.fork("init", str(dim)))
        for k, p in enumerate(flow.parameters()):
            p.data = p.data + rng.fork("jitter", str(dim), str(k)).normal(p.data.shape, 0.3)
        x = rng.fork("x", str(dim)).normal((100, dim))
        y = rng.fork("y", str(dim)).integers(0, 3, size=100)
        z, logdet = flow_forward(flow, x, y)
        back = flow_inverse(flow, z.data, y)
        out.append(Check(f"flow round-trip D={dim}", float(np.max(np.abs(back - x))), 1e-8))
        errs = []
        h = 1e-6
        for i in range(5):
            jac = np.empty((dim, dim))
            for c in range(dim):
                e = np.zeros((1, dim))
                e[0, c] = h
                plus = flow_forward(flow, x[i : i + 1] + e, y[i : i + 1])[0].data
                minus = flow_forward(flow, x[i : i + 1] - e, y[i : i + 1])[0].data
                jac[:, c] = (plus - minus)[0] / (2 * h)
            errs.append(abs(np.linalg.slogdet(jac)[1] - logdet.data[i]))
        out.append(Check(f"flow logdet vs FD Jacobian D={dim}", float(max(errs)), 1e-5))
    return out


def score_checks(seed: int = 0) -> list[Check]:
    rng = Rng(seed).fork("selftest", "scores")
    r = rng.normal(50, 3.0)
    s = relative_scores(r).scores
    shifted = relative_scores(r + 123.25).scores
    clipped = clip_scores(relative_scores(r), 0.2, 3.0).scores
    order = np.argsort(r)
    hand = relative_scores([math.log(3.0), 0.0]).scores
    return [
        Check("score sum equals pool size", abs(s.sum() - 50), 1e-9),
        Check("score shift invariance", float(np.max(np.abs(s - shifted))), 1e-12),
        Check("clip range violation", float(max(0.0, 0.2 - clipped.min(), clipped.max() - 3.0)), 0.0),
        Check("monotone in log-likelihood", float(max(0.0, -np.min(np.diff(s[order])))), 0.0),
        Check("r=[ln 3, 0] -> [1.5, 0.5]", float(np.max(np.abs(hand - [1.5, 0.5]))), 1e-12),
    ]


def run_all(seed: int = 0) -> list[Check]:
    return gradient_checks(seed) + flow_checks(seed) + score_checks(seed)
