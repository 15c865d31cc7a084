"""Instance reliability scores from conditional log-likelihoods.

Pipeline: ``b * softmax(r - max r)`` -> linear warm-up blend toward 1 -> clip to
``[alpha, beta]``. No renormalisation after clipping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import NumericError, Value
from .data import ConfigError
from .flow import FlowModel, log_prob


@dataclass(frozen=True)
class ScoreVector:
    scores: np.ndarray
    pool_size: int
    stage: str  # raw | smoothed | clipped

    def __len__(self) -> int:
        return self.pool_size


def relative_scores(r) -> ScoreVector:
    r = np.asarray(r, dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(r))
    if bad.size:
        raise NumericError(f"non-finite log-likelihood at index {int(bad[0])}")
    b = r.shape[0]
    e = np.exp(r - r.max()) if b else r
    return ScoreVector(b * e / e.sum() if b else e, b, "raw")


def smooth_scores(s: ScoreVector, epoch: int, warmup: int) -> ScoreVector:
    lam = 1.0 if warmup <= 0 else min(1.0, epoch / warmup)
    return ScoreVector(lam * s.scores + (1.0 - lam), s.pool_size, "smoothed")


def clip_scores(s: ScoreVector, alpha: float, beta: float) -> ScoreVector:
    if alpha > beta:
        raise ConfigError(f"score clip floor {alpha} exceeds ceiling {beta}")
    return ScoreVector(np.minimum(beta, np.maximum(alpha, s.scores)), s.pool_size, "clipped")


def new_task_scores(flow: FlowModel, x, y_obs, epoch: int, cfg, raw: ScoreVector | None = None) -> ScoreVector:
    """Scores for the current training pool. Pass ``raw`` to reuse cached log-likelihood scores."""
    if raw is None:
        raw = relative_scores(log_prob(flow, Value(x), y_obs).data)
    return clip_scores(smooth_scores(raw, epoch, cfg.warmup_epochs), cfg.score_clip_min, cfg.score_clip_max)


def replay_scores(flow_prev: FlowModel, x_tilde, y_tilde, cfg) -> ScoreVector:
    raw = relative_scores(log_prob(flow_prev, Value(x_tilde), y_tilde).data)
    return clip_scores(raw, cfg.score_clip_min, cfg.score_clip_max)
