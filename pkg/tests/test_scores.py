import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ufo.autodiff import NumericError
from ufo.config import TrainConfig
from ufo.data import ConfigError
from ufo.flow import FlowModel, flow_inverse, gaussian_log_density, log_prob
from ufo.autodiff import Value
from ufo.rng import Rng
from ufo.scores import ScoreVector, clip_scores, new_task_scores, relative_scores, replay_scores, smooth_scores

finite = st.floats(-50, 50, allow_nan=False)


def test_constant_r_gives_ones():
    np.testing.assert_allclose(relative_scores(np.full(7, -3.2)).scores, np.ones(7))


def test_hand_two_point_scores():
    np.testing.assert_allclose(relative_scores([math.log(3.0), 0.0]).scores, [1.5, 0.5], atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=finite), st.floats(-1e3, 1e3))
def test_sum_and_shift_invariance(r, shift):
    s = relative_scores(r).scores
    assert abs(s.sum() - r.shape[0]) <= 1e-9
    np.testing.assert_allclose(relative_scores(r + shift).scores, s, atol=1e-12, rtol=0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(2, 30), elements=finite))
def test_monotone_in_r(r):
    s = relative_scores(r).scores
    order = np.argsort(r, kind="stable")
    assert np.all(np.diff(s[order]) >= 0)


def test_non_finite_r_names_index():
    with pytest.raises(NumericError, match="index 2"):
        relative_scores([0.0, 1.0, np.nan])


def test_smoothing_schedule():
    raw = ScoreVector(np.array([3.0, 0.2]), 2, "raw")
    np.testing.assert_array_equal(smooth_scores(raw, 0, 20).scores, [1, 1])
    np.testing.assert_array_equal(smooth_scores(raw, 10, 20).scores, [2.0, 0.6])
    np.testing.assert_array_equal(smooth_scores(raw, 25, 20).scores, raw.scores)
    np.testing.assert_array_equal(smooth_scores(raw, 0, 0).scores, raw.scores)


def test_clip_examples_and_idempotence():
    s = ScoreVector(np.array([0.01, 1.0, 9.0]), 3, "smoothed")
    np.testing.assert_array_equal(clip_scores(s, 0.1, 5).scores, [0.1, 1, 5])
    np.testing.assert_array_equal(clip_scores(s, 0.0, np.inf).scores, s.scores)
    once = clip_scores(s, 0.1, 5)
    np.testing.assert_array_equal(clip_scores(once, 0.1, 5).scores, once.scores)
    with pytest.raises(ConfigError):
        clip_scores(s, 2.0, 1.0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=finite))
def test_clipped_scores_stay_in_range(r):
    s = clip_scores(relative_scores(r), 0.2, 3.0).scores
    assert np.all((s >= 0.2) & (s <= 3.0))


def test_identity_flow_scores_near_one():
    flow = FlowModel.init(4, 2, 4, 8, Rng(0))
    x = np.random.default_rng(0).normal(size=(500, 4)) * 0.3
    s = new_task_scores(flow, x, np.zeros(500, int), 100, TrainConfig(warmup_epochs=20, score_clip_min=0.0, score_clip_max=50.0))
    assert np.max(np.abs(s.scores - 1)) < 0.5


def test_duplicate_instances_get_identical_scores():
    flow = FlowModel.init(3, 2, 2, 8, Rng(0))
    x = np.random.default_rng(0).normal(size=(5, 3))
    x = np.vstack([x, x[2:3]])
    s = new_task_scores(flow, x, np.array([0, 1, 0, 1, 0, 0]), 50, TrainConfig()).scores
    assert s[2] == s[5]


def test_replay_scores_identity_chase_and_outlier():
    flow = FlowModel.init(3, 2, 2, 8, Rng(0))
    for i, p in enumerate(flow.parameters()):
        p.data = p.data + Rng(1).fork(str(i)).normal(p.data.shape, 0.2)
    z = Rng(2).normal((50, 3))
    y = np.arange(50) % 2
    x = flow_inverse(flow, z, y)
    r = log_prob(flow, x, y).data
    from ufo.flow import flow_forward

    _, logdet = flow_forward(flow, x, y)
    np.testing.assert_allclose(r, gaussian_log_density(Value(z)).data + logdet.data, atol=1e-10)

    cfg = TrainConfig(score_clip_min=0.1, score_clip_max=5.0)
    x[7] = 100.0
    s = replay_scores(flow, x, y, cfg).scores
    assert s[7] == 0.1
