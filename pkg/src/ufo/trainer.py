"""Task-sequence training: flow fit, reliability scores, replay and knowledge preservation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Value
from .config import TrainConfig
from .data import Graph, TaskView, inject_noise, partition_tasks
from .encoder import ClassifierHeads, EncoderParams, FrozenSnapshot, classify, extract_features, snapshot
from .flow import FlowModel, log_prob, sample, train_flow, uniform_class_labels
from .optim import AdamState, adam_step
from .rng import Rng
from .scores import ScoreVector, new_task_scores, relative_scores, replay_scores

log = logging.getLogger(__name__)

MODES = ("ufo", "bare", "joint")


class TrainingError(RuntimeError):
    pass


class StateError(RuntimeError):
    pass


@dataclass
class TaskLog:
    task: int
    flips: int = 0
    raw_scores: np.ndarray | None = None
    final_scores: np.ndarray | None = None
    flow_curve: list[float] = field(default_factory=list)
    loss_curve: list[float] = field(default_factory=list)
    seconds: float = 0.0


@dataclass
class ContinualState:
    encoder: EncoderParams
    heads: ClassifierHeads
    flow: FlowModel | None
    frozen: FrozenSnapshot | None = None
    task: int = 0  # number of tasks completed
    matrix: np.ndarray | None = None
    optimizers: dict[str, AdamState] = field(default_factory=dict)
    seed: int = 0
    logs: list[TaskLog] = field(default_factory=list)

    def parameters(self) -> list[Value]:
        return self.encoder.parameters() + self.heads.parameters()


def init_state(graph: Graph, cfg: TrainConfig, rng: Rng, n_tasks: int, with_flow: bool) -> ContinualState:
    encoder = EncoderParams.init(graph.n_features, cfg.hidden, cfg.n_layers, rng.fork("encoder-init"))
    flow = None
    if with_flow:
        dim = encoder.output_dim(graph.n_features)
        flow = FlowModel.init(
            dim, graph.n_classes, cfg.n_couplings, cfg.flow_hidden, rng.fork("flow-init"), cfg.cond_passive_scale
        )
    return ContinualState(
        encoder=encoder,
        heads=ClassifierHeads(),
        flow=flow,
        matrix=np.full((n_tasks, n_tasks), np.nan),
        seed=rng.seed,
    )


# ---------------------------------------------------------------- losses


def cross_entropy_terms(logits: Value, y_local) -> Value:
    y_local = np.asarray(y_local, dtype=np.int64)
    if y_local.size and (y_local.min() < 0 or y_local.max() >= logits.shape[1]):
        raise DimensionError(f"label outside head width {logits.shape[1]}")
    return ad.pick(ad.log_softmax_rows(logits), y_local) * -1.0


def loss_new(logits: Value, y_local, scores) -> Value:
    """Score-weighted summed cross-entropy."""
    s = scores.scores if isinstance(scores, ScoreVector) else np.asarray(scores, dtype=np.float64)
    if s.shape[0] != logits.shape[0]:
        raise DimensionError(f"{s.shape[0]} scores for {logits.shape[0]} rows")
    return ad.sum(cross_entropy_terms(logits, y_local) * s)


def loss_embed_anchor(x_t: Value, x_prev) -> Value:
    x_prev = ad.as_value(x_prev)
    if x_t.shape != x_prev.shape:
        raise DimensionError(f"anchor shapes differ: {x_t.shape} vs {x_prev.shape}")
    return ad.sum(ad.square(x_t - x_prev))


def loss_distill(logits_t: Value, logits_prev, tau: float) -> Value:
    """``tau^2 * sum_i KL(softmax(teacher_i / tau) || softmax(student_i / tau))``; teacher is constant."""
    teacher = np.asarray(ad.as_value(logits_prev).data)
    if teacher.shape != logits_t.shape:
        raise DimensionError(f"distillation head mismatch: {logits_t.shape} vs {teacher.shape}")
    t_scaled = teacher / tau
    t_log = t_scaled - t_scaled.max(axis=1, keepdims=True)
    t_log = t_log - np.log(np.exp(t_log).sum(axis=1, keepdims=True))
    p = np.exp(t_log)
    student_log = ad.log_softmax_rows(logits_t * (1.0 / tau))
    return (ad.sum(student_log * p) * -1.0 + float(np.sum(p * t_log))) * (tau * tau)


def loss_replay(state: ContinualState, task_classes: list, cfg: TrainConfig, rng: Rng, batch: int | None = None) -> Value:
    """Replay CE on features generated by the frozen flow, one batch per earlier task."""
    if state.frozen is None or state.frozen.flow is None:
        raise StateError("replay needs the frozen flow of the previous task")
    batch = cfg.replay_batch if batch is None else batch
    total: Value = Value(0.0)
    for j, classes in enumerate(task_classes):
        stream = rng.fork(str(j))
        y_tilde = uniform_class_labels(classes, batch, stream)
        x_tilde = sample(state.frozen.flow, y_tilde, stream.fork("z"))
        if cfg.use_replay_scores:
            weights = replay_scores(state.frozen.flow, x_tilde, y_tilde, cfg).scores
        else:
            weights = np.ones(y_tilde.shape[0])
        lookup = {c: i for i, c in enumerate(classes)}
        y_local = np.array([lookup[int(c)] for c in y_tilde], dtype=np.int64)
        total = total + loss_new(classify(Value(x_tilde), state.heads, j), y_local, weights)
    return total * cfg.lambda_old


# ---------------------------------------------------------------- training


def _fill_missing_grads(params: list[Value]) -> None:
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


def task_objective(
    state: ContinualState,
    tv: TaskView,
    cfg: TrainConfig,
    epoch: int,
    raw_scores: ScoreVector | None,
    prev_classes: list,
    anchor: np.ndarray | None,
    teacher_logits: list[np.ndarray],
    rng: Rng,
) -> tuple[Value, np.ndarray]:
    """Full per-step loss for task ``tv``; also returns the instance weights used."""
    t = tv.task
    train = tv.train_idx
    x = ad.take_rows(extract_features(tv, state.encoder), train)
    logits = classify(x, state.heads, t)
    y_local = tv.local_labels(tv.observed[train])
    if cfg.use_new_scores and raw_scores is not None:
        weights = new_task_scores(state.flow, None, None, epoch, cfg, raw=raw_scores).scores
    else:
        weights = np.ones(train.shape[0])
    loss = loss_new(logits, y_local, weights)
    if t > 0:
        if cfg.use_replay and cfg.lambda_old > 0:
            batch = min(cfg.replay_batch, train.shape[0])
            loss = loss + loss_replay(state, prev_classes, cfg, rng.fork("replay", str(epoch)), batch)
        if cfg.use_kp:
            if cfg.alpha_e > 0:
                loss = loss + loss_embed_anchor(x, anchor) * cfg.alpha_e
            if cfg.alpha_l > 0:
                l_l: Value = Value(0.0)
                for j, teacher in enumerate(teacher_logits):
                    l_l = l_l + loss_distill(classify(x, state.heads, j), teacher, cfg.tau)
                loss = loss + l_l * cfg.alpha_l
    return loss, weights


def train_task(state: ContinualState, tv: TaskView, cfg: TrainConfig, rng: Rng, prev_classes: list) -> ContinualState:
    t = tv.task
    if t != state.task:
        raise StateError(f"state has completed {state.task} tasks, cannot train task index {t}")
    if t > 0 and (state.frozen is None or state.frozen.task != t - 1):
        raise StateError(f"task {t} needs the snapshot captured after task {t - 1}")
    started = time.perf_counter()
    entry = TaskLog(task=t, flips=int(tv.noise_mask.sum()))
    train = tv.train_idx
    x_detached = extract_features(tv, state.encoder).data
    x_train = x_detached[train]
    y_obs = tv.observed[train]

    raw = None
    if cfg.uses_flow and state.flow is not None:
        prev_flow = state.frozen.flow if t > 0 else None
        entry.flow_curve = train_flow(
            state.flow, x_train, y_obs, cfg, rng.fork("flow", str(t)), prev_flow=prev_flow, prev_classes=prev_classes
        )
        raw = relative_scores(log_prob(state.flow, Value(x_train), y_obs).data)
        entry.raw_scores = raw.scores

    state.heads.add_head(x_detached.shape[1], len(tv.classes), rng.fork("head", str(t)))
    anchor, teachers = None, []
    if t > 0 and cfg.use_kp:
        anchor = x_train
        teachers = [classify(Value(x_train), state.frozen.heads, j).data for j in range(t)]

    params = state.parameters()
    opt = AdamState(lr=cfg.lr)
    epoch_rng = rng.fork("epochs", str(t))
    weights = np.ones(train.shape[0])
    for epoch in range(cfg.epochs):
        loss, weights = task_objective(state, tv, cfg, epoch, raw, prev_classes, anchor, teachers, epoch_rng)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingError(f"task {t + 1}: non-finite loss at epoch {epoch}")
        entry.loss_curve.append(value)
        ad.zero_grads(params)
        ad.backward(loss)
        _fill_missing_grads(params)
        adam_step(params, opt)
    ad.zero_grads(params)
    entry.final_scores = weights if raw is not None else None
    entry.seconds = time.perf_counter() - started

    state.optimizers["classifier"] = opt
    state.frozen = snapshot(state.encoder, state.heads, state.flow, task=t)
    state.task = t + 1
    state.logs.append(entry)
    return state


def task_accuracy(encoder: EncoderParams, heads: ClassifierHeads, tv: TaskView, idx=None) -> float:
    idx = tv.test_idx if idx is None else idx
    if idx.shape[0] == 0:
        return float("nan")
    x = extract_features(tv, encoder).data[idx]
    logits = classify(Value(x), heads, tv.task).data
    pred = np.asarray(tv.classes)[np.argmax(logits, axis=1)]
    return float(np.mean(pred == tv.clean[idx]))


def evaluate_row(state: ContinualState, tasks: list[TaskView], t: int) -> None:
    for j in range(t + 1):
        state.matrix[t, j] = task_accuracy(state.encoder, state.heads, tasks[j])


def prepare_tasks(graph: Graph, cfg: TrainConfig, rng: Rng) -> list[TaskView]:
    tasks = partition_tasks(graph, cfg.classes_per_task, rng.fork("tasks"))
    return [inject_noise(tv, cfg.noise_kind, cfg.noise_ratio, rng.fork("noise", str(tv.task))) for tv in tasks]


def mode_config(cfg: TrainConfig, mode: str) -> TrainConfig:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
    if mode == "bare" or mode == "joint":
        return cfg.replace(use_kp=False, use_new_scores=False, use_replay=False, use_replay_scores=False)
    return cfg


@dataclass
class RunResult:
    matrix: np.ndarray
    tasks: list[TaskView]
    state: ContinualState | None
    seconds: list[float]
    logs: list[TaskLog]


def run_sequence(
    graph: Graph,
    cfg: TrainConfig,
    mode: str = "ufo",
    resume: ContinualState | None = None,
    on_task_end=None,
) -> RunResult:
    """Train over every task and fill the lower-triangular accuracy matrix.

    ``on_task_end(state, t)`` is called after each task (used for checkpoints).
    ``resume`` continues a state restored from a checkpoint.
    """
    cfg.validate()
    cfg = mode_config(cfg, mode)
    rng = Rng(cfg.seed)
    tasks = prepare_tasks(graph, cfg, rng)
    if mode == "joint":
        return _run_joint(graph, tasks, cfg, rng)
    state = resume or init_state(graph, cfg, rng, len(tasks), with_flow=cfg.uses_flow)
    seconds = [log_.seconds for log_ in state.logs]
    for t in range(state.task, len(tasks)):
        prev_classes = [list(tv.classes) for tv in tasks[:t]]
        train_task(state, tasks[t], cfg, rng, prev_classes)
        evaluate_row(state, tasks, t)
        seconds.append(state.logs[-1].seconds)
        log.info("task %d/%d done: row %s", t + 1, len(tasks), np.round(state.matrix[t, : t + 1], 4).tolist())
        if on_task_end is not None:
            on_task_end(state, t)
    return RunResult(matrix=state.matrix.copy(), tasks=tasks, state=state, seconds=seconds, logs=state.logs)


def _run_joint(graph: Graph, tasks: list[TaskView], cfg: TrainConfig, rng: Rng) -> RunResult:
    """Retrain from scratch on the union of tasks 0..t at every stage."""
    n = len(tasks)
    matrix = np.full((n, n), np.nan)
    seconds = []
    state = None
    for t in range(n):
        started = time.perf_counter()
        state = init_state(graph, cfg, rng, n, with_flow=False)
        for j in range(t + 1):
            state.heads.add_head(state.encoder.output_dim(graph.n_features), len(tasks[j].classes), rng.fork("head", str(j)))
        params = state.parameters()
        opt = AdamState(lr=cfg.lr)
        labels = [tasks[j].local_labels(tasks[j].observed[tasks[j].train_idx]) for j in range(t + 1)]
        for epoch in range(cfg.epochs):
            loss: Value = Value(0.0)
            for j in range(t + 1):
                tv = tasks[j]
                x = ad.take_rows(extract_features(tv, state.encoder), tv.train_idx)
                loss = loss + loss_new(classify(x, state.heads, j), labels[j], np.ones(tv.train_idx.shape[0]))
            if not np.isfinite(loss.item()):
                raise TrainingError(f"joint stage {t + 1}: non-finite loss at epoch {epoch}")
            ad.zero_grads(params)
            ad.backward(loss)
            _fill_missing_grads(params)
            adam_step(params, opt)
        for j in range(t + 1):
            matrix[t, j] = task_accuracy(state.encoder, state.heads, tasks[j])
        seconds.append(time.perf_counter() - started)
    logs = [TaskLog(task=tv.task, flips=int(tv.noise_mask.sum()), seconds=s) for tv, s in zip(tasks, seconds)]
    return RunResult(matrix=matrix, tasks=tasks, state=state, seconds=seconds, logs=logs)
