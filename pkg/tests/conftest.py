import numpy as np
import pytest

from ufo.autodiff import Value
from ufo.data import TEST, TRAIN, VAL, Graph, TaskView, canonical_edges


def make_task(features, edges=(), labels=None, classes=None, split=None, task=0):
    """Hand-built TaskView; local ids equal global ids."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    labels = np.zeros(n, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    classes = tuple(sorted(set(labels.tolist()))) if classes is None else tuple(classes)
    split = np.full(n, TRAIN, dtype=np.int64) if split is None else np.asarray(split, dtype=np.int64)
    return TaskView(
        task=task,
        classes=classes,
        node_ids=np.arange(n),
        features=features,
        edges=canonical_edges(edges) if len(edges) else np.zeros((0, 2), dtype=np.int64),
        split=split,
        clean=labels.copy(),
        observed=labels.copy(),
        noise_mask=np.zeros(n, dtype=bool),
    )


def task_with_train(n_train, classes=(0, 1, 2), seed=0):
    """Task with exactly ``n_train`` training nodes plus a few val/test nodes, labels cycling over ``classes``."""
    n = n_train + 20
    labels = np.array([classes[i % len(classes)] for i in range(n)])
    split = np.array([TRAIN] * n_train + [VAL] * 10 + [TEST] * 10)
    feats = np.random.default_rng(seed).normal(size=(n, 2))
    return make_task(feats, labels=labels, classes=classes, split=split)


@pytest.fixture
def tiny_graph():
    feats = np.arange(12, dtype=np.float64).reshape(6, 2)
    return Graph(features=feats, edges=canonical_edges([(0, 1), (1, 2), (3, 4), (2, 3)]), labels=np.array([0, 0, 1, 1, 2, 2]), n_classes=3)


def composite_setup(seed=0):
    """A second-task training state on a 2-task toy SBM with every loss term active.

    Returns ``{name: (loss_of, point)}`` where ``loss_of(v)`` is the full per-step
    loss with one parameter replaced by ``v``: the first encoder weight (new-task,
    anchor and distillation paths) and the old head's weight (replay and distillation).
    """
    from ufo import autodiff as ad  # noqa: F401
    from ufo.config import TrainConfig
    from ufo.data import SbmConfig, generate_sbm
    from ufo.encoder import extract_features, classify
    from ufo.flow import log_prob
    from ufo.rng import Rng
    from ufo.scores import relative_scores
    from ufo.trainer import init_state, prepare_tasks, task_objective, train_task

    sbm = SbmConfig(n_tasks=2, classes_per_task=2, nodes_per_class=5, p_in=0.6, p_out=0.1, n_features=3)
    graph = generate_sbm(sbm, Rng(seed).fork("data"))
    cfg = TrainConfig(
        hidden=2, flow_hidden=4, n_couplings=2, epochs=3, flow_epochs=3, replay_batch=4, classes_per_task=2,
        noise_ratio=0.3, seed=seed, warmup_epochs=4,
    )
    rng = Rng(seed)
    tasks = prepare_tasks(graph, cfg, rng)
    state = init_state(graph, cfg, rng, len(tasks), with_flow=True)
    train_task(state, tasks[0], cfg, rng, [])
    tv = tasks[1]
    x_now = extract_features(tv, state.encoder).data
    train = tv.train_idx
    raw = relative_scores(log_prob(state.flow, x_now[train], tv.observed[train]).data)
    state.heads.add_head(x_now.shape[1], len(tv.classes), rng.fork("head", "1"))
    anchor = x_now[train]
    teachers = [classify(Value(anchor), state.frozen.heads, 0).data]

    def swapping(holder, index):
        original = holder[index]

        def loss_of(v):
            holder[index] = v
            try:
                loss, _ = task_objective(state, tv, cfg, 2, raw, [list(tasks[0].classes)], anchor, teachers, rng.fork("gc"))
                return loss
            finally:
                holder[index] = original

        return loss_of, original.data.copy()

    return {"encoder": swapping(state.encoder.weights, 0), "old_head": swapping(state.heads.weights, 0)}


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[number])
