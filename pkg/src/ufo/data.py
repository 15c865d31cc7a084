"""Graph storage, dataset I/O, SBM generation, task partitioning and label noise."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .rng import Rng

TRAIN, VAL, TEST = 0, 1, 2


class DatasetParseError(ValueError):
    def __init__(self, path, line: int | None, msg: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {msg}")
        self.path = path
        self.line = line


class ConfigError(ValueError):
    pass


def canonical_edges(edges) -> np.ndarray:
    """Undirected edges as a sorted, de-duplicated (E, 2) array with u < v; self-loops dropped."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    e = np.sort(e, axis=1)
    e = e[e[:, 0] != e[:, 1]]
    if e.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(e, axis=0)


@dataclass(frozen=True)
class Graph:
    features: np.ndarray  # (n, d0)
    edges: np.ndarray  # (E, 2), u < v
    labels: np.ndarray  # (n,)
    n_classes: int

    def __post_init__(self):
        if self.labels.shape[0] != self.features.shape[0]:
            raise ValueError("labels and features disagree on node count")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("label outside [0, n_classes)")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite feature values")

    @property
    def n_nodes(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])


@dataclass(frozen=True)
class TaskView:
    task: int
    classes: tuple[int, ...]
    node_ids: np.ndarray  # task-local -> global
    features: np.ndarray
    edges: np.ndarray  # task-local ids, u < v
    split: np.ndarray  # TRAIN / VAL / TEST per local node
    clean: np.ndarray  # global class ids
    observed: np.ndarray
    noise_mask: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.node_ids.shape[0])

    @property
    def train_idx(self) -> np.ndarray:
        return np.flatnonzero(self.split == TRAIN)

    @property
    def val_idx(self) -> np.ndarray:
        return np.flatnonzero(self.split == VAL)

    @property
    def test_idx(self) -> np.ndarray:
        return np.flatnonzero(self.split == TEST)

    def local_labels(self, labels: np.ndarray) -> np.ndarray:
        """Map global class ids to head-local positions 0..k-1."""
        lookup = {c: i for i, c in enumerate(self.classes)}
        return np.array([lookup[int(c)] for c in labels], dtype=np.int64)

    def neighbor_index(self) -> tuple[np.ndarray, np.ndarray]:
        """(source, destination) arrays covering both directions of every edge."""
        if self.edges.size == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        u, v = self.edges[:, 0], self.edges[:, 1]
        return np.concatenate([u, v]), np.concatenate([v, u])

    def permuted(self, perm: np.ndarray) -> TaskView:
        """Relabel local node ids so that new node ``i`` is old node ``perm[i]``."""
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(perm.shape[0])
        return replace(
            self,
            node_ids=self.node_ids[perm],
            features=self.features[perm],
            edges=canonical_edges(inverse[self.edges]) if self.edges.size else self.edges,
            split=self.split[perm],
            clean=self.clean[perm],
            observed=self.observed[perm],
            noise_mask=self.noise_mask[perm],
        )


@dataclass(frozen=True)
class SbmConfig:
    n_tasks: int = 3
    classes_per_task: int = 3
    nodes_per_class: int = 60
    p_in: float = 0.15
    p_out: float = 0.01
    n_features: int = 16
    mean_scale: float = 1.0
    feature_noise: float = 1.0

    def validate(self) -> None:
        if min(self.n_tasks, self.classes_per_task, self.nodes_per_class, self.n_features) <= 0:
            raise ConfigError("SBM counts must be positive")
        if not (0.0 <= self.p_out < self.p_in <= 1.0):
            raise ConfigError(f"need 0 <= p_out < p_in <= 1, got p_out={self.p_out}, p_in={self.p_in}")
        if self.mean_scale < 0 or self.feature_noise < 0:
            raise ConfigError("SBM scales must be non-negative")


# ---------------------------------------------------------------- on-disk format


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise DatasetParseError(path, None, "missing file")
    return path.read_text(encoding="utf-8").splitlines()


def load_dataset(directory) -> Graph:
    root = Path(directory)
    meta_path = root / "meta.txt"
    meta: dict[str, int] = {}
    for lineno, line in enumerate(_read_lines(meta_path), 1):
        if not line.strip():
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise DatasetParseError(meta_path, lineno, f"expected key=value, got {line!r}")
        try:
            meta[key.strip()] = int(val.strip())
        except ValueError:
            raise DatasetParseError(meta_path, lineno, f"non-integer value {val.strip()!r}") from None
    for key in ("n_nodes", "n_features", "n_classes"):
        if key not in meta:
            raise DatasetParseError(meta_path, None, f"missing {key}")
    n, d, c = meta["n_nodes"], meta["n_features"], meta["n_classes"]

    feat_path = root / "features.csv"
    rows = [line for line in _read_lines(feat_path) if line.strip()]
    if len(rows) != n:
        raise DatasetParseError(feat_path, None, f"expected {n} rows, found {len(rows)}")
    features = np.empty((n, d))
    for lineno, line in enumerate(rows, 1):
        parts = line.split(",")
        if len(parts) != d:
            raise DatasetParseError(feat_path, lineno, f"expected {d} values, found {len(parts)}")
        try:
            features[lineno - 1] = [float(p) for p in parts]
        except ValueError:
            raise DatasetParseError(feat_path, lineno, "malformed float") from None
        if not np.all(np.isfinite(features[lineno - 1])):
            raise DatasetParseError(feat_path, lineno, "non-finite feature")

    label_path = root / "labels.csv"
    label_rows = [line for line in _read_lines(label_path) if line.strip()]
    if len(label_rows) != n:
        raise DatasetParseError(label_path, None, f"expected {n} labels, found {len(label_rows)}")
    labels = np.empty(n, dtype=np.int64)
    for lineno, line in enumerate(label_rows, 1):
        try:
            y = int(line.strip())
        except ValueError:
            raise DatasetParseError(label_path, lineno, f"malformed label {line!r}") from None
        if not 0 <= y < c:
            raise DatasetParseError(label_path, lineno, f"label {y} outside [0, {c})")
        labels[lineno - 1] = y

    edge_path = root / "edges.csv"
    edges = []
    for lineno, line in enumerate(_read_lines(edge_path), 1):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            u, v = (int(p) for p in parts)
        except ValueError:
            raise DatasetParseError(edge_path, lineno, f"malformed edge {line!r}") from None
        if not (0 <= u < n and 0 <= v < n):
            raise DatasetParseError(edge_path, lineno, f"edge endpoint outside [0, {n})")
        edges.append((u, v))
    return Graph(features=features, edges=canonical_edges(edges), labels=labels, n_classes=c)


def save_dataset(g: Graph, directory) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    (root / "meta.txt").write_text(
        f"n_nodes={g.n_nodes}\nn_features={g.n_features}\nn_classes={g.n_classes}\n", encoding="utf-8"
    )
    (root / "features.csv").write_text(
        "".join(",".join(repr(float(x)) for x in row) + "\n" for row in g.features), encoding="utf-8"
    )
    (root / "edges.csv").write_text("".join(f"{u},{v}\n" for u, v in g.edges), encoding="utf-8")
    (root / "labels.csv").write_text("".join(f"{int(y)}\n" for y in g.labels), encoding="utf-8")


# ---------------------------------------------------------------- generation


def generate_sbm(cfg: SbmConfig, rng: Rng) -> Graph:
    cfg.validate()
    n_classes = cfg.n_tasks * cfg.classes_per_task
    labels = np.repeat(np.arange(n_classes), cfg.nodes_per_class)
    n = labels.shape[0]
    means = rng.fork("means").normal((n_classes, cfg.n_features), cfg.mean_scale)
    features = means[labels] + rng.fork("features").normal((n, cfg.n_features), cfg.feature_noise)

    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], cfg.p_in, cfg.p_out)
    keep = rng.fork("edges").random(iu.shape[0]) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    return Graph(features=features, edges=canonical_edges(edges), labels=labels, n_classes=n_classes)


# ---------------------------------------------------------------- tasks


def task_class_blocks(n_classes: int, classes_per_task: int) -> list[list[int]]:
    if classes_per_task <= 0:
        raise ConfigError(f"classes_per_task must be positive, got {classes_per_task}")
    blocks = [list(range(s, min(s + classes_per_task, n_classes))) for s in range(0, n_classes, classes_per_task)]
    if len(blocks) > 1 and len(blocks[-1]) < 2:
        blocks[-2].extend(blocks.pop())
    return blocks


def split_counts(n: int) -> tuple[int, int, int]:
    n_train = int(np.floor(0.6 * n))
    n_val = int(np.floor(0.2 * n))
    return n_train, n_val, n - n_train - n_val


def induced_task(g: Graph, task: int, classes: list[int], rng: Rng) -> TaskView:
    node_ids = np.flatnonzero(np.isin(g.labels, classes))
    local = np.full(g.n_nodes, -1, dtype=np.int64)
    local[node_ids] = np.arange(node_ids.shape[0])
    inside = (local[g.edges[:, 0]] >= 0) & (local[g.edges[:, 1]] >= 0) if g.edges.size else np.zeros(0, bool)
    edges = canonical_edges(local[g.edges[inside]]) if g.edges.size else np.zeros((0, 2), dtype=np.int64)

    n_train, n_val, _ = split_counts(node_ids.shape[0])
    order = rng.permutation(node_ids.shape[0])
    split = np.full(node_ids.shape[0], TEST, dtype=np.int64)
    split[order[:n_train]] = TRAIN
    split[order[n_train : n_train + n_val]] = VAL
    clean = g.labels[node_ids].copy()
    return TaskView(
        task=task,
        classes=tuple(classes),
        node_ids=node_ids,
        features=g.features[node_ids],
        edges=edges,
        split=split,
        clean=clean,
        observed=clean.copy(),
        noise_mask=np.zeros(node_ids.shape[0], dtype=bool),
    )


def partition_tasks(g: Graph, classes_per_task: int, rng: Rng) -> list[TaskView]:
    """Consecutive ascending class blocks become tasks; each task is the induced subgraph on its classes."""
    return [
        induced_task(g, t, classes, rng.fork("split", str(t)))
        for t, classes in enumerate(task_class_blocks(g.n_classes, classes_per_task))
    ]


def inject_noise(tv: TaskView, kind: str, ratio: float, rng: Rng) -> TaskView:
    """Corrupt exactly ``round(ratio * |train|)`` training labels.

    ``symmetric`` draws the new label uniformly from the task's other classes;
    ``pair`` maps each class to its cyclic successor in the task's class list.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"noise ratio must lie in [0, 1], got {ratio}")
    if kind not in ("symmetric", "pair"):
        raise ConfigError(f"unknown noise kind {kind!r}")
    train = tv.train_idx
    n_flip = int(round(ratio * train.shape[0]))
    if n_flip and len(tv.classes) < 2:
        raise ConfigError("cannot inject label noise into a single-class task")
    observed = tv.clean.copy()
    if n_flip:
        chosen = train[rng.choice(train.shape[0], n_flip, replace=False)]
        k = len(tv.classes)
        pos = tv.local_labels(tv.clean[chosen])
        if kind == "pair":
            new_pos = (pos + 1) % k
        else:
            # uniform over the k-1 other classes
            new_pos = (pos + 1 + rng.integers(0, k - 1, size=n_flip)) % k
        observed[chosen] = np.asarray(tv.classes)[new_pos]
    return replace(tv, observed=observed, noise_mask=observed != tv.clean)
