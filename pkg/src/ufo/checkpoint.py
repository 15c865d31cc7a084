"""Binary checkpoints of a ContinualState.

Layout (all integers u64 little-endian, all floats f64 little-endian)::

    b"UFO1"
    n_tensors
    n_tensors * [name_len, name utf-8, rank, dims..., row-major data]
    b"CTRS"
    n_counters
    n_counters * [name_len, name utf-8, value]

Random streams are derived from ``(seed, labels)`` with no hidden cursor, so
the seed counter is the whole rng state.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .autodiff import Value
from .encoder import ClassifierHeads, EncoderParams, FrozenSnapshot
from .flow import Coupling, FlowModel, invert_permutation
from .optim import AdamState
from .trainer import ContinualState, TaskLog

MAGIC = b"UFO1"
COUNTERS = b"CTRS"


class CheckpointFormatError(ValueError):
    pass


# ---------------------------------------------------------------- flatten


def _encoder_tensors(prefix: str, enc: EncoderParams, out: dict) -> None:
    for i, w in enumerate(enc.weights):
        out[f"{prefix}encoder.{i}"] = w.data


def _heads_tensors(prefix: str, heads: ClassifierHeads, out: dict) -> None:
    for j, (w, b) in enumerate(zip(heads.weights, heads.biases)):
        out[f"{prefix}head.{j}.w"] = w.data
        out[f"{prefix}head.{j}.b"] = b.data


def _flow_tensors(prefix: str, flow: FlowModel, out: dict) -> None:
    for k, (perm, c) in enumerate(zip(flow.perms, flow.couplings)):
        out[f"{prefix}flow.{k}.perm"] = perm.astype(np.float64)
        for name in ("w1", "b1", "w2", "b2", "gate"):
            out[f"{prefix}flow.{k}.{name}"] = getattr(c, name).data


def state_tensors(state: ContinualState) -> tuple[dict[str, np.ndarray], dict[str, int]]:
    tensors: dict[str, np.ndarray] = {}
    counters = {
        "seed": state.seed,
        "task": state.task,
        "encoder.layers": state.encoder.n_layers,
        "encoder.hidden": state.encoder.hidden,
        "heads": len(state.heads),
        "has_flow": int(state.flow is not None),
        "has_frozen": int(state.frozen is not None),
    }
    _encoder_tensors("", state.encoder, tensors)
    _heads_tensors("", state.heads, tensors)
    if state.flow is not None:
        _flow_tensors("", state.flow, tensors)
        counters["flow.dim"] = state.flow.dim
        counters["flow.classes"] = state.flow.n_classes
        counters["flow.couplings"] = len(state.flow.couplings)
    if state.frozen is not None:
        fz = state.frozen
        _encoder_tensors("frozen.", fz.encoder, tensors)
        _heads_tensors("frozen.", fz.heads, tensors)
        counters["frozen.task"] = fz.task
        counters["frozen.heads"] = len(fz.heads)
        counters["frozen.has_flow"] = int(fz.flow is not None)
        if fz.flow is not None:
            _flow_tensors("frozen.", fz.flow, tensors)
    if state.matrix is not None:
        tensors["matrix"] = state.matrix
    for name, opt in sorted(state.optimizers.items()):
        tensors[f"adam.{name}.hyper"] = np.array([opt.lr, opt.beta1, opt.beta2, opt.eps])
        counters[f"adam.{name}.t"] = opt.t
        counters[f"adam.{name}.slots"] = len(opt.m)
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            tensors[f"adam.{name}.m.{i}"] = m
            tensors[f"adam.{name}.v.{i}"] = v
    counters["logs"] = len(state.logs)
    for t, entry in enumerate(state.logs):
        counters[f"log.{t}.task"] = entry.task
        counters[f"log.{t}.flips"] = entry.flips
        tensors[f"log.{t}.seconds"] = np.array([entry.seconds])
        for name in ("raw_scores", "final_scores"):
            arr = getattr(entry, name)
            if arr is not None:
                tensors[f"log.{t}.{name}"] = np.asarray(arr, dtype=np.float64)
        tensors[f"log.{t}.flow_curve"] = np.asarray(entry.flow_curve, dtype=np.float64)
        tensors[f"log.{t}.loss_curve"] = np.asarray(entry.loss_curve, dtype=np.float64)
    return tensors, counters


# ---------------------------------------------------------------- encode / decode


def _u64(n: int) -> bytes:
    if n < 0:
        raise CheckpointFormatError(f"counter {n} is negative")
    return struct.pack("<Q", n)


def _name(name: str) -> bytes:
    raw = name.encode("utf-8")
    return _u64(len(raw)) + raw


def encode(tensors: dict[str, np.ndarray], counters: dict[str, int]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_u64(len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        buf.write(_name(name))
        buf.write(_u64(arr.ndim))
        for d in arr.shape:
            buf.write(_u64(d))
        buf.write(arr.tobytes(order="C"))
    buf.write(COUNTERS)
    buf.write(_u64(len(counters)))
    for name, value in counters.items():
        buf.write(_name(name))
        buf.write(_u64(int(value)))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(f"truncated checkpoint at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def name(self) -> str:
        try:
            return self.take(self.u64()).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointFormatError(f"bad tensor name near byte {self.pos}") from None


def decode(data: bytes) -> tuple[dict[str, np.ndarray], dict[str, int]]:
    r = _Reader(data)
    magic = r.take(4)
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    tensors = {}
    for _ in range(r.u64()):
        name = r.name()
        rank = r.u64()
        shape = tuple(r.u64() for _ in range(rank))
        count = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
    if r.take(4) != COUNTERS:
        raise CheckpointFormatError("missing counters section")
    counters = {}
    for _ in range(r.u64()):
        name = r.name()
        counters[name] = r.u64()
    if r.pos != len(data):
        raise CheckpointFormatError(f"{len(data) - r.pos} trailing bytes after counters")
    return tensors, counters


# ---------------------------------------------------------------- rebuild


def _param(arr: np.ndarray, trainable: bool) -> Value:
    return Value(np.array(arr, dtype=np.float64), requires_grad=trainable)


def _encoder(prefix: str, tensors, counters, trainable: bool) -> EncoderParams:
    n_layers = counters["encoder.layers"]
    weights = [_param(tensors[f"{prefix}encoder.{i}"], trainable) for i in range(n_layers - 1)]
    return EncoderParams(weights=weights, n_layers=n_layers, hidden=counters["encoder.hidden"])


def _heads(prefix: str, count: int, tensors, trainable: bool) -> ClassifierHeads:
    heads = ClassifierHeads()
    for j in range(count):
        heads.weights.append(_param(tensors[f"{prefix}head.{j}.w"], trainable))
        heads.biases.append(_param(tensors[f"{prefix}head.{j}.b"], trainable))
    return heads


def _flow(prefix: str, tensors, counters, trainable: bool) -> FlowModel:
    perms, inverses, couplings = [], [], []
    for k in range(counters["flow.couplings"]):
        perm = tensors[f"{prefix}flow.{k}.perm"].astype(np.int64)
        perms.append(perm)
        inverses.append(invert_permutation(perm))
        couplings.append(
            Coupling(**{n: _param(tensors[f"{prefix}flow.{k}.{n}"], trainable) for n in ("w1", "b1", "w2", "b2", "gate")})
        )
    return FlowModel(
        dim=counters["flow.dim"], n_classes=counters["flow.classes"], perms=perms, inverse_perms=inverses, couplings=couplings
    )


def state_from_tensors(tensors: dict[str, np.ndarray], counters: dict[str, int]) -> ContinualState:
    try:
        encoder = _encoder("", tensors, counters, True)
        heads = _heads("", counters["heads"], tensors, True)
        flow = _flow("", tensors, counters, True) if counters["has_flow"] else None
        frozen = None
        if counters["has_frozen"]:
            frozen = FrozenSnapshot(
                encoder=_encoder("frozen.", tensors, counters, False),
                heads=_heads("frozen.", counters["frozen.heads"], tensors, False),
                flow=_flow("frozen.", tensors, counters, False) if counters["frozen.has_flow"] else None,
                task=counters["frozen.task"],
            )
        optimizers = {}
        for key in tensors:
            if key.startswith("adam.") and key.endswith(".hyper"):
                name = key[len("adam.") : -len(".hyper")]
                lr, b1, b2, eps = (float(v) for v in tensors[key])
                slots = counters[f"adam.{name}.slots"]
                optimizers[name] = AdamState(
                    lr=lr, beta1=b1, beta2=b2, eps=eps, t=counters[f"adam.{name}.t"],
                    m=[tensors[f"adam.{name}.m.{i}"].copy() for i in range(slots)],
                    v=[tensors[f"adam.{name}.v.{i}"].copy() for i in range(slots)],
                )
        logs = []
        for t in range(counters["logs"]):
            logs.append(
                TaskLog(
                    task=counters[f"log.{t}.task"],
                    flips=counters[f"log.{t}.flips"],
                    raw_scores=tensors.get(f"log.{t}.raw_scores"),
                    final_scores=tensors.get(f"log.{t}.final_scores"),
                    flow_curve=tensors[f"log.{t}.flow_curve"].tolist(),
                    loss_curve=tensors[f"log.{t}.loss_curve"].tolist(),
                    seconds=float(tensors[f"log.{t}.seconds"][0]),
                )
            )
    except KeyError as exc:
        raise CheckpointFormatError(f"checkpoint is missing entry {exc.args[0]!r}") from None
    return ContinualState(
        encoder=encoder,
        heads=heads,
        flow=flow,
        frozen=frozen,
        task=counters["task"],
        matrix=tensors.get("matrix", None),
        optimizers=optimizers,
        seed=counters["seed"],
        logs=logs,
    )


def save_checkpoint(state: ContinualState, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(*state_tensors(state)))
    return path


def load_checkpoint(path) -> ContinualState:
    return state_from_tensors(*decode(Path(path).read_bytes()))
