"""Run-level plumbing shared by the CLI and the test suite: reports, score dumps, the ablation chain."""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .data import Graph, SbmConfig, generate_sbm
from .metrics import RunReport
from .rng import Rng
from .trainer import RunResult, run_sequence

# ablation chain; every variant runs in "ufo" mode with a subset of components switched on
VARIANTS: dict[str, dict[str, bool]] = {
    "BM": dict(use_kp=False, use_new_scores=False, use_replay=False, use_replay_scores=False),
    "BM+KP": dict(use_kp=True, use_new_scores=False, use_replay=False, use_replay_scores=False),
    "BM+KP+NS": dict(use_kp=True, use_new_scores=True, use_replay=False, use_replay_scores=False),
    "BM+KP+NS+R": dict(use_kp=True, use_new_scores=True, use_replay=True, use_replay_scores=False),
    "UFO": dict(use_kp=True, use_new_scores=True, use_replay=True, use_replay_scores=True),
}


def fixture_graph(sbm: SbmConfig, seed: int) -> Graph:
    return generate_sbm(sbm, Rng(seed).fork("data"))


def score_separation(result: RunResult) -> tuple[list[float], list[float]]:
    """Per-task mean final score over clean-mask and noisy-mask training nodes (NaN when a group is empty)."""
    clean, noisy = [], []
    for entry in result.logs:
        if entry.final_scores is None:
            continue
        tv = result.tasks[entry.task]
        mask = tv.noise_mask[tv.train_idx]
        s = np.asarray(entry.final_scores)
        clean.append(float(s[~mask].mean()) if (~mask).any() else float("nan"))
        noisy.append(float(s[mask].mean()) if mask.any() else float("nan"))
    return clean, noisy


def build_report(result: RunResult, cfg: TrainConfig, mode: str) -> RunReport:
    clean, noisy = score_separation(result)
    config = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}
    return RunReport.build(
        mode=mode,
        seed=cfg.seed,
        config=config,
        matrix=result.matrix,
        flips=[entry.flips for entry in result.logs],
        score_clean=clean,
        score_noisy=noisy,
        seconds=result.seconds,
    )


def dump_scores(result: RunResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node_id", "clean_label", "observed_label", "noisy_flag", "raw_score", "final_score"])
        for entry in result.logs:
            if entry.final_scores is None:
                continue
            tv = result.tasks[entry.task]
            for k, local in enumerate(tv.train_idx):
                writer.writerow(
                    [
                        int(tv.node_ids[local]),
                        int(tv.clean[local]),
                        int(tv.observed[local]),
                        int(tv.noise_mask[local]),
                        repr(float(entry.raw_scores[k])),
                        repr(float(entry.final_scores[k])),
                    ]
                )
    return path


def run_ablation(graph_for_seed, cfg: TrainConfig, seeds) -> dict[str, list[RunResult]]:
    """Run every variant on every seed. Variants share data, noise and init streams; only toggles differ."""
    results: dict[str, list[RunResult]] = {name: [] for name in VARIANTS}
    for seed in seeds:
        graph = graph_for_seed(seed)
        for name, toggles in VARIANTS.items():
            results[name].append(run_sequence(graph, cfg.replace(seed=seed, **toggles), "ufo"))
    return results
