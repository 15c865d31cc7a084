"""Command line: gen-data, run, ablate, eval, selftest."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import build_configs, format_config, load_config
from .data import ConfigError, DatasetParseError, generate_sbm, load_dataset, save_dataset
from .experiments import VARIANTS, build_report, dump_scores, fixture_graph, run_ablation
from .metrics import MatrixError, accuracy_avg, emit_matrix, forgetting_avg, parse_matrix_csv
from .rng import Rng
from .trainer import MODES, run_sequence

log = logging.getLogger("ufo")


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.6g}"


def _configs(args):
    values = load_config(args.config) if getattr(args, "config", None) else {}
    for key in ("noise_kind", "noise_ratio", "seed"):
        if getattr(args, key, None) is not None:
            values[key] = getattr(args, key)
    return build_configs(values)


def _graph(args, sbm, seed):
    if getattr(args, "data", None):
        return load_dataset(args.data)
    return fixture_graph(sbm, seed)


# ---------------------------------------------------------------- subcommands


def cmd_gen_data(args) -> int:
    _, sbm = _configs(args)
    seed = args.seed if args.seed is not None else 0
    g = generate_sbm(sbm, Rng(seed).fork("data"))
    save_dataset(g, args.out)
    print(f"wrote {g.n_nodes} nodes, {g.edges.shape[0]} edges, {g.n_classes} classes to {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg, sbm = _configs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    graph = _graph(args, sbm, cfg.seed)
    resume = load_checkpoint(args.resume) if args.resume else None

    def on_task_end(state, t):
        if args.checkpoint_every and (t + 1) % args.checkpoint_every == 0:
            save_checkpoint(state, out / f"checkpoint_task{t + 1}.bin")

    result = run_sequence(graph, cfg, args.mode, resume=resume, on_task_end=on_task_end)
    report = build_report(result, cfg, args.mode)
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    (out / "timings.csv").write_text(
        "task,seconds\n" + "".join(f"{t + 1},{s!r}\n" for t, s in enumerate(report.seconds)), encoding="utf-8"
    )
    emit_matrix(result.matrix, out / "matrix")
    from .plots import matrix_png, scores_png

    matrix_png(result.matrix, out / "matrix.png", title=f"{args.mode}, seed {cfg.seed}")
    if args.dump_scores:
        dump_scores(result, args.dump_scores)
        if report.score_clean:
            clean, noisy = [], []
            for entry in result.logs:
                if entry.final_scores is not None:
                    mask = result.tasks[entry.task].noise_mask[result.tasks[entry.task].train_idx]
                    clean.extend(entry.final_scores[~mask])
                    noisy.extend(entry.final_scores[mask])
            scores_png(np.array(clean), np.array(noisy), out / "scores.png")
    print(report.to_text(), end="")
    return 0


def cmd_ablate(args) -> int:
    cfg, sbm = _configs(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = run_ablation(lambda s: _graph(args, sbm, s), cfg, seeds)
    names, medians = [], []
    lines = ["variant,median_accuracy,median_forgetting," + ",".join(f"acc_seed{s}" for s in seeds)]
    for name in VARIANTS:
        accs = [accuracy_avg(r.matrix) for r in results[name]]
        fgts = [forgetting_avg(r.matrix) for r in results[name]]
        med_f = None if any(f is None for f in fgts) else float(np.median(fgts))
        slug = name.replace("+", "_").lower()
        for seed, r in zip(seeds, results[name]):
            emit_matrix(r.matrix, out / f"matrix_{slug}_seed{seed}")
        names.append(name)
        medians.append(float(np.median(accs)))
        lines.append(f"{name},{medians[-1]!r},{'n/a' if med_f is None else repr(med_f)}," + ",".join(repr(a) for a in accs))
    summary = "\n".join(lines) + "\n"
    (out / "ablation.csv").write_text(summary, encoding="utf-8")
    from .plots import ablation_png

    ablation_png(names, medians, out / "ablation.png")
    print(summary, end="")
    return 0


def cmd_eval(args) -> int:
    matrix = parse_matrix_csv(Path(args.matrix).read_text(encoding="utf-8"))
    print(f"accuracy={_fmt(accuracy_avg(matrix))}")
    print(f"forgetting={_fmt(forgetting_avg(matrix))}")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_all

    checks = run_all(args.seed or 0)
    for c in checks:
        print(c.line())
    failed = sum(not c.ok for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 1 if failed else 0


def cmd_show_config(args) -> int:
    cfg, sbm = _configs(args)
    print(format_config(cfg) + format_config(sbm), end="")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ufo", description="Flow-based robust continual learning on graphs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, noise=True):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int)
        if noise:
            p.add_argument("--noise-kind", dest="noise_kind", choices=("symmetric", "pair"))
            p.add_argument("--noise-ratio", "--noise", dest="noise_ratio", type=float)

    p = sub.add_parser("gen-data", help="write a synthetic SBM dataset directory")
    common(p, noise=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("run", help="train one mode over the task sequence")
    common(p)
    p.add_argument("--mode", choices=MODES, default="ufo")
    p.add_argument("--data", help="dataset directory (default: generate the synthetic fixture from --seed)")
    p.add_argument("--out", default="runs/latest")
    p.add_argument("--dump-scores", dest="dump_scores")
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int, default=0, help="save after every N tasks")
    p.add_argument("--resume", help="continue from a checkpoint file")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="run the BM -> UFO ablation chain")
    common(p)
    p.add_argument("--data")
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--out", default="runs/ablation")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", help="recompute metrics from a matrix CSV")
    p.add_argument("matrix")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selftest", help="gradient, flow and score checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("show-config", help="print the effective configuration")
    common(p)
    p.set_defaults(func=cmd_show_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetParseError, MatrixError, ValueError, RuntimeError, OSError) as exc:
        print(f"ufo: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
