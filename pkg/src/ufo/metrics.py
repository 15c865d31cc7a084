"""Accuracy/forgetting metrics, matrix CSV + SVG export, and the RunReport text format."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MatrixError(ValueError):
    pass


def accuracy_avg(matrix) -> float:
    """Mean of the final row."""
    m = np.asarray(matrix, dtype=np.float64)
    n = m.shape[0]
    if n == 0 or np.any(np.isnan(m[n - 1, :n])):
        raise MatrixError("performance matrix is incomplete: final row has undefined entries")
    return math.fsum(m[n - 1, :n].tolist()) / n


def forgetting_avg(matrix) -> float | None:
    """Mean of ``A[n, i] - A[i, i]`` over i < n; ``None`` when n < 2 (not applicable)."""
    m = np.asarray(matrix, dtype=np.float64)
    n = m.shape[0]
    if n < 2:
        return None
    diffs = [float(m[n - 1, i] - m[i, i]) for i in range(n - 1)]
    if any(math.isnan(d) for d in diffs):
        raise MatrixError("performance matrix is incomplete")
    return math.fsum(diffs) / (n - 1)


def matrix_to_csv(matrix) -> str:
    m = np.asarray(matrix, dtype=np.float64)
    lines = ["i,j,accuracy"]
    for i in range(m.shape[0]):
        for j in range(i + 1):
            lines.append(f"{i + 1},{j + 1},{float(m[i, j])!r}")
    return "\n".join(lines) + "\n"


def parse_matrix_csv(text: str) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("i,"):
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise MatrixError(f"line {lineno}: expected i,j,accuracy")
        try:
            rows.append((int(parts[0]), int(parts[1]), float(parts[2])))
        except ValueError:
            raise MatrixError(f"line {lineno}: malformed entry {line!r}") from None
    if not rows:
        raise MatrixError("no matrix entries")
    n = max(max(i, j) for i, j, _ in rows)
    m = np.full((n, n), np.nan)
    for i, j, v in rows:
        if j > i or i < 1 or j < 1:
            raise MatrixError(f"entry ({i},{j}) outside the lower triangle")
        m[i - 1, j - 1] = v
    return m


def matrix_to_svg(matrix, cell: int = 40, tone: tuple[int, int, int] = (31, 78, 161)) -> str:
    """Heatmap: row = training stage, column = task; white at 0, full tone at 1."""
    m = np.asarray(matrix, dtype=np.float64)
    n = m.shape[0]
    pad = 30
    size = pad + n * cell
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        '<g font-family="sans-serif" font-size="11" text-anchor="middle">',
    ]
    for k in range(n):
        parts.append(f'<text x="{pad + k * cell + cell / 2}" y="{pad - 10}">T{k + 1}</text>')
        parts.append(f'<text x="{pad / 2}" y="{pad + k * cell + cell / 2 + 4}">S{k + 1}</text>')
    parts.append("</g>")
    for i in range(n):
        for j in range(i + 1):
            a = min(1.0, max(0.0, float(m[i, j])))
            r, g, b = (round(255 + (c - 255) * a) for c in tone)
            parts.append(
                f'<rect class="cell" x="{pad + j * cell}" y="{pad + i * cell}" width="{cell}" height="{cell}" '
                f'fill="rgb({r},{g},{b})"><title>A[{i + 1}][{j + 1}]={a:.4f}</title></rect>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_matrix(matrix, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.svg``."""
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path = base.with_suffix(".csv")
    svg_path = base.with_suffix(".svg")
    csv_path.write_text(matrix_to_csv(matrix), encoding="utf-8")
    svg_path.write_text(matrix_to_svg(matrix), encoding="utf-8")
    return csv_path, svg_path


# ---------------------------------------------------------------- run report


@dataclass
class RunReport:
    mode: str
    seed: int
    config: dict[str, object]
    matrix: np.ndarray
    accuracy: float
    forgetting: float | None
    flips: list[int] = field(default_factory=list)
    score_clean: list[float] = field(default_factory=list)
    score_noisy: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)  # kept out of the text form

    @classmethod
    def build(cls, mode, seed, config, matrix, flips=(), score_clean=(), score_noisy=(), seconds=()) -> RunReport:
        return cls(
            mode=mode,
            seed=seed,
            config=dict(config),
            matrix=np.asarray(matrix, dtype=np.float64),
            accuracy=accuracy_avg(matrix),
            forgetting=forgetting_avg(matrix),
            flips=list(flips),
            score_clean=list(score_clean),
            score_noisy=list(score_noisy),
            seconds=list(seconds),
        )

    def check_consistency(self, tol: float = 1e-12) -> None:
        acc = accuracy_avg(self.matrix)
        fgt = forgetting_avg(self.matrix)
        if abs(acc - self.accuracy) > tol:
            raise MatrixError(f"stored accuracy {self.accuracy} != recomputed {acc}")
        if (fgt is None) != (self.forgetting is None) or (fgt is not None and abs(fgt - self.forgetting) > tol):
            raise MatrixError(f"stored forgetting {self.forgetting} != recomputed {fgt}")

    def to_text(self) -> str:
        lines = [f"mode={self.mode}", f"seed={self.seed}"]
        lines += [f"config.{k}={v}" for k, v in self.config.items()]
        lines.append(f"accuracy={self.accuracy!r}")
        lines.append(f"forgetting={'n/a' if self.forgetting is None else repr(self.forgetting)}")
        for t, f in enumerate(self.flips, 1):
            lines.append(f"noise.flips.{t}={f}")
        for t, (c, n) in enumerate(zip(self.score_clean, self.score_noisy), 1):
            lines.append(f"score.clean_mean.{t}={c!r}")
            lines.append(f"score.noisy_mean.{t}={n!r}")
        lines.append("[matrix]")
        return "\n".join(lines) + "\n" + matrix_to_csv(self.matrix)

    @classmethod
    def from_text(cls, text: str) -> RunReport:
        head, sep, body = text.partition("[matrix]\n")
        if not sep:
            raise MatrixError("run report lacks a [matrix] section")
        kv = {}
        for line in head.splitlines():
            if line.strip():
                k, _, v = line.partition("=")
                kv[k] = v
        config = {k[len("config."):]: v for k, v in kv.items() if k.startswith("config.")}

        def series(prefix):
            out, t = [], 1
            while f"{prefix}.{t}" in kv:
                out.append(kv[f"{prefix}.{t}"])
                t += 1
            return out

        report = cls(
            mode=kv["mode"],
            seed=int(kv["seed"]),
            config=config,
            matrix=parse_matrix_csv(body),
            accuracy=float(kv["accuracy"]),
            forgetting=None if kv["forgetting"] == "n/a" else float(kv["forgetting"]),
            flips=[int(v) for v in series("noise.flips")],
            score_clean=[float(v) for v in series("score.clean_mean")],
            score_noisy=[float(v) for v in series("score.noisy_mean")],
        )
        report.check_consistency()
        return report
