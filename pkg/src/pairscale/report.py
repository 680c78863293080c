"""Tabular outputs: scores files with JSON sidecars, correlation and regression tables."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .core import RegressionResult, ScaledScores
from .errors import ValidationError
from .stats import CONTROLS, INTERCEPT, pearson, significance_stars

SCORES_HEADER = ("id", "lambda", "quasi_se", "ci_low", "ci_high")
STAR_NOTE = "*p<0.05; **p<0.01; ***p<0.001"


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def write_json(path: str | Path, payload: Mapping[str, Any]) -> None:
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def write_scores(scores: ScaledScores, path: str | Path, meta: Mapping[str, Any]) -> Path:
    """Write ``id, lambda, quasi_se, ci_low, ci_high`` sorted by descending lambda."""
    path = Path(path)
    order = sorted(range(len(scores.entities)), key=lambda k: (-scores.lam[k], scores.entities[k]))
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCORES_HEADER)
        for k in order:
            writer.writerow([
                scores.entities[k],
                *(repr(float(a[k])) for a in
                  (scores.lam, scores.quasi_se, scores.ci_low, scores.ci_high)),
            ])
    write_json(sidecar_path(path), {
        **meta,
        "converged": scores.converged,
        "iterations": scores.iterations,
        "log_likelihood": scores.log_likelihood,
    })
    return path


def read_meta(path: str | Path) -> dict[str, Any]:
    side = sidecar_path(path)
    return json.loads(side.read_text(encoding="utf-8")) if side.exists() else {}


def read_scores(path: str | Path) -> ScaledScores:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SCORES_HEADER:
            raise ValidationError(f"{path}: expected columns {', '.join(SCORES_HEADER)}")
        rows = list(reader)
    meta = read_meta(path)
    col = lambda name: [float(r[name]) for r in rows]  # noqa: E731
    return ScaledScores(
        tuple(r["id"] for r in rows),
        col("lambda"),
        col("quasi_se"),
        col("ci_low"),
        col("ci_high"),
        bool(meta.get("converged", True)),
        int(meta.get("iterations", 0)),
        float(meta.get("log_likelihood", math.nan)),
    )


def correlation_matrix(vectors: Mapping[str, Mapping[str, float]]) -> tuple[list[str], np.ndarray]:
    """Pearson correlations between named score vectors over their common ids."""
    labels = list(vectors)
    m = np.eye(len(labels))
    for a in range(len(labels)):
        for b in range(a + 1, len(labels)):
            va, vb = vectors[labels[a]], vectors[labels[b]]
            common = sorted(set(va) & set(vb))
            r = pearson([va[k] for k in common], [vb[k] for k in common])
            m[a, b] = m[b, a] = r
    return labels, m


def correlation_csv(labels: Sequence[str], m: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["", *labels])
    for label, row in zip(labels, m):
        writer.writerow([label, *(repr(float(v)) for v in row)])
    return buf.getvalue()


def correlation_markdown(labels: Sequence[str], m: np.ndarray) -> str:
    lines = ["| | " + " | ".join(labels) + " |", "|---" * (len(labels) + 1) + "|"]
    for a, label in enumerate(labels):
        cells = [f"{m[a, b]:.2f}" if b >= a else "" for b in range(len(labels))]
        lines.append(f"| {label} | " + " | ".join(cells) + " |")
    return "\n".join(lines)


def _row_order(results: Sequence[RegressionResult]) -> list[str]:
    """Substantive predictors in order of appearance, then controls, intercept last."""
    names: list[str] = []
    for res in results:
        for name in res.predictor_names:
            if name != INTERCEPT and name not in names:
                names.append(name)
    controls = [t.label for t in CONTROLS]
    names.sort(key=lambda name: controls.index(name) + 1 if name in controls else 0)
    return names + [INTERCEPT]


def regression_markdown(title: str, columns: Mapping[str, RegressionResult | str]) -> str:
    """One coefficient row plus a parenthesized SE row per predictor, intercept
    last, stars at 0.05/0.01/0.001.  A string column value is a failure note."""
    fitted = [r for r in columns.values() if isinstance(r, RegressionResult)]
    labels = list(columns)
    lines = [f"**{title}**", "", "| | " + " | ".join(labels) + " |",
             "|---" * (len(labels) + 1) + "|"]
    for name in _row_order(fitted):
        coef_cells, se_cells = [], []
        for res in columns.values():
            if isinstance(res, RegressionResult) and name in res.predictor_names:
                beta, se, _, p = res.coef(name)
                coef_cells.append(f"{beta:.2f}{significance_stars(p)}")
                se_cells.append(f"({se:.2f})")
            else:
                coef_cells.append("")
                se_cells.append("")
        lines.append(f"| {name} | " + " | ".join(coef_cells) + " |")
        lines.append("| | " + " | ".join(se_cells) + " |")
    lines.append("| N | " + " | ".join(
        str(r.n_obs) if isinstance(r, RegressionResult) else "" for r in columns.values()) + " |")
    lines.append("")
    lines.append(f"Note: {STAR_NOTE}")
    for label, res in columns.items():
        if isinstance(res, str):
            lines.append(f"{label}: estimation failed: {res}")
    return "\n".join(lines)


def regression_rows(table: str, columns: Mapping[str, RegressionResult | str]) -> list[dict[str, Any]]:
    rows = []
    for label, res in columns.items():
        if not isinstance(res, RegressionResult):
            continue
        for k, name in enumerate(res.predictor_names):
            rows.append({
                "table": table,
                "column": label,
                "predictor": name,
                "coef": repr(float(res.beta[k])),
                "se": repr(float(res.se[k])),
                "z": repr(float(res.z[k])),
                "p": repr(float(res.p[k])),
                "stars": significance_stars(float(res.p[k])),
                "n_obs": res.n_obs,
            })
    return rows


def write_rows(path: str | Path, rows: Sequence[Mapping[str, Any]], header: Sequence[str]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(header), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
