"""CSV formats for bases, scores, histograms and small tables."""

from __future__ import annotations

import csv
import os

import numpy as np

from .basis import Basis, BasisError
from .dataset import DataFormatError, SurveyDesign, read_design, write_design


def design_path(path) -> str:
    return os.fspath(path) + ".design"


def _read_rows(path) -> list[list[str]]:
    with open(path, newline="") as fh:
        return [row for row in csv.reader(fh) if row and any(t.strip() for t in row)]


def _floats(rows, path) -> np.ndarray:
    try:
        return np.array([[float(t) for t in row] for row in rows], dtype=float)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def write_basis(basis: Basis, path) -> None:
    """One row per basis vector; the design goes to ``<path>.design``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in basis.vectors:
            w.writerow([repr(float(v)) for v in row])
    write_design(basis.design, design_path(path))


def read_basis(path, design: SurveyDesign | None = None) -> Basis:
    if design is None:
        if not os.path.exists(design_path(path)):
            raise DataFormatError(f"{path}: no design given and no {design_path(path)} found")
        design = read_design(design_path(path))
    rows = _read_rows(path)
    if not rows:
        raise BasisError(f"{path}: empty basis file")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise BasisError(f"{path}: rows have different lengths")
    return Basis(design, _floats(rows, path))


def read_matrix(path) -> np.ndarray:
    rows = _read_rows(path)
    if not rows:
        raise DataFormatError(f"{path}: no rows")
    return _floats(rows, path)


def read_singular_values(path) -> np.ndarray:
    """Whitespace- or comma-separated numbers, any layout; ``#`` starts a comment."""
    with open(path) as fh:
        text = "\n".join(line.split("#", 1)[0] for line in fh)
    tokens = text.replace(",", " ").split()
    if not tokens:
        raise DataFormatError(f"{path}: no values")
    try:
        return np.array([float(t) for t in tokens])
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def pattern_text(p) -> str:
    return " ".join(str(int(v)) for v in p)


def write_scores(me, path) -> None:
    K = me.scores.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pattern", "weight", *[f"g{k + 1}" for k in range(K)], "residual", "mode", "flags"])
        for u in range(me.patterns.shape[0]):
            w.writerow([pattern_text(me.patterns[u]), repr(float(me.weights[u])),
                        *[repr(float(v)) for v in me.scores[u]],
                        repr(float(me.residuals[u])), me.modes[u], me.flags[u]])


def read_scores(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(patterns, weights, scores)`` from a scores file."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataFormatError(f"{path}: no scores")
    gcols = [c for c in rows[0] if c.startswith("g") and c[1:].isdigit()]
    patterns = np.array([[int(t) for t in r["pattern"].split()] for r in rows], dtype=np.int64)
    weights = np.array([float(r["weight"]) for r in rows])
    scores = np.array([[float(r[c]) for c in gcols] for r in rows])
    return patterns, weights, scores


def write_histogram(edges, masses, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["left", "right", "mass"])
        for lo, hi, m in zip(edges[:-1], edges[1:], masses):
            w.writerow([repr(float(lo)), repr(float(hi)), repr(float(m))])


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
