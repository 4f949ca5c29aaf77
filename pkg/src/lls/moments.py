"""Frequency (moment) matrix of orders 0-2, Wilson errors, and exact moments.

The frequency matrix keeps the first-order column ``M_jl`` and the square
second-order block ``M_{jl;j'l'}``. Cells pairing two outcomes of the same
question cannot be observed and are carried as inestimable (``"?"`` on disk).
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtri

from .basis import Basis
from .dataset import MISSING, PatternCounter, SurveyDesign

logger = logging.getLogger(__name__)

ZERO_TOL = 1e-9


class EmptyQuestionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FrequencyMatrix:
    design: SurveyDesign
    first: np.ndarray
    second: np.ndarray
    estimable: np.ndarray
    first_available: np.ndarray
    second_available: np.ndarray
    n_records: int = 0
    renormalized: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def n_cells(self) -> int:
        return self.design.n_cells

    @property
    def complete(self) -> bool:
        return bool(self.estimable.all())

    def second_masked(self) -> np.ndarray:
        """Second-order block with ``nan`` in inestimable cells."""
        return np.where(self.estimable, self.second, np.nan)

    def with_second(self, second: np.ndarray, estimable: np.ndarray | None = None, **meta) -> "FrequencyMatrix":
        if estimable is None:
            estimable = np.ones_like(self.estimable)
        return replace(self, second=second, estimable=estimable, meta={**self.meta, **meta})

    def column(self, cell: int) -> np.ndarray:
        return self.second[:, cell]


@dataclass(frozen=True, eq=False)
class StdErrMatrix:
    """Wilson half-widths for every cell of a :class:`FrequencyMatrix`.

    ``z`` is the normal quantile used; ``half / z`` is the matching standard
    error of each cell.
    """

    first: np.ndarray
    second: np.ndarray
    alpha: float
    z: float

    @property
    def first_se(self) -> np.ndarray:
        return self.first / self.z

    @property
    def second_se(self) -> np.ndarray:
        return self.second / self.z


def z_quantile(alpha: float) -> float:
    return float(ndtri(1.0 - alpha / 2.0))


def wilson_halfwidth(f, n, alpha: float = 0.05):
    """Half-width of the Wilson interval; 0.5 where ``n == 0``."""
    f = np.asarray(f, dtype=float)
    n = np.asarray(n, dtype=float)
    z = z_quantile(alpha)
    z2 = z * z
    with np.errstate(invalid="ignore", divide="ignore"):
        half = z * np.sqrt(n) / (n + z2) * np.sqrt(np.clip(f * (1 - f), 0, None) + z2 / (4 * n))
    return np.where(n > 0, half, 0.5)


def wilson_interval(f, n, alpha: float = 0.05):
    """Wilson score interval for a frequency ``f`` observed over ``n`` trials.

    Works elementwise on arrays. The interval is clipped to ``[0, 1]``;
    ``n == 0`` gives the degenerate interval ``[0, 1]``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    f = np.asarray(f, dtype=float)
    n = np.asarray(n, dtype=float)
    if np.any((f < 0) | (f > 1)):
        raise ValueError("frequencies must lie in [0, 1]")
    z2 = z_quantile(alpha) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        center = (n * f + z2 / 2) / (n + z2)
    half = wilson_halfwidth(f, n, alpha)
    lower = np.where(n > 0, np.maximum(center - half, 0.0), 0.0)
    upper = np.where(n > 0, np.minimum(center + half, 1.0), 1.0)
    if lower.ndim == 0:
        return float(lower), float(upper)
    return lower, upper


def _same_question(design: SurveyDesign) -> np.ndarray:
    q = design.question_of_cell
    return q[:, None] == q[None, :]


def _rake_pairs(second: np.ndarray, first: np.ndarray, design: SurveyDesign,
                estimable: np.ndarray, max_iter: int = 200, tol: float = 1e-13) -> np.ndarray:
    """Iterative proportional fitting of every question-pair block.

    Each block ``(j, j')`` is rescaled until its row sums equal ``M_jl`` and
    its column sums equal ``M_j'l'``; the fixed point is symmetric.
    """
    S = np.where(estimable, second, 0.0)
    offsets = design.offsets
    q = design.question_of_cell
    for _ in range(max_iter):
        rows = np.add.reduceat(S, offsets, axis=1)           # (|L|, J)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(rows > 0, first[:, None] / rows, 1.0)
        S = S * scale[:, q]
        cols = np.add.reduceat(S, offsets, axis=0)           # (J, |L|)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(cols > 0, first[None, :] / cols, 1.0)
        S = S * scale[q, :]
        rows = np.add.reduceat(S, offsets, axis=1)
        live = (rows > 0) & np.add.reduceat(estimable, offsets, axis=1).astype(bool)
        err = np.abs(rows - first[:, None])[live].max(initial=0.0)
        if err < tol:
            break
    S = 0.5 * (S + S.T)
    return np.where(estimable, S, second)


def build_frequency_matrix(
    records: np.ndarray,
    design: SurveyDesign,
    *,
    alpha: float = 0.05,
    renormalize: bool = True,
) -> tuple[FrequencyMatrix, StdErrMatrix]:
    """Estimate first- and second-order moments from records.

    Each cell uses the records that answered every question involved, so
    missing answers shrink denominators instead of counting as mismatches.
    With missing data and ``renormalize`` set, question-pair blocks are raked
    so that second-order sums reproduce first-order frequencies.
    """
    records = np.asarray(records)
    if records.shape[0] == 0:
        raise ValueError("no records")
    counter = PatternCounter(records, design)
    Y = counter.one_hot.astype(float)
    O = counter.observed_cells.astype(float)

    answered = counter.observed.sum(axis=0)
    if (answered == 0).any():
        j = int(np.flatnonzero(answered == 0)[0])
        raise EmptyQuestionError(f"question {j + 1} has no observed answers")

    first_count = Y.sum(axis=0)
    first_avail = O.sum(axis=0)
    first = first_count / first_avail

    second_count = Y.T @ Y
    second_avail = O.T @ O
    estimable = ~_same_question(design) & (second_avail > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        second = np.where(estimable, second_count / np.where(second_avail > 0, second_avail, 1), np.nan)

    has_missing = bool((records == MISSING).any())
    renormalized = False
    if renormalize and has_missing:
        second = _rake_pairs(second, first, design, estimable)
        renormalized = True
        logger.info("renormalized second-order blocks for missing data")

    fm = FrequencyMatrix(
        design=design,
        first=first,
        second=second,
        estimable=estimable,
        first_available=first_avail,
        second_available=second_avail,
        n_records=records.shape[0],
        renormalized=renormalized,
    )
    se = StdErrMatrix(
        first=wilson_halfwidth(first, first_avail, alpha),
        second=np.where(estimable, wilson_halfwidth(np.nan_to_num(second), second_avail, alpha), np.nan),
        alpha=alpha,
        z=z_quantile(alpha),
    )
    return fm, se


# ---------------------------------------------------------------------------
# exact moments of a known mixing distribution


@dataclass(frozen=True, eq=False)
class MixingModel:
    """Mixing distribution supported on the plane spanned by ``basis``.

    Either a discrete set of score points with weights, or (``segment``) the
    uniform distribution on the segment between two score points.
    """

    basis: Basis
    points: np.ndarray
    weights: np.ndarray | None = None
    segment: bool = False

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[1] != self.basis.K:
            raise ValueError(f"score points must have {self.basis.K} coordinates")
        if np.abs(pts.sum(axis=1) - 1).max() > 1e-12:
            raise ValueError("score points must sum to 1")
        if self.segment:
            if pts.shape[0] != 2:
                raise ValueError("a segment needs exactly two endpoints")
            w = None
        else:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0]) if self.weights is None else np.asarray(self.weights, float)
            if w.shape != (pts.shape[0],) or (w < 0).any() or abs(w.sum() - 1) > 1e-12:
                raise ValueError("weights must be nonnegative and sum to 1")
        beta = pts @ self.basis.vectors
        if beta.min() < -1e-12:
            raise ValueError(f"support point gives negative probability {beta.min():.3g}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform_segment(cls, basis: Basis, start, end) -> "MixingModel":
        return cls(basis, np.vstack([start, end]), segment=True)

    def quadrature(self, order: int) -> tuple[np.ndarray, np.ndarray]:
        """Support points and weights integrating degree-``order`` polynomials exactly."""
        if not self.segment:
            return self.points, self.weights
        n = max(1, math.ceil((order + 1) / 2))
        t, w = np.polynomial.legendre.leggauss(n)
        t = (t + 1) / 2
        a, b = self.points
        return a[None, :] + t[:, None] * (b - a)[None, :], w / 2


def _support_cells(design: SurveyDesign, pattern) -> np.ndarray:
    p = design.validate_pattern(pattern)
    support = np.flatnonzero(p)
    return design.offsets[support] + p[support] - 1


def exact_moment(model: MixingModel, pattern) -> float:
    """Moment ``M_l = E prod_{j: l_j != 0} beta_{j l_j}`` under ``model``."""
    cells = _support_cells(model.basis.design, pattern)
    pts, w = model.quadrature(len(cells))
    beta = pts @ model.basis.vectors[:, cells]
    return float(w @ np.prod(beta, axis=1))


def exact_frequency_matrix(model: MixingModel) -> FrequencyMatrix:
    """All order <= 2 moments, same-question cells included."""
    design = model.basis.design
    pts, w = model.quadrature(2)
    beta = pts @ model.basis.vectors
    first = w @ beta
    second = (beta * w[:, None]).T @ beta
    n = design.n_cells
    inf = np.full(n, np.inf)
    return FrequencyMatrix(
        design=design,
        first=first,
        second=second,
        estimable=np.ones((n, n), dtype=bool),
        first_available=inf,
        second_available=np.full((n, n), np.inf),
        meta={"exact": True},
    )


class ExactMoments:
    """Frequency source backed by a known mixing model (infinite sample)."""

    def __init__(self, model: MixingModel):
        self.model = model
        self.design = model.basis.design

    def frequency(self, pattern) -> tuple[float, float]:
        return exact_moment(self.model, pattern), math.inf

    def extension_frequencies(self, pattern):
        p = self.design.validate_pattern(pattern)
        n = self.design.n_cells
        freq = np.full(n, np.nan)
        avail = np.zeros(n)
        for j in np.flatnonzero(p == 0):
            for level in range(1, self.design.levels[j] + 1):
                q = p.copy()
                q[j] = level
                c = self.design.cell(j, level)
                freq[c] = exact_moment(self.model, q)
                avail[c] = math.inf
        return freq, avail

    def deletion_frequencies(self, pattern):
        p = self.design.validate_pattern(pattern)
        J = self.design.n_questions
        freq = np.full(J, np.nan)
        avail = np.zeros(J)
        for j in np.flatnonzero(p):
            q = p.copy()
            q[j] = 0
            freq[j] = exact_moment(self.model, q)
            avail[j] = math.inf
        return freq, avail


def numerical_rank(matrix: np.ndarray, tol: float = ZERO_TOL) -> int:
    s = np.linalg.svd(np.asarray(matrix, float), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int((s > tol * s[0]).sum())


# ---------------------------------------------------------------------------
# on-disk format: CSV with "?" for inestimable cells, JSON sidecar


def write_frequency_matrix(fm: FrequencyMatrix, path: str | os.PathLike) -> None:
    """First column holds ``M_jl``; the remaining ``|L|`` columns the second-order block."""
    path = os.fspath(path)
    with open(path, "w") as fh:
        for i in range(fm.n_cells):
            cells = [repr(float(fm.first[i]))]
            for k in range(fm.n_cells):
                cells.append(repr(float(fm.second[i, k])) if fm.estimable[i, k] else "?")
            fh.write(",".join(cells) + "\n")
    meta = {
        "levels": list(fm.design.levels),
        "n_records": int(fm.n_records),
        "renormalized": bool(fm.renormalized),
        "complete": fm.complete,
        **{k: v for k, v in fm.meta.items() if isinstance(v, (int, float, str, bool, list))},
    }
    with open(path + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def read_frequency_matrix(path: str | os.PathLike) -> FrequencyMatrix:
    path = os.fspath(path)
    with open(path + ".json") as fh:
        meta = json.load(fh)
    design = SurveyDesign(tuple(meta["levels"]))
    n = design.n_cells
    first = np.empty(n)
    second = np.full((n, n), np.nan)
    estimable = np.zeros((n, n), dtype=bool)
    with open(path) as fh:
        rows = [line.strip().split(",") for line in fh if line.strip()]
    if len(rows) != n or any(len(r) != n + 1 for r in rows):
        raise ValueError(f"matrix file does not match {n} cells")
    for i, row in enumerate(rows):
        first[i] = float(row[0])
        for k, tok in enumerate(row[1:]):
            if tok != "?":
                second[i, k] = float(tok)
                estimable[i, k] = True
    return FrequencyMatrix(
        design=design, first=first, second=second, estimable=estimable,
        first_available=np.full(n, np.nan), second_available=np.full((n, n), np.nan),
        n_records=int(meta.get("n_records", 0)), renormalized=bool(meta.get("renormalized", False)),
    )
