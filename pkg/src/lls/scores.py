"""LLS scores: conditional expectations of the latent vector given answers.

Scores solve the linear relations between conditional and unconditional
moments. For a pattern with unanswered positions ``j`` the relations are

    sum_k lam[k, jl] * g_k = f(pattern + l at j) / f(pattern)

and for a complete pattern each answered position gives the approximate row

    sum_k lam[k, j l_j] * g_k = f(pattern) / f(pattern with j zeroed).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .basis import Basis
from .dataset import PatternCounter, format_pattern, unique_patterns
from .moments import MixingModel
from .qp import QPError, QuadraticProgram, solve_qp

logger = logging.getLogger(__name__)

NONNEG_TOL = 1e-8


class ZeroProbabilityPattern(ValueError):
    pass


class InsufficientData(ValueError):
    pass


def bayes_score(model: MixingModel, pattern) -> np.ndarray:
    """Exact ``E(G | X = pattern)`` under a known mixing distribution."""
    design = model.basis.design
    p = design.validate_pattern(pattern)
    support = np.flatnonzero(p)
    cells = design.offsets[support] + p[support] - 1
    pts, w = model.quadrature(len(cells) + 1)
    beta = pts @ model.basis.vectors[:, cells]
    like = w * np.prod(beta, axis=1)
    total = like.sum()
    if total <= 0:
        raise ZeroProbabilityPattern(f"pattern {format_pattern(p)} has zero probability")
    return like @ pts / total


@dataclass
class ScoreResult:
    g: np.ndarray
    residual: float
    mode: str
    n_rows: int
    system: str
    flags: list[str] = field(default_factory=list)


def _score_rows(source, basis: Basis, p: np.ndarray, min_eligible: float):
    """Design matrix and right-hand side of the score system for ``p``."""
    design = basis.design
    lam = basis.vectors
    zeros = np.flatnonzero(p == 0)
    support = np.flatnonzero(p)
    if zeros.size:
        f, avail = source.frequency(p)
        matched = f * avail
        if f > 0 and (support.size == 0 or matched >= min_eligible):
            ext_f, ext_avail = source.extension_frequencies(p)
            cells = np.flatnonzero(np.isin(design.question_of_cell, zeros))
            ok = (ext_avail[cells] >= min_eligible) & np.isfinite(ext_f[cells])
            cells = cells[ok]
            return lam[:, cells].T, ext_f[cells] / f, "exact"
    # complete pattern, or too few records share the observed part:
    # one approximate row per answered question
    f, _ = source.frequency(p)
    del_f, del_avail = source.deletion_frequencies(p)
    ok = (del_avail[support] >= min_eligible) & (del_f[support] > 0)
    js = support[ok]
    cells = design.offsets[js] + p[js] - 1
    return lam[:, cells].T, f / del_f[js], "approximate"


def _solve_svd(R: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Least squares with ``sum(g) = 1`` by eliminating the last coordinate."""
    K = R.shape[1]
    if K == 1:
        return np.ones(1)
    reduced = R[:, :-1] - R[:, -1:]
    rhs = r - R[:, -1]
    head, *_ = np.linalg.lstsq(reduced, rhs, rcond=None)
    return np.append(head, 1 - head.sum())


def _solve_qp(R: np.ndarray, r: np.ndarray, basis: Basis, tol: float) -> np.ndarray:
    K = basis.K
    prob = QuadraticProgram.least_squares(R, r, A=np.ones((1, K)), b=[1.0],
                                          G=basis.vectors.T, h=np.zeros(basis.design.n_cells))
    x0 = np.full(K, 1.0 / K)
    if (basis.vectors.T @ x0).min() < 0:
        x0 = None
    return solve_qp(prob, x0, tol=tol).x


def estimate_score(source, basis: Basis, pattern, *, mode: str = "qp",
                   min_eligible: float = 5, complete_method: str = "joint",
                   tol: float = 1e-9) -> ScoreResult:
    """Estimate the LLS score of one response pattern.

    ``source`` supplies pattern frequencies (a :class:`PatternCounter` over
    records, or :class:`~lls.moments.ExactMoments`). ``mode="qp"`` enforces
    nonnegative mixed probabilities; ``mode="svd"`` solves the equality-only
    problem in closed form. ``complete_method="mean"`` averages per-question
    solutions for complete patterns instead of solving them jointly.
    """
    if mode not in ("qp", "svd"):
        raise ValueError(f"unknown mode {mode!r}")
    design = basis.design
    p = design.validate_pattern(pattern)
    K = basis.K
    flags: list[str] = []
    if K == 1:
        return ScoreResult(np.ones(1), 0.0, mode, 0, "trivial")

    if complete_method == "mean" and (p != 0).all():
        return _mean_of_solutions(source, basis, p, mode, min_eligible)

    R, r, system = _score_rows(source, basis, p, min_eligible)
    if R.shape[0] == 0:
        raise InsufficientData(f"no usable equations for pattern {format_pattern(p)}")
    used = mode
    if mode == "qp":
        try:
            g = _solve_qp(R, r, basis, tol)
        except QPError as exc:
            logger.warning("score QP failed for %s (%s); using svd", format_pattern(p), exc)
            flags.append("qp_fallback")
            g = _solve_svd(R, r)
            used = "svd"
    else:
        g = _solve_svd(R, r)
    if (g @ basis.vectors).min() < -NONNEG_TOL:
        flags.append("negative_probability")
    resid = float(np.linalg.norm(R @ g - r))
    return ScoreResult(g, resid, used, R.shape[0], system, flags)


def _mean_of_solutions(source, basis, p, mode, min_eligible):
    design = basis.design
    sols = []
    for j in range(design.n_questions):
        q = p.copy()
        q[j] = 0
        f, avail = source.frequency(q)
        if f <= 0:
            continue
        ext_f, ext_avail = source.extension_frequencies(q)
        cells = np.arange(design.block(j).start, design.block(j).stop)
        ok = (ext_avail[cells] >= min_eligible) & np.isfinite(ext_f[cells])
        if not ok.any():
            continue
        R = basis.vectors[:, cells[ok]].T
        sols.append(_solve_svd(R, ext_f[cells[ok]] / f))
    if not sols:
        raise InsufficientData(f"no usable equations for pattern {format_pattern(p)}")
    g = np.mean(sols, axis=0)
    return ScoreResult(g, float("nan"), "svd", len(sols), "mean")


@dataclass
class MixingEstimate:
    """Empirical mixing distribution: one score per distinct observed pattern."""

    patterns: np.ndarray
    scores: np.ndarray
    weights: np.ndarray
    residuals: np.ndarray
    modes: list[str]
    flags: list[str]
    basis: Basis

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.scores).all(axis=1)

    def probabilities(self) -> np.ndarray:
        """Fitted individual probability vectors, one row per pattern."""
        return self.scores @ self.basis.vectors


def estimate_all_scores(records: np.ndarray, basis: Basis, *, mode: str = "qp",
                        min_eligible: float = 5, complete_method: str = "joint",
                        source=None) -> MixingEstimate:
    """Score every distinct pattern in ``records``; failures are flagged, not raised."""
    records = np.asarray(records)
    if records.shape[0] == 0:
        raise ValueError("no records")
    if source is None:
        source = PatternCounter(records, basis.design)
    patterns, counts = unique_patterns(records)
    U, K = patterns.shape[0], basis.K
    scores = np.full((U, K), np.nan)
    residuals = np.full(U, np.nan)
    modes: list[str] = []
    flags: list[str] = []
    for u, p in enumerate(patterns):
        try:
            res = estimate_score(source, basis, p, mode=mode, min_eligible=min_eligible,
                                 complete_method=complete_method)
        except (InsufficientData, ZeroProbabilityPattern, ValueError) as exc:
            modes.append("")
            flags.append(f"error: {exc}")
            continue
        scores[u] = res.g
        residuals[u] = res.residual
        modes.append(res.mode)
        flags.append(";".join(res.flags))
    n_failed = sum(1 for f in flags if f.startswith("error"))
    if n_failed:
        logger.warning("%d of %d patterns could not be scored", n_failed, U)
    return MixingEstimate(patterns=patterns, scores=scores, weights=counts / counts.sum(),
                          residuals=residuals, modes=modes, flags=flags, basis=basis)


def model_probability(me: MixingEstimate, basis: Basis, pattern) -> float:
    """Model probability of ``pattern`` under the empirical mixing distribution."""
    design = basis.design
    p = design.validate_pattern(pattern)
    support = np.flatnonzero(p)
    cells = design.offsets[support] + p[support] - 1
    ok = me.valid
    w = me.weights[ok] / me.weights[ok].sum()
    beta = me.scores[ok] @ basis.vectors[:, cells]
    return float(w @ np.prod(beta, axis=1))


def impute_cell(g, basis: Basis, j: int) -> tuple[np.ndarray, bool]:
    """Fitted outcome probabilities of question ``j`` for score ``g``.

    Returns ``(probabilities, clipped)``; out-of-range values are clipped to
    ``[0, 1]`` and the block renormalised.
    """
    beta = np.asarray(g, dtype=float) @ basis.question_block(j)
    clipped = bool((beta < 0).any() or (beta > 1).any())
    if clipped:
        beta = np.clip(beta, 0, 1)
        beta = beta / beta.sum()
    return beta, clipped


def mixing_histogram(me: MixingEstimate, component: int = 0, bins: int = 50,
                     range: tuple[float, float] | None = None):
    """Weighted histogram of one score coordinate: ``(edges, masses)``."""
    ok = me.valid
    x = me.scores[ok, component]
    w = me.weights[ok]
    if range is None:
        lo, hi = float(np.min(x)), float(np.max(x))
        range = (lo, hi) if hi > lo else (lo - 0.5, lo + 0.5)
    masses, edges = np.histogram(x, bins=bins, range=range, weights=w)
    return edges, masses / w.sum()


def score_summary(me: MixingEstimate) -> dict:
    ok = me.valid
    return {
        "patterns": int(me.patterns.shape[0]),
        "scored": int(ok.sum()),
        "svd_fallbacks": sum(1 for f in me.flags if "qp_fallback" in f),
        "max_residual": float(np.nanmax(me.residuals)) if ok.any() else math.nan,
    }

