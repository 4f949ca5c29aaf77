"""Supporting-plane estimation.

Pipeline: computational rank of the frequency matrix, completion of the
same-question blocks, isometric rotation of every question simplex, affine
plane fit by scatter-matrix eigendecomposition, and back-rotation to a basis
whose question blocks sum to one.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .basis import Basis, BasisError, question_sums
from .dataset import SurveyDesign
from .moments import FrequencyMatrix, StdErrMatrix
from .qp import QPError, QuadraticProgram, solve_qp

logger = logging.getLogger(__name__)

ROTATION_SUM_TOL = 1e-8


class SubspaceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# rotation of each question simplex


def _rotation_coefficients(design: SurveyDesign) -> np.ndarray:
    L = np.asarray(design.levels, dtype=float)
    return (np.sqrt(L) - 1) / (L - 1)


def _rotated_layout(design: SurveyDesign):
    """Source cells (levels 2..L_j) and owning question of each rotated coordinate."""
    keep = design.level_of_cell > 1
    src = np.flatnonzero(keep)
    return src, design.question_of_cell[keep]


def rotate(points: np.ndarray, design: SurveyDesign) -> np.ndarray:
    """Map simplex-product points from ``R^|L|`` to ``R^(|L|-J)`` isometrically.

    Coordinate ``l-1`` of question ``j`` becomes
    ``x_jl - (sqrt(L_j) - 1) / (L_j - 1) * x_j1`` for ``l = 2..L_j``.
    """
    x = np.asarray(points, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    dev = np.abs(question_sums(x, design) - 1).max()
    if dev > ROTATION_SUM_TOL:
        raise ValueError(f"points violate per-question sums by {dev:.3g}")
    a = _rotation_coefficients(design)
    src, owner = _rotated_layout(design)
    first = x[:, design.offsets]
    out = x[:, src] - a[owner][None, :] * first[:, owner]
    return out[0] if single else out


def unrotate(points: np.ndarray, design: SurveyDesign) -> np.ndarray:
    """Inverse of :func:`rotate`; the result has exact per-question sums of 1."""
    y = np.asarray(points, dtype=float)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    a = _rotation_coefficients(design)
    L = np.asarray(design.levels, dtype=float)
    src, owner = _rotated_layout(design)
    J = design.n_questions
    rest = np.zeros((y.shape[0], J))
    np.add.at(rest.T, owner, y.T)
    first = (1 - rest) / np.sqrt(L)[None, :]
    x = np.empty((y.shape[0], design.n_cells))
    x[:, design.offsets] = first
    x[:, src] = y + a[owner][None, :] * first[:, owner]
    return x[0] if single else x


# ---------------------------------------------------------------------------
# plane fit


@dataclass
class PlaneFit:
    center: np.ndarray
    directions: np.ndarray
    eigenvalues: np.ndarray
    residual: float
    padded: bool = False


def fit_plane(points: np.ndarray, K: int, weights=None) -> PlaneFit:
    """Best ``(K-1)``-dimensional affine plane through ``points`` (rows).

    Minimises the (weighted) sum of squared distances: the centre of gravity
    plus the leading eigenvectors of the scatter matrix.
    """
    c = np.atleast_2d(np.asarray(points, dtype=float))
    n, m = c.shape
    if n < K:
        raise ValueError(f"need at least K={K} points, got {n}")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    center = w @ c / w.sum()
    cbar = c - center
    X = (cbar * w[:, None]).T @ cbar
    gamma, Z = np.linalg.eigh(X)
    order = np.argsort(gamma)[::-1]
    gamma, Z = gamma[order], Z[:, order]
    d = K - 1
    padded = False
    if d > 0 and gamma[d - 1] <= 1e-12 * max(gamma[0], 1e-300):
        padded = True
        warnings.warn(f"scatter matrix has fewer than {d} positive eigenvalues; plane padded",
                      RuntimeWarning, stacklevel=2)
    residual = float(np.trace(X) - gamma[:d].sum())
    return PlaneFit(center=center, directions=Z[:, :d].T, eigenvalues=gamma,
                    residual=max(residual, 0.0), padded=padded)


# ---------------------------------------------------------------------------
# distance between subspaces


def _frame(B) -> np.ndarray:
    v = B.vectors if isinstance(B, Basis) else np.atleast_2d(np.asarray(B, dtype=float))
    q, _ = np.linalg.qr(v.T)
    return q


def subspace_distance(B1, B2) -> float:
    """Sine of the largest principal angle between the spans of two bases."""
    P1, P2 = _frame(B1), _frame(B2)
    if P1.shape[0] != P2.shape[0]:
        raise ValueError("bases live in different ambient dimensions")
    if P1.shape[1] != P2.shape[1]:
        warnings.warn("comparing subspaces of different dimension via the smaller one",
                      RuntimeWarning, stacklevel=2)
    if P1.shape[1] > P2.shape[1]:
        P1, P2 = P2, P1
    # residual of the smaller frame off the larger one; avoids the
    # cancellation in sqrt(1 - cos^2) for nearly equal planes
    resid = P1 - P2 @ (P2.T @ P1)
    return min(float(np.linalg.norm(resid, 2)), 1.0)


# ---------------------------------------------------------------------------
# computational rank


@dataclass
class RankEstimate:
    K: int
    singular_values: np.ndarray
    threshold: float
    noise: float
    rows: np.ndarray
    cols: np.ndarray


def rank_from_singular_values(singular_values, threshold: float) -> int:
    return int((np.asarray(singular_values, dtype=float) > threshold).sum())


def complete_minor(fm: FrequencyMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Rows and columns of a square minor free of same-question cells.

    Questions are split alternately into two halves; rows come from one half,
    columns from the other, trimmed to a common size.
    """
    J = fm.design.n_questions
    q = fm.design.question_of_cell
    odd = np.flatnonzero(q % 2 == 0)
    even = np.flatnonzero(q % 2 == 1)
    size = min(odd.size, even.size)
    rows, cols = odd[:size], even[:size]
    if J < 2 or size < 2 or not fm.estimable[np.ix_(rows, cols)].all():
        raise SubspaceError("frequency matrix has no complete minor of size >= 2")
    return rows, cols


def estimate_rank(fm: FrequencyMatrix, se: StdErrMatrix | None = None,
                  multiplier: float = 2.0) -> RankEstimate:
    """Number of singular values of a complete minor above the noise level.

    The noise level is the quadratic sum of the cell standard errors in the
    minor (Wilson half-width over ``z``); the threshold is ``multiplier``
    times that, two by default.
    """
    rows, cols = complete_minor(fm)
    minor = fm.second[np.ix_(rows, cols)]
    s = np.linalg.svd(minor, compute_uv=False)
    if se is None:
        noise = 0.0
    else:
        noise = float(np.sqrt(np.sum(se.second_se[np.ix_(rows, cols)] ** 2)))
    threshold = multiplier * noise
    if threshold <= 0:
        threshold = 1e-9 * s[0]
    return RankEstimate(K=rank_from_singular_values(s, threshold), singular_values=s,
                        threshold=threshold, noise=noise, rows=rows, cols=cols)


# ---------------------------------------------------------------------------
# completion of same-question blocks


@dataclass
class _Completion:
    block: np.ndarray
    residual: float | None
    fallback: bool


def _complete_question(fm: FrequencyMatrix, basis: Basis, j: int, tol: float) -> _Completion:
    design = fm.design
    blk = design.block(j)
    cells = np.arange(blk.start, blk.stop)
    L = cells.size
    K = basis.K
    lam = basis.vectors                     # (K, |L|)
    lam_j = lam[:, blk]                     # (K, L)
    f_j = fm.first[blk]
    others = np.flatnonzero(design.question_of_cell != j)

    # least-squares blocks: column l of question j expanded over the basis
    R_blocks, r_parts = [], []
    for l, c in enumerate(cells):
        rows = others[fm.estimable[others, c]]
        R_blocks.append(lam[:, rows].T)
        r_parts.append(fm.second[rows, c])
    n = L * K
    R = np.zeros((sum(b.shape[0] for b in R_blocks), n))
    at = 0
    for l, blockR in enumerate(R_blocks):
        R[at:at + blockR.shape[0], l * K:(l + 1) * K] = blockR
        at += blockR.shape[0]
    r = np.concatenate(r_parts)

    # sum of coefficients equals the first-order moment of the column
    A = [np.kron(np.eye(L)[l], np.ones(K)) for l in range(L)]
    b = list(f_j)
    # symmetry: B[l', l] == B[l, l']
    for l in range(L):
        for lp in range(l + 1, L):
            row = np.zeros(n)
            row[l * K:(l + 1) * K] += lam_j[:, lp]
            row[lp * K:(lp + 1) * K] -= lam_j[:, l]
            A.append(row)
            b.append(0.0)
    A = np.array(A)
    b = np.array(b)
    # nonnegativity of every entry B[l', l] = sum_k C[l]_k lam_j[k, l']
    G = np.zeros((L * L, n))
    for l in range(L):
        for lp in range(L):
            G[l * L + lp, l * K:(l + 1) * K] = lam_j[:, lp]
    h = np.zeros(L * L)

    def block_from(x):
        C = x.reshape(L, K)                 # C[l] coefficients of column l
        return (C @ lam_j).T                # B[l', l]

    prob = QuadraticProgram.least_squares(R, r, A, b, G, h)
    # equality-constrained optimum as a warm start when it is feasible
    x0 = None
    kkt = np.block([[prob.Q, A.T], [A, np.zeros((A.shape[0], A.shape[0]))]])
    sol, *_ = np.linalg.lstsq(kkt, np.concatenate([-prob.c, b]), rcond=None)
    cand = sol[:n]
    if np.abs(A @ cand - b).max() <= 1e-10 and (G @ cand).min() >= 0:
        x0 = cand
    try:
        res = solve_qp(prob, x0, tol=tol)
        Bj = block_from(res.x)
        Bj = 0.5 * (Bj + Bj.T)
        return _Completion(np.clip(Bj, 0, None), res.kkt_residual, False)
    except QPError as exc:
        logger.warning("completion QP failed for question %d (%s); using least squares", j + 1, exc)
        C, *_ = np.linalg.lstsq(R, r, rcond=None)
        Bj = block_from(C)
        Bj = np.clip(0.5 * (Bj + Bj.T), 0, None)
        return _Completion(Bj, None, True)


def complete_matrix(fm: FrequencyMatrix, basis: Basis, *, tol: float = 1e-9) -> FrequencyMatrix:
    """Fill same-question blocks so every column lies near the span of ``basis``.

    For each question the coefficients of its columns over the basis are
    fitted to the observed cells, subject to a symmetric, nonnegative block
    whose columns sum to the first-order frequencies.
    """
    if basis.design != fm.design:
        raise ValueError("basis and frequency matrix use different designs")
    design = fm.design
    second = fm.second.copy()
    fallback = []
    residuals = []
    for j in range(design.n_questions):
        blk = design.block(j)
        if fm.estimable[blk, blk].all():
            continue
        comp = _complete_question(fm, basis, j, tol)
        missing = ~fm.estimable[blk, blk]
        sub = second[blk, blk]
        sub[missing] = comp.block[missing]
        second[blk, blk] = sub
        if comp.fallback:
            fallback.append(j + 1)
        else:
            residuals.append(comp.residual)
    estimable = fm.estimable.copy()
    q = design.question_of_cell
    estimable[q[:, None] == q[None, :]] = True
    return fm.with_second(
        second, estimable,
        completion_fallback=fallback,
        completion_kkt_max=max(residuals) if residuals else 0.0,
    )


def initial_completion(fm: FrequencyMatrix, method: str = "product") -> FrequencyMatrix:
    """Starting values for same-question blocks: ``f_jl f_jl'`` or ``diag(f_j)``."""
    design = fm.design
    second = fm.second.copy()
    for j in range(design.n_questions):
        blk = design.block(j)
        f = fm.first[blk]
        if method == "product":
            B = np.outer(f, f)
        elif method == "identity":
            B = np.diag(f)
        else:
            raise ValueError(f"unknown initial completion {method!r}")
        sub = second[blk, blk]
        miss = ~fm.estimable[blk, blk]
        sub[miss] = B[miss]
        second[blk, blk] = sub
    estimable = fm.estimable.copy()
    q = design.question_of_cell
    estimable[q[:, None] == q[None, :]] = True
    return fm.with_second(second, estimable)


# ---------------------------------------------------------------------------
# iterative subspace search


def plane_columns(fm: FrequencyMatrix) -> tuple[np.ndarray, np.ndarray]:
    """First-order column plus every fully-filled second-order column.

    Second-order columns are scaled within each question block to sum to one,
    which places them in the product of simplices. Returns ``(columns, used)``.
    """
    design = fm.design
    cols = [fm.first / np.repeat(question_sums(fm.first, design)[0], design.levels)]
    used = []
    for c in range(design.n_cells):
        col = fm.second[:, c]
        if not fm.estimable[:, c].all() or fm.first[c] <= 0:
            continue
        sums = question_sums(col, design)[0]
        if (sums <= 0).any():
            continue
        cols.append(col / np.repeat(sums, design.levels))
        used.append(c)
    return np.array(cols), np.array(used, dtype=int)


def basis_from_plane(plane: PlaneFit, design: SurveyDesign) -> Basis:
    affine = np.vstack([plane.center, plane.center[None, :] + plane.directions])
    vectors = unrotate(affine, design)
    try:
        return Basis(design, vectors)
    except BasisError as exc:
        raise SubspaceError(f"plane does not yield an independent basis: {exc}") from exc


@dataclass
class SubspaceFit:
    basis: Basis
    completed: FrequencyMatrix
    plane: PlaneFit
    iterations: int
    distances: list[float] = field(default_factory=list)
    completion_kkt: list[float] = field(default_factory=list)
    fallback_questions: list[int] = field(default_factory=list)


def find_subspace(fm: FrequencyMatrix, K: int, *, n_iter: int = 5, tol: float = 1e-6,
                  init: str = "product") -> SubspaceFit:
    """Alternate completion and plane fitting to estimate a ``K``-dimensional basis.

    Stops after ``n_iter`` plane fits or once two successive bases are closer
    than ``tol`` in subspace distance.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    design = fm.design
    if K > design.n_cells - design.n_questions + 1:
        raise ValueError(f"K={K} exceeds the dimension of the probability space")
    current = initial_completion(fm, init) if not fm.complete else fm
    basis = None
    distances: list[float] = []
    kkt: list[float] = []
    fallback: list[int] = []
    plane = None
    it = 0
    for it in range(1, n_iter + 1):
        cols, _ = plane_columns(current)
        if cols.shape[0] < K:
            raise SubspaceError(f"only {cols.shape[0]} usable columns for K={K}")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            plane = fit_plane(rotate(cols, design), K)
        if plane.padded:
            raise SubspaceError(
                f"rank collapse: scatter eigenvalues {plane.eigenvalues[:K].tolist()} for K={K}"
            )
        new = basis_from_plane(plane, design)
        if basis is not None:
            d = subspace_distance(basis, new)
            distances.append(d)
            logger.debug("iteration %d: subspace moved by %.3g", it, d)
        basis = new
        if fm.complete or (distances and distances[-1] < tol):
            break
        if it < n_iter:
            current = complete_matrix(fm, basis)
            kkt.append(current.meta.get("completion_kkt_max", 0.0))
            fallback.extend(current.meta.get("completion_fallback", []))
    if basis.min_entry < -1e-12:
        logger.info("fitted basis has negative entries (min %.3g)", basis.min_entry)
    return SubspaceFit(basis=basis, completed=current, plane=plane, iterations=it,
                       distances=distances, completion_kkt=kkt,
                       fallback_questions=sorted(set(fallback)))
