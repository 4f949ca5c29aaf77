"""Choosing an interpretable basis inside a fitted plane."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import Basis, BasisError, question_sums
from .cluster import ClusterError, hierarchical, kmeans
from .dataset import SurveyDesign
from .qp import QuadraticProgram, solve_qp
from .subspace import subspace_distance

SPAN_TOL = 1e-6


class PureTypeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PureTypeSpec:
    """Probability vector of an ideal respondent, one entry per answer cell."""

    design: SurveyDesign
    target: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.target, dtype=float)
        if t.shape != (self.design.n_cells,):
            raise PureTypeError(f"pure type has {t.size} entries, design has {self.design.n_cells} cells")
        if t.min() < 0 or t.max() > 1:
            raise PureTypeError("pure-type probabilities must lie in [0, 1]")
        dev = np.abs(question_sums(t, self.design)[0] - 1)
        if dev.max() > 1e-9:
            j = int(np.argmax(dev))
            raise PureTypeError(f"pure-type probabilities for question {j + 1} sum to {1 + dev[j]:.6g}, not 1")
        object.__setattr__(self, "target", t)


def project_pure_type(spec, basis: Basis, *, tol: float = 1e-10) -> np.ndarray:
    """Score whose probability vector is closest to the pure type.

    Minimises ``||g @ basis.vectors - target||^2`` over ``sum(g) = 1`` with all
    resulting probabilities nonnegative.
    """
    if not isinstance(spec, PureTypeSpec):
        spec = PureTypeSpec(basis.design, spec)
    K = basis.K
    lam_t = basis.vectors.T
    prob = QuadraticProgram.least_squares(lam_t, spec.target, A=np.ones((1, K)), b=[1.0],
                                          G=lam_t, h=np.zeros(lam_t.shape[0]))
    x0 = np.full(K, 1.0 / K)
    if (lam_t @ x0).min() < 0:
        x0 = None
    return solve_qp(prob, x0, tol=tol).x


def plane_coordinates(scores, basis: Basis) -> np.ndarray:
    """Orthonormal in-plane coordinates of ``scores @ basis.vectors``.

    Euclidean distances between these points equal distances between the
    probability vectors, so they do not depend on which basis is used.
    """
    q, _ = np.linalg.qr(basis.vectors.T)
    return np.atleast_2d(scores) @ (basis.vectors @ q)


def cluster_mean_basis(me, basis: Basis, K: int, *, method: str = "hier",
                       linkage: str = "centroid", seed: int = 0) -> Basis:
    """Basis of cluster-mean probability vectors from an empirical mixing distribution."""
    ok = me.valid
    g = me.scores[ok]
    w = me.weights[ok]
    if g.shape[0] < K:
        raise ClusterError(f"only {g.shape[0]} scored patterns for {K} clusters; request fewer clusters")
    pts = plane_coordinates(g, basis)
    if method == "kmeans":
        res = kmeans(pts, K, weights=w, seed=seed)
    elif method == "hier":
        res = hierarchical(pts, K, linkage=linkage, weights=w)
    else:
        raise ValueError(f"unknown clustering method {method!r}")
    beta = g @ basis.vectors
    vectors = []
    for c in range(K):
        m = res.assignments == c
        if not m.any() or w[m].sum() <= 0:
            raise ClusterError(f"cluster {c + 1} is empty; request fewer clusters")
        vectors.append(w[m] @ beta[m] / w[m].sum())
    try:
        return Basis(basis.design, np.array(vectors))
    except BasisError as exc:
        raise ClusterError(f"cluster means do not form a basis ({exc}); request fewer clusters") from exc


def rebase(g, old: Basis, new: Basis, *, tol: float = SPAN_TOL) -> np.ndarray:
    """Express scores given in ``old`` coordinates in ``new`` coordinates."""
    d = subspace_distance(old, new)
    if old.K != new.K or d > tol:
        raise BasisError(f"bases span different subspaces (distance {d:.3g})")
    g = np.asarray(g, dtype=float)
    beta = np.atleast_2d(g) @ old.vectors
    # per-question sums already force sum(g') = sum(g)
    sol, *_ = np.linalg.lstsq(new.vectors.T, beta.T, rcond=None)
    return sol.T.reshape(g.shape)
