"""Weighted k-means and agglomerative clustering of score vectors.

Points are usually distinct response patterns weighted by their frequency,
so every routine accepts per-point weights.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

LINKAGES = ("centroid", "single", "complete")


class ClusterError(ValueError):
    pass


@dataclass
class ClusterResult:
    assignments: np.ndarray
    centers: np.ndarray
    linkage: str | None = None
    objective: float | None = None
    iterations: int = 0

    @property
    def n_clusters(self) -> int:
        return self.centers.shape[0]


def _weights(w, n):
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if w.shape != (n,) or (w < 0).any() or w.sum() <= 0:
        raise ClusterError("weights must be nonnegative with positive sum")
    return w


def _sq_dist(X, C):
    return cdist(X, C, "sqeuclidean")


def _centers(X, w, labels, k):
    C = np.zeros((k, X.shape[1]))
    for c in range(k):
        m = labels == c
        C[c] = w[m] @ X[m] / w[m].sum()
    return C


def within_ss(X, w, labels, C) -> float:
    return float(w @ ((X - C[labels]) ** 2).sum(axis=1))


def kmeans(points, k: int, weights=None, seed: int = 0, max_iter: int = 300) -> ClusterResult:
    """Lloyd iterations from farthest-point seeding.

    The first centre is drawn (weight-proportionally, from ``seed``) among the
    points; each further centre is the point farthest from those chosen.
    Ties go to the lowest index.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    n = X.shape[0]
    w = _weights(weights, n)
    distinct = np.unique(X, axis=0).shape[0]
    if k < 1 or k > distinct:
        raise ClusterError(f"cannot form {k} clusters from {distinct} distinct points")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.choice(n, p=w / w.sum()))]
    dmin = _sq_dist(X, X[chosen]).min(axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(dmin))
        chosen.append(nxt)
        dmin = np.minimum(dmin, _sq_dist(X, X[[nxt]])[:, 0])
    C = X[chosen].copy()
    labels = np.argmin(_sq_dist(X, C), axis=1)
    it = 0
    for it in range(1, max_iter + 1):
        # keep clusters nonempty: an empty one takes the worst-served point
        for c in range(k):
            if not (labels == c).any():
                far = int(np.argmax(((X - C[labels]) ** 2).sum(axis=1) * (w > 0)))
                labels[far] = c
        C = _centers(X, w, labels, k)
        new = np.argmin(_sq_dist(X, C), axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
    return ClusterResult(labels, C, None, within_ss(X, w, labels, C), it)


def hierarchical(points, k: int | None = None, *, threshold: float | None = None,
                 linkage: str = "centroid", weights=None) -> ClusterResult:
    """Agglomerative clustering down to ``k`` clusters (or until the closest
    pair is farther apart than ``threshold``).

    ``centroid`` measures the distance between weighted centres of mass,
    ``single`` between the closest members, ``complete`` between the most
    distant members. Ties merge the lowest-index pair.
    """
    if linkage not in LINKAGES:
        raise ClusterError(f"unknown linkage {linkage!r}")
    X = np.atleast_2d(np.asarray(points, dtype=float))
    n = X.shape[0]
    w = _weights(weights, n)
    if k is None and threshold is None:
        raise ClusterError("give a cluster count or a distance threshold")
    target = 1 if k is None else k
    if n < 1 or target < 1:
        raise ClusterError("need at least one point and one cluster")
    target = min(target, n)

    # squared Euclidean for centroid (Lance-Williams), plain Euclidean otherwise
    D = _sq_dist(X, X)
    if linkage != "centroid":
        D = np.sqrt(D)
    np.fill_diagonal(D, np.inf)
    alive = np.ones(n, dtype=bool)
    size = w.copy()
    label = np.arange(n)
    nn = np.argmin(D, axis=1)
    nd = D[np.arange(n), nn]
    n_alive = n
    while n_alive > target:
        cand = np.where(alive, nd, np.inf)
        a = int(np.argmin(cand))
        b = int(nn[a])
        dist = cand[a]
        if threshold is not None and (np.sqrt(dist) if linkage == "centroid" else dist) > threshold:
            break
        i, j = min(a, b), max(a, b)
        if linkage == "single":
            new = np.minimum(D[i], D[j])
        elif linkage == "complete":
            new = np.maximum(D[i], D[j])
        else:
            wi, wj = size[i], size[j]
            tot = wi + wj
            new = (wi * D[i] + wj * D[j]) / tot - wi * wj * D[i, j] / tot ** 2
        D[i, :] = new
        D[:, i] = new
        D[i, i] = np.inf
        D[j, :] = np.inf
        D[:, j] = np.inf
        alive[j] = False
        size[i] += size[j]
        label[label == j] = i
        n_alive -= 1
        # refresh nearest neighbours touched by the merge
        stale = alive & ((nn == i) | (nn == j))
        stale[i] = True
        for r in np.flatnonzero(stale):
            nn[r] = int(np.argmin(D[r]))
            nd[r] = D[r, nn[r]]
        closer = alive & (new < nd)
        closer[i] = False
        nn[closer] = i
        nd[closer] = new[closer]
        # lowest-index tie-break among equal candidates
        tie = alive & (new == nd) & (nn > i)
        tie[i] = False
        nn[tie] = i
    roots = np.unique(label)
    remap = {r: c for c, r in enumerate(roots)}
    assignments = np.array([remap[v] for v in label])
    C = _centers(X, w, assignments, roots.size)
    return ClusterResult(assignments, C, linkage, within_ss(X, w, assignments, C))


def misclassification_rate(assignments, truth, weights=None) -> float:
    """Smallest weighted fraction of disagreeing labels over label matchings.

    Matching is exhaustive over permutations when both label sets have at most
    8 elements, and by the assignment algorithm otherwise.
    """
    a = np.asarray(assignments)
    t = np.asarray(truth)
    if a.shape != t.shape:
        raise ValueError("label arrays differ in length")
    w = _weights(weights, a.size)
    la, ia = np.unique(a, return_inverse=True)
    lt, it = np.unique(t, return_inverse=True)
    table = np.zeros((la.size, lt.size))
    np.add.at(table, (ia, it), w)
    total = w.sum()
    if max(la.size, lt.size) <= 8:
        best = 0.0
        if la.size <= lt.size:
            for perm in itertools.permutations(range(lt.size), la.size):
                best = max(best, table[np.arange(la.size), list(perm)].sum())
        else:
            for perm in itertools.permutations(range(la.size), lt.size):
                best = max(best, table[list(perm), np.arange(lt.size)].sum())
    else:
        r, c = linear_sum_assignment(-table)
        best = table[r, c].sum()
    return float(1 - best / total)
