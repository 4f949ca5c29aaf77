import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.cluster.hierarchy import fcluster, linkage as scipy_linkage

from lls.cluster import ClusterError, hierarchical, kmeans, misclassification_rate, within_ss


def canonical(labels):
    seen = {}
    return tuple(seen.setdefault(v, len(seen)) for v in labels)


def naive_agglomerative(X, k, link, w=None):
    """Direct recomputation of every cluster distance at every step."""
    w = np.ones(len(X)) if w is None else np.asarray(w, float)
    clusters = [[i] for i in range(len(X))]

    def dist(a, b):
        if link == "centroid":
            ca = w[a] @ X[a] / w[a].sum()
            cb = w[b] @ X[b] / w[b].sum()
            return np.linalg.norm(ca - cb)
        d = np.linalg.norm(X[a][:, None] - X[b][None], axis=2)
        return d.min() if link == "single" else d.max()

    while len(clusters) > k:
        best = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                d = dist(clusters[i], clusters[j])
                if best is None or d < best[0]:
                    best = (d, i, j)
        _, i, j = best
        clusters[i] = clusters[i] + clusters.pop(j)
    labels = np.empty(len(X), int)
    for c, members in enumerate(clusters):
        labels[members] = c
    return labels


def reachable_partitions(X, k, link):
    """Every final partition reachable by greedy merging under any tie choice."""
    def dist(a, b):
        d = np.linalg.norm(X[list(a)][:, None] - X[list(b)][None], axis=2)
        return d.min() if link == "single" else d.max()

    out = set()

    def walk(clusters):
        if len(clusters) == k:
            out.add(frozenset(clusters))
            return
        pairs = [(dist(a, b), a, b) for i, a in enumerate(clusters) for b in clusters[i + 1:]]
        low = min(p[0] for p in pairs)
        for d, a, b in pairs:
            if d <= low + 1e-12:
                walk([c for c in clusters if c not in (a, b)] + [a | b])

    walk([frozenset([i]) for i in range(len(X))])
    return out


def test_point_masses_exact():
    centers = np.array([[0.0, 0.0], [5.0, 1.0], [2.0, 7.0]])
    X = centers[[0, 1, 1, 2, 0, 2]]
    for res in (kmeans(X, 3), hierarchical(X, 3, linkage="centroid")):
        assert res.objective == pytest.approx(0, abs=1e-20)
        assert sorted(map(tuple, res.centers)) == sorted(map(tuple, centers))


def test_single_cluster_is_weighted_mean():
    X = np.array([[0.0], [1.0], [4.0]])
    w = np.array([1.0, 1.0, 2.0])
    for res in (kmeans(X, 1, weights=w), hierarchical(X, 1, weights=w)):
        assert res.centers[0, 0] == pytest.approx(2.25)


def test_two_separated_pairs_any_linkage():
    X = np.array([[0, 0], [0, 1], [10, 0], [10, 1.0]])
    for link in ("centroid", "single", "complete"):
        assert canonical(hierarchical(X, 2, linkage=link).assignments) == (0, 0, 1, 1)


@pytest.mark.parametrize("n", [4, 5, 6])
def test_equidistant_chain_complete_linkage(n):
    X = np.arange(n, dtype=float)[:, None]
    res = hierarchical(X, 2, linkage="complete")
    parts = frozenset(frozenset(np.flatnonzero(res.assignments == c)) for c in range(2))
    reachable = reachable_partitions(X, 2, "complete")
    assert parts in reachable
    # a balanced split is always among the tie resolutions
    assert any(abs(len(a) - len(b)) <= 1 for a, b in map(tuple, reachable))


def test_single_point():
    res = hierarchical(np.array([[1.0, 2.0]]), 1)
    assert res.assignments.tolist() == [0]
    with pytest.raises(ClusterError):
        kmeans(np.array([[1.0, 2.0]]), 2)


def test_threshold_stops_merging():
    X = np.array([[0.0], [0.1], [5.0], [5.2]])
    res = hierarchical(X, threshold=1.0, linkage="single")
    assert res.n_clusters == 2


def test_misclassification_examples():
    t = np.repeat([0, 1, 2], 4)
    assert misclassification_rate(t, t) == 0
    assert misclassification_rate((t + 1) % 3, t) == 0
    a = np.zeros(100, int)
    b = a.copy()
    b[7] = 1
    assert misclassification_rate(b, a) == pytest.approx(0.01)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=2, max_size=30), st.permutations(range(4)), st.integers(0, 1000))
def test_misclassification_relabel_invariant(labels, perm, seed):
    truth = np.array(labels)
    rng = np.random.default_rng(seed)
    guess = rng.integers(0, 4, truth.size)
    base = misclassification_rate(guess, truth)
    assert 0 <= base <= 1
    assert misclassification_rate(np.array(perm)[guess], truth) == pytest.approx(base)
    assert misclassification_rate(guess, np.array(perm)[truth]) == pytest.approx(base)


def test_misclassification_many_labels_uses_assignment():
    t = np.arange(20).repeat(3)
    assert misclassification_rate((t * 7) % 20, t) == 0


def test_kmeans_jittered_five_points():
    rng = np.random.default_rng(0)
    centers = rng.uniform(0, 10, size=(5, 3))
    truth = rng.integers(0, 5, 500)
    X = centers[truth] + rng.normal(scale=0.05, size=(500, 3))
    assert misclassification_rate(kmeans(X, 5, seed=1).assignments, truth) == 0


def test_kmeans_deterministic_and_fixed_point():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 2))
    w = rng.uniform(0.1, 1, 200)
    a, b = kmeans(X, 4, weights=w, seed=5), kmeans(X, 4, weights=w, seed=5)
    assert np.array_equal(a.assignments, b.assignments)
    for c in range(4):
        m = a.assignments == c
        assert np.allclose(a.centers[c], w[m] @ X[m] / w[m].sum())
    assert a.objective == pytest.approx(within_ss(X, w, a.assignments, a.centers))


def test_kmeans_objective_non_increasing():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(300, 2))
    prev = np.inf
    for it in range(1, 8):
        obj = kmeans(X, 5, seed=0, max_iter=it).objective
        assert obj <= prev + 1e-9
        prev = obj


@pytest.mark.parametrize("seed", range(30))
def test_centroid_linkage_matches_naive(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 12))
    X = rng.normal(size=(n, 2))
    w = rng.uniform(0.2, 2, n)
    k = int(rng.integers(1, n))
    ours = hierarchical(X, k, linkage="centroid", weights=w).assignments
    assert canonical(ours) == canonical(naive_agglomerative(X, k, "centroid", w))


@pytest.mark.parametrize("link", ["single", "complete"])
@pytest.mark.parametrize("seed", range(10))
def test_single_complete_match_scipy(link, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 3))
    k = int(rng.integers(2, 8))
    ours = hierarchical(X, k, linkage=link).assignments
    ref = fcluster(scipy_linkage(X, method=link), k, criterion="maxclust")
    assert canonical(ours) == canonical(ref)
    assert canonical(ours) == canonical(naive_agglomerative(X, k, link))
