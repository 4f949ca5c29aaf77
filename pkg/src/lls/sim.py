"""Seeded simulation: bases, score designs, response data and experiment drivers.

Every generator is a pure function of its arguments; replication ``r`` of an
experiment with seed ``s`` draws from ``SeedSequence([s, r])`` so results do
not depend on execution order or on the number of worker processes.
"""

from __future__ import annotations

import configparser
import dataclasses
import itertools
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .basis import Basis
from .basis_select import plane_coordinates
from .cluster import hierarchical, misclassification_rate
from .dataset import SurveyDesign
from .moments import MixingModel, build_frequency_matrix, exact_frequency_matrix
from .scores import estimate_all_scores
from .subspace import find_subspace, subspace_distance

SCORE_DESIGNS = ("simplex-grid", "two-interval", "five-point", "dirichlet", "custom")
EXPERIMENTS = ("recovery", "cluster", "mixing")

# five equally weighted support points for K=3 (well separated in the plane)
FIVE_POINTS = np.array([
    [0.70, 0.15, 0.15],
    [0.15, 0.70, 0.15],
    [0.15, 0.15, 0.70],
    [1 / 3, 1 / 3, 1 / 3],
    [0.45, 0.45, 0.10],
])
TWO_INTERVALS = ((0.10, 0.25), (0.50, 0.75))


class ConfigError(ValueError):
    pass


def _rng(seed, *extra) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, extra)]))


# ---------------------------------------------------------------------------
# bases


def make_block_basis(K: int, J: int) -> Basis:
    """Binary 0/1 basis: vector ``k >= 2`` flips the ``(k-1)``-th block of questions."""
    if K < 1 or J < 1:
        raise ValueError("K and J must be positive")
    if K > 1 and J % (K - 1):
        raise ValueError(f"K-1={K - 1} must divide J={J}")
    design = SurveyDesign((2,) * J)
    first = np.ones((K, J))
    if K > 1:
        size = J // (K - 1)
        for k in range(2, K + 1):
            first[k - 1, (k - 2) * size:(k - 1) * size] = 0
    vectors = np.empty((K, 2 * J))
    vectors[:, 0::2] = first
    vectors[:, 1::2] = 1 - first
    return Basis(design, vectors, nonneg=True)


def random_vertex_basis(K: int, design: SurveyDesign, seed: int = 0, max_tries: int = 100) -> Basis:
    """Each vector puts probability 1 on a random outcome of every question.

    Vectors ``1`` and ``2`` differ on every question, so for binary designs
    the second vector is the complement of the first.
    """
    rng = _rng(seed)
    L = np.asarray(design.levels)
    for _ in range(max_tries):
        pick = np.empty((K, design.n_questions), dtype=int)
        pick[0] = rng.integers(0, L)
        if K > 1:
            pick[1] = (pick[0] + rng.integers(1, L)) % L
        for k in range(2, K):
            pick[k] = rng.integers(0, L)
        vectors = np.zeros((K, design.n_cells))
        for k in range(K):
            vectors[k, design.offsets + pick[k]] = 1.0
        if np.linalg.matrix_rank(vectors) == K:
            return Basis(design, vectors, nonneg=True)
    raise ValueError(f"could not draw {K} independent vertex vectors for this design")


# ---------------------------------------------------------------------------
# score designs


def simplex_grid(K: int, I: int) -> np.ndarray:
    """Finest lattice ``{g : n*g integer}`` on the simplex with at most ``I`` points, cycled to ``I``."""
    if K == 1:
        return np.ones((I, 1))
    n = 0
    while math.comb(n + 1 + K - 1, K - 1) <= I:
        n += 1
    # stars and bars: each combination of K-1 bar positions is one composition of n
    bars = np.array(list(itertools.combinations(range(n + K - 1), K - 1)), dtype=int).reshape(-1, K - 1)
    edges = np.hstack([np.full((bars.shape[0], 1), -1), bars, np.full((bars.shape[0], 1), n + K - 1)])
    parts = np.diff(edges, axis=1) - 1
    grid = parts / max(n, 1)
    return grid[np.arange(I) % grid.shape[0]]


def two_interval_scores(I: int) -> np.ndarray:
    half = I // 2
    parts = []
    for (lo, hi), m in zip(TWO_INTERVALS, (half, I - half)):
        parts.append(np.linspace(lo, hi, m) if m > 1 else np.full(m, (lo + hi) / 2))
    g1 = np.concatenate(parts)
    return np.column_stack([g1, 1 - g1])


@dataclass
class ScoreSample:
    scores: np.ndarray
    labels: np.ndarray | None = None


def sample_scores(design: str, I: int, K: int, seed: int = 0, points=None) -> ScoreSample:
    """Latent scores of ``I`` simulated individuals.

    ``simplex-grid``, ``two-interval`` and ``five-point`` are deterministic;
    ``dirichlet`` draws uniformly from the simplex; ``custom`` spreads ``I``
    evenly over the given points. Point designs come with labels.
    """
    if I < 1:
        raise ValueError("I must be positive")
    if design == "simplex-grid":
        return ScoreSample(simplex_grid(K, I))
    if design == "two-interval":
        if K != 2:
            raise ValueError("the two-interval design needs K=2")
        return ScoreSample(two_interval_scores(I))
    if design == "dirichlet":
        return ScoreSample(_rng(seed).dirichlet(np.ones(K), size=I))
    if design == "five-point":
        if K != 3:
            raise ValueError("the five-point design needs K=3")
        points = FIVE_POINTS
    elif design == "custom":
        if points is None:
            raise ValueError("custom design needs points")
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != K or np.abs(points.sum(axis=1) - 1).max() > 1e-9:
            raise ValueError(f"custom points must have {K} coordinates summing to 1")
    else:
        raise ValueError(f"unknown score design {design!r}")
    # I // P copies of every point, the remainder going to the first points
    labels = np.arange(I) * points.shape[0] // I
    return ScoreSample(points[labels], labels)


def simulate_responses(basis: Basis, scores, seed: int = 0) -> np.ndarray:
    """One categorical draw per question and individual from ``scores @ basis``."""
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    beta = scores @ basis.vectors
    if beta.min() < -1e-9:
        raise ValueError(f"scores give negative probability {beta.min():.3g}")
    beta = np.clip(beta, 0, None)
    design = basis.design
    rng = _rng(seed)
    u = rng.random((scores.shape[0], design.n_questions))
    records = np.empty(u.shape, dtype=np.int64)
    for j in range(design.n_questions):
        cum = np.cumsum(beta[:, design.block(j)], axis=1)
        cum /= cum[:, -1:]
        records[:, j] = 1 + (u[:, j, None] >= cum[:, :-1]).sum(axis=1)
    return records


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass
class ExperimentConfig:
    experiment: str = "recovery"
    K: int = 2
    J: int = 60
    I: int = 1430
    L: int = 2
    design: str = "simplex-grid"
    basis: str = "block"
    points: list | None = None
    replications: int = 10
    seed: int = 0
    n_iter: int = 5
    mode: str = "qp"
    linkage: str = "complete"
    n_clusters: int = 5
    exact: bool = False
    bins: int = 50
    thresholds: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}")
        for name in ("K", "J", "I", "replications", "n_iter", "n_clusters", "bins"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.L < 2:
            raise ConfigError("L must be at least 2")
        if self.design not in SCORE_DESIGNS:
            raise ConfigError(f"design must be one of {', '.join(SCORE_DESIGNS)}")
        if self.basis not in ("block", "vertex"):
            raise ConfigError("basis must be 'block' or 'vertex'")
        if self.basis == "block" and (self.L != 2 or (self.K > 1 and self.J % (self.K - 1))):
            raise ConfigError("block basis needs L=2 and K-1 dividing J")
        if self.design == "two-interval" and self.K != 2:
            raise ConfigError("two-interval design needs K=2")
        if self.design == "five-point" and self.K != 3:
            raise ConfigError("five-point design needs K=3")
        if self.design == "custom" and not self.points:
            raise ConfigError("custom design needs points")
        if self.mode not in ("qp", "svd"):
            raise ConfigError("mode must be 'qp' or 'svd'")

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        """Parse ``key = value`` lines; ``threshold.<name> = x`` sets an acceptance bound."""
        cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
        cp.optionxform = str
        try:
            cp.read_string("[experiment]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs: dict = {"thresholds": {}}
        for key, raw in cp["experiment"].items():
            if key.startswith("threshold."):
                kwargs["thresholds"][key.split(".", 1)[1]] = _number(key, raw, float)
            elif key == "points":
                kwargs["points"] = [[_number(key, v, float) for v in row.split(",")]
                                    for row in raw.split(";") if row.strip()]
            elif key not in types or key == "thresholds":
                raise ConfigError(f"unknown config key {key!r}")
            elif types[key] == "int":
                kwargs[key] = _number(key, raw, int)
            elif types[key] == "bool":
                kwargs[key] = cp["experiment"].getboolean(key)
            else:
                kwargs[key] = raw.strip()
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def make_design(self) -> SurveyDesign:
        return SurveyDesign((self.L,) * self.J)

    def make_basis(self, seed) -> Basis:
        if self.basis == "block":
            return make_block_basis(self.K, self.J)
        return random_vertex_basis(self.K, self.make_design(), seed)


def _number(key, raw, kind):
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot read {raw!r} as {kind.__name__}") from None


def _map(fn, config, jobs):
    reps = range(config.replications)
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, itertools.repeat(config), reps))
    return [fn(config, r) for r in reps]


# ---------------------------------------------------------------------------
# recovery of the plane (distance between true and fitted spans)


def _simulate(config: ExperimentConfig, rep: int):
    basis = config.make_basis(_rng(config.seed, rep, 0).integers(2**31))
    sample = sample_scores(config.design, config.I, config.K, seed=int(_rng(config.seed, rep, 1).integers(2**31)),
                           points=config.points)
    records = simulate_responses(basis, sample.scores, seed=int(_rng(config.seed, rep, 2).integers(2**31)))
    return basis, sample, records


def _recovery_rep(config: ExperimentConfig, rep: int) -> dict:
    t0 = time.perf_counter()
    basis, sample, records = _simulate(config, rep)
    if config.exact:
        model = MixingModel(basis, sample.scores)
        fm = exact_frequency_matrix(model)
    else:
        fm, _ = build_frequency_matrix(records, basis.design)
    t1 = time.perf_counter()
    fit = find_subspace(fm, config.K, n_iter=config.n_iter)
    t2 = time.perf_counter()
    return {"replication": rep, "distance": subspace_distance(fit.basis, basis),
            "iterations": fit.iterations, "fallback_questions": len(fit.fallback_questions),
            "seconds_moments": t1 - t0, "seconds_fit": t2 - t1}


def run_recovery_experiment(config: ExperimentConfig, jobs: int = 1) -> dict:
    """Median distance between the generating and the reconstructed plane."""
    reps = _map(_recovery_rep, config, jobs)
    d = [r["distance"] for r in reps]
    return {"experiment": "recovery", "median_distance": float(np.median(d)),
            "distances": d, "replications": reps}


# ---------------------------------------------------------------------------
# clustering of individuals (scores versus raw answers)


def _expand(patterns, records):
    index = {p.tobytes(): u for u, p in enumerate(patterns)}
    return np.array([index[r.tobytes()] for r in records])


def _cluster_rep(config: ExperimentConfig, rep: int) -> dict:
    basis, sample, records = _simulate(config, rep)
    fm, _ = build_frequency_matrix(records, basis.design)
    fit = find_subspace(fm, config.K, n_iter=config.n_iter)
    me = estimate_all_scores(records, fit.basis, mode=config.mode)
    who = _expand(me.patterns, records)
    ok = me.valid
    pts = plane_coordinates(me.scores[ok], fit.basis)
    res = hierarchical(pts, config.n_clusters, linkage=config.linkage,
                       weights=me.weights[ok])
    lab = np.full(me.patterns.shape[0], -1)
    lab[ok] = res.assignments
    score_rate = misclassification_rate(lab[who], sample.labels)

    design = basis.design
    one_hot = (me.patterns[:, design.question_of_cell] == design.level_of_cell).astype(float)
    raw = hierarchical(one_hot, config.n_clusters, linkage=config.linkage, weights=me.weights)
    raw_rate = misclassification_rate(raw.assignments[who], sample.labels)
    return {"replication": rep, "score_rate": score_rate, "raw_rate": raw_rate,
            "unscored_patterns": int((~ok).sum()), "distance": subspace_distance(fit.basis, basis)}


def run_cluster_experiment(config: ExperimentConfig, jobs: int = 1) -> dict:
    """Misclassification of the point-mass classes via LLS scores and via raw answers."""
    if sample_scores(config.design, min(config.I, 5), config.K, points=config.points).labels is None:
        raise ConfigError("the cluster experiment needs a point design with labels")
    reps = _map(_cluster_rep, config, jobs)
    return {"experiment": "cluster",
            "score_rate": float(np.mean([r["score_rate"] for r in reps])),
            "raw_rate": float(np.mean([r["raw_rate"] for r in reps])),
            "replications": reps}


# ---------------------------------------------------------------------------
# reconstructed mixing distribution


def interval_mass(values, weights, intervals) -> float:
    values = np.asarray(values)
    inside = np.zeros(values.shape, dtype=bool)
    for lo, hi in intervals:
        inside |= (values >= lo) & (values <= hi)
    w = np.asarray(weights, dtype=float)
    return float(w[inside].sum() / w.sum())


def true_coordinates(me, true_basis: Basis) -> np.ndarray:
    """Scores re-expressed in the generating basis by least squares on probabilities."""
    beta = me.probabilities()
    A = np.vstack([true_basis.vectors.T, np.ones(true_basis.K)])
    rhs = np.vstack([beta.T, np.ones(beta.shape[0])])
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return sol.T


def _mixing_rep(config: ExperimentConfig, rep: int) -> dict:
    basis, sample, records = _simulate(config, rep)
    window = [(0.05, 0.30), (0.45, 0.80)]
    me_true = estimate_all_scores(records, basis, mode=config.mode)
    ok = me_true.valid
    mass_true = interval_mass(me_true.scores[ok, 0], me_true.weights[ok], window)
    fm, _ = build_frequency_matrix(records, basis.design)
    fit = find_subspace(fm, config.K, n_iter=config.n_iter)
    me_fit = estimate_all_scores(records, fit.basis, mode=config.mode)
    ok_fit = me_fit.valid
    g = true_coordinates(me_fit, basis)[ok_fit]
    mass_fit = interval_mass(g[:, 0], me_fit.weights[ok_fit], window)
    edges = np.linspace(0, 1, config.bins + 1)
    hist_true, _ = np.histogram(me_true.scores[ok, 0], bins=edges, weights=me_true.weights[ok])
    hist_fit, _ = np.histogram(g[:, 0], bins=edges, weights=me_fit.weights[ok_fit])
    return {"replication": rep, "mass_true_basis": mass_true, "mass_fitted_basis": mass_fit,
            "distance": subspace_distance(fit.basis, basis),
            "edges": edges.tolist(), "hist_true_basis": hist_true.tolist(),
            "hist_fitted_basis": hist_fit.tolist()}


def run_mixing_experiment(config: ExperimentConfig, jobs: int = 1) -> dict:
    """Share of score mass falling near the generating intervals (K=2)."""
    if config.K != 2:
        raise ConfigError("the mixing experiment is defined for K=2")
    reps = _map(_mixing_rep, config, jobs)
    return {"experiment": "mixing",
            "mass_true_basis": float(np.min([r["mass_true_basis"] for r in reps])),
            "mass_fitted_basis": float(np.min([r["mass_fitted_basis"] for r in reps])),
            "replications": reps}


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> dict:
    runner = {"recovery": run_recovery_experiment, "cluster": run_cluster_experiment,
              "mixing": run_mixing_experiment}[config.experiment]
    report = runner(config, jobs)
    report["config"] = config.to_dict()
    checks = {}
    for name, bound in config.thresholds.items():
        key = name.removeprefix("min_").removeprefix("max_")
        if key not in report:
            raise ConfigError(f"threshold {name!r} refers to no reported quantity")
        checks[name] = bool(report[key] >= bound if name.startswith("min_") else report[key] <= bound)
    report["checks"] = checks
    return report


# ---------------------------------------------------------------------------
# scaling of the fitting step


def time_fit(K: int, J: int, I: int, seed: int = 0, repeats: int = 3, n_iter: int = 5) -> float:
    """Best-of-``repeats`` wall time of moments plus plane fitting on simulated data.

    Every fit runs exactly ``n_iter`` rounds so timings compare like with like.
    """
    config = ExperimentConfig(K=K, J=J, I=I, seed=seed, design="dirichlet", n_iter=n_iter)
    _, _, records = _simulate(config, 0)
    design = config.make_design()
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fm, _ = build_frequency_matrix(records, design)
        find_subspace(fm, K, n_iter=n_iter, tol=0.0)
        best = min(best, time.perf_counter() - t0)
    return best
