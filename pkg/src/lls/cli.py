"""Command-line interface: ``lls <command> ...``.

Exit codes: 0 on success, 1 on numerical failure, 2 on bad input.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
import warnings
from contextlib import contextmanager
from importlib import metadata

import numpy as np
import scipy

from . import io as lio
from .basis import Basis
from .basis_select import PureTypeSpec, cluster_mean_basis, plane_coordinates, project_pure_type
from .cluster import hierarchical, kmeans
from .dataset import load_dataset, read_design, write_dataset
from .moments import build_frequency_matrix, write_frequency_matrix
from .qp import QPError
from .scores import InsufficientData, ZeroProbabilityPattern, estimate_all_scores, mixing_histogram, score_summary
from .sim import ExperimentConfig, run_experiment, sample_scores, simulate_responses
from .subspace import SubspaceError, complete_matrix, estimate_rank, find_subspace, rank_from_singular_values

logger = logging.getLogger("lls")

NUMERICAL_ERRORS = (QPError, SubspaceError, InsufficientData, ZeroProbabilityPattern,
                    np.linalg.LinAlgError, FloatingPointError)
INPUT_ERRORS = (ValueError, OSError, KeyError)


class _Collector(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.messages: list[str] = []

    def emit(self, record):
        self.messages.append(f"{record.name}: {record.getMessage()}")


class Run:
    """Manifest bookkeeping for one command: inputs, stage timings, warnings."""

    def __init__(self, args):
        self.args = args
        self.timings: dict[str, float] = {}
        self.extra: dict = {}
        self.collector = _Collector()

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        yield
        self.timings[name] = time.perf_counter() - t0

    def manifest(self) -> dict:
        try:
            version = metadata.version("artifact")
        except metadata.PackageNotFoundError:
            version = "unknown"
        config = {k: v for k, v in vars(self.args).items() if k != "func"}
        return {
            "command": self.args.command,
            "config": config,
            "inputs": [v for k, v in config.items() if k in ("data", "basis", "config", "design",
                                                              "sv_file", "pure_types") and v],
            "seed": config.get("seed"),
            "versions": {"lls": version, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "timings": self.timings,
            "warnings": list(dict.fromkeys(self.collector.messages)),
            **self.extra,
        }

    def write_manifest(self, path):
        if path:
            with open(path, "w") as fh:
                json.dump(self.manifest(), fh, indent=2, sort_keys=True, default=_jsonable)
                fh.write("\n")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    return str(v)


# ---------------------------------------------------------------------------
# shared steps


def _load(args):
    design = read_design(args.design) if getattr(args, "design", None) else None
    return load_dataset(args.data, design, missing_token=args.missing,
                        delimiter=args.delimiter, header=args.header)


def _matrix(args, run, records, design):
    with run.stage("moments"):
        fm, se = build_frequency_matrix(records, design, alpha=args.alpha)
    if fm.renormalized:
        logger.warning("second-order frequencies renormalised for missing answers")
    return fm, se


def _rank(args, run, fm, se):
    with run.stage("rank"):
        est = estimate_rank(fm, se, multiplier=args.multiplier)
    run.extra["rank"] = {"K": est.K, "threshold": est.threshold,
                         "singular_values": est.singular_values[:20].tolist()}
    return est


def _fit(args, run, fm, se, K):
    if K is None:
        K = _rank(args, run, fm, se).K
        logger.info("using estimated K=%d", K)
        run.extra["chosen_K"] = K
    with run.stage("fit"):
        fit = find_subspace(fm, K, n_iter=args.iters, tol=args.tol, init=args.init)
    if fit.fallback_questions:
        logger.warning("completion fell back to least squares for questions %s", fit.fallback_questions)
    run.extra["fit"] = {"K": K, "iterations": fit.iterations, "distances": fit.distances,
                        "completion_kkt": fit.completion_kkt}
    return fit


def _scores(args, run, records, basis):
    with run.stage("scores"):
        me = estimate_all_scores(records, basis, mode=args.mode, min_eligible=args.min_eligible)
    run.extra["scores"] = score_summary(me)
    return me


def _print_sv(sv, threshold, out=None):
    out = out or sys.stdout
    print("index,singular_value,above_threshold", file=out)
    for i, s in enumerate(sv, start=1):
        print(f"{i},{s:.6g},{int(s > threshold)}", file=out)


# ---------------------------------------------------------------------------
# commands


def cmd_rank(args, run):
    if args.sv_file:
        if args.threshold is None:
            raise ValueError("--sv-file needs --threshold")
        sv = lio.read_singular_values(args.sv_file)
        K = rank_from_singular_values(sv, args.threshold)
        _print_sv(sv, args.threshold)
        run.extra["rank"] = {"K": K, "threshold": args.threshold}
    else:
        if args.data is None:
            raise ValueError("rank needs a dataset or --sv-file")
        design, records = _load(args)
        fm, se = _matrix(args, run, records, design)
        est = _rank(args, run, fm, se)
        if args.threshold is not None:
            est.K = rank_from_singular_values(est.singular_values, args.threshold)
            est.threshold = args.threshold
        _print_sv(est.singular_values, est.threshold)
        K = est.K
    print(f"K={K}")


def cmd_fit(args, run):
    design, records = _load(args)
    fm, se = _matrix(args, run, records, design)
    fit = _fit(args, run, fm, se, args.k)
    lio.write_basis(fit.basis, args.output)
    print(f"K={fit.basis.K} iterations={fit.iterations} basis={args.output}")


def cmd_scores(args, run):
    design, records = _load(args)
    basis = lio.read_basis(args.basis, design)
    me = _scores(args, run, records, basis)
    lio.write_scores(me, args.output)
    if args.hist:
        rng = tuple(args.hist_range) if args.hist_range else None
        edges, masses = mixing_histogram(me, args.component - 1, bins=args.bins, range=rng)
        lio.write_histogram(edges, masses, args.hist)
    print(f"scored {int(me.valid.sum())} of {me.patterns.shape[0]} patterns -> {args.output}")


def cmd_complete(args, run):
    design, records = _load(args)
    fm, se = _matrix(args, run, records, design)
    if args.basis:
        with run.stage("complete"):
            completed = complete_matrix(fm, lio.read_basis(args.basis, design))
    else:
        completed = _fit(args, run, fm, se, args.k).completed
    write_frequency_matrix(completed, args.output)
    print(f"completed matrix -> {args.output}")


def cmd_basis(args, run):
    basis = lio.read_basis(args.basis, read_design(args.design) if args.design else None)
    if args.pure_types:
        targets = lio.read_matrix(args.pure_types)
        with run.stage("project"):
            g = np.array([project_pure_type(PureTypeSpec(basis.design, t), basis) for t in targets])
        beta = np.clip(g @ basis.vectors, 0, None)
        beta /= np.repeat(np.add.reduceat(beta, basis.design.offsets, axis=1), basis.design.levels, axis=1)
        new = Basis(basis.design, beta, nonneg=True)
        run.extra["pure_type_scores"] = g.tolist()
    elif args.cluster_means:
        if args.data is None or args.k is None:
            raise ValueError("--cluster-means needs a dataset and --k")
        _, records = load_dataset(args.data, basis.design, missing_token=args.missing,
                                  delimiter=args.delimiter, header=args.header)
        me = _scores(args, run, records, basis)
        with run.stage("cluster"):
            new = cluster_mean_basis(me, basis, args.k, method=args.method,
                                     linkage=args.linkage, seed=args.seed)
    else:
        raise ValueError("give --pure-types or --cluster-means")
    lio.write_basis(new, args.output)
    print(f"basis with K={new.K} -> {args.output}")


def cmd_cluster(args, run):
    design, records = _load(args)
    basis = lio.read_basis(args.basis, design)
    me = _scores(args, run, records, basis)
    ok = me.valid
    pts = plane_coordinates(me.scores[ok], basis)
    with run.stage("cluster"):
        if args.method == "kmeans":
            res = kmeans(pts, args.k, weights=me.weights[ok], seed=args.seed)
        else:
            res = hierarchical(pts, args.k, linkage=args.linkage, weights=me.weights[ok])
    labels = np.full(me.patterns.shape[0], -1)
    labels[ok] = res.assignments
    lio.write_table(args.output, ["pattern", "weight", "cluster"],
                    [[lio.pattern_text(p), repr(float(w)), int(c) + 1 if c >= 0 else ""]
                     for p, w, c in zip(me.patterns, me.weights, labels)])
    print(f"{res.n_clusters} clusters -> {args.output}")


def cmd_simulate(args, run):
    config = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig(
        K=args.k, J=args.j, I=args.i, L=args.levels, design=args.score_design, basis=args.basis_kind)
    seed = args.seed if args.seed is not None else config.seed
    basis = config.make_basis(seed)
    sample = sample_scores(config.design, config.I, config.K, seed=seed, points=config.points)
    records = simulate_responses(basis, sample.scores, seed=seed)
    write_dataset(records, args.output)
    truth = {"levels": list(basis.design.levels), "basis": basis.vectors.tolist(),
             "scores": sample.scores.tolist(),
             "labels": None if sample.labels is None else sample.labels.tolist(), "seed": seed}
    with open(args.output + ".truth.json", "w") as fh:
        json.dump(truth, fh)
    print(f"{records.shape[0]} records x {records.shape[1]} questions -> {args.output}")


def cmd_experiment(args, run):
    config = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.full and config.experiment == "mixing":
        config.J, config.I = 1500, 10000
    with run.stage("experiment"):
        report = run_experiment(config, jobs=args.jobs)
    os.makedirs(args.output, exist_ok=True)
    reps = report["replications"]
    cols = [k for k in reps[0] if not isinstance(reps[0][k], list)]
    lio.write_table(os.path.join(args.output, "replications.csv"), cols,
                    [[r[c] for c in cols] for r in reps])
    if config.experiment == "mixing":
        r0 = reps[0]
        edges = np.array(r0["edges"])
        lio.write_histogram(edges, r0["hist_true_basis"], os.path.join(args.output, "hist_true_basis.csv"))
        lio.write_histogram(edges, r0["hist_fitted_basis"], os.path.join(args.output, "hist_fitted_basis.csv"))
    with open(os.path.join(args.output, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    summary = {k: v for k, v in report.items() if isinstance(v, (int, float, str, dict)) and k != "config"}
    print(json.dumps(summary, sort_keys=True))
    run.extra["checks"] = report["checks"]
    if not all(report["checks"].values()):
        logger.warning("acceptance checks failed: %s",
                       [k for k, ok in report["checks"].items() if not ok])


# ---------------------------------------------------------------------------
# argument parsing


def _data_options(p, required=True):
    if required:
        p.add_argument("data", help="CSV of integer answer codes, one respondent per row")
    else:
        p.add_argument("data", nargs="?", help="CSV of integer answer codes")
    p.add_argument("--design", help="file listing the number of outcomes per question")
    p.add_argument("--missing", default=".", help="token for a missing answer (default '.')")
    p.add_argument("--delimiter", default=",", help="field delimiter (default ',')")
    p.add_argument("--header", action="store_true", help="skip the first line")
    p.add_argument("--alpha", type=float, default=0.05, help="Wilson interval level (default 0.05)")


def _fit_options(p):
    p.add_argument("--k", type=int, help="dimension K (estimated from the data when omitted)")
    p.add_argument("--iters", type=int, default=5, help="completion/plane-fit rounds (default 5)")
    p.add_argument("--tol", type=float, default=1e-6, help="stop when the basis moves less than this")
    p.add_argument("--init", choices=("product", "identity"), default="product",
                   help="starting values for same-question blocks")
    p.add_argument("--multiplier", type=float, default=2.0, help="rank threshold in standard errors")


def _score_options(p):
    p.add_argument("--mode", choices=("qp", "svd"), default="qp",
                   help="qp keeps probabilities nonnegative; svd is unconstrained")
    p.add_argument("--min-eligible", type=float, default=5,
                   help="drop equations backed by fewer respondents (default 5)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lls", description="Linear latent structure analysis")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rank", help="estimate K from singular values of the moment matrix")
    _data_options(p, required=False)
    p.add_argument("--sv-file", help="use these singular values instead of a dataset")
    p.add_argument("--threshold", type=float, help="fixed singular-value threshold")
    p.add_argument("--multiplier", type=float, default=2.0, help="threshold in standard errors (default 2)")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("fit", help="find a basis of the supporting plane")
    _data_options(p)
    _fit_options(p)
    p.add_argument("-o", "--output", default="basis.csv", help="basis CSV (design written alongside)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("scores", help="individual scores and the mixing distribution")
    _data_options(p)
    _score_options(p)
    p.add_argument("--basis", required=True, help="basis CSV from 'fit' or 'basis'")
    p.add_argument("-o", "--output", default="scores.csv", help="scores CSV")
    p.add_argument("--hist", help="also write a histogram CSV of one score coordinate")
    p.add_argument("--bins", type=int, default=50, help="histogram bins (default 50)")
    p.add_argument("--component", type=int, default=1, help="score coordinate for the histogram")
    p.add_argument("--hist-range", type=float, nargs=2, metavar=("LO", "HI"), help="histogram range")
    p.set_defaults(func=cmd_scores)

    p = sub.add_parser("complete", help="fill inestimable same-question moments")
    _data_options(p)
    _fit_options(p)
    p.add_argument("--basis", help="complete against this basis instead of fitting one")
    p.add_argument("-o", "--output", default="moments.csv", help="completed matrix CSV")
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("basis", help="interpretable basis from pure types or cluster means")
    p.add_argument("data", nargs="?", help="dataset (needed for --cluster-means)")
    p.add_argument("--basis", required=True, help="current basis CSV")
    p.add_argument("--design", help="design file when the basis has no sidecar")
    p.add_argument("--pure-types", help="CSV with one ideal probability vector per row")
    p.add_argument("--cluster-means", action="store_true", help="use means of clustered scores")
    p.add_argument("--k", type=int, help="number of clusters")
    p.add_argument("--method", choices=("hier", "kmeans"), default="hier")
    p.add_argument("--linkage", choices=("centroid", "single", "complete"), default="centroid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--missing", default=".")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--header", action="store_true")
    _score_options(p)
    p.add_argument("-o", "--output", default="basis_new.csv")
    p.set_defaults(func=cmd_basis)

    p = sub.add_parser("cluster", help="cluster response patterns by their scores")
    _data_options(p)
    _score_options(p)
    p.add_argument("--basis", required=True)
    p.add_argument("--method", choices=("hier", "kmeans"), default="hier")
    p.add_argument("--k", type=int, required=True, help="number of clusters")
    p.add_argument("--linkage", choices=("centroid", "single", "complete"), default="centroid")
    p.add_argument("--seed", type=int, default=0, help="k-means seeding")
    p.add_argument("-o", "--output", default="clusters.csv")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("simulate", help="simulate a dataset with known truth")
    p.add_argument("--config", help="experiment config supplying K, J, I and designs")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--j", type=int, default=60)
    p.add_argument("--i", type=int, default=1000)
    p.add_argument("--levels", type=int, default=2, help="outcomes per question")
    p.add_argument("--score-design", default="simplex-grid",
                   choices=("simplex-grid", "two-interval", "five-point", "dirichlet"))
    p.add_argument("--basis-kind", choices=("block", "vertex"), default="block")
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", default="simulated.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="run a simulation experiment from a config file")
    p.add_argument("config", help="key = value experiment file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
    p.add_argument("--full", action="store_true", help="full-size mixing run (J=1500, I=10000)")
    p.add_argument("-o", "--output", default="experiment_out", help="output directory")
    p.set_defaults(func=cmd_experiment)

    for p in sub.choices.values():
        p.add_argument("--manifest", help="write a JSON run manifest here")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    run = Run(args)
    pywarn = logging.getLogger("py.warnings")
    stderr = logging.StreamHandler(sys.stderr)
    stderr.setLevel(logging.INFO if args.verbose else logging.WARNING)
    logger.setLevel(logging.INFO)
    for lg in (logger, pywarn):
        lg.addHandler(run.collector)
        lg.addHandler(stderr)
        lg.propagate = False
    logging.captureWarnings(True)
    manifest = args.manifest
    if manifest is None and args.command == "fit":
        manifest = args.output + ".manifest.json"
    code = 0
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            args.func(args, run)
    except NUMERICAL_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = 1
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = 2
    finally:
        logging.captureWarnings(False)
        for lg in (logger, pywarn):
            lg.removeHandler(run.collector)
            lg.removeHandler(stderr)
            lg.propagate = True
    run.extra["exit_code"] = code
    if code == 0 or manifest:
        run.write_manifest(manifest)
    return code


if __name__ == "__main__":
    sys.exit(main())
