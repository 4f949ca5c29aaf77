"""Small dense convex QP solver: active-set antigradient projection.

Solves

    min  1/2 x'Qx + c'x
    s.t. A x  = b
         G x >= h

from a feasible start. At each iterate the gradient is projected onto the
face defined by the equalities and the active inequalities; the step goes
to the minimiser of the quadratic on that face or to the nearest blocking
boundary, whichever comes first. At a face minimiser the multipliers of the
active inequalities are inspected and the most negative one is released.
"""

from __future__ import annotations

import contextlib
import contextvars
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

logger = logging.getLogger(__name__)

_monitor: contextvars.ContextVar[list | None] = contextvars.ContextVar("qp_monitor", default=None)


class QPError(RuntimeError):
    pass


class InfeasibleStartError(QPError):
    pass


class MaxIterError(QPError):
    def __init__(self, msg, x, residual):
        super().__init__(msg)
        self.x = x
        self.residual = residual


def _as_rows(M, n):
    if M is None:
        return np.zeros((0, n))
    return np.atleast_2d(np.asarray(M, dtype=float)).reshape(-1, n)


def _as_vec(v, m):
    if v is None:
        return np.zeros(m)
    return np.asarray(v, dtype=float).reshape(m)


@dataclass(eq=False)
class QuadraticProgram:
    Q: np.ndarray
    c: np.ndarray
    A: np.ndarray = None
    b: np.ndarray = None
    G: np.ndarray = None
    h: np.ndarray = None
    constant: float = 0.0

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        n = self.Q.shape[0]
        if self.Q.shape != (n, n):
            raise ValueError("Q must be square")
        self.Q = 0.5 * (self.Q + self.Q.T)
        self.c = _as_vec(self.c, n)
        self.A = _as_rows(self.A, n)
        self.b = _as_vec(self.b, self.A.shape[0])
        self.G = _as_rows(self.G, n)
        self.h = _as_vec(self.h, self.G.shape[0])

    @classmethod
    def least_squares(cls, R, r, A=None, b=None, G=None, h=None) -> "QuadraticProgram":
        """Objective ``||R x - r||^2``."""
        R = np.atleast_2d(np.asarray(R, dtype=float))
        r = np.asarray(r, dtype=float)
        return cls(2 * R.T @ R, -2 * R.T @ r, A, b, G, h, constant=float(r @ r))

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def objective(self, x) -> float:
        return float(0.5 * x @ self.Q @ x + self.c @ x + self.constant)

    def gradient(self, x) -> np.ndarray:
        return self.Q @ x + self.c

    def active_tol(self) -> float:
        return 1e-10 * (1 + np.linalg.norm(self.h, np.inf)) if self.h.size else 1e-10


@dataclass
class QpSolution:
    x: np.ndarray
    active_set: tuple[int, ...]
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    kkt_residual: float
    iterations: int
    objective: float
    history: list[float] = field(default_factory=list, repr=False)


@dataclass
class KKTReport:
    ok: bool
    residual: float
    stationarity: float
    primal_eq: float
    primal_ineq: float
    dual: float
    complementarity: float


def kkt_check(prob: QuadraticProgram, x, eq_multipliers=None, ineq_multipliers=None,
              tol: float = 1e-8) -> KKTReport:
    """Check the four Kuhn-Tucker conditions at ``x``, each against ``tol``."""
    x = np.asarray(x, dtype=float)
    mu = _as_vec(eq_multipliers, prob.A.shape[0])
    lam = _as_vec(ineq_multipliers, prob.G.shape[0])
    stat = prob.gradient(x) - prob.A.T @ mu - prob.G.T @ lam
    slack = prob.G @ x - prob.h
    parts = dict(
        stationarity=float(np.abs(stat).max(initial=0.0)),
        primal_eq=float(np.abs(prob.A @ x - prob.b).max(initial=0.0)),
        primal_ineq=float(np.clip(-slack, 0, None).max(initial=0.0)),
        dual=float(np.clip(-lam, 0, None).max(initial=0.0)),
        complementarity=float(np.abs(lam * slack).max(initial=0.0)),
    )
    residual = max(parts.values())
    return KKTReport(ok=residual <= tol, residual=residual, **parts)


def _null_space(rows: np.ndarray, n: int) -> np.ndarray:
    if rows.shape[0] == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(rows, full_matrices=True)
    tol = max(rows.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int((s > tol).sum())
    return vt[rank:].T


def _multipliers(prob, x, active):
    rows = np.vstack([prob.A, prob.G[active]])
    if rows.shape[0] == 0:
        return np.zeros(0), np.zeros(0)
    coef, *_ = np.linalg.lstsq(rows.T, prob.gradient(x), rcond=None)
    m = prob.A.shape[0]
    return coef[:m], coef[m:]


def find_feasible_point(prob: QuadraticProgram) -> np.ndarray:
    """A point satisfying the constraints, as deep inside the inequalities as allowed.

    Maximises a common slack ``t <= 1`` by linear programming.
    """
    n, m_eq, m_in = prob.n, prob.A.shape[0], prob.G.shape[0]
    if m_in == 0 and m_eq == 0:
        return np.zeros(n)
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    A_ub = np.hstack([-prob.G, np.ones((m_in, 1))]) if m_in else None
    b_ub = -prob.h if m_in else None
    A_eq = np.hstack([prob.A, np.zeros((m_eq, 1))]) if m_eq else None
    b_eq = prob.b if m_eq else None
    bounds = [(None, None)] * n + [(None, 1.0)]
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0 or res.x[-1] < -1e-9:
        raise InfeasibleStartError("constraint set is empty")
    return res.x[:n]


@contextlib.contextmanager
def record_qp():
    """Collect every :class:`QpSolution` produced inside the block."""
    log: list[QpSolution] = []
    token = _monitor.set(log)
    try:
        yield log
    finally:
        _monitor.reset(token)


def solve_qp(prob: QuadraticProgram, x0=None, *, tol: float = 1e-9,
             max_iter: int | None = None) -> QpSolution:
    """Minimise ``prob`` starting from ``x0`` (found by LP when omitted)."""
    n = prob.n
    m_eq, m_in = prob.A.shape[0], prob.G.shape[0]
    if max_iter is None:
        max_iter = 10 * (n + m_eq + m_in)
    feas_tol = max(tol, 1e-9 * (1 + np.abs(prob.h).max(initial=0.0) + np.abs(prob.b).max(initial=0.0)))

    if x0 is None:
        x = find_feasible_point(prob)
    else:
        x = np.asarray(x0, dtype=float).copy()
        if x.shape != (n,):
            raise ValueError(f"x0 must have length {n}")
    eq_err = np.abs(prob.A @ x - prob.b).max(initial=0.0)
    in_err = np.clip(prob.h - prob.G @ x, 0, None).max(initial=0.0)
    if eq_err > feas_tol or in_err > feas_tol:
        raise InfeasibleStartError(
            f"starting point violates constraints (equality {eq_err:.3g}, inequality {in_err:.3g})"
        )

    act_tol = prob.active_tol()
    active = list(np.flatnonzero(np.abs(prob.G @ x - prob.h) <= max(act_tol, in_err)))
    last_dropped = None
    history = [prob.objective(x)]
    step_tol = 1e-13 * (1 + np.linalg.norm(x))
    # set after an unblocked Newton step: x is the face minimiser up to roundoff
    at_face_min = False

    for it in range(1, max_iter + 1):
        p = np.zeros(n)
        bounded = True
        if not at_face_min:
            rows = np.vstack([prob.A, prob.G[active]])
            Z = _null_space(rows, n)
            g = prob.gradient(x)
        if not at_face_min and Z.shape[1]:
            Hr = Z.T @ prob.Q @ Z
            gr = Z.T @ g
            w, V = np.linalg.eigh(Hr)
            pos = w > 1e-12 * max(1.0, np.abs(w).max(initial=0.0))
            coords = V.T @ gr
            y = -V[:, pos] @ (coords[pos] / w[pos])
            flat = V[:, ~pos] @ coords[~pos]
            if np.linalg.norm(flat) > 1e-12 * (1 + np.linalg.norm(gr)):
                # zero curvature on the face: slide down the projected antigradient
                p = -Z @ flat
                bounded = False
            else:
                p = Z @ y

        if np.linalg.norm(p) <= step_tol:
            mu, lam = _multipliers(prob, x, active)
            if lam.size == 0 or lam.min() >= -tol:
                break
            drop = int(np.argmin(lam))
            last_dropped = active.pop(drop)
            at_face_min = False
            continue

        Gp = prob.G @ p
        alpha = 1.0 if bounded else np.inf
        blocking = None
        cand = np.ones(m_in, dtype=bool)
        cand[active] = False
        cand &= Gp < -1e-14 * np.linalg.norm(p) * (1 + np.linalg.norm(prob.G, axis=1))
        if last_dropped is not None and Gp[last_dropped] >= -1e-12:
            cand[last_dropped] = False
        idx = np.flatnonzero(cand)
        if idx.size:
            ratios = np.maximum(0.0, (prob.h[idx] - prob.G[idx] @ x) / Gp[idx])
            k = int(np.argmin(ratios))
            if ratios[k] < alpha:
                alpha, blocking = float(ratios[k]), int(idx[k])
        if not np.isfinite(alpha):
            raise QPError("objective is unbounded below on the feasible set")
        x = x + alpha * p
        last_dropped = None
        at_face_min = bounded and blocking is None
        if blocking is not None:
            active.append(blocking)
        history.append(prob.objective(x))
    else:
        mu, lam = _multipliers(prob, x, active)
        lam_full = np.zeros(m_in)
        lam_full[active] = lam
        res = kkt_check(prob, x, mu, lam_full).residual
        raise MaxIterError(f"no convergence after {max_iter} iterations (KKT residual {res:.3g})", x, res)

    mu, lam = _multipliers(prob, x, active)
    lam_full = np.zeros(m_in)
    lam_full[active] = lam
    report = kkt_check(prob, x, mu, lam_full, tol)
    sol = QpSolution(
        x=x,
        active_set=tuple(sorted(int(i) for i in active)),
        eq_multipliers=mu,
        ineq_multipliers=lam_full,
        kkt_residual=report.residual,
        iterations=it,
        objective=history[-1],
        history=history,
    )
    log = _monitor.get()
    if log is not None:
        log.append(sol)
    return sol
