"""Dense convex QP interface for the predictive controller.

Solves ``min 0.5 x'Px + q'x  s.t.  l <= Ax <= u`` through CVXOPT's
interior-point cone solver.  The box rows are unfolded into one-sided
inequalities for the backend and the multipliers are folded back
afterwards, so callers see duals in the box convention (positive on a
binding upper bound, negative on a binding lower bound) together with
KKT residuals measured on the original data.

An interior-point method is used deliberately: the avoidance QPs ride
long runs of nearly parallel constraint rows at a degenerate vertex,
which first-order splitting methods approach at an unusably slow rate.
The backend is deterministic — identical inputs give identical output.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from cvxopt import matrix, solvers

__all__ = ["QpResult", "solve_qp"]

log = logging.getLogger(__name__)


@dataclass
class QpResult:
    x: np.ndarray
    y: np.ndarray
    status: str  # solved | unknown
    obj: float
    iterations: int
    primal_residual: float
    dual_residual: float

    @property
    def ok(self) -> bool:
        return self.status == "solved"


def _objective(p_mat: np.ndarray, q: np.ndarray, x: np.ndarray) -> float:
    return float(0.5 * x @ p_mat @ x + q @ x)


def _residuals(p_mat, q, a_mat, l, u, x, y):
    ax = a_mat @ x
    viol = np.maximum(ax - u, 0.0)
    viol = np.maximum(viol, np.maximum(l - ax, 0.0))
    r_prim = float(np.max(viol, initial=0.0))
    r_dual = float(np.max(np.abs(p_mat @ x + q + a_mat.T @ y), initial=0.0))
    return r_prim, r_dual


def solve_qp(
    p_mat: np.ndarray,
    q: np.ndarray,
    a_mat: np.ndarray | None = None,
    l: np.ndarray | None = None,
    u: np.ndarray | None = None,
    *,
    eps: float = 1e-8,
    max_iter: int = 200,
) -> QpResult:
    """Minimize ``0.5 x'Px + q'x`` subject to ``l <= Ax <= u``.

    ``P`` must be symmetric positive semidefinite (it is symmetrized
    internally).  Unconstrained problems may pass ``A=None``.  Statuses:
    ``solved`` when the backend certifies optimality at tolerance ``eps``,
    ``unknown`` otherwise (including infeasible data, which the backend
    surfaces as a numeric failure rather than a certificate).
    """
    p_mat = np.asarray(p_mat, dtype=float)
    p_mat = 0.5 * (p_mat + p_mat.T)
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    if a_mat is None or np.size(a_mat) == 0:
        a_mat = np.zeros((0, n))
        l = np.zeros(0)
        u = np.zeros(0)
    else:
        a_mat = np.asarray(a_mat, dtype=float)
        l = np.full(a_mat.shape[0], -np.inf) if l is None else np.asarray(l, dtype=float)
        u = np.full(a_mat.shape[0], np.inf) if u is None else np.asarray(u, dtype=float)
    m = a_mat.shape[0]
    if a_mat.shape != (m, n) or l.shape != (m,) or u.shape != (m,):
        raise ValueError("inconsistent QP shapes")
    if np.any(l > u):
        raise ValueError("constraint bounds must satisfy l <= u")

    if m == 0:
        try:
            x = np.linalg.solve(p_mat, -q)
        except np.linalg.LinAlgError:
            x, *_ = np.linalg.lstsq(p_mat, -q, rcond=None)
        r_dual = float(np.max(np.abs(p_mat @ x + q), initial=0.0))
        return QpResult(x, np.zeros(0), "solved", _objective(p_mat, q, x),
                        0, 0.0, r_dual)

    fin_u = np.isfinite(u)
    fin_l = np.isfinite(l)
    g = np.vstack([a_mat[fin_u], -a_mat[fin_l]])
    h = np.concatenate([u[fin_u], -l[fin_l]])

    options = {
        "show_progress": False,
        "abstol": eps,
        "reltol": eps,
        "feastol": eps,
        "maxiters": int(max_iter),
    }
    try:
        sol = solvers.qp(matrix(p_mat), matrix(q), matrix(g), matrix(h),
                         options=options)
    except (ValueError, ArithmeticError) as exc:
        # the backend raises on pathological data (e.g. an empty feasible
        # set drives its scaling update out of domain)
        log.debug("qp backend failure treated as unknown: %s", exc)
        return QpResult(np.zeros(n), np.zeros(m), "unknown",
                        float("inf"), 0, float("inf"), float("inf"))

    x = np.asarray(sol["x"], dtype=float).ravel()
    z = np.asarray(sol["z"], dtype=float).ravel()
    y = np.zeros(m)
    n_up = int(fin_u.sum())
    y[fin_u] += z[:n_up]
    y[fin_l] -= z[n_up:]
    r_prim, r_dual = _residuals(p_mat, q, a_mat, l, u, x, y)
    status = "solved" if sol["status"] == "optimal" else "unknown"
    return QpResult(x, y, status, _objective(p_mat, q, x),
                    int(sol["iterations"]), r_prim, r_dual)
