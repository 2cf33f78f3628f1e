"""Dense revised simplex for inequality-form linear programs.

Solves ``max c.x  s.t.  A x <= b`` with ``x`` free and the feasible region
bounded, starting from a known feasible point.  A basis is a set of ``d``
linearly independent active rows; the method moves along edges of the
polytope until every Lagrange multiplier of the active rows is nonnegative.
Pricing uses Bland's smallest-index rule; the ratio test takes the smallest
index among tied rows with a pivot within a factor of the largest.  The
pivot sequence is deterministic.

This is the primal simplex on the inequality form, equivalently the dual
simplex on the standard-form dual ``min b.u  s.t.  A^T u = c, u >= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import LPInfeasible, LPUnbounded, MacrostateError

FEAS_TOL = 1e-9
PIVOT_TOL = 1e-9
DEP_TOL = 1e-7  # rows this close to the span of the active rows may not enter
STRONG_PIVOT = 0.1


@dataclass
class LPResult:
    x: np.ndarray
    basis: np.ndarray  # indices of the active rows defining the vertex
    objective: float
    pivots: int


def _ratio_test(A, b, x, direction, exclude, pivot_tol, eligible=None):
    Ad = A @ direction
    cand = Ad > pivot_tol
    cand[exclude] = False
    if eligible is not None and np.any(cand & eligible):
        cand &= eligible
    idx = np.flatnonzero(cand)
    if idx.size == 0:
        return None, 0.0
    slack = np.maximum(b[idx] - A[idx] @ x, 0.0)
    t = slack / Ad[idx]
    tmin = t.min()
    tied = t <= tmin + 1e-12 * (1.0 + tmin)
    # among the tied rows keep the well-conditioned pivots (nearly parallel rows
    # otherwise make the next basis singular), then take the smallest index
    piv = Ad[idx]
    strong = tied & (piv >= STRONG_PIVOT * piv[tied].max())
    return int(idx[strong][0]), float(tmin)


def solve_inequality_lp(A: np.ndarray, b: np.ndarray, c: np.ndarray, x0: np.ndarray,
                        feas_tol: float = FEAS_TOL, pivot_tol: float = PIVOT_TOL,
                        max_pivots: int = 100_000) -> LPResult:
    """Maximise ``c.x`` over ``{x : A x <= b}`` starting from the feasible point ``x0``."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    r, d = A.shape
    # unit rows make the tolerances scale free
    norms = np.linalg.norm(A, axis=1)
    norms[norms == 0] = 1.0
    A = A / norms[:, None]
    b = b / norms
    x = np.array(x0, dtype=float)
    if np.any(A @ x - b > feas_tol):
        raise LPInfeasible("starting point violates the constraints")
    cscale = max(1.0, float(np.abs(c).max()) if c.size else 1.0)
    opt_tol = 1e-9 * cscale
    pivots = 0

    # crossover: walk from x0 to a vertex without decreasing the objective
    active: list = []
    while len(active) < d:
        if active:
            Q, _ = la.qr(A[active].T, mode="full")
            N = Q[:, len(active):]
        else:
            N = np.eye(d)
        # a row nearly in the span of the active rows would make the basis
        # singular; it is left out (its violation is at most DEP_TOL * step)
        indep = np.linalg.norm(A @ N, axis=1) > DEP_TOL
        g = N @ (N.T @ c)
        if np.linalg.norm(g) <= 1e-12 * cscale:
            g = N[:, 0].copy()
        g /= np.linalg.norm(g)
        if c @ g < 0:
            g = -g
        enter, t = _ratio_test(A, b, x, g, active, pivot_tol, indep)
        if enter is None:
            g = -g
            enter, t = _ratio_test(A, b, x, g, active, pivot_tol, indep)
            if enter is None or c @ g < -opt_tol:
                raise LPUnbounded("feasible region is unbounded")
        x = x + t * g
        active.append(enter)
        pivots += 1

    # simplex phase
    basis = np.array(active)
    while True:
        if pivots >= max_pivots:
            raise MacrostateError(f"simplex exceeded {max_pivots} pivots")
        B = A[basis]
        lam = np.linalg.solve(B.T, c)
        neg = np.flatnonzero(lam < -opt_tol)
        if neg.size == 0:
            break
        k = neg[np.argmin(basis[neg])]
        e = np.zeros(d)
        e[k] = -1.0
        direction = np.linalg.solve(B, e)
        # unit direction is the normal of the other d - 1 basis rows, so a
        # row's pivot is its distance from their span
        direction /= np.linalg.norm(direction)
        enter, t = _ratio_test(A, b, x, direction, basis, pivot_tol, (A @ direction) > DEP_TOL)
        if enter is None:
            raise LPUnbounded("feasible region is unbounded")
        x = x + t * direction
        basis[k] = enter
        pivots += 1
    order = np.argsort(basis)
    return LPResult(x=x, basis=basis[order], objective=float(c @ x), pivots=pivots)
