"""Concave quadratic program for the macrostate coefficient matrix.

The decision variable is the ``m x m`` matrix ``M`` mapping the ratio basis
``omega`` to window functions ``w = M omega``.  Feasible matrices satisfy

* ``M^T e = e_1`` (the windows sum to one at every point), and
* ``(M omega(x_j))_a >= 0`` for every discretisation point ``x_j``.

The objective ``1 - ||M||_F^2`` is concave, so minima sit at vertices of the
polytope.  We eliminate the equalities by writing the last row of ``M`` as
``e_1 - sum(other rows)``, which leaves ``d = m (m - 1)`` free variables and
``n m`` inequality rows; row ``r = j m + a`` is the constraint
``w_a(x_j) >= 0``.
"""

from __future__ import annotations

import functools
import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as la

from .errors import (
    DegenerateOptimum,
    InvalidInput,
    MaxRowGenerationRounds,
    RankDeficientBasis,
    TooLargeForOracle,
)
from .simplex import solve_inequality_lp

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_N_STARTS = 16
DEFAULT_BATCH = 50
MAX_DEGENERATE_BASES = 64
RANK_TOL = 1e-3  # minimum sigma_min / sigma_max of an admissible M
CORE_LEVEL = 0.5  # every admissible window reaches this value somewhere
FEAS_TOL = 1e-8
ORACLE_MAX_M = 3
START_REDRAWS = 10
ORACLE_MAX_POINTS = 12


@dataclass(frozen=True)
class MacrostatePolytope:
    """Feasible set of coefficient matrices for ``m`` components."""

    m: int
    omega: np.ndarray  # (n, m), column 0 all ones

    @property
    def n(self) -> int:
        return self.omega.shape[0]

    @property
    def dim(self) -> int:
        return self.m * (self.m - 1)

    @property
    def n_rows(self) -> int:
        return self.n * self.m

    def uniform(self) -> np.ndarray:
        """The centre point: every window equal to ``1/m``."""
        M = np.zeros((self.m, self.m))
        M[:, 0] = 1.0 / self.m
        return M

    def to_matrix(self, y: np.ndarray) -> np.ndarray:
        m = self.m
        top = np.asarray(y, dtype=float).reshape(m - 1, m)
        last = -top.sum(axis=0)
        last[0] += 1.0
        return np.vstack([top, last])

    def to_vector(self, M: np.ndarray) -> np.ndarray:
        return np.asarray(M, dtype=float)[: self.m - 1].ravel().copy()

    def windows(self, M: np.ndarray) -> np.ndarray:
        """``w[j, a] = (M omega(x_j))_a``."""
        return self.omega @ np.asarray(M).T

    def rows(self, idx) -> tuple:
        """Constraint rows ``A y <= b`` for row ids ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        m = self.m
        j, a = np.divmod(idx, m)
        A = np.zeros((idx.size, m - 1, m))
        om = self.omega[j]
        inner = a < m - 1
        A[np.flatnonzero(inner), a[inner], :] = -om[inner]
        A[~inner] = om[~inner][:, None, :]
        b = (~inner).astype(float)
        return A.reshape(idx.size, -1), b

    def linear_objective(self, C: np.ndarray) -> np.ndarray:
        """Vector ``c`` with ``<C, M(y)> = c.y + const``."""
        C = np.asarray(C, dtype=float)
        return (C[:-1] - C[-1]).ravel()

    def min_window(self, M: np.ndarray) -> float:
        return float(self.windows(M).min())

    def is_feasible(self, M: np.ndarray, tol: float = FEAS_TOL) -> bool:
        M = np.asarray(M, dtype=float)
        eq = np.abs(M.sum(axis=0) - np.eye(self.m)[0]).max()
        return bool(eq <= 1e-9 and self.min_window(M) >= -tol)

    def seed_rows(self) -> np.ndarray:
        """Rows of ``m`` points whose ratio vectors span the space (bounds the LP)."""
        _, _, piv = la.qr(self.omega.T, pivoting=True, mode="economic")
        pts = np.sort(piv[: self.m])
        return (pts[:, None] * self.m + np.arange(self.m)[None, :]).ravel()


@dataclass
class LPVertex:
    M: np.ndarray
    rows: np.ndarray  # working rows at termination
    rounds: int
    pivots: int
    basis: Optional[np.ndarray] = None  # the d row ids defining the vertex


@dataclass
class QPSolution:
    M: np.ndarray
    upsilon: float
    start_index: int
    iterations: int
    active_points: np.ndarray
    det_abs: float
    converged: bool = True
    trace: list = field(default_factory=list)  # upsilon after every accepted step
    runs: tuple = ()  # per-start solutions (multistart only)

    @property
    def norm2(self) -> float:
        return float(np.sum(self.M ** 2))


def upsilon(M: np.ndarray) -> float:
    """``1 - ||M||_F^2``."""
    M = np.asarray(M, dtype=float)
    return float(1.0 - np.sum(M * M))


def is_full_rank(M: np.ndarray, tol: float = RANK_TOL) -> bool:
    """Numerical GL(m) membership: ``sigma_min(M) >= tol * sigma_max(M)``.

    Matrices just inside GL(m) describe a near-empty component split off a
    merged pair; the relative threshold keeps them out.
    """
    sv = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    return bool(sv[-1] >= tol * sv[0])


def admissible(polytope: "MacrostatePolytope", M: np.ndarray, rank_tol: float = RANK_TOL,
               core_level: float = CORE_LEVEL) -> bool:
    """Whether ``M`` is an acceptable optimum: nonsingular and every component has a core.

    Invertibility alone is an open condition: ``||M||^2`` can be pushed up by
    merging two components and leaving a near-empty one behind, which
    approaches the singular boundary.  Requiring each window to reach
    ``core_level`` at some point rules such solutions out.
    """
    if not is_full_rank(M, rank_tol):
        return False
    return bool(polytope.windows(M).max(axis=0).min() >= core_level)


def build_polytope(basis, m: int) -> MacrostatePolytope:
    """Polytope over the first ``m`` ratio-basis columns of an :class:`EigenBasis`."""
    omega = basis.omega if hasattr(basis, "omega") else np.asarray(basis, dtype=float)
    if not 1 <= m <= omega.shape[1]:
        raise InvalidInput(f"m must lie in [1, {omega.shape[1]}]")
    om = np.ascontiguousarray(omega[:, :m], dtype=float)
    if om.shape[0] < m or np.linalg.matrix_rank(om / np.linalg.norm(om, axis=0)) < m:
        raise RankDeficientBasis(f"ratio basis has rank below m={m}")
    return MacrostatePolytope(m=m, omega=om)


def _solution(poly, M, **kw) -> QPSolution:
    W = poly.windows(M)
    active = np.flatnonzero(W.min(axis=1) <= FEAS_TOL)
    return QPSolution(M=M, upsilon=upsilon(M), active_points=active,
                      det_abs=float(abs(np.linalg.det(M))), **kw)


def restore_feasibility(polytope: MacrostatePolytope, M: np.ndarray) -> np.ndarray:
    """Pull a slightly infeasible ``M`` toward the uniform point until every window is >= 0.

    Rows nearly parallel to the active ones are kept out of the LP basis to
    avoid singular bases, which can leave violations of order 1e-8; the convex
    combination ``(1 - lam) M + lam M0`` removes them exactly.
    """
    wmin = polytope.min_window(M)
    if wmin >= 0:
        return M
    lam = -wmin / (1.0 / polytope.m - wmin)
    return (1.0 - lam) * M + lam * polytope.uniform()


def solve_lp(objective: np.ndarray, polytope: MacrostatePolytope, tol: float = DEFAULT_TOL,
             batch: int = DEFAULT_BATCH, rows=None, max_rounds: int = 10_000) -> LPVertex:
    """Vertex maximising ``<objective, M>`` by lazy row generation.

    The LP is solved over a working subset of rows; all ``n m`` rows are then
    scanned and the ``batch`` most violated are added until none is violated
    by more than ``tol``.  ``rows`` may seed the working set.
    """
    poly = polytope
    m = poly.m
    if m == 1:
        return LPVertex(M=np.ones((1, 1)), rows=np.zeros(0, dtype=np.int64), rounds=0, pivots=0,
                        basis=np.zeros(0, dtype=np.int64))
    c = poly.linear_objective(objective)
    y0 = poly.to_vector(poly.uniform())
    work = poly.seed_rows()
    if rows is not None and len(rows):
        work = np.union1d(work, np.asarray(rows, dtype=np.int64))
    pivots = 0
    for rnd in range(1, max_rounds + 1):
        A, b = poly.rows(work)
        res = solve_inequality_lp(A, b, c, y0)
        pivots += res.pivots
        M = poly.to_matrix(res.x)
        viol = -poly.windows(M).ravel()
        bad = np.flatnonzero(viol > tol)
        if bad.size == 0:
            M = restore_feasibility(poly, M)
            return LPVertex(M=M, rows=work, rounds=rnd, pivots=pivots, basis=work[res.basis])
        worst = bad[np.lexsort((bad, -viol[bad]))][:batch]
        new = np.union1d(work, worst)
        if new.size == work.size:
            # violated rows already in the working set: rounding, accept
            M = restore_feasibility(poly, M)
            return LPVertex(M=M, rows=work, rounds=rnd, pivots=pivots, basis=work[res.basis])
        work = new
    raise MaxRowGenerationRounds(f"row generation did not settle in {max_rounds} rounds")


def _norm2(poly, M):
    return float(np.sum(M ** 2))


def core_level(polytope: MacrostatePolytope, M: np.ndarray) -> float:
    """Weakest core: ``min_a max_j w_a(x_j)``."""
    return float(polytope.windows(M).max(axis=0).min())


def _best_neighbor(poly: MacrostatePolytope, M: np.ndarray, basis: np.ndarray, tol: float,
                   admit, score=_norm2, max_bases: int = MAX_DEGENERATE_BASES):
    """Best improving vertex adjacent to ``M`` under ``score`` (default ``||M||^2``).

    Releasing basis row ``k`` gives the edge direction ``B^{-1}(-e_k)``; a
    ratio test over all ``n m`` rows finds where the edge ends.  A zero-length
    edge means ``M`` is degenerate; the blocking row is then swapped into the
    basis and the alternative basis is searched as well (breadth first, at most
    ``max_bases`` bases).  Returns ``(M', basis')`` or None when no neighbour
    passing ``admit`` beats ``score(M) + tol``.
    """
    W = np.maximum(poly.windows(M), 0.0).ravel()
    zero = poly.to_matrix(np.zeros(poly.dim))
    norm = score(poly, M)
    best = None
    queue = [np.sort(np.asarray(basis, dtype=np.int64))]
    seen = {tuple(queue[0])}
    while queue:
        B = queue.pop(0)
        A, _ = poly.rows(B)
        A = A / np.linalg.norm(A, axis=1)[:, None]
        if np.linalg.cond(A) > 1e10:
            continue
        D = np.linalg.solve(A, -np.eye(poly.dim))
        D /= np.linalg.norm(D, axis=0)
        for k in range(poly.dim):
            dM = poly.to_matrix(D[:, k]) - zero
            dW = poly.windows(dM).ravel()
            neg = np.flatnonzero(dW < -1e-9 * np.abs(poly.omega).max())
            if neg.size == 0:
                continue
            t = W[neg] / -dW[neg]
            i = int(np.argmin(t))
            nb = B.copy()
            nb[k] = neg[i]
            if t[i] <= 1e-12:
                key = tuple(np.sort(nb))
                if key not in seen and len(seen) < max_bases:
                    seen.add(key)
                    queue.append(np.sort(nb))
                continue
            U = restore_feasibility(poly, M + t[i] * dM)
            nu = score(poly, U)
            if nu <= norm + tol or (admit is not None and not admit(U)):
                continue
            if best is None or nu > best[0]:
                best = (nu, U, nb)
    return None if best is None else (best[1], best[2])


def frank_wolfe(polytope: MacrostatePolytope, start: np.ndarray, tol: float = DEFAULT_TOL,
                max_iter: int = 100, admit=None, trace=None,
                start_basis=None, neighbors: bool = True) -> QPSolution:
    """Modified vertex-hopping Frank-Wolfe for ``max ||M||^2`` (``min 1 - ||M||^2``).

    Each step solves the LP linearised at the current iterate.  On a segment a
    convex function peaks at an endpoint, so the step is the full jump to the
    LP vertex ``s``; it is taken only if ``||s||^2`` exceeds the current value
    by more than ``tol``.  When the linearisation stalls at a vertex and
    ``neighbors`` is set, the vertices adjacent along its basis edges are
    checked and the best improving one is taken, after which the linearised
    steps resume.  ``admit``, when given, is a predicate on ``M``; vertices
    failing it are never accepted (multistart passes :func:`admissible`).

    ``start_basis`` gives the defining rows when ``start`` is itself a vertex.
    ``trace``, when given, is a text stream receiving one JSON line per step.
    """
    poly = polytope
    M = np.array(start, dtype=float)
    if M.shape != (poly.m, poly.m) or not poly.is_feasible(M):
        raise InvalidInput("start matrix is not feasible")
    if poly.m == 1:
        return _solution(poly, np.ones((1, 1)), start_index=0, iterations=0, trace=[0.0])
    norm = float(np.sum(M ** 2))
    basis = None if start_basis is None else np.asarray(start_basis, dtype=np.int64)
    history = [1.0 - norm]
    rows = None
    converged = False
    steps = 0
    for it in range(max_iter):
        v = solve_lp(M, poly, tol=tol, rows=rows)
        rows = v.rows
        s = v.M
        ns = float(np.sum(s ** 2))
        accept = ns > norm + tol and (admit is None or admit(s))
        kind = "lp"
        if not accept and neighbors and basis is not None:
            nb = _best_neighbor(poly, M, basis, tol, admit)
            if nb is not None:
                s, sb = nb
                ns = float(np.sum(s ** 2))
                accept, kind = True, "edge"
                rows = np.union1d(rows, sb)
        if trace is not None:
            trace.write(json.dumps({"iteration": it, "step": kind, "upsilon": 1.0 - ns,
                                    "accepted": bool(accept), "working_rows": int(rows.size),
                                    "lp_rounds": v.rounds}) + "\n")
        if not accept:
            converged = True
            break
        M, norm = s, ns
        basis = v.basis if kind == "lp" else sb
        steps += 1
        history.append(1.0 - norm)
    if not converged:
        log.warning("Frank-Wolfe stopped after %d iterations without converging", max_iter)
    return _solution(poly, M, start_index=0, iterations=steps, converged=converged, trace=history)


def canonical_order(M: np.ndarray) -> np.ndarray:
    """Rows sorted by descending weight ``M[:, 0]`` (stable)."""
    order = np.argsort(-M[:, 0], kind="stable")
    return M[order]


def _pick_best(cands, admit, norm_tol=1e-9):
    full = [c for c in cands if admit(c.M)]
    if not full:
        raise DegenerateOptimum("no candidate optimum is nonsingular with a core for every component; try a smaller m")
    top = max(c.norm2 for c in full)
    close = [c for c in full if c.norm2 >= top - norm_tol]
    # max() keeps the first of equal keys, i.e. the lowest start index
    return max(close, key=lambda c: c.det_abs)


def _walk_to_admissible(poly, M, basis, admit, max_steps: int = 100):
    """Climb adjacent vertices raising :func:`core_level` until ``admit`` holds."""
    for _ in range(max_steps):
        if admit(M):
            break
        nb = _best_neighbor(poly, M, basis, 1e-9, None, score=core_level)
        if nb is None:
            break
        M, basis = nb
    return M, basis


def _core_objective(poly: MacrostatePolytope, rng) -> np.ndarray:
    """``C`` with ``<C, M> = sum_a w_a(x_{j_a})`` for random distinct points ``j``."""
    pts = rng.choice(poly.n, size=poly.m, replace=False)
    om = poly.omega[pts]
    return om / np.linalg.norm(om, axis=1)[:, None]


def multistart_optimize(polytope: MacrostatePolytope, n_starts: int = DEFAULT_N_STARTS, seed: int = 0,
                        tol: float = DEFAULT_TOL, max_iter: int = 100, trace=None,
                        rank_tol: float = RANK_TOL, core_level: float = CORE_LEVEL) -> QPSolution:
    """Best of several Frank-Wolfe runs.

    Start 0 is the uniform matrix; the others are LP vertices for seeded random
    linear objectives.  Odd starts use core objectives
    ``sum_a w_a(x_{j_a})`` for ``m`` random distinct points, which favour
    vertices where every component dominates somewhere; even starts use
    Gaussian objectives.  A start that is not :func:`admissible` is redrawn
    up to ``START_REDRAWS`` times.  Only admissible results are eligible;
    among those the largest ``||M||^2`` wins, near-ties going to the larger
    ``|det M|`` and then the lower start index.  Rows of the result are put in
    canonical order.
    """
    if n_starts < 1:
        raise InvalidInput("n_starts must be at least 1")
    poly = polytope
    if poly.m == 1:
        sol = _solution(poly, np.ones((1, 1)), start_index=0, iterations=0, trace=[0.0])
        sol.runs = (sol,)
        return sol
    admit = functools.partial(admissible, poly, rank_tol=rank_tol, core_level=core_level)
    rng = np.random.default_rng(seed)
    starts = [(poly.uniform(), None)]
    for i in range(1, n_starts):
        for _attempt in range(START_REDRAWS):
            v = solve_lp(_core_objective(poly, rng) if i % 2 else rng.standard_normal((poly.m, poly.m)),
                         poly, tol=tol)
            M0, B0 = _walk_to_admissible(poly, v.M, v.basis, admit)
            if admit(M0):
                break
        starts.append((M0, B0))
    runs = []
    for i, (M0, B0) in enumerate(starts):
        if trace is not None:
            trace.write(json.dumps({"start": i}) + "\n")
        sol = frank_wolfe(poly, M0, tol=tol, max_iter=max_iter, admit=admit, trace=trace,
                          start_basis=B0)
        sol.start_index = i
        runs.append(sol)
    best = _pick_best(runs, admit)
    out = _solution(poly, canonical_order(best.M), start_index=best.start_index,
                    iterations=best.iterations, converged=best.converged, trace=list(best.trace))
    out.runs = tuple(runs)
    return out


# --------------------------------------------------------------------------
# brute-force oracle
# --------------------------------------------------------------------------

def polytope_vertices(polytope: MacrostatePolytope, tol: float = FEAS_TOL,
                      chunk: int = 20_000) -> np.ndarray:
    """All vertices, by solving every square system of ``d`` active rows.

    Exponential in size; guarded to ``m <= 3`` and at most 12 points.
    """
    poly = polytope
    if poly.m > ORACLE_MAX_M or poly.n > ORACLE_MAX_POINTS:
        raise TooLargeForOracle(f"oracle limited to m <= {ORACLE_MAX_M} and <= {ORACLE_MAX_POINTS} points")
    if poly.m == 1:
        return np.ones((1, 1, 1))
    d = poly.dim
    A, b = poly.rows(np.arange(poly.n_rows))
    nrm = np.linalg.norm(A, axis=1)
    nrm[nrm == 0] = 1.0
    A, b = A / nrm[:, None], b / nrm
    combos = itertools.combinations(range(poly.n_rows), d)
    found = []
    while True:
        block = np.fromiter(itertools.chain.from_iterable(itertools.islice(combos, chunk)),
                            dtype=np.int64)
        if block.size == 0:
            break
        idx = block.reshape(-1, d)
        As, bs = A[idx], b[idx]
        # unit rows: a tiny singular value means nearly parallel constraints whose
        # intersection is numerically meaningless
        ok = np.linalg.svd(As, compute_uv=False)[:, -1] > 1e-7
        if not ok.any():
            continue
        ys = np.linalg.solve(As[ok], bs[ok][..., None])[..., 0]
        feas = np.all(ys @ A.T <= b + tol, axis=1)
        found.extend(ys[feas])
    if not found:
        return np.zeros((0, poly.m, poly.m))
    Y = np.round(np.array(found), 9)
    _, first = np.unique(Y, axis=0, return_index=True)
    return np.array([poly.to_matrix(found[i]) for i in np.sort(first)])


def enumerate_vertices_bruteforce(polytope: MacrostatePolytope, rank_tol: float = RANK_TOL,
                                  core_level: float = CORE_LEVEL) -> QPSolution:
    """Global optimum over nonsingular vertices, with the multistart tie-breaks."""
    poly = polytope
    verts = polytope_vertices(poly)
    cands = []
    for i, M in enumerate(verts):
        cands.append(_solution(poly, M, start_index=i, iterations=0))
    best = _pick_best(cands, lambda M: admissible(poly, M, rank_tol, core_level))
    return _solution(poly, canonical_order(best.M), start_index=best.start_index, iterations=0)
