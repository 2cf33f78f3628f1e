"""Low-lying eigensystems, multiscale spectral gaps and model-order selection."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

from .errors import (
    ConvergenceFailure,
    DisconnectedSystem,
    InvalidInput,
    MacrostateError,
    NoSeparableStructure,
    ZeroDenominator,
)
from .laplacian import LaplacianSystem

DENSE_LIMIT = 4096
SPARSE_DENSE_LIMIT = 1024
ZERO_RATE_RTOL = 1e-10
DEFAULT_M_MAX = 20
DEFAULT_GAP_CUTOFF = 1.5


@dataclass(frozen=True)
class EigenBasis:
    """The ``k`` slowest modes of a system.

    ``rates`` are decay rates (negated eigenvalues, ascending), ``vectors`` the
    orthonormal eigenvectors as columns with ``vectors[:, 0] == psi0``, and
    ``omega`` the ratios ``psi_i / psi0`` whose first column is exactly one.
    """

    rates: np.ndarray
    vectors: np.ndarray
    omega: np.ndarray
    zero_tol: float

    @property
    def k(self) -> int:
        return self.rates.size


@dataclass(frozen=True)
class GapProfile:
    rates: np.ndarray
    gaps: dict
    beta: Optional[float] = None

    @property
    def m_max(self) -> int:
        return max(self.gaps) if self.gaps else 1


# --------------------------------------------------------------------------
# decomposition
# --------------------------------------------------------------------------

def _fix_signs(V: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of every column positive."""
    idx = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[idx, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def _householder_to(psi0: np.ndarray):
    """Vector ``u`` with ``(I - 2 u u^T) e_0 = psi0`` (``u`` unit, or None when psi0 == e_0)."""
    u = psi0.copy()
    u[0] -= 1.0
    nu = np.linalg.norm(u)
    if nu == 0:
        return None
    return u / nu


def _dense_modes(H: np.ndarray, psi0: np.ndarray, k: int):
    """Eigenpairs of ``-H`` restricted to the orthogonal complement of ``psi0``.

    A Householder reflection maps ``psi0`` onto the first unit vector so the
    null mode is deflated exactly and the remaining vectors are orthogonal to
    ``psi0`` by construction.
    """
    n = psi0.size
    L = -np.asarray(H, dtype=float)
    u = _householder_to(psi0)
    if u is None:
        B = L
    else:
        Lu = L @ u
        uLu = u @ Lu
        B = L - 2.0 * np.outer(u, Lu) - 2.0 * np.outer(Lu, u) + 4.0 * uLu * np.outer(u, u)
    B = 0.5 * (B + B.T)
    w, Y = np.linalg.eigh(B[1:, 1:])
    w, Y = w[: k - 1], Y[:, : k - 1]
    Z = np.vstack([np.zeros((1, Y.shape[1])), Y])
    if u is not None:
        Z = Z - 2.0 * np.outer(u, u @ Z)
    return w, Z


def _edge_rates(H, psi0: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Rayleigh quotients of ``-H`` as subtraction-free edge sums.

    With ``H psi0 = 0`` and nonnegative off-diagonals,
    ``v^T (-H) v = sum_{i<j} H_ij psi0_i psi0_j (omega_i - omega_j)^2`` for
    ``omega = v / psi0``.  Unlike eigenvalues read off a backward-stable
    solver (absolute error ~ eps * max|H|), this keeps slow rates accurate
    relative to their own size, so gap ratios do not drift with the scale of H.
    """
    if sp.issparse(H):
        T = sp.triu(H, k=1).tocoo()
        i, j, h = T.row, T.col, T.data
    else:
        i, j = np.nonzero(np.triu(np.asarray(H), k=1))
        h = np.asarray(H)[i, j]
    coef = h * psi0[i] * psi0[j]
    d = omega[i] - omega[j]
    num = coef @ (d * d)
    den = np.sum((omega * psi0[:, None]) ** 2, axis=0)
    return num / den


def _iterative_modes(H, psi0: np.ndarray, k: int, tol: float = 0.0):
    """Slowest nonzero modes by Lanczos iteration on the pseudo-inverse of ``-H``.

    The pseudo-inverse is applied by grounding the node with the largest
    ``psi0`` entry and factorising the remaining principal submatrix, which is
    nonsingular for a connected system.  The known null vector is projected out
    before and after each solve, so the slowest rates become the largest,
    well separated eigenvalues of the operator.
    """
    n = psi0.size
    L = sp.csc_matrix(-H)
    g = int(np.argmax(psi0))
    keep = np.r_[0:g, g + 1:n]
    lu = splu(L[keep][:, keep].tocsc())

    def apply(b):
        b = np.asarray(b, dtype=float).ravel()
        b = b - psi0 * (psi0 @ b)
        x = np.zeros(n)
        x[keep] = lu.solve(b[keep])
        return x - psi0 * (psi0 @ x)

    op = LinearOperator((n, n), matvec=apply, dtype=float)
    v0 = np.random.default_rng(0).standard_normal(n)
    v0 -= psi0 * (psi0 @ v0)
    nev = k - 1
    ncv = min(n - 1, max(2 * nev + 1, 20))
    try:
        theta, Z = eigsh(op, k=nev, which="LA", v0=v0, ncv=ncv, tol=tol, maxiter=max(1000, 10 * n))
    except ArpackNoConvergence as exc:
        raise ConvergenceFailure(f"Lanczos did not converge: {exc}") from exc
    order = np.argsort(-theta)
    theta, Z = theta[order], Z[:, order]
    if np.any(theta <= 0):
        raise DisconnectedSystem("pseudo-inverse has nonpositive eigenvalues")
    Z = Z - np.outer(psi0, psi0 @ Z)
    Z, _ = np.linalg.qr(Z)
    return 1.0 / theta, Z


def decompose(system: LaplacianSystem, k: int, method: str = "auto") -> EigenBasis:
    """The ``k`` smallest decay rates and orthonormal eigenvectors of ``system``.

    ``method`` is ``"dense"``, ``"iterative"`` or ``"auto"`` (dense up to
    ``DENSE_LIMIT`` nodes, or ``SPARSE_DENSE_LIMIT`` for sparse generators).
    Column 0 is the system's exact null vector; the remaining columns have
    their largest-magnitude entry made positive.
    """
    n = system.n
    if not 1 <= k <= n:
        raise InvalidInput(f"k must lie in [1, {n}]")
    scale = system.max_abs()
    zero_tol = ZERO_RATE_RTOL * scale
    psi0 = system.psi0
    mu0 = 0.0  # the edge-sum form of the null mode vanishes identically
    if k == 1:
        rates, vecs = np.array([mu0]), psi0[:, None].copy()
    else:
        if method == "auto":
            limit = SPARSE_DENSE_LIMIT if system.is_sparse else DENSE_LIMIT
            method = "dense" if n <= limit or k > n - 2 else "iterative"
        if method == "dense":
            w, Z = _dense_modes(system.dense_H(), psi0, k)
        elif method == "iterative":
            if k > n - 2:
                raise InvalidInput("iterative path needs k <= n - 2")
            w, Z = _iterative_modes(system.H, psi0, k)
        else:
            raise InvalidInput(f"unknown method {method!r}")
        Z = _fix_signs(Z)
        w = _edge_rates(system.H, psi0, Z / psi0[:, None])
        order = np.argsort(w, kind="stable")
        w, Z = w[order], Z[:, order]
        if w[0] <= zero_tol:
            raise DisconnectedSystem(
                f"second decay rate {w[0]:.3e} is below the zero-mode tolerance {zero_tol:.3e}",
                rate=float(w[0]))
        rates = np.concatenate([[mu0], w])
        vecs = np.column_stack([psi0, Z])
    omega = vecs / psi0[:, None]
    omega[:, 0] = 1.0
    return EigenBasis(rates=rates, vectors=vecs, omega=omega, zero_tol=zero_tol)


# --------------------------------------------------------------------------
# gaps
# --------------------------------------------------------------------------

def spectral_gaps(rates: Sequence[float], zero_tol: float = 0.0, beta: Optional[float] = None) -> GapProfile:
    """Ratios ``r_m = mu_m / mu_{m-1}`` for ``m = 2 .. K-1``."""
    rates = np.asarray(rates, dtype=float)
    if np.any(np.diff(rates) < 0):
        raise InvalidInput("rates must be ascending")
    gaps = {}
    for m in range(2, rates.size):
        if rates[m - 1] <= zero_tol:
            raise ZeroDenominator(f"rate mu_{m - 1} = {rates[m - 1]:.3e} is zero", m=m)
        gaps[m] = float(rates[m] / rates[m - 1])
    return GapProfile(rates=rates, gaps=gaps, beta=beta)


def select_m(profile, cutoff: float = DEFAULT_GAP_CUTOFF) -> int:
    """Largest ``m`` whose gap exceeds ``cutoff``."""
    if not cutoff > 1:
        raise InvalidInput("gap cutoff must exceed 1")
    gaps = profile.gaps if isinstance(profile, GapProfile) else dict(profile)
    if not gaps:
        raise InvalidInput("empty gap profile")
    above = [m for m, r in gaps.items() if r > cutoff]
    if not above:
        raise NoSeparableStructure(
            f"no spectral gap exceeds {cutoff}", max_gap=float(max(gaps.values())))
    return max(above)


def gap_profile(system: LaplacianSystem, m_max: int = DEFAULT_M_MAX, method: str = "auto") -> GapProfile:
    k = min(m_max + 1, system.n)
    basis = decompose(system, k, method=method)
    return spectral_gaps(basis.rates, basis.zero_tol, beta=system.beta)


@dataclass
class BetaScan:
    """Gap table: ``table[i, c]`` is ``r_{i+2}`` at ``betas[c]`` (NaN where unavailable)."""

    betas: np.ndarray
    m_values: np.ndarray
    table: np.ndarray
    rates: list
    errors: dict = field(default_factory=dict)

    def column(self, c: int) -> dict:
        return {int(m): float(r) for m, r in zip(self.m_values, self.table[:, c]) if np.isfinite(r)}

    def profile(self, c: int) -> GapProfile:
        return GapProfile(rates=self.rates[c], gaps=self.column(c), beta=float(self.betas[c]))

    def to_csv(self, path) -> None:
        write_gap_csv(path, self)


def scan_beta(build: Callable[[float], LaplacianSystem], beta_grid: Sequence[float],
              m_max: int = DEFAULT_M_MAX, workers: int = 1, method: str = "auto") -> BetaScan:
    """Rebuild and decompose the system at every beta, tabulating the gaps.

    A failing column is recorded in ``errors`` and left as NaN.
    """
    betas = np.asarray(beta_grid, dtype=float)
    if betas.size == 0 or np.any(betas <= 0):
        raise InvalidInput("beta grid must be nonempty and positive")
    if np.any(np.diff(betas) < 0):
        raise InvalidInput("beta grid must be ascending")

    def one(beta):
        try:
            return gap_profile(build(float(beta)), m_max, method), None
        except MacrostateError as exc:
            return None, exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, betas))
    else:
        results = [one(b) for b in betas]

    m_values = np.arange(2, m_max + 1)
    table = np.full((m_values.size, betas.size), np.nan)
    rates, errors = [], {}
    for c, (prof, exc) in enumerate(results):
        if prof is None:
            rates.append(np.zeros(0))
            errors[c] = exc.to_dict()
            continue
        rates.append(prof.rates)
        for m, r in prof.gaps.items():
            table[m - 2, c] = r
    return BetaScan(betas=betas, m_values=m_values, table=table, rates=rates, errors=errors)


def write_gap_csv(path, scan: BetaScan) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["beta"] + [f"r_{m}" for m in scan.m_values])
        for c, beta in enumerate(scan.betas):
            w.writerow([repr(float(beta))] + ["" if not np.isfinite(r) else repr(float(r)) for r in scan.table[:, c]])
