"""Construction of symmetrised Laplacian systems.

Three input classes are supported: densities sampled on regular grids,
sampled items compared through a kernel, and graphs given by weighted edge
lists.  Each builder returns a :class:`LaplacianSystem` whose generator ``H``
is symmetric with nonnegative off-diagonals, nonpositive definite, and has the
strictly positive unit vector ``psi0`` as its null vector.  The stationary
measure of the underlying reversible Markov chain is ``psi0**2``.

The inverse temperature ``beta`` is applied at build time: for grids it scales
the pseudo-potential ``V = -log f``, for items and graphs it is an entrywise
power on the off-diagonal weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist, squareform

from .errors import (
    AllItemsRemoved,
    AllZeroDensity,
    DisconnectedInput,
    EmptyGraphAfterPruning,
    InvalidInput,
    IsolatedNode,
    NonFiniteDistance,
)

DEFAULT_FLOOR_RATIO = 1e-12
DEFAULT_OUTLIER_RATIO = 0.2
MAX_GRID_AXES = 4

NORMALIZATIONS = ("unnormalized", "symmetric")


# --------------------------------------------------------------------------
# input records
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DensityGrid:
    """Nonnegative density values on a regular grid, flattened in C order."""

    dims: tuple
    spacing: tuple
    origin: tuple
    values: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(h) for h in self.spacing)
        origin = tuple(float(o) for o in self.origin) if self.origin is not None else (0.0,) * len(dims)
        values = np.asarray(self.values, dtype=float).ravel()
        if not 1 <= len(dims) <= MAX_GRID_AXES:
            raise InvalidInput(f"grid must have 1 to {MAX_GRID_AXES} axes, got {len(dims)}")
        if len(spacing) != len(dims) or len(origin) != len(dims):
            raise InvalidInput("dims, spacing and origin must have equal length")
        if any(d < 1 for d in dims):
            raise InvalidInput("every axis needs at least one node")
        if any(not np.isfinite(h) or h <= 0 for h in spacing):
            raise InvalidInput("grid spacing must be positive and finite")
        if int(np.prod(dims)) != values.size:
            raise InvalidInput(f"product(dims)={int(np.prod(dims))} but {values.size} values given")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise InvalidInput("density values must be finite and nonnegative")
        if not np.any(values > 0):
            raise AllZeroDensity("density is zero everywhere")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.size

    def coordinates(self) -> np.ndarray:
        """(n, ndim) node coordinates in row-major order."""
        axes = [o + h * np.arange(d) for d, h, o in zip(self.dims, self.spacing, self.origin)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)


@dataclass(frozen=True)
class ItemSet:
    items: np.ndarray
    ids: Optional[Sequence] = None

    def __post_init__(self):
        X = np.asarray(self.items, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 2:
            raise InvalidInput("an item set needs at least two rows")
        if not np.all(np.isfinite(X)):
            raise InvalidInput("item coordinates must be finite")
        if self.ids is not None and len(self.ids) != X.shape[0]:
            raise InvalidInput("ids must match the number of items")
        object.__setattr__(self, "items", X)

    @property
    def n(self) -> int:
        return self.items.shape[0]


@dataclass(frozen=True)
class GraphSpec:
    """Weighted edge list; self-loops are dropped on construction."""

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    directed: bool = True

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64).ravel()
        dst = np.asarray(self.dst, dtype=np.int64).ravel()
        w = np.asarray(self.weight, dtype=float).ravel()
        n = int(self.n_nodes)
        if not (src.size == dst.size == w.size):
            raise InvalidInput("src, dst and weight must have equal length")
        if n < 1:
            raise InvalidInput("graph needs at least one node")
        if src.size and (src.min() < 0 or dst.min() < 0 or src.max() >= n or dst.max() >= n):
            raise InvalidInput("node index out of range")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise InvalidInput("edge weights must be finite and positive")
        keep = src != dst
        object.__setattr__(self, "n_nodes", n)
        object.__setattr__(self, "src", src[keep])
        object.__setattr__(self, "dst", dst[keep])
        object.__setattr__(self, "weight", w[keep])

    @classmethod
    def from_edges(cls, n_nodes: int, edges, directed: bool = True) -> "GraphSpec":
        edges = list(edges)
        src = [int(e[0]) for e in edges]
        dst = [int(e[1]) for e in edges]
        w = [float(e[2]) if len(e) > 2 else 1.0 for e in edges]
        return cls(n_nodes, src, dst, w, directed)


@dataclass(frozen=True)
class LaplacianSystem:
    """Symmetrised generator together with its null vector and stationary measure.

    ``nodes`` maps rows back to indices of the original input (items that
    survived filtering, graph nodes that survived pruning).  ``density`` is the
    normalised input density for grid systems, i.e. the beta = 1 measure the
    mixture components are reported against.
    """

    H: object  # ndarray or scipy sparse matrix
    psi0: np.ndarray
    measure: np.ndarray
    beta: float
    source_kind: str
    nodes: np.ndarray
    density: Optional[np.ndarray] = None
    dropped: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n(self) -> int:
        return self.psi0.size

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.H)

    def max_abs(self) -> float:
        if self.is_sparse:
            return float(abs(self.H).max())
        return float(np.max(np.abs(self.H)))

    def null_residual(self) -> float:
        """``max|H psi0|``; zero up to rounding by construction."""
        return float(np.max(np.abs(self.H @ self.psi0)))

    def dense_H(self) -> np.ndarray:
        return self.H.toarray() if self.is_sparse else np.asarray(self.H)

    def scaled(self, c: float) -> "LaplacianSystem":
        """Same system with the generator multiplied by ``c > 0`` (a change of time unit)."""
        return replace(self, H=self.H * float(c))


# --------------------------------------------------------------------------
# grids
# --------------------------------------------------------------------------

def negative_log_density(grid: DensityGrid, floor_ratio: float = DEFAULT_FLOOR_RATIO) -> np.ndarray:
    """Pseudo-potential ``V = -log f`` with ``f`` clamped at ``floor_ratio * max f``."""
    if not 0 < floor_ratio < 1:
        raise InvalidInput("floor_ratio must lie in (0, 1)")
    f = grid.values
    fmax = f.max()
    if fmax <= 0:
        raise AllZeroDensity("density is zero everywhere")
    return -np.log(np.maximum(f, floor_ratio * fmax))


def _grid_neighbor_pairs(dims):
    """Yield (axis, lower-node indices, upper-node indices) for every axis."""
    index = np.arange(int(np.prod(dims))).reshape(dims)
    for axis in range(len(dims)):
        if dims[axis] < 2:
            continue
        lo = [slice(None)] * len(dims)
        hi = [slice(None)] * len(dims)
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        yield axis, index[tuple(lo)].ravel(), index[tuple(hi)].ravel()


def build_grid_system(grid: DensityGrid, beta: float = 1.0,
                      floor_ratio: float = DEFAULT_FLOOR_RATIO) -> LaplacianSystem:
    """Nearest-neighbour discretisation of the symmetrised Smoluchowski operator.

    Rates between axis neighbours ``j -> k`` are ``h**-2 exp(-beta (V_k - V_j) / 2)``.
    After the similarity transform with ``exp(-beta V / 2)`` every off-diagonal
    becomes the constant ``h**-2`` and the potential only enters the diagonal.
    Missing neighbours at the boundary contribute nothing (no-flux).
    """
    if not beta > 0:
        raise InvalidInput("beta must be positive")
    V = negative_log_density(grid, floor_ratio)
    n = grid.n
    diag = np.zeros(n)
    rows, cols, vals = [], [], []
    for axis, lo, hi in _grid_neighbor_pairs(grid.dims):
        c = grid.spacing[axis] ** -2
        dV = V[hi] - V[lo]
        # outflow of lo towards hi, and of hi towards lo
        np.add.at(diag, lo, -c * np.exp(-0.5 * beta * dV))
        np.add.at(diag, hi, -c * np.exp(0.5 * beta * dV))
        rows += [lo, hi]
        cols += [hi, lo]
        vals += [np.full(lo.size, c)] * 2
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    H = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))

    psi0 = np.exp(-0.5 * beta * (V - V.min()))
    psi0 /= np.linalg.norm(psi0)
    measure = psi0 ** 2
    measure /= measure.sum()
    density = grid.values / grid.values.sum()
    return LaplacianSystem(H=H, psi0=psi0, measure=measure, beta=float(beta), source_kind="grid",
                           nodes=np.arange(n), density=density)


# --------------------------------------------------------------------------
# items
# --------------------------------------------------------------------------

def _gaussian(sq_dist: np.ndarray, scale: float) -> np.ndarray:
    return np.exp(-sq_dist / (2.0 * scale ** 2))


KERNELS: dict = {"gaussian": _gaussian}


def register_kernel(name: str, fn: Callable[[np.ndarray, float], np.ndarray]) -> None:
    """Add a kernel ``fn(squared_distances, scale) -> similarities in [0, 1]``."""
    KERNELS[name] = fn


def kernel_similarity(items: ItemSet, kernel: str = "gaussian", scale: float = 1.0,
                      hard_threshold: float = 0.0) -> np.ndarray:
    """Dense symmetric similarity matrix with unit diagonal.

    Entries below ``hard_threshold`` are set to zero to sparsify the result.
    """
    if kernel not in KERNELS:
        raise InvalidInput(f"unknown kernel {kernel!r}; known: {sorted(KERNELS)}")
    if not scale > 0:
        raise InvalidInput("kernel scale must be positive")
    if not 0 <= hard_threshold < 1:
        raise InvalidInput("hard_threshold must lie in [0, 1)")
    X = items.items if isinstance(items, ItemSet) else ItemSet(items).items
    with np.errstate(over="ignore", invalid="ignore"):
        d2 = squareform(pdist(X, "sqeuclidean"))
    if not np.all(np.isfinite(d2)):
        raise NonFiniteDistance("pairwise distances overflowed or are NaN")
    W = KERNELS[kernel](d2, float(scale))
    if hard_threshold > 0:
        W = np.where(W < hard_threshold, 0.0, W)
    np.fill_diagonal(W, 1.0)
    return 0.5 * (W + W.T)


def filter_outliers(W: np.ndarray, ratio: float = DEFAULT_OUTLIER_RATIO) -> np.ndarray:
    """Iteratively drop items whose mean similarity is below ``ratio`` times the average.

    Returns the surviving original indices in ascending order.
    """
    if not 0 < ratio < 1:
        raise InvalidInput("outlier ratio must lie in (0, 1)")
    W = np.asarray(W, dtype=float)
    keep = np.arange(W.shape[0])
    while keep.size > 1:
        sub = W[np.ix_(keep, keep)]
        means = (sub.sum(axis=1) - np.diag(sub)) / (keep.size - 1)
        low = means < ratio * means.mean()
        if not low.any():
            break
        keep = keep[~low]
    if keep.size == 0:
        raise AllItemsRemoved("outlier filtering removed every item")
    return keep


def _check_connected(Wp, nodes):
    n = Wp.shape[0]
    pattern = sp.csr_matrix(Wp) if not sp.issparse(Wp) else Wp.tocsr()
    ncomp, _ = connected_components(pattern, directed=False)
    if ncomp > 1:
        raise DisconnectedInput(f"input splits into {ncomp} connected components", components=int(ncomp))
    return n


def _system_from_weights(Wp, normalization: str, beta: float, kind: str, nodes,
                         dropped=None) -> LaplacianSystem:
    if normalization not in NORMALIZATIONS:
        raise InvalidInput(f"normalization must be one of {NORMALIZATIONS}")
    sparse = sp.issparse(Wp)
    deg = np.asarray(Wp.sum(axis=1)).ravel()
    isolated = np.flatnonzero(deg <= 0)
    if isolated.size:
        raise IsolatedNode(f"{isolated.size} node(s) have no neighbours",
                           nodes=[int(nodes[i]) for i in isolated[:20]])
    _check_connected(Wp, nodes)
    n = deg.size
    if normalization == "unnormalized":
        H = Wp - (sp.diags(deg) if sparse else np.diag(deg))
        psi0 = np.full(n, 1.0 / np.sqrt(n))
        measure = np.full(n, 1.0 / n)
    else:
        s = 1.0 / np.sqrt(deg)
        if sparse:
            H = sp.diags(s) @ Wp @ sp.diags(s) - sp.identity(n)
        else:
            H = s[:, None] * Wp * s[None, :] - np.eye(n)
        psi0 = np.sqrt(deg)
        psi0 /= np.linalg.norm(psi0)
        measure = deg / deg.sum()
    if sparse:
        H = sp.csr_matrix(H)
        H = 0.5 * (H + H.T)
    else:
        H = 0.5 * (H + H.T)
    return LaplacianSystem(H=H, psi0=psi0, measure=measure, beta=float(beta), source_kind=kind,
                           nodes=np.asarray(nodes), dropped=np.asarray(dropped if dropped is not None else [],
                                                                         dtype=np.int64))


def build_item_system(W: np.ndarray, normalization: str = "unnormalized", beta: float = 1.0,
                      nodes=None) -> LaplacianSystem:
    """Laplacian system from a similarity matrix, with off-diagonals raised to ``beta``.

    ``unnormalized`` gives ``H = W' - D`` (uniform stationary measure);
    ``symmetric`` gives ``H = D^-1/2 W' D^-1/2 - I`` (measure proportional to degree).
    """
    if not beta > 0:
        raise InvalidInput("beta must be positive")
    W = np.array(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] < 2:
        raise InvalidInput("similarity matrix must be square with at least two rows")
    if not np.all(np.isfinite(W)) or np.any(W < 0):
        raise InvalidInput("similarities must be finite and nonnegative")
    if not np.allclose(W, W.T, rtol=1e-12, atol=1e-14):
        raise InvalidInput("similarity matrix must be symmetric")
    np.fill_diagonal(W, 0.0)
    Wp = W ** beta if beta != 1 else W
    nodes = np.arange(W.shape[0]) if nodes is None else np.asarray(nodes)
    return _system_from_weights(0.5 * (Wp + Wp.T), normalization, beta, "items", nodes)


# --------------------------------------------------------------------------
# graphs
# --------------------------------------------------------------------------

def symmetrized_adjacency(graph: GraphSpec) -> sp.csr_matrix:
    """``A + A^T`` with duplicate edges summed."""
    n = graph.n_nodes
    A = sp.csr_matrix((graph.weight, (graph.src, graph.dst)), shape=(n, n))
    A.sum_duplicates()
    return sp.csr_matrix(A + A.T)


def build_graph_system(graph: GraphSpec, beta: float = 1.0,
                       normalization: str = "symmetric") -> LaplacianSystem:
    """Normalised Laplacian of the symmetrised adjacency matrix.

    Nodes with zero symmetrised degree are removed and reported in ``dropped``.
    """
    if not beta > 0:
        raise InvalidInput("beta must be positive")
    A = symmetrized_adjacency(graph)
    deg = np.asarray(A.sum(axis=1)).ravel()
    keep = np.flatnonzero(deg > 0)
    dropped = np.flatnonzero(deg <= 0)
    if keep.size == 0:
        raise EmptyGraphAfterPruning("no node has any edge")
    A = A[keep][:, keep].tocsr()
    if beta != 1:
        A.data = A.data ** beta
    if keep.size < 2:
        raise EmptyGraphAfterPruning("fewer than two connected nodes remain")
    return _system_from_weights(A, normalization, beta, "graph", keep, dropped)
