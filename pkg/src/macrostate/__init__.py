"""Macrostate clustering: mixture models from low-lying Laplacian eigenvectors."""

from .errors import MacrostateError
from .laplacian import (
    DensityGrid,
    GraphSpec,
    ItemSet,
    LaplacianSystem,
    build_graph_system,
    build_grid_system,
    build_item_system,
    filter_outliers,
    kernel_similarity,
)
from .mixture import MacrostateModel, assemble, hard_labels, hard_threshold
from .qp import (
    MacrostatePolytope,
    QPSolution,
    build_polytope,
    enumerate_vertices_bruteforce,
    frank_wolfe,
    multistart_optimize,
    solve_lp,
)
from .spectra import EigenBasis, GapProfile, decompose, scan_beta, select_m, spectral_gaps
from .synthetic import SyntheticSpec, generate_synthetic_mixture
from .validation import kmeans, match_components, relative_error, silhouette

__version__ = "0.1.0"
