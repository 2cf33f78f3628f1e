"""End-to-end orchestration: load input, build systems, scan, select, fit, validate."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from . import io
from .errors import InvalidInput, NoSeparableStructure, ZeroWeightComponent
from .laplacian import (
    DEFAULT_FLOOR_RATIO,
    DEFAULT_OUTLIER_RATIO,
    LaplacianSystem,
    build_graph_system,
    build_grid_system,
    build_item_system,
    filter_outliers,
    kernel_similarity,
)
from .mixture import MacrostateModel, assemble, hard_threshold
from .qp import CORE_LEVEL, DEFAULT_N_STARTS, DEFAULT_TOL, RANK_TOL, QPSolution, build_polytope, multistart_optimize
from .spectra import (
    DEFAULT_GAP_CUTOFF,
    DEFAULT_M_MAX,
    BetaScan,
    EigenBasis,
    GapProfile,
    decompose,
    scan_beta,
    select_m,
    spectral_gaps,
)
from .validation import kmeans_baseline, relative_error, silhouette

INPUT_KINDS = ("grid", "items", "graph")
DEFAULT_NORMALIZATION = {"items": "unnormalized", "graph": "symmetric"}


@dataclass
class RunConfig:
    input_kind: str = "grid"
    input: Optional[str] = None
    beta: float = 1.0
    beta_grid: Optional[str] = None  # "start:stop:count[:log]"
    m_max: int = DEFAULT_M_MAX
    m: Optional[int] = None
    gap_cutoff: float = DEFAULT_GAP_CUTOFF
    kernel: str = "gaussian"
    scale: float = 1.0
    hard_threshold: float = 0.0
    normalization: Optional[str] = None
    outlier_ratio: float = DEFAULT_OUTLIER_RATIO
    floor_ratio: float = DEFAULT_FLOOR_RATIO
    n_starts: int = DEFAULT_N_STARTS
    seed: int = 0
    tol: float = DEFAULT_TOL
    rank_tol: float = RANK_TOL
    core_level: float = CORE_LEVEL
    id_column: bool = False
    round_dedup: Optional[float] = None
    directed: bool = True
    crisp: bool = False
    truth: Optional[str] = None
    method: str = "auto"
    workers: int = 1
    output_dir: str = "."

    def __post_init__(self):
        if self.input_kind not in INPUT_KINDS:
            raise InvalidInput(f"input kind must be one of {INPUT_KINDS}")
        if not self.beta > 0:
            raise InvalidInput("beta must be positive")
        if self.m_max < 2:
            raise InvalidInput("m_max must be at least 2")
        if self.m is not None and self.m < 1:
            raise InvalidInput("m must be at least 1")
        if not self.gap_cutoff > 1:
            raise InvalidInput("gap cutoff must exceed 1")
        if not 0 <= self.outlier_ratio < 1:
            raise InvalidInput("outlier ratio must lie in [0, 1)")
        if self.n_starts < 1:
            raise InvalidInput("n_starts must be at least 1")
        if not self.tol > 0:
            raise InvalidInput("tol must be positive")

    def resolved_normalization(self) -> str:
        return self.normalization or DEFAULT_NORMALIZATION.get(self.input_kind, "symmetric")

    def betas(self) -> np.ndarray:
        return parse_beta_grid(self.beta_grid) if self.beta_grid else np.array([self.beta])

    def to_lines(self) -> list:
        """``key=value`` lines readable by ``--config``."""
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            key = f.name.replace("_", "-")
            out.append(f"{key}={str(v).lower() if isinstance(v, bool) else v}")
        return out


def parse_beta_grid(text: str) -> np.ndarray:
    """``start:stop:count`` (linear) or ``start:stop:count:log``."""
    parts = [p.strip() for p in str(text).split(":")]
    if len(parts) not in (3, 4):
        raise InvalidInput("beta grid must be start:stop:count[:log|lin]")
    try:
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise InvalidInput(f"bad beta grid {text!r}: {exc}") from exc
    spacing = parts[3] if len(parts) == 4 else "lin"
    if count < 1 or not 0 < start <= stop:
        raise InvalidInput("beta grid needs 0 < start <= stop and count >= 1")
    if spacing == "log":
        return np.geomspace(start, stop, count)
    if spacing in ("lin", "linear"):
        return np.linspace(start, stop, count)
    raise InvalidInput(f"unknown beta spacing {spacing!r}")


# --------------------------------------------------------------------------
# inputs
# --------------------------------------------------------------------------

@dataclass
class Source:
    kind: str
    data: object  # DensityGrid, ItemSet or GraphSpec
    truth: Optional[np.ndarray] = None  # weighted ground-truth components (grid inputs)

    @property
    def ids(self) -> Optional[list]:
        if self.kind == "items" and self.data.ids is not None:
            return list(self.data.ids)
        return None

    def coordinates(self) -> Optional[np.ndarray]:
        if self.kind == "grid":
            return self.data.coordinates()
        if self.kind == "items":
            return self.data.items
        return None


def load_truth(path) -> np.ndarray:
    _, rows = io._read_numeric_csv(path)
    return np.array([[float(c) for c in r] for r in rows])


def load_source(cfg: RunConfig) -> Source:
    if not cfg.input:
        raise InvalidInput("no input file given")
    if cfg.input_kind == "grid":
        data = io.load_density_grid(cfg.input)
    elif cfg.input_kind == "items":
        data = io.load_items(cfg.input, id_column=cfg.id_column, round_step=cfg.round_dedup)
    else:
        data = io.load_graph(cfg.input, directed=cfg.directed)
    truth = load_truth(cfg.truth) if cfg.truth else None
    return Source(kind=cfg.input_kind, data=data, truth=truth)


def system_builder(source: Source, cfg: RunConfig) -> Callable[[float], LaplacianSystem]:
    """``beta -> LaplacianSystem``; beta-independent work (kernel, outlier filter) is done once."""
    if source.kind == "grid":
        return lambda beta: build_grid_system(source.data, beta, cfg.floor_ratio)
    if source.kind == "items":
        W = kernel_similarity(source.data, cfg.kernel, cfg.scale, cfg.hard_threshold)
        keep = filter_outliers(W, cfg.outlier_ratio) if cfg.outlier_ratio > 0 else np.arange(W.shape[0])
        Wk = W[np.ix_(keep, keep)]
        norm = cfg.resolved_normalization()
        return lambda beta: build_item_system(Wk, norm, beta, nodes=keep)
    norm = cfg.resolved_normalization()
    return lambda beta: build_graph_system(source.data, beta, norm)


def reference_measure(system: LaplacianSystem) -> np.ndarray:
    """Measure the mixture is reported against: the input density for grids, else the system measure."""
    return system.density if system.density is not None else system.measure


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------

@dataclass
class FitResult:
    system: LaplacianSystem
    basis: EigenBasis
    profile: GapProfile
    m: int
    solution: QPSolution
    model: MacrostateModel
    crisp_model: Optional[MacrostateModel] = None
    validation: dict = field(default_factory=dict)

    @property
    def output_model(self) -> MacrostateModel:
        return self.crisp_model if self.crisp_model is not None else self.model


def fit_system(system: LaplacianSystem, cfg: RunConfig, m: Optional[int] = None) -> FitResult:
    k = min(max(cfg.m_max, m or cfg.m or 1) + 1, system.n)
    basis = decompose(system, k, method=cfg.method)
    profile = spectral_gaps(basis.rates, basis.zero_tol, beta=system.beta)
    m = m or cfg.m or select_m(profile, cfg.gap_cutoff)
    if m > system.n:
        raise InvalidInput(f"m={m} exceeds the number of points {system.n}")
    poly = build_polytope(basis, m)
    sol = multistart_optimize(poly, n_starts=cfg.n_starts, seed=cfg.seed, tol=cfg.tol,
                              rank_tol=cfg.rank_tol, core_level=cfg.core_level)
    model = assemble(sol.M, basis, reference_measure(system), beta=system.beta)
    crisp = hard_threshold(model) if cfg.crisp else None
    return FitResult(system=system, basis=basis, profile=profile, m=m, solution=sol,
                     model=model, crisp_model=crisp)


def validate_fit(result: FitResult, source: Source) -> dict:
    """Relative errors against ground truth (grids) or silhouettes (items)."""
    out = {}
    if source.truth is not None:
        truth = source.truth[result.system.nodes]
        if truth.shape[1] == result.m:
            out["relative_error"] = relative_error(result.model, truth)
            try:
                out["relative_error_crisp"] = relative_error(
                    result.crisp_model or hard_threshold(result.model), truth)
            except ZeroWeightComponent:
                out["relative_error_crisp"] = None
        else:
            out["truth_components"] = int(truth.shape[1])
    if source.kind == "items" and result.m >= 2:
        X = source.data.items[result.system.nodes]
        labels = result.output_model.labels
        if np.unique(labels).size >= 2:
            out["silhouette"] = silhouette(X, labels).overall_mean
            km = kmeans_baseline(X, result.m, seed=0)
            out["silhouette_kmeans"] = silhouette(X, km).overall_mean
    result.validation = out
    return out


def run_scan(source: Source, cfg: RunConfig) -> BetaScan:
    return scan_beta(system_builder(source, cfg), cfg.betas(), m_max=cfg.m_max,
                     workers=cfg.workers, method=cfg.method)


def scan_selections(scan: BetaScan, cutoff: float) -> list:
    """Selected ``m`` (or None) per scanned beta."""
    out = []
    for c in range(scan.betas.size):
        gaps = scan.column(c)
        try:
            out.append(select_m(gaps, cutoff) if gaps else None)
        except NoSeparableStructure:
            out.append(None)
    return out


def config_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)


def write_truth(path, truth: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"component_{k}" for k in range(truth.shape[1])])
        for row in truth:
            w.writerow([repr(float(v)) for v in row])
