"""Seeded synthetic mixtures of anisotropic radial bumps on a 2-D grid.

Each component is a sum of bumps sharing one radial profile.  Component
anchors sit in disjoint vertical strips (thirds of the x range for three
components) and bump centres scatter around their anchor, so components are
separable while individual bumps overlap.  Bump shapes are random symmetric
positive-definite matrices whose eigenvalues are squared length scales.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .laplacian import DensityGrid

PROFILES = {
    "gaussian": lambda r: np.exp(-0.5 * r * r),
    "laplace": lambda r: np.exp(-r),
    "sech": lambda r: 1.0 / np.cosh(r),
}


@dataclass(frozen=True)
class SyntheticSpec:
    dims: tuple = (200, 200)
    extent: float = 10.0  # domain is [-extent, extent]^2
    profiles: tuple = ("gaussian", "laplace", "sech")
    bumps: int = 3
    length_range: tuple = (0.8, 1.6)  # bump length scales (sqrt of shape eigenvalues)
    spread: float = 1.0  # bump centres lie within +-spread of the component anchor
    amplitude_range: tuple = (0.5, 1.0)
    seed: int = 0

    def __post_init__(self):
        if len(self.dims) != 2 or min(self.dims) < 2:
            raise InvalidInput("synthetic grids are 2-D with at least 2 nodes per axis")
        if not self.extent > 0:
            raise InvalidInput("extent must be positive")
        if not self.profiles:
            raise InvalidInput("at least one profile is required")
        unknown = [p for p in self.profiles if p not in PROFILES]
        if unknown:
            raise InvalidInput(f"unknown profiles {unknown}; choose from {sorted(PROFILES)}")
        if self.bumps < 1:
            raise InvalidInput("bumps must be at least 1")
        lo, hi = self.length_range
        if not 0 < lo <= hi:
            raise InvalidInput("length_range must satisfy 0 < low <= high")
        alo, ahi = self.amplitude_range
        if not 0 < alo <= ahi:
            raise InvalidInput("amplitude_range must satisfy 0 < low <= high")
        if self.spread < 0:
            raise InvalidInput("spread must be nonnegative")


def _random_shape(rng, length_range) -> np.ndarray:
    lengths = rng.uniform(*length_range, size=2)
    theta = rng.uniform(0.0, np.pi)
    c, s = np.cos(theta), np.sin(theta)
    R = np.array([[c, -s], [s, c]])
    return R @ np.diag(lengths ** 2) @ R.T


def generate_synthetic_mixture(spec: SyntheticSpec = SyntheticSpec()):
    """Return ``(grid, truth)``.

    ``grid`` holds the normalised mixture density (values sum to one) and
    ``truth`` is the ``(n, k)`` matrix of weighted components, one column per
    profile, whose rows sum to the grid values.
    """
    rng = np.random.default_rng(spec.seed)
    L = spec.extent
    k = len(spec.profiles)
    nx, ny = spec.dims
    spacing = (2 * L / (nx - 1), 2 * L / (ny - 1))
    grid0 = DensityGrid(dims=(nx, ny), spacing=spacing, origin=(-L, -L), values=np.ones(nx * ny))
    X = grid0.coordinates()
    width = 2 * L / k
    raw = np.zeros((X.shape[0], k))
    for c, name in enumerate(spec.profiles):
        # anchor in the middle of strip c, away from the top and bottom edges
        anchor = np.array([-L + (c + 0.5) * width, rng.uniform(-L / 3, L / 3)])
        lo_x = -L + c * width
        for _ in range(spec.bumps):
            centre = anchor + rng.uniform(-spec.spread, spec.spread, size=2)
            centre[0] = np.clip(centre[0], lo_x, lo_x + width)
            S = _random_shape(rng, spec.length_range)
            d = X - centre
            r = np.sqrt(np.einsum("ij,jk,ik->i", d, np.linalg.inv(S), d))
            raw[:, c] += rng.uniform(*spec.amplitude_range) * PROFILES[name](r)
    truth = raw / raw.sum()
    values = truth.sum(axis=1)
    grid = DensityGrid(dims=(nx, ny), spacing=spacing, origin=(-L, -L), values=values)
    return grid, truth
