"""Mixture-model assembly from an optimised coefficient matrix.

Given ``M`` and the ratio basis ``omega``, the window functions are
``w = omega M^T``; they form a partition of unity over the points.  Weighting a
reference measure by each window gives the mixture weights ``a`` and the
component probability vectors ``f_a = w_a * measure / a_a``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import InvalidInput, ZeroWeightComponent

MIN_WEIGHT = 1e-12


@dataclass(frozen=True)
class MacrostateModel:
    M: np.ndarray
    w: np.ndarray  # (n, m) window values, rows sum to one
    a: np.ndarray  # (m,) mixture weights
    components: np.ndarray  # (n, m) columns are probability vectors
    labels: np.ndarray
    upsilon: float
    measure: np.ndarray
    beta: Optional[float] = None
    phi: Optional[np.ndarray] = None
    thresholded: bool = False

    @property
    def m(self) -> int:
        return self.w.shape[1]

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def weighted_components(self) -> np.ndarray:
        """Columns ``a_a * f_a``; they sum to the measure."""
        return self.components * self.a[None, :]

    def reconstruction_error(self) -> float:
        return float(np.abs(self.weighted_components().sum(axis=1) - self.measure).max())


def hard_labels(model_or_w) -> np.ndarray:
    """Argmax component per point; ``np.argmax`` keeps the lowest index on ties."""
    w = model_or_w.w if isinstance(model_or_w, MacrostateModel) else np.asarray(model_or_w)
    return np.argmax(w, axis=1)


def _weights_and_components(w: np.ndarray, measure: np.ndarray):
    wm = w * measure[:, None]
    a = wm.sum(axis=0)
    bad = np.flatnonzero(a <= MIN_WEIGHT)
    if bad.size:
        raise ZeroWeightComponent(f"component {int(bad[0])} has weight {a[bad[0]]:.3e}",
                                  component=int(bad[0]))
    return a, wm / a[None, :]


def _check_measure(measure, n: int) -> np.ndarray:
    mu = np.asarray(measure, dtype=float).ravel()
    if mu.size != n or not np.all(np.isfinite(mu)) or np.any(mu < 0) or mu.sum() <= 0:
        raise InvalidInput("measure must be a nonnegative vector over the points")
    return mu / mu.sum()


def assemble(M: np.ndarray, basis, measure, beta: Optional[float] = None,
             keep_phi: bool = False) -> MacrostateModel:
    """Build the mixture model for coefficients ``M`` over ``basis``.

    ``basis`` is an :class:`~macrostate.spectra.EigenBasis` (or a bare ratio
    matrix ``omega``); only its first ``m`` columns are used.  ``measure`` is
    normalised to sum to one.
    """
    M = np.asarray(M, dtype=float)
    m = M.shape[0]
    omega = basis.omega if hasattr(basis, "omega") else np.asarray(basis, dtype=float)
    if M.shape != (m, m) or omega.shape[1] < m:
        raise InvalidInput("M must be square with at most as many rows as basis columns")
    omega = omega[:, :m]
    mu = _check_measure(measure, omega.shape[0])
    w = omega @ M.T
    a, comps = _weights_and_components(w, mu)
    phi = None
    if keep_phi and hasattr(basis, "vectors"):
        phi = basis.vectors[:, :m] @ M.T
    return MacrostateModel(M=M, w=w, a=a, components=comps, labels=hard_labels(w),
                           upsilon=float(1.0 - np.sum(M * M)), measure=mu, beta=beta, phi=phi)


def hard_threshold(model: MacrostateModel) -> MacrostateModel:
    """One-hot windows at the argmax; weights and components recomputed, ``M`` kept."""
    labels = hard_labels(model)
    w = np.zeros_like(model.w)
    w[np.arange(model.n), labels] = 1.0
    a, comps = _weights_and_components(w, model.measure)
    ups = float(1.0 - np.sum((w ** 2) * model.measure[:, None]))
    return replace(model, w=w, a=a, components=comps, labels=labels, upsilon=ups, thresholded=True)
