"""Projection-weighted CCA distance."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cca import CcaResult, cca
from .errors import DegenerateInputError, ShapeError
from .linalg import DEFAULT_REL_TOL, center_rows
from .matrix_io import as_array

MODES = ("first", "second", "symmetric")


@dataclass
class PwccaDistance:
    """``value == max(0, 1 - fsum(alpha * rho_used))``.

    In symmetric mode ``alpha`` and ``rho_used`` are the halved first-view and
    second-view weights concatenated with ``rho`` repeated, so the identity
    above still holds and ``alpha`` still sums to 1.
    """

    value: float
    alpha: np.ndarray
    rho_used: np.ndarray
    view: str
    cca: CcaResult | None = None

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "view": self.view,
            "alpha": [float(a) for a in self.alpha],
            "rho": [float(r) for r in self.rho_used],
        }


def weighted_distance(alpha, rho) -> float:
    return max(0.0, 1.0 - math.fsum(np.asarray(alpha) * np.asarray(rho)))


def projection_weights(r: CcaResult, x, view: str = "first") -> np.ndarray:
    """Normalized weight of each canonical variate: the summed absolute inner
    product of the variate with every centered neuron row of ``x``."""
    if view not in ("first", "second"):
        raise ValueError(f"view must be 'first' or 'second', got {view!r}")
    dirs = r.dirs_x if view == "first" else r.dirs_y
    acts = center_rows(as_array(x))
    if dirs.shape[1] != acts.shape[1]:
        raise ShapeError(f"canonical variates span {dirs.shape[1]} inputs, activations {acts.shape[1]}")
    alpha = np.abs(dirs @ acts.T).sum(axis=1)
    total = alpha.sum()
    if not total > 0:
        raise DegenerateInputError("activations have no projection onto the canonical variates")
    return alpha / total


def _one_view(r: CcaResult, x, y, view: str) -> PwccaDistance:
    alpha = projection_weights(r, x if view == "first" else y, view)
    return PwccaDistance(weighted_distance(alpha, r.rho), alpha, r.rho.copy(), view, r)


def _order_key(a: np.ndarray) -> tuple:
    return (a.shape, a.tobytes())


def pwcca_distance(x, y, mode: str = "symmetric", rel_tol: float = DEFAULT_REL_TOL) -> PwccaDistance:
    """PWCCA distance between two views.

    ``first``/``second`` weight by the chosen view's canonical variates;
    ``symmetric`` averages the two. Symmetric results are bitwise independent
    of argument order: the pair is put in a canonical order before CCA runs.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    a, b = as_array(x), as_array(y)
    if mode != "symmetric":
        return _one_view(cca(a, b, rel_tol), a, b, mode)

    if _order_key(b) < _order_key(a):
        a, b = b, a
    r = cca(a, b, rel_tol)
    d1 = _one_view(r, a, b, "first")
    d2 = _one_view(r, a, b, "second")
    alpha = np.concatenate([d1.alpha, d2.alpha]) / 2.0
    rho = np.concatenate([r.rho, r.rho])
    return PwccaDistance(weighted_distance(alpha, rho), alpha, rho, "symmetric", r)
