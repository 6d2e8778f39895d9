"""Canonical correlation analysis between two activation matrices, plus SVCCA.

Both views are neurons x inputs. Each view is centered, reduced by SVD to an
orthonormal basis of its row space (the whitened view), and the canonical
correlations are the singular values of the product of the two bases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateInputError, IllConditionedWarning, NumericalError, ShapeError
from .linalg import DEFAULT_REL_TOL, effective_rank, svd
from .matrix_io import as_array

DEFAULT_VARIANCE_KEEP = 0.99
RHO_OVERSHOOT = 1e-8


@dataclass
class CcaResult:
    """Output of one CCA run.

    ``dirs_x[i]`` is the i-th canonical variate of the first view evaluated on
    every probe input; it equals ``coef_x[i] @ (x - mean_x[:, None])``.
    Variates are unit-norm and centered.
    """

    rho: np.ndarray
    dirs_x: np.ndarray
    dirs_y: np.ndarray
    kept_x: int
    kept_y: int
    coef_x: np.ndarray
    coef_y: np.ndarray
    mean_x: np.ndarray
    mean_y: np.ndarray
    warning: IllConditionedWarning | None = None

    @property
    def c(self) -> int:
        return len(self.rho)

    @property
    def ill_conditioned(self) -> bool:
        return self.warning is not None

    def swapped(self) -> "CcaResult":
        return CcaResult(
            self.rho, self.dirs_y, self.dirs_x, self.kept_y, self.kept_x,
            self.coef_y, self.coef_x, self.mean_y, self.mean_x, self.warning,
        )


class _Reduced(NamedTuple):
    mean: np.ndarray
    basis: np.ndarray  # k x N, orthonormal rows spanning the centered row space
    proj: np.ndarray  # k x rows, basis = proj @ centered


def _reduce(a: np.ndarray, rel_tol: float, variance_keep: float | None = None) -> _Reduced:
    mean = a.mean(axis=1)
    centered = a - mean[:, None]
    u, s, vt = svd(centered)
    k = effective_rank(s, rel_tol)
    if k == 0:
        raise DegenerateInputError("view has effective rank 0 (every neuron is constant)")
    if variance_keep is not None:
        mass = np.cumsum(s**2) / np.sum(s**2)
        k = min(k, int(np.searchsorted(mass, variance_keep - 1e-12)) + 1)
    return _Reduced(mean, vt[:k], (u[:, :k] / s[:k]).T)


def _check_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    a, b = as_array(x), as_array(y)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"views disagree on probe count: {a.shape[1]} vs {b.shape[1]}")
    return a, b


def _conditioning(n: int, rows: int, kx: int, ky: int) -> IllConditionedWarning | None:
    if n <= rows:
        return IllConditionedWarning(f"{n} probe inputs for {rows} neurons")
    if kx + ky >= n:
        return IllConditionedWarning(
            f"kept dimensions {kx}+{ky} fill the {n - 1}-dim centered input space; correlations are forced"
        )
    return None


def _cca_reduced(rx: _Reduced, ry: _Reduced, n: int, rows: int) -> CcaResult:
    p, sig, qt = svd(rx.basis @ ry.basis.T)
    c = min(len(rx.basis), len(ry.basis))
    rho = sig[:c]
    if np.any(rho > 1.0 + RHO_OVERSHOOT):
        raise NumericalError(f"canonical correlation {rho.max():.17g} exceeds 1 beyond rounding")
    rho = np.clip(rho, 0.0, 1.0)
    px, qy = p[:, :c].T, qt[:c]
    return CcaResult(
        rho=rho,
        dirs_x=px @ rx.basis,
        dirs_y=qy @ ry.basis,
        kept_x=len(rx.basis),
        kept_y=len(ry.basis),
        coef_x=px @ rx.proj,
        coef_y=qy @ ry.proj,
        mean_x=rx.mean,
        mean_y=ry.mean,
        warning=_conditioning(n, rows, len(rx.basis), len(ry.basis)),
    )


def cca(x, y, rel_tol: float = DEFAULT_REL_TOL) -> CcaResult:
    """Canonical correlations between two views sharing the same probe inputs.

    Directions whose singular value falls below ``rel_tol`` times the view's
    largest are dropped before whitening. When the probe count is too small
    for the neuron count the result carries an ``IllConditionedWarning`` in
    ``result.warning`` instead of raising.
    """
    if not 0 < rel_tol < 1:
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    a, b = _check_pair(x, y)
    rows = max(a.shape[0], b.shape[0])
    return _cca_reduced(_reduce(a, rel_tol), _reduce(b, rel_tol), a.shape[1], rows)


def svcca(x, y, variance_keep: float = DEFAULT_VARIANCE_KEEP, rel_tol: float = DEFAULT_REL_TOL) -> CcaResult:
    """CCA after truncating each view to the top singular directions holding
    at least ``variance_keep`` of its squared singular-value mass."""
    if not 0 < variance_keep <= 1:
        raise ValueError(f"variance_keep must lie in (0, 1], got {variance_keep}")
    a, b = _check_pair(x, y)
    rows = max(a.shape[0], b.shape[0])
    return _cca_reduced(
        _reduce(a, rel_tol, variance_keep), _reduce(b, rel_tol, variance_keep), a.shape[1], rows
    )


def mean_cca_distance(r: CcaResult) -> float:
    """``1 - mean(rho)``: the unweighted CCA distance."""
    if r.c == 0:
        raise DegenerateInputError("no canonical correlations to average")
    return 1.0 - math.fsum(r.rho) / r.c
