"""Dense kernels behind the CCA code: centering, a sign-canonical SVD, rank cutoffs."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import NumericalError
from .matrix_io import ActivationMatrix

DEFAULT_REL_TOL = 1e-6


class SvdResult(NamedTuple):
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray


def center_rows(m):
    """Subtract each row's mean. Returns the same type it was given."""
    data = m.data if isinstance(m, ActivationMatrix) else np.asarray(m, dtype=np.float64)
    centered = data - data.mean(axis=1, keepdims=True)
    if isinstance(m, ActivationMatrix):
        return ActivationMatrix(centered, layer_name=m.layer_name, model_id=m.model_id)
    return centered


def svd(m) -> SvdResult:
    """Thin SVD with deterministic signs.

    Each column of ``u`` is flipped so its largest-magnitude entry is
    positive; the matching row of ``vt`` is flipped with it.
    """
    a = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise NumericalError("svd input contains non-finite values")
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    if u.shape[1]:
        pivot = np.abs(u).argmax(axis=0)
        signs = np.sign(u[pivot, np.arange(u.shape[1])])
        signs[signs == 0] = 1.0
        u = u * signs
        vt = vt * signs[:, None]
    return SvdResult(u, s, vt)


def effective_rank(s, rel_tol: float = DEFAULT_REL_TOL) -> int:
    """Count singular values above ``rel_tol * s[0]``."""
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0 or s[0] <= 0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))
