"""scikit-learn style wrappers around the CCA family.

These take data in the usual scikit-learn orientation, ``(n_samples,
n_features)``: one row per probe input, one column per neuron. They are
transposed internally to the neurons x inputs layout used by the rest of
the package.

    >>> est = PWCCA().fit(acts_a, acts_b)
    >>> est.distance_
"""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted

from .cca import DEFAULT_VARIANCE_KEEP, CcaResult, cca, mean_cca_distance, svcca
from .linalg import DEFAULT_REL_TOL
from .pwcca import MODES, pwcca_distance


def check_view_pair(X, Y):
    """Validate two views over the same samples; returns float64 copies."""
    X = check_array(X, dtype=np.float64, ensure_min_samples=2)
    Y = check_array(Y, dtype=np.float64, ensure_min_samples=2)
    check_consistent_length(X, Y)
    return X, Y


def _check_tol(rel_tol):
    if not 0 < rel_tol < 1:
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")


class CCA(TransformerMixin, BaseEstimator):
    """Canonical correlation analysis between two views.

    Parameters
    ----------
    rel_tol : float
        Singular directions below ``rel_tol`` times the largest are dropped
        from each view before whitening.

    Attributes
    ----------
    canonical_correlations_ : ndarray of shape (n_components_,)
    x_coef_, y_coef_ : ndarray of shape (n_components_, n_features)
        Map centered features to canonical variates.
    x_mean_, y_mean_ : ndarray of shape (n_features,)
    result_ : CcaResult
    """

    def __init__(self, rel_tol=DEFAULT_REL_TOL):
        self.rel_tol = rel_tol

    def _run(self, X, Y) -> CcaResult:
        return cca(X.T, Y.T, self.rel_tol)

    def fit(self, X, Y):
        _check_tol(self.rel_tol)
        X, Y = check_view_pair(X, Y)
        r = self._run(X, Y)
        if r.warning is not None:
            warnings.warn(r.warning, stacklevel=2)
        self.result_ = r
        self.canonical_correlations_ = r.rho
        self.n_components_ = r.c
        self.x_coef_, self.y_coef_ = r.coef_x, r.coef_y
        self.x_mean_, self.y_mean_ = r.mean_x, r.mean_y
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X, Y=None):
        """Canonical variates, shape (n_samples, n_components_); a pair when Y is given."""
        check_is_fitted(self)
        X = check_array(X, dtype=np.float64)
        zx = (X - self.x_mean_) @ self.x_coef_.T
        if Y is None:
            return zx
        Y = check_array(Y, dtype=np.float64)
        return zx, (Y - self.y_mean_) @ self.y_coef_.T

    def fit_transform(self, X, Y=None, **fit_params):
        return self.fit(X, Y).transform(X, Y)

    def score(self, X, Y):
        """Mean correlation of paired canonical variates on (X, Y)."""
        zx, zy = self.transform(X, Y)
        zx = zx - zx.mean(axis=0)
        zy = zy - zy.mean(axis=0)
        num = (zx * zy).sum(axis=0)
        den = np.linalg.norm(zx, axis=0) * np.linalg.norm(zy, axis=0)
        return float(np.mean(num / np.where(den > 0, den, 1.0)))

    def distance(self) -> float:
        check_is_fitted(self)
        return mean_cca_distance(self.result_)


class SVCCA(CCA):
    """CCA on SVD-truncated views keeping ``variance_keep`` of each view's energy."""

    def __init__(self, variance_keep=DEFAULT_VARIANCE_KEEP, rel_tol=DEFAULT_REL_TOL):
        self.variance_keep = variance_keep
        self.rel_tol = rel_tol

    def _run(self, X, Y) -> CcaResult:
        return svcca(X.T, Y.T, self.variance_keep, self.rel_tol)


class PWCCA(CCA):
    """Projection-weighted CCA.

    ``distance_`` holds the weighted distance and ``alpha_`` the projection
    weights (see :func:`rsim.pwcca.pwcca_distance` for ``mode``).
    """

    def __init__(self, mode="symmetric", rel_tol=DEFAULT_REL_TOL):
        self.mode = mode
        self.rel_tol = rel_tol

    def fit(self, X, Y):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        X, Y = check_view_pair(X, Y)
        super().fit(X, Y)
        d = pwcca_distance(X.T, Y.T, self.mode, self.rel_tol)
        self.pwcca_ = d
        self.distance_ = d.value
        self.alpha_ = d.alpha
        return self

    def distance(self) -> float:
        check_is_fitted(self)
        return self.distance_
