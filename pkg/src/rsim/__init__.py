"""Representation similarity (CCA, SVCCA, PWCCA) and a task-dependence harness."""

__version__ = "0.1.0"

from .cca import CcaResult, cca, mean_cca_distance, svcca
from .errors import IllConditionedWarning, RsimError
from .estimators import CCA, PWCCA, SVCCA
from .harness import ComparisonReport, LayerComparison, ModelGroup, bootstrap_ci, compare_groups, delta_d
from .matrix_io import ActivationMatrix, MatrixBundle, load_bundle, load_matrix, save_bundle, save_matrix
from .pwcca import PwccaDistance, projection_weights, pwcca_distance

__all__ = [
    "ActivationMatrix", "MatrixBundle", "load_matrix", "save_matrix", "load_bundle", "save_bundle",
    "CcaResult", "cca", "svcca", "mean_cca_distance",
    "PwccaDistance", "projection_weights", "pwcca_distance",
    "CCA", "SVCCA", "PWCCA",
    "ModelGroup", "LayerComparison", "ComparisonReport", "compare_groups", "delta_d", "bootstrap_ci",
    "IllConditionedWarning", "RsimError",
]
