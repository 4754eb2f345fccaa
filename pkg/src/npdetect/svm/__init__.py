"""2nu-SVM training and scoring."""
from ._backend import BACKEND
from .core import (
    GAMMA_GRID,
    NU_GRID,
    SvmHyper,
    SvmModel,
    class_bounds,
    decision_score,
    dual_objective,
    fit_diagnostics,
    map_nu,
    model_from_dict,
    model_to_dict,
    predict,
    rbf_gram,
    rbf_kernel,
    sq_distances,
    train_2nu,
)

__all__ = [
    "BACKEND", "GAMMA_GRID", "NU_GRID", "SvmHyper", "SvmModel", "class_bounds",
    "decision_score", "dual_objective", "fit_diagnostics", "map_nu",
    "model_from_dict", "model_to_dict", "predict",
    "rbf_gram", "rbf_kernel", "sq_distances", "train_2nu",
]
