"""Joint estimation of linear non-Gaussian components and their dependency structure."""

from depca.density import log_ptilde_s, log_ptilde_x
from depca.estimator import EstimationResult, EstimatorOptions, estimate, ica_init
from depca.genmodel import GenerationSpec, generate_dataset
from depca.preprocess import WhiteningTransform, apply_whitening, fit_whitening
from depca.qpsolve import QPSolution, solve_dependency_qp
from depca.scorematch import QuadraticForm, assemble_quadratic, grad_W, objective_J

__version__ = "0.1.0"

__all__ = [
    "EstimationResult",
    "EstimatorOptions",
    "GenerationSpec",
    "QPSolution",
    "QuadraticForm",
    "WhiteningTransform",
    "apply_whitening",
    "assemble_quadratic",
    "estimate",
    "fit_whitening",
    "generate_dataset",
    "grad_W",
    "ica_init",
    "log_ptilde_s",
    "log_ptilde_x",
    "objective_J",
    "solve_dependency_qp",
]
