"""Independent-component intensity models for replicated point processes."""

from .asymptotics import (AsymptoticResult, FisherInfo, TangentCone, confidence_intervals,
                          estimate_fisher, simulate_delta, tangent_cone, variance_interior)
from .basis import BasisSystem, build_basis, evaluate_basis, penalty_gram
from .em import (EStepStats, FitConfig, FitResult, e_step_exact, e_step_gibbs, fit, initialize,
                 m_step_components, m_step_gamma)
from .geometry import QuadratureRule, Region, build_quadrature
from .model import (LogLikResult, ModelParams, PointPattern, ScoreParams, complete_loglik,
                    component_density, intensity, marginal_loglik, posterior_intensity)
from .selection import CvPlan, CvReport, kfold_cv, select_model
from .simulation import (ErrorTriple, GenModel, error_triple, model1, model2, run_table1,
                         run_table2, sample_pattern, sample_scores)

__version__ = "0.1.0"

__all__ = [
    "AsymptoticResult", "BasisSystem", "CvPlan", "CvReport", "EStepStats", "ErrorTriple",
    "FisherInfo", "FitConfig", "FitResult", "GenModel", "LogLikResult", "ModelParams",
    "PointPattern", "QuadratureRule", "Region", "ScoreParams", "TangentCone",
    "build_basis", "build_quadrature", "complete_loglik", "component_density",
    "confidence_intervals", "e_step_exact", "e_step_gibbs", "error_triple", "estimate_fisher",
    "evaluate_basis", "fit", "initialize", "intensity", "kfold_cv", "m_step_components",
    "m_step_gamma", "marginal_loglik", "model1", "model2", "penalty_gram",
    "posterior_intensity", "run_table1", "run_table2", "sample_pattern", "sample_scores",
    "select_model", "simulate_delta", "tangent_cone", "variance_interior",
]
