"""Model selection: stratified CV with F1, RFE-CV and Bayesian hyperparameter search."""

from .bayesopt import BOResult, Dim, GpSurrogate, SearchSpace, bayes_opt, fit_gp, random_search
from .cv import CVReport, FoldAssignment, ModelSpec, cross_validate, f1, stratified_folds
from .rfe import RFEResult, rfe_cv

__all__ = [
    "BOResult", "CVReport", "Dim", "FoldAssignment", "GpSurrogate", "ModelSpec", "RFEResult",
    "SearchSpace", "bayes_opt", "cross_validate", "f1", "fit_gp", "random_search", "rfe_cv",
    "stratified_folds",
]
