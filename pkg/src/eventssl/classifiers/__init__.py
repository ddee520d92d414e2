"""Supervised classifiers written from scratch: kNN, CART, gradient boosting, SVM.

All share one interface (``fit``/``predict``/``score``) and standardize their
inputs internally.
"""
from .base import (
    KINDS,
    ClassifierSpec,
    FitError,
    TrainedModel,
    cv_grid_search,
    fit,
    grid_points,
    grid_search,
    predict,
    score,
    stratified_folds,
)

__all__ = [
    "KINDS", "ClassifierSpec", "FitError", "TrainedModel", "cv_grid_search", "fit",
    "grid_points", "grid_search", "predict", "score", "stratified_folds",
]
