"""Classify how each adopter in a cascade was convinced: simple, complex or spontaneous contagion."""

__version__ = "0.1.0"

from .contagion import (
    LABELS, AssignmentTable, CascadeRecord, ConfigurationError, Mechanism, simulate_network, simulate_star_ensemble,
)
from .features import FEATURE_NAMES, EgoObservation, FeatureVector, adopter_table, extract
from .forest import ConfusionMatrix, Dataset, ForestConfig, ForestModel, evaluate, predict, train
from .likelihood import KnownParams, analytic_accuracy, classify_known, classify_unknown, estimate_r
from .netgen import Graph, ModelSpec, TruncatedBinomial, generate

__all__ = [
    "LABELS", "AssignmentTable", "CascadeRecord", "ConfigurationError", "Mechanism", "simulate_network",
    "simulate_star_ensemble", "FEATURE_NAMES", "EgoObservation", "FeatureVector", "adopter_table", "extract",
    "ConfusionMatrix", "Dataset", "ForestConfig", "ForestModel", "evaluate", "predict", "train", "KnownParams",
    "analytic_accuracy", "classify_known", "classify_unknown", "estimate_r", "Graph", "ModelSpec",
    "TruncatedBinomial", "generate",
]
