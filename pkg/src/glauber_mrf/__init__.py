"""Learning binary Markov random fields from Glauber-dynamics trajectories."""

from .poly import (
    MrfModel,
    MultilinearPolynomial,
    Violation,
    dependency_graph,
    load_model,
    model_from_json,
    model_from_terms,
    model_to_json,
    save_model,
    validate_model,
)

__all__ = [
    "MrfModel",
    "MultilinearPolynomial",
    "Violation",
    "dependency_graph",
    "load_model",
    "model_from_json",
    "model_from_terms",
    "model_to_json",
    "save_model",
    "validate_model",
]

__version__ = "0.1.0"
