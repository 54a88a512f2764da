from .grammar import (
    Bag, Boost, FeasibilityError, InEst, Learner, MitigatorSpec, PipelineSyntaxError, Post, Pre,
    Stack, UnknownNameError, Vote, canonical, feasibility, is_mitigated, mitigation_kinds,
    mitigator_text, parse, supports_proba, to_text, validate, walk,
)
from .pipeline import TrainedPipeline, fit_pipeline, predict_pipeline, supports_weights

__all__ = [
    "Bag", "Boost", "FeasibilityError", "InEst", "Learner", "MitigatorSpec",
    "PipelineSyntaxError", "Post", "Pre", "Stack", "TrainedPipeline", "UnknownNameError", "Vote",
    "canonical", "feasibility", "fit_pipeline", "is_mitigated", "mitigation_kinds",
    "mitigator_text", "parse", "predict_pipeline", "supports_proba", "supports_weights",
    "to_text", "validate", "walk",
]
