"""Fairness mitigators composed with ensembles, plus the experiment harness.

Subpackages and modules:

* ``datasets`` - CSV ingestion, encoding recipes, stratified folds, synthetic data
* ``metrics`` - disparate impact, parity difference, F1 family, blended score
* ``learners`` - tree, logistic, kNN, boosted trees, constant
* ``mitigation`` - Reweighing, quantile repair, LFR, prejudice remover, CEO
* ``composition`` - pipeline grammar, feasibility rules, fit/predict
* ``harness`` / ``search`` - CV trials, two-step grid, budgeted search
* ``guidance`` - standardization, quadrant diagram, leave-one-out
"""
from .composition import fit_pipeline, parse, predict_pipeline, to_text, validate
from .datasets import Dataset, encode, load_csv, stratified_kfold, synth_biased
from .metrics import blended_score, disparate_impact, statistical_parity_difference

__version__ = "0.1.0"

__all__ = [
    "Dataset", "blended_score", "disparate_impact", "encode", "fit_pipeline", "load_csv",
    "parse", "predict_pipeline", "statistical_parity_difference", "stratified_kfold",
    "synth_biased", "to_text", "validate",
]
