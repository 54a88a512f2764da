"""Group fairness metrics, predictive metrics, and the blended search objective."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class GroupRates:
    rate_priv: float
    rate_unpriv: float
    # cells[group][prediction] holds the (weighted) count
    cells: tuple[tuple[float, float], tuple[float, float]]


def group_rates(pred, g, mask=None, weights=None) -> GroupRates | None:
    """Favorable rates per group, or None when a group has no members."""
    pred = np.asarray(pred)
    g = np.asarray(g)
    if pred.shape != g.shape or pred.size == 0:
        raise ValueError("pred and g must be non-empty and the same length")
    w = np.ones(len(pred)) if weights is None else np.asarray(weights, float)
    if mask is not None:
        m = np.asarray(mask, bool)
        pred, g, w = pred[m], g[m], w[m]
    cells = []
    for grp in (0, 1):
        in_g = g == grp
        fav = float(w[in_g & (pred == 1)].sum())
        unfav = float(w[in_g & (pred != 1)].sum())
        cells.append((unfav, fav))
    tot_u = cells[0][0] + cells[0][1]
    tot_p = cells[1][0] + cells[1][1]
    if tot_u == 0 or tot_p == 0:
        return None
    return GroupRates(cells[1][1] / tot_p, cells[0][1] / tot_u, (cells[0], cells[1]))


def disparate_impact(pred, g, mask=None, weights=None) -> float | None:
    """Unprivileged favorable rate over privileged favorable rate.

    Returns None (undefined) when a group is absent or when only the
    privileged rate is zero; 0/0 counts as parity and gives 1.0.
    """
    r = group_rates(pred, g, mask, weights)
    if r is None:
        warnings.warn("disparate impact undefined: a group has no members", stacklevel=2)
        return None
    if r.rate_priv == 0:
        return 1.0 if r.rate_unpriv == 0 else None
    return r.rate_unpriv / r.rate_priv


def statistical_parity_difference(pred, g, mask=None, weights=None) -> float | None:
    r = group_rates(pred, g, mask, weights)
    if r is None:
        return None
    return r.rate_unpriv - r.rate_priv


def symmetric_di(di: float | None) -> float:
    """Fold DI into [0, 1]; undefined counts as the worst case."""
    if di is None or (isinstance(di, float) and math.isnan(di)) or di <= 0:
        return 0.0
    return di if di <= 1 else 1.0 / di


@dataclass(frozen=True)
class PredictiveReport:
    precision: float
    recall: float
    f1: float
    accuracy: float


def classification_metrics(y, pred) -> PredictiveReport:
    y = np.asarray(y)
    pred = np.asarray(pred)
    if y.shape != pred.shape:
        raise ValueError("y and pred must be the same length")
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y != 1)))
    fn = int(np.sum((pred != 1) & (y == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = float(np.mean(pred == y)) if len(y) else 0.0
    return PredictiveReport(precision, recall, f1, accuracy)


def f1_score(y, pred) -> float:
    return classification_metrics(y, pred).f1


def evaluate(y, pred, g, mask=None) -> dict:
    """Flat metric report for one set of predictions."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        di = disparate_impact(pred, g, mask)
        spd = statistical_parity_difference(pred, g, mask)
    rep = classification_metrics(y, pred)
    return {"di": di, "spd": spd, **asdict(rep)}


@dataclass(frozen=True)
class ScorerRefs:
    """Reference points used to rescale DI and F1 inside :func:`blended_score`.

    ``min_di`` is the folded DI of the true labels, ``min_f1`` the F1 of a
    constant-favorable predictor, ``max_f1`` the F1 of a gradient-boosted
    reference model.
    """

    min_di: float
    min_f1: float
    max_f1: float
    max_di: float = 1.0
    threshold: float = 0.66
    weight: float = 0.5

    def __post_init__(self):
        if self.min_di > self.max_di:
            raise ValueError(f"min_di={self.min_di} exceeds max_di={self.max_di}")
        if self.min_f1 > self.max_f1:
            raise ValueError(f"min_f1={self.min_f1} exceeds max_f1={self.max_f1}")


def _amplify(v: float, threshold: float) -> float:
    return v - (threshold - v) if v < threshold else v


def blended_from_values(sym_di: float, f1: float, refs: ScorerRefs) -> float:
    if refs.max_f1 == refs.min_f1:
        raise ValueError("degenerate scorer refs: max_f1 equals min_f1")
    if refs.max_di == refs.min_di:
        # labels already at parity; nothing to rescale against
        di = sym_di
    else:
        di = (sym_di - refs.min_di) / (refs.max_di - refs.min_di)
    f = (f1 - refs.min_f1) / (refs.max_f1 - refs.min_f1)
    di = _amplify(di, refs.threshold)
    f = _amplify(f, refs.threshold)
    return refs.weight * (di + f)


def blended_score(pred, y, g, refs: ScorerRefs, mask=None) -> float:
    """Joint fairness/accuracy objective; higher is better, unclamped."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sym = symmetric_di(disparate_impact(pred, g, mask))
    return blended_from_values(sym, f1_score(y, pred), refs)
