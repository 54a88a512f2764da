import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from fairensemble.metrics import (
    ScorerRefs, blended_from_values, blended_score, classification_metrics, disparate_impact,
    evaluate, group_rates, statistical_parity_difference, symmetric_di,
)

binary = st.lists(st.integers(0, 1), min_size=2, max_size=60)


def rates_vectors(fav_u, n_u, fav_p, n_p):
    pred = np.r_[np.ones(fav_u), np.zeros(n_u - fav_u), np.ones(fav_p), np.zeros(n_p - fav_p)]
    g = np.r_[np.zeros(n_u), np.ones(n_p)]
    return pred.astype(int), g.astype(int)


def test_di_examples():
    pred, g = rates_vectors(1, 4, 2, 4)
    assert disparate_impact(pred, g) == 0.5
    assert statistical_parity_difference(pred, g) == -0.25
    pred, g = rates_vectors(2, 4, 2, 4)
    assert disparate_impact(pred, g) == 1.0
    assert statistical_parity_difference(pred, g) == 0.0


def test_di_undefined_and_zero_zero():
    pred, g = rates_vectors(3, 10, 0, 10)
    assert disparate_impact(pred, g) is None
    pred, g = rates_vectors(0, 5, 0, 5)
    assert disparate_impact(pred, g) == 1.0
    with pytest.warns(UserWarning, match="undefined"):
        assert disparate_impact([1, 0, 1], [1, 1, 1]) is None
    assert statistical_parity_difference([1, 0], [0, 0]) is None


def test_all_favorable_spd_zero():
    assert statistical_parity_difference([1] * 6, [0, 1, 0, 1, 1, 0]) == 0


def test_mask_and_weights():
    pred = np.array([1, 0, 1, 1, 0, 0])
    g = np.array([0, 0, 1, 1, 0, 1])
    mask = np.array([1, 1, 1, 1, 0, 0], bool)
    assert disparate_impact(pred, g, mask=mask) == 0.5
    r = group_rates(pred, g, weights=[1, 3, 1, 1, 1, 1])
    assert r.rate_unpriv == pytest.approx(1 / 5)
    assert r.rate_priv == pytest.approx(2 / 3)


def test_symmetric_di_examples():
    assert symmetric_di(1.25) == 0.8
    assert symmetric_di(1.0) == 1.0
    assert symmetric_di(0.5) == 0.5
    assert symmetric_di(None) == 0.0


@given(st.floats(1e-6, 1e6))
def test_symmetric_di_reciprocal(x):
    assert symmetric_di(x) == pytest.approx(symmetric_di(1 / x), rel=1e-12)
    assert 0 < symmetric_di(x) <= 1


@given(binary, st.randoms(use_true_random=False))
def test_di_permutation_invariant(pred, rnd):
    g = [i % 2 for i in range(len(pred))]
    idx = list(range(len(pred)))
    rnd.shuffle(idx)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = disparate_impact(pred, g)
        b = disparate_impact([pred[i] for i in idx], [g[i] for i in idx])
    assert a == b or (a is not None and b is not None and math.isclose(a, b))


def test_classification_examples():
    rep = classification_metrics([1, 0, 1, 1], [1, 0, 1, 1])
    assert (rep.precision, rep.recall, rep.f1, rep.accuracy) == (1, 1, 1, 1)
    rep = classification_metrics([1, 1, 1, 0], [1, 1, 1, 1])
    assert rep.precision == 0.75 and rep.recall == 1.0
    assert rep.f1 == pytest.approx(6 / 7)
    rep = classification_metrics([1, 0, 1], [0, 0, 0])
    assert (rep.precision, rep.recall, rep.f1) == (0, 0, 0)


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=80))
def test_f1_bounds(pairs):
    y, pred = zip(*pairs)
    rep = classification_metrics(list(y), list(pred))
    assert 0 <= rep.f1 <= 1
    assert rep.f1 <= max(rep.precision, rep.recall) + 1e-12
    if rep.precision > 0 and rep.recall > 0:
        assert rep.f1 == pytest.approx(2 / (1 / rep.precision + 1 / rep.recall))


def test_evaluate_keys():
    out = evaluate([1, 0, 1, 0], [1, 1, 0, 0], [0, 1, 0, 1])
    assert set(out) == {"di", "spd", "precision", "recall", "f1", "accuracy"}


# --------------------------------------------------------------- blended

REFS = ScorerRefs(min_di=0.4, min_f1=0.6, max_f1=0.9)


def test_blended_hand_traces():
    assert blended_from_values(0.7, 0.9, REFS) == pytest.approx(0.67, abs=1e-12)
    assert blended_from_values(1.0, 0.9, REFS) == pytest.approx(1.0, abs=1e-12)
    assert blended_from_values(0.4, 0.9, REFS) == pytest.approx(0.5 * (-0.66 + 1.0), abs=1e-12)
    # unclamped both ways
    assert blended_from_values(0.0, 0.0, REFS) < -1
    assert blended_from_values(1.0, 1.2, REFS) > 1


def test_blended_score_from_predictions():
    y = np.array([1, 1, 0, 0, 1, 0, 1, 0])
    g = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    pred = y.copy()
    # perfect predictions: f1 = 1, DI of y is 1
    refs = ScorerRefs(min_di=0.5, min_f1=0.5, max_f1=1.0)
    assert blended_score(pred, y, g, refs) == pytest.approx(1.0)
    # undefined DI counts as folded 0
    pred2 = np.array([1, 1, 0, 0, 0, 0, 0, 0])
    s = blended_score(pred2, y, g, refs)
    f1 = classification_metrics(y, pred2).f1
    assert s == pytest.approx(blended_from_values(0.0, f1, refs))


def test_degenerate_refs():
    with pytest.raises(ValueError, match="degenerate"):
        blended_from_values(0.5, 0.5, ScorerRefs(0.4, 0.7, 0.7))
    with pytest.raises(ValueError):
        ScorerRefs(0.4, 0.8, 0.7)
    with pytest.raises(ValueError):
        ScorerRefs(1.2, 0.5, 0.7)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.5), st.floats(0, 1))
def test_blended_monotone(a, b, d, f1):
    lo, hi = min(a, b), max(a, b)
    assert blended_from_values(lo, f1, REFS) <= blended_from_values(hi, f1, REFS)
    assert blended_from_values(f1, lo, REFS) <= blended_from_values(f1, hi, REFS)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_blended_piecewise_slopes(di, f1):
    h = 1e-7
    assume(abs((di - 0.4) / 0.6 - 0.66) > 1e-4 and di + h <= 1)
    slope = (blended_from_values(di + h, f1, REFS) - blended_from_values(di, f1, REFS)) / h
    expected = 0.5 / 0.6 * (2 if (di - 0.4) / 0.6 < 0.66 else 1)
    assert slope == pytest.approx(expected, rel=1e-4)
