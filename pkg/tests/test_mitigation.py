import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fairensemble.datasets import synth_biased
from fairensemble.learners import LearnerSpec, fit
from fairensemble.metrics import disparate_impact, symmetric_di
from fairensemble.mitigation import (
    ALPHA_GRID, ceo_apply, ceo_fit, group_cost, lfr_fit, lfr_objective, lfr_transform,
    prejudice_fit, prejudice_index, repair_apply, repair_fit, reweigh,
)


def cells(n_pf, n_pu, n_uf, n_uu):
    g = np.r_[np.ones(n_pf + n_pu), np.zeros(n_uf + n_uu)].astype(int)
    y = np.r_[np.ones(n_pf), np.zeros(n_pu), np.ones(n_uf), np.zeros(n_uu)].astype(int)
    return y, g


# ----------------------------------------------------------- reweighing

def test_reweigh_example():
    y, g = cells(3, 1, 1, 3)
    cw = reweigh(y, g).cell_weights
    assert cw[(1, 1)] == pytest.approx(2 / 3)
    assert cw[(1, 0)] == pytest.approx(2)
    assert cw[(0, 1)] == pytest.approx(2)
    assert cw[(0, 0)] == pytest.approx(2 / 3)


def test_reweigh_balanced_is_one():
    y, g = cells(2, 2, 2, 2)
    np.testing.assert_allclose(reweigh(y, g).row_weights, 1.0)


def test_reweigh_empty_cell_warns():
    y, g = cells(3, 0, 1, 3)
    with pytest.warns(UserWarning, match="empty"):
        rw = reweigh(y, g)
    assert rw.cell_weights[(1, 0)] == 1.0


@given(st.integers(1, 50), st.integers(1, 50), st.integers(1, 50), st.integers(1, 50))
def test_reweigh_weighted_di_is_one(a, b, c, d):
    y, g = cells(a, b, c, d)
    w = reweigh(y, g).row_weights
    assert disparate_impact(y, g, weights=w) == pytest.approx(1.0, abs=1e-9)
    # total weight is preserved
    assert w.sum() == pytest.approx(len(y))


def test_reweigh_respects_prior_weights():
    y, g = cells(5, 2, 1, 4)
    prior = np.linspace(0.5, 1.5, len(y))
    w = reweigh(y, g, prior).row_weights
    assert disparate_impact(y, g, weights=w) == pytest.approx(1.0, abs=1e-12)


# --------------------------------------------------------------- repair

def test_repair_identity_at_zero():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 3))
    g = rng.integers(0, 2, 40)
    assert np.array_equal(repair_apply(repair_fit(X, g, 0.0), X, g), X)


def test_repair_example():
    X = np.array([[1.0], [2.0], [3.0], [3.0], [4.0], [5.0]])
    g = np.array([1, 1, 1, 0, 0, 0])
    out = repair_apply(repair_fit(X, g, 1.0), X, g)
    np.testing.assert_allclose(out[:, 0], [2, 3, 4, 2, 3, 4])


def test_repair_errors():
    X = np.ones((4, 1))
    with pytest.raises(ValueError):
        repair_fit(X, [0, 0, 1, 1], 1.5)
    with pytest.raises(ValueError, match="no rows"):
        repair_fit(X, [1, 1, 1, 1], 0.5)


@given(st.integers(0, 10_000), st.floats(0, 1), st.integers(3, 40))
def test_repair_preserves_within_group_order(seed, level, n):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    X[:, 1] = rng.integers(0, 4, n)
    g = np.r_[0, 1, rng.integers(0, 2, n - 2)]
    out = repair_apply(repair_fit(X, g, level), X, g)
    for grp in (0, 1):
        for j in range(2):
            xs, os_ = X[g == grp, j], out[g == grp, j]
            order = np.argsort(xs, kind="stable")
            assert np.all(np.diff(os_[order]) >= -1e-12)


@given(st.integers(0, 10_000), st.floats(0, 0.999))
def test_repair_level_continuity(seed, level):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 2)) * 3
    g = np.r_[0, 1, rng.integers(0, 2, 28)]
    a = repair_apply(repair_fit(X, g, level), X, g)
    b = repair_apply(repair_fit(X, g, level + 1e-3), X, g)
    span = np.ptp(X, axis=0)
    assert np.all(np.abs(a - b) <= 1e-2 * span)


def test_repair_new_rows_interpolate_and_clamp():
    X = np.array([[0.0], [10.0], [0.0], [10.0]])
    g = np.array([0, 0, 1, 1])
    m = repair_fit(X, g, 1.0)
    out = repair_apply(m, np.array([[5.0], [-3.0], [20.0]]), np.array([0, 0, 1]))
    np.testing.assert_allclose(out[:, 0], [5.0, 0.0, 10.0])


# ------------------------------------------------------------------ LFR

@pytest.fixture(scope="module")
def lfr_data():
    ds = synth_biased(300, 0.8, 0.3, n_features=3, seed=4)
    X = (ds.X - ds.X.min(0)) / np.ptp(ds.X, axis=0)
    return X, ds.y, ds.g


def test_lfr_memberships_and_trace(lfr_data):
    X, y, g = lfr_data
    m = lfr_fit(X, y, g, k=4, max_iters=60, seed=1)
    M = lfr_transform(m, X)
    assert M.shape == (len(X), 4)
    np.testing.assert_allclose(M.sum(axis=1), 1.0, atol=1e-9)
    assert all(b <= a for a, b in zip(m.trace, m.trace[1:]))
    assert isinstance(m.converged, bool)


def test_lfr_parity_term_shrinks_group_gap(lfr_data):
    X, y, g = lfr_data
    gaps = {}
    for Az in (0.0, 50.0):
        m = lfr_fit(X, y, g, k=5, Az=Az, max_iters=150, seed=2)
        M = lfr_transform(m, X)
        gaps[Az] = np.abs(M[g == 1].mean(0) - M[g == 0].mean(0)).sum()
    assert gaps[50.0] < gaps[0.0]


def test_lfr_gradient(lfr_data):
    X, y, g = lfr_data
    X, y, g = X[:40], y[:40], g[:40]
    f = lfr_objective(X, y, g, 3, 0.5, 1.0, 2.0)
    rng = np.random.default_rng(0)
    theta = rng.normal(size=3 * X.shape[1] + 3) * 0.5
    ga = f(theta)[1]
    h = 1e-6
    gn = np.array([(f(theta + h * e)[0] - f(theta - h * e)[0]) / (2 * h)
                   for e in np.eye(len(theta))])
    assert np.linalg.norm(ga - gn) <= 1e-4 * np.linalg.norm(gn)


def test_lfr_errors(lfr_data):
    X, y, g = lfr_data
    with pytest.raises(ValueError):
        lfr_fit(X, y, g, k=1)
    with pytest.raises(ValueError):
        lfr_fit(X, y, g, Ax=-1)


# ----------------------------------------------------- prejudice remover

def test_prejudice_eta_zero_matches_logreg():
    ds = synth_biased(300, 0.7, 0.4, seed=8)
    plain = fit(LearnerSpec("logreg"), ds.X, ds.y)
    pr = prejudice_fit(ds.X, ds.y, ds.g, eta=0.0)
    assert np.max(np.abs(plain.coef - pr.coef)) <= 1e-4
    assert abs(plain.intercept - pr.intercept) <= 1e-4


def test_prejudice_large_eta_improves_di_majority():
    wins = 0
    for s in range(20):
        ds = synth_biased(300, 0.8, 0.4, n_features=4, seed=s)
        dis = []
        for eta in (0.0, 100.0):
            m = prejudice_fit(ds.X, ds.y, ds.g, eta=eta, max_iters=300)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                dis.append(symmetric_di(disparate_impact(m.predict(ds.X), ds.g)))
        wins += dis[1] > dis[0]
    assert wins > 10


def test_prejudice_trace_monotone_and_errors():
    ds = synth_biased(120, 0.8, 0.4, seed=1)
    m = prejudice_fit(ds.X, ds.y, ds.g, eta=10.0, max_iters=100)
    assert all(b <= a for a, b in zip(m.trace, m.trace[1:]))
    with pytest.raises(ValueError):
        prejudice_fit(ds.X, ds.y, ds.g, eta=-1)


def test_prejudice_index_zero_when_independent():
    p = np.array([0.3, 0.7, 0.3, 0.7])
    g = np.array([0, 0, 1, 1])
    assert prejudice_index(p, g) == pytest.approx(0.0, abs=1e-12)
    assert prejudice_index(np.array([0.0, 0.0, 1.0, 1.0]), g) > 0.1


# ------------------------------------------------------------------ CEO

def test_ceo_equal_costs_identity():
    s = np.array([0.2, 0.8, 0.6, 0.4, 0.2, 0.8, 0.6, 0.4])
    y = np.array([0, 1, 1, 0, 0, 1, 1, 0])
    g = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    m = ceo_fit(s, y, g)
    assert m.alpha_priv == m.alpha_unpriv == 0
    np.testing.assert_array_equal(ceo_apply(m, s, g), s)


def ceo_oracle(s, y, g, cost):
    c = {k: group_cost(s[g == k], y[g == k], cost) for k in (0, 1)}
    best = None
    for grp, a in itertools.product((0, 1), [i / 100 for i in range(101)]):
        if c[grp] > c[1 - grp] and a > 0:
            continue  # only the cheaper group may be mixed
        mu = y[g == grp].mean()
        mixed = (1 - a) * s[g == grp] + a * mu
        gap = abs(group_cost(mixed, y[g == grp], cost) - c[1 - grp])
        cand = (round(gap, 12), a)
        if best is None or cand < best[0]:
            best = (cand, grp, a)
    return best[1], best[2]


@pytest.mark.parametrize("cost", ["fnr", "weighted", "fpr"])
def test_ceo_eight_rows_matches_oracle(cost):
    s = np.array([0.9, 0.8, 0.3, 0.1, 0.4, 0.3, 0.6, 0.2])
    y = np.array([1, 1, 0, 0, 1, 1, 0, 0])
    g = np.array([1, 1, 1, 1, 0, 0, 0, 0])
    m = ceo_fit(s, y, g, cost)
    grp, a = ceo_oracle(s, y, g, cost)
    got = m.alpha_priv if grp == 1 else m.alpha_unpriv
    assert got == pytest.approx(a)
    assert min(m.alpha_priv, m.alpha_unpriv) == 0


@given(st.integers(0, 10_000), st.sampled_from(["weighted", "fpr", "fnr"]))
def test_ceo_properties(seed, cost):
    rng = np.random.default_rng(seed)
    n = 60
    g = np.r_[0, 1, 0, 1, rng.integers(0, 2, n - 4)]
    y = np.r_[0, 0, 1, 1, rng.integers(0, 2, n - 4)]
    s = np.clip(0.5 * y + rng.uniform(0, 0.6, n) * (1 + g) / 2, 0, 1)
    m = ceo_fit(s, y, g, cost)
    out = ceo_apply(m, s, g)
    assert np.all((out >= 0) & (out <= 1))
    assert min(m.alpha_priv, m.alpha_unpriv) == 0
    assert m.alpha_priv in ALPHA_GRID and m.alpha_unpriv in ALPHA_GRID
    again = ceo_fit(out, y, g, cost)
    assert again.alpha_priv == again.alpha_unpriv == 0


def test_ceo_errors():
    with pytest.raises(ValueError):
        ceo_fit([0.5, 0.5], [0, 1], [0, 1], "accuracy")
    with pytest.raises(ValueError):
        ceo_fit([1.5, 0.5], [0, 1], [0, 1])
