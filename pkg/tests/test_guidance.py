import json

import numpy as np
import pydot
import pytest
from hypothesis import given, strategies as st

from fairensemble.guidance import (
    DiagramParams, QUADRANTS, TARGETS, assign_quadrant, emit, fold_metric, generate_diagram,
    leave_one_out, standardize,
)
from fairensemble.harness import TrialRecord

pytestmark = pytest.mark.filterwarnings("ignore:.*all values equal")


def rec(ds, pipe, fold, di, f1):
    m = {"di": di, "spd": di - 1 if di is not None else None, "precision": f1, "recall": f1,
         "f1": f1, "accuracy": f1}
    return TrialRecord(ds, pipe, 0, fold, 0, 0, m, 0.0)


def store(spec):
    """spec: dataset -> pipeline -> list of (di, f1) per fold."""
    return [rec(d, p, i, di, f1) for d, pipes in spec.items() for p, vals in pipes.items()
            for i, (di, f1) in enumerate(vals)]


def test_fold_examples():
    np.testing.assert_allclose(fold_metric([1.25], "di"), [0.8])
    np.testing.assert_allclose(fold_metric([-0.25], "spd"), [0.25])
    np.testing.assert_allclose(fold_metric([0.7], "f1"), [0.7])
    np.testing.assert_allclose(fold_metric([None], "di"), [0.0])
    with pytest.raises(ValueError):
        fold_metric([1], "auc")


def test_standardize_example():
    recs = store({"d": {"a": [(0.2, 0.1)], "b": [(0.5, 0.1)], "c": [(0.8, 0.1)]}})
    got = {r.pipeline: r.scaled_mean for r in standardize(recs, "di")}
    assert got == pytest.approx({"a": 0.0, "b": 0.5, "c": 1.0})


def test_standardize_degenerate_warns():
    recs = store({"d": {"a": [(0.5, 0.1)], "b": [(0.5, 0.1)]}})
    with pytest.warns(UserWarning, match="all values equal"):
        out = standardize(recs, "di")
    assert all(r.scaled_mean == 0.5 for r in out)


def test_standardize_order_invariant():
    recs = store({"d": {"a": [(0.3, 0.2), (0.4, 0.3)], "b": [(0.9, 0.5), (0.7, 0.1)],
                        "c": [(0.5, 0.9), (0.6, 0.2)]}})
    assert standardize(recs, "f1") == standardize(recs[::-1], "f1")


@given(st.lists(st.floats(0.05, 0.95), min_size=6, max_size=6, unique=True),
       st.floats(0.1, 3.0), st.floats(-2.0, 2.0))
def test_standardize_affine_invariance(vals, a, b):
    base = store({"d": {f"p{i}": [(0.5, v), (0.5, v + 0.01 * i)] for i, v in enumerate(vals)}})
    moved = store({"d": {f"p{i}": [(0.5, a * v + b), (0.5, a * (v + 0.01 * i) + b)]
                         for i, v in enumerate(vals)}})
    s1, s2 = standardize(base, "f1"), standardize(moved, "f1")
    np.testing.assert_allclose([r.scaled_mean for r in s1], [r.scaled_mean for r in s2], atol=1e-9)
    np.testing.assert_allclose([r.scaled_std for r in s1], [r.scaled_std for r in s2], atol=1e-9)


def test_quadrant_examples():
    assert assign_quadrant(1000, 0.748).key == ("small", "fair")
    assert assign_quadrant(48842, 0.277).key == ("large", "unfair")
    assert assign_quadrant(8000, 0.1).size == "large"
    assert assign_quadrant(8000, 0.9).size == "large"


PARAMS = DiagramParams(datasets={
    "s1": {"n_rows": 500, "baseline_di": 0.8}, "s2": {"n_rows": 900, "baseline_di": 0.7},
    "l1": {"n_rows": 20000, "baseline_di": 0.2},
})


def test_dominant_pipeline_ranks_first():
    rng = np.random.default_rng(0)
    spec = {}
    for d in ("s1", "s2"):
        pipes = {f"p{i}": [(float(rng.uniform(0.3, 0.7)), float(rng.uniform(0.3, 0.7)))
                           for _ in range(3)] for i in range(8)}
        pipes["best"] = [(0.95, 0.9), (0.95, 0.9), (0.95, 0.9)]  # high outcome, zero spread
        spec[d] = pipes
    diag = generate_diagram(store(spec), PARAMS)
    for t in TARGETS:
        assert diag.cell("small", "fair", t)[0]["pipeline"] == "best"
    assert diag.quadrant("large", "fair")["status"] == "no data"


def test_exactly_three_survivors_reported_in_order():
    # 9 pipelines, top ceil(9/3)=3 in both metrics are the same three
    pipes = {f"p{i}": [(0.1 * i, 0.1 * i), (0.1 * i + 0.02 * (i % 2), 0.1 * i)] for i in range(1, 10)}
    diag = generate_diagram(store({"s1": pipes}), PARAMS)
    cell = diag.cell("small", "fair", "di_mean")
    assert [e["pipeline"] for e in cell] == ["p9", "p8", "p7"]
    vals = [e["value"] for e in diag.cell("small", "fair", "di_std")]
    assert vals == sorted(vals)
    assert len(diag.cell("small", "fair", "f1_mean")) == 3


def test_no_survivors_status():
    pipes = {"a": [(0.9, 0.1)], "b": [(0.5, 0.5)], "c": [(0.1, 0.9)]}
    diag = generate_diagram(store({"s1": pipes}), PARAMS)
    assert diag.quadrant("small", "fair")["status"] == "no survivors"


def test_empty_diagram_and_emit():
    diag = generate_diagram([], PARAMS)
    doc = json.loads(emit(diag, "json"))
    assert [q["status"] for q in doc["quadrants"]] == ["no data"] * 4
    assert emit(diag, "json") == emit(diag, "json")
    assert pydot.graph_from_dot_data(emit(diag, "dot"))


def test_dot_parses_with_labels():
    pipes = {f"p{i}": [(0.1 * i, 0.1 * i)] * 2 for i in range(1, 7)}
    pipes['Vote([tree, knn], hard)'] = [(0.99, 0.99)] * 2
    diag = generate_diagram(store({"s1": pipes, "l1": pipes}), PARAMS)
    graphs = pydot.graph_from_dot_data(emit(diag, "dot"))
    assert len(graphs) == 1
    text = emit(diag, "dot")
    assert text.count("{") == text.count("}")
    assert "Vote([tree, knn], hard)" in text


def test_loo_counts():
    shared = {f"p{i}": [(0.1 * i, 0.1 * i)] * 2 for i in range(1, 10)}
    # s2 alone would favour a disjoint set
    other = {f"p{i}": [(1 - 0.1 * i, 1 - 0.1 * i)] * 2 for i in range(1, 10)}
    rep = leave_one_out(store({"s1": shared, "s2": other, "l1": shared}), PARAMS)
    rows = {r.dataset: r for r in rep.rows}
    assert rows["l1"].status == "quadrant emptied"
    for r in rep.rows:
        for t, m in r.metrics.items():
            assert 0 <= m["num"] <= 3
    # identical datasets: dropping one changes nothing
    same = leave_one_out(store({"s1": shared, "s2": shared}), PARAMS)
    for r in same.rows:
        assert all(m["num"] == 0 and m["delta"] == 0.0 for m in r.metrics.values())


def test_loo_disjoint_gives_three():
    # 18 pipelines so each dataset keeps its top 6; A wins on s1 alone, B on s2 alone
    A, B, C = ["a1", "a2", "a3"], ["b1", "b2", "b3"], ["c1", "c2", "c3"]
    rest = [f"z{i:02d}" for i in range(9)]
    low = {p: 0.1 + 0.02 * i for i, p in enumerate(rest)}
    s1 = {**{p: 1.0 for p in A}, **{p: 0.8 for p in B}, **{p: 0.35 for p in C}, **low}
    s2 = {**{p: 0.5 for p in A}, **{p: 1.0 for p in B}, **{p: 0.9 for p in C}, **low}
    recs = store({d: {p: [(v, v)] * 2 for p, v in vals.items()} for d, vals in
                  (("s1", s1), ("s2", s2))})
    full = [e["pipeline"] for e in generate_diagram(recs, PARAMS).cell("small", "fair", "di_mean")]
    assert full == A
    rows = {r.dataset: r for r in leave_one_out(recs, PARAMS).rows}
    assert rows["s1"].metrics["di_mean"]["num"] == 3
    assert rows["s2"].metrics["di_mean"]["num"] == 0
    # raw folded DI of a1 minus b1, both averaged over s1 and s2
    assert rows["s1"].metrics["di_mean"]["delta"] == pytest.approx((1.0 + 0.5) / 2 - (0.8 + 1.0) / 2)


def test_locality():
    a = {f"p{i}": [(0.1 * i, 0.05 * i)] * 2 for i in range(1, 7)}
    b = {f"p{i}": [(0.5, 0.1 * (7 - i)), (0.4, 0.1 * (7 - i))] for i in range(1, 7)}
    full = generate_diagram(store({"s1": a, "l1": b}), PARAMS)
    part = generate_diagram(store({"s1": a}), PARAMS)
    assert full.quadrant("small", "fair")["cells"] == part.quadrant("small", "fair")["cells"]
    assert [q["size"] for q in full.quadrants] == [s for s, _ in QUADRANTS]
