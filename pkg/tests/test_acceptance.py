"""Acceptance criteria 1-11.

Each test prints one ``[ACCEPT n] PASS|FAIL|SKIP`` line (visible even under
output capture) and then asserts. Run just this module with::

    pytest tests/test_acceptance.py -v
"""
import json
import math
import os
import statistics
import subprocess
import sys
import time
import warnings
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from fairensemble.composition import FeasibilityError, feasibility, fit_pipeline, parse, predict_pipeline
from fairensemble.datasets import bundled_recipe, encode, load_csv, synth_biased
from fairensemble.guidance import DiagramParams, emit, generate_diagram, leave_one_out
from fairensemble.harness import TrialRecord, run_cv, select_step1
from fairensemble.learners import LearnerSpec, fit
from fairensemble.metrics import ScorerRefs, blended_from_values, disparate_impact
from fairensemble.mitigation import (
    prejudice_fit, prejudice_objective, repair_apply, repair_fit, reweigh,
)

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def report(capsys):
    def _report(n, title, ok, detail="", skipped=False):
        status = "SKIP" if skipped else ("PASS" if ok else "FAIL")
        with capsys.disabled():
            print(f"\n[ACCEPT {n:>2}] {status} {title}" + (f" - {detail}" if detail else ""))
        return ok
    return _report


# 1 ---------------------------------------------------------------------------

def test_c01_reweighing_equalizes(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    exact = True
    for _ in range(200):
        n = int(rng.integers(8, 400))
        g = rng.integers(0, 2, n)
        y = (rng.random(n) < np.where(g == 1, rng.uniform(0.2, 0.9), rng.uniform(0.1, 0.8))).astype(int)
        g[:4] = [0, 0, 1, 1]
        y[:4] = [0, 1, 0, 1]
        w = reweigh(y, g).row_weights
        worst = max(worst, abs(disparate_impact(y, g, weights=w) - 1.0))
        # rational check on the integer counts
        c = {(a, b): int(np.sum((g == a) & (y == b))) for a in (0, 1) for b in (0, 1)}
        N = Fraction(n)
        fav = {}
        for a in (0, 1):
            ng = c[(a, 0)] + c[(a, 1)]
            ny = c[(0, 1)] + c[(1, 1)]
            wfav = Fraction(ng) * ny / (N * c[(a, 1)]) * c[(a, 1)]
            ny0 = c[(0, 0)] + c[(1, 0)]
            wunf = Fraction(ng) * ny0 / (N * c[(a, 0)]) * c[(a, 0)]
            fav[a] = wfav / (wfav + wunf)
        exact &= fav[0] == fav[1]
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and exact and elapsed < 5
    report(1, "reweighing equalization", ok, f"max |DI-1| = {worst:.2e}, {elapsed:.2f}s")
    assert ok


# 2 ---------------------------------------------------------------------------

def _brute_median_quantiles(a, b):
    # equal-sized tie-free groups: the i-th smallest of each maps to the mean of both i-th smallest
    return (np.sort(a) + np.sort(b)) / 2.0


def _brute_repair(col, g):
    """Loop-based full repair: average in-group rank of each value, then the mean of the
    two groups' linearly interpolated quantiles at that rank."""
    groups = [sorted(col[g == k]) for k in (0, 1)]

    def q(vals, u):
        pos = u * (len(vals) - 1)
        i = min(int(math.floor(pos)), len(vals) - 2)
        return vals[i] + (pos - i) * (vals[i + 1] - vals[i])

    out = []
    for x, k in zip(col, g):
        vals = groups[k]
        ranks = [i for i, v in enumerate(vals) if v == x]
        u = statistics.fmean(ranks) / (len(vals) - 1)
        out.append((q(groups[0], u) + q(groups[1], u)) / 2)
    return np.array(out)


def test_c02_repair_identity_and_completeness(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    ident = True
    gap = 0.0
    oracle_err = 0.0
    for _ in range(50):
        m = int(rng.integers(2, 60))
        X = rng.normal(size=(2 * m, 3)) * rng.uniform(0.1, 5, 3)
        X[:, 2] = np.round(X[:, 2])  # ties
        g = np.r_[np.zeros(m, int), np.ones(m, int)]
        rng.shuffle(g)
        X0 = repair_apply(repair_fit(X, g, 0.0), X, g)
        ident &= np.array_equal(X0, X)
        X1 = repair_apply(repair_fit(X, g, 1.0), X, g)
        for j in range(3):
            oracle_err = max(oracle_err, float(np.max(np.abs(X1[:, j] - _brute_repair(X[:, j], g)))))
            if len(np.unique(X[:, j])) == len(X):
                # tied inputs must share an output, so group equality is only checkable tie-free
                a, b = np.sort(X1[g == 0, j]), np.sort(X1[g == 1, j])
                target = _brute_median_quantiles(X[g == 0, j], X[g == 1, j])
                gap = max(gap, float(np.max(np.abs(a - b))), float(np.max(np.abs(a - target))))
    elapsed = time.perf_counter() - t0
    ok = ident and gap <= 1e-6 and oracle_err <= 1e-6 and elapsed < 5
    report(2, "repair identity/completeness", ok,
           f"identity={ident}, max group gap {gap:.2e}, max oracle error {oracle_err:.2e}, "
           f"{elapsed:.2f}s")
    assert ok


# 3 ---------------------------------------------------------------------------

def _fd_grad(f, x, h=1e-6):
    out = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e)[0] - f(x - e)[0]) / (2 * h)
    return out


def test_c03_prejudice_remover(report):
    t0 = time.perf_counter()
    ds = synth_biased(400, 0.8, 0.4, seed=3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        plain = fit(LearnerSpec("logreg", {"l2": 1e-4, "max_iters": 500}), ds.X, ds.y)
        pr = prejudice_fit(ds.X, ds.y, ds.g, eta=0.0, l2=1e-4, max_iters=500)
    coef_gap = max(float(np.max(np.abs(plain.coef - pr.coef))), abs(plain.intercept - pr.intercept))
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        n, d = int(rng.integers(10, 80)), int(rng.integers(1, 6))
        X = rng.normal(size=(n, d))
        g = rng.integers(0, 2, n)
        y = rng.integers(0, 2, n)
        eta = float(rng.choice([0.5, 1.0, 10.0, 100.0]))
        f = prejudice_objective(X, y, g, eta, 1e-3, rng.uniform(0.5, 2.0, n))
        theta = rng.normal(size=d + 1)
        ga = f(theta)[1]
        gn = _fd_grad(f, theta)
        rel = np.linalg.norm(ga - gn) / max(np.linalg.norm(gn), 1e-12)
        worst = max(worst, float(rel))
    elapsed = time.perf_counter() - t0
    ok = coef_gap <= 1e-4 and worst < 1e-4 and elapsed < 30
    report(3, "prejudice remover eta=0 and gradient", ok,
           f"coef gap {coef_gap:.2e}, max grad rel err {worst:.2e}, {elapsed:.2f}s")
    assert ok


# 4 ---------------------------------------------------------------------------

IDENTITIES = [
    ("Boost({e}, 1)", "{e}"),
    ("Bag({e}, 1, bootstrap=false)", "{e}"),
    ("Vote([{e}, {e}, {e}], hard)", "{e}"),
]
FIXTURE_MEMBERS = ["tree", "tree(max_depth=3)", "logreg", "knn(k=3)", "gbt(n_rounds=5)",
                   "Pr(DIR(0.4), tree)", "Pr(Reweigh, tree)", "PR(eta=1.0)",
                   "Post(CEO(cost=weighted), tree)", "tree(min_leaf=5)"]


def test_c04_ensemble_identities(report, quiet):
    t0 = time.perf_counter()
    bad = []
    for i, member in enumerate(FIXTURE_MEMBERS):
        ds = synth_biased(150, 0.75, 0.45, n_features=4, seed=100 + i)
        tr, te = np.arange(100), np.arange(100, 150)
        ref = predict_pipeline(fit_pipeline(member, ds, tr, seed=i), ds.X[te], ds.g[te])
        for wrapped, _ in IDENTITIES:
            text = wrapped.format(e=member)
            got = predict_pipeline(fit_pipeline(text, ds, tr, seed=i), ds.X[te], ds.g[te])
            if not np.array_equal(got, ref):
                bad.append(text)
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 10
    report(4, "ensemble identities", ok, f"{len(bad)} mismatches {bad[:3]}, {elapsed:.2f}s")
    assert ok


# 5 ---------------------------------------------------------------------------

LEAF = {"none": "tree", "pre": "Pr(DIR(0.4), tree)", "in": "PR(eta=1.0)",
        "post": "Post(CEO(cost=weighted), tree)"}


def _wrap(kind, inner):
    return {"none": inner, "pre": f"Pr(DIR(0.4), {inner})", "in": f"PR({inner}, eta=1.0)",
            "post": f"Post(CEO(cost=weighted), {inner})"}[kind]


def _ensemble(ens, member, final="gbt", passthrough="false", mode="hard"):
    if ens == "Bag":
        return f"Bag({member}, 10)"
    if ens == "Boost":
        return f"Boost({member}, 10)"
    if ens == "Vote":
        return f"Vote([{member}, {member}], {mode})"
    return f"Stack([{member}, {member}], {final}, passthrough={passthrough})"


def feasibility_matrix():
    """(pipeline text, expected rule or None) for the mitigation x ensemble grid."""
    rows = []
    kinds = ("none", "pre", "in", "post")
    for m in kinds:
        rows.append((LEAF[m], None))
    for ens in ("Bag", "Boost", "Vote", "Stack"):
        for m in kinds:
            # mitigation at the base-estimator level
            rows.append((_ensemble(ens, LEAF[m]), None))
            # mitigation at the ensemble level: in-estimator cannot wrap an ensemble
            rows.append((_wrap(m, _ensemble(ens, "tree")), "R1" if m == "in" else None))
        if ens == "Vote":
            for m in kinds:
                rows.append((_ensemble("Vote", LEAF[m], mode="soft"), "R2" if m == "post" else None))
                rows.append((_wrap(m, _ensemble("Vote", "tree", mode="soft")),
                             "R1" if m == "in" else None))
        if ens == "Stack":
            for m in ("pre", "in", "post"):
                # mitigated final estimator
                rows.append((_ensemble("Stack", "tree", final=LEAF[m], passthrough="true"), None))
                rows.append((_ensemble("Stack", "tree", final=LEAF[m], passthrough="false"), "R3"))
                # mitigated members and final
                rows.append((_ensemble("Stack", LEAF[m], final=LEAF["pre"], passthrough="true"),
                             "R4"))
        # two mitigation points on one path
        for outer in ("pre", "post"):
            for inner in ("pre", "in", "post"):
                rows.append((_wrap(outer, _ensemble(ens, LEAF[inner])), "R5"))
    rows += [
        ("Pr(DIR(1.0), Stack([tree, knn], gbt, passthrough=true))", None),
        ("Stack([tree, knn], Pr(DIR(1.0), gbt), passthrough=false)", "R3"),
        ("Bag(Pr(Reweigh, Pr(DIR(0.4), tree)), 10)", "R5"),
        ("PR(Post(CEO(cost=weighted), tree), eta=1.0)", "R1"),
        ("Vote([tree, Post(CEO(cost=fnr), knn)], soft)", "R2"),
    ]
    return rows


def test_c05_feasibility_matrix(report):
    t0 = time.perf_counter()
    wrong = []
    rows = feasibility_matrix()
    for text, rule in rows:
        err = feasibility(parse(text))
        got = None if err is None else err.rule
        if got != rule:
            wrong.append((text, rule, got))
    elapsed = time.perf_counter() - t0
    ok = not wrong and elapsed < 1
    report(5, "feasibility matrix", ok, f"{len(rows)} combinations, {len(wrong)} wrong, "
           f"{elapsed:.3f}s")
    assert ok, wrong


# 6 ---------------------------------------------------------------------------

def test_c06_bagging_reduces_di_volatility(report, quiet):
    t0 = time.perf_counter()
    ds = synth_biased(2000, 0.8, 0.4, seed=0)
    wins = 0
    n_seeds = 20
    for s in range(n_seeds):
        bag = [r.metrics["di"] for r in run_cv("Bag(Pr(DIR(1.0), tree), 10)", ds, 5, 3, s)]
        single = [r.metrics["di"] for r in run_cv("Pr(DIR(1.0), tree)", ds, 5, 3, s)]
        wins += statistics.stdev(bag) <= statistics.stdev(single)
    elapsed = time.perf_counter() - t0
    ok = wins / n_seeds >= 0.7 and elapsed < 300
    report(6, "bagging reduces DI volatility", ok, f"{wins}/{n_seeds} seeds, {elapsed:.1f}s")
    assert ok


# 7 ---------------------------------------------------------------------------

def _data_dir() -> Path:
    return Path(os.environ.get("FAIRENSEMBLE_DATA", ROOT / "data"))


@pytest.mark.parametrize("csv,recipe,target,n_rows,n_cols", [
    ("credit-g.csv", "credit-g", 0.748, 1000, 58),
    ("compas.csv", "compas", 0.687, 5278, None),
])
def test_c07_baseline_di(report, csv, recipe, target, n_rows, n_cols):
    path = _data_dir() / csv
    if not path.is_file():
        report(7, f"baseline DI {recipe}", False, f"{path} not found", skipped=True)
        pytest.skip(f"{path} not available")
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ds = encode(load_csv(path), bundled_recipe(recipe))
        di = ds.summary()["baseline_di"]
    elapsed = time.perf_counter() - t0
    ok = abs(di - target) <= 0.02 and ds.n_rows == n_rows and elapsed < 30
    if n_cols is not None:
        ok &= ds.n_cols == n_cols
    report(7, f"baseline DI {recipe}", ok,
           f"DI {di:.4f} (target {target}), {ds.n_rows} rows x {ds.n_cols} cols, {elapsed:.2f}s")
    assert ok


# 8 ---------------------------------------------------------------------------

def oracle_step1(rows, metric):
    """Independent filter cascade over plain dicts of per-fold metrics."""
    by = {}
    for r in rows:
        by.setdefault(r["pipeline"], []).append(r)
    cands = {}
    for p, rs in by.items():
        cands[p] = {
            "di": statistics.fmean(r["di"] for r in rs),
            "precision": statistics.fmean(r["precision"] for r in rs),
            "recall": statistics.fmean(r["recall"] for r in rs),
            "f1": statistics.fmean(r["f1"] for r in rs),
            "base": statistics.fmean(r["base_rate"] for r in rs),
        }
    f1s = [c["f1"] for c in cands.values()]
    thr = max(statistics.fmean(f1s), statistics.median(f1s))
    pool = list(cands)
    relaxed = False
    for keep in (lambda c: 0.8 <= c["di"] <= 1.25,
                 lambda c: c["precision"] > c["base"],
                 lambda c: c["f1"] > thr):
        nxt = [p for p in pool if keep(cands[p])]
        if nxt:
            pool = nxt
        else:
            relaxed = True
    top = max(cands[p][metric] for p in pool)
    return sorted(p for p in pool if cands[p][metric] == top)[0], relaxed


KIND_TEXTS = {
    "pre": ["Pr(DIR(0.4), tree)", "Pr(DIR(1.0), tree)", "Pr(Reweigh, tree)", "Pr(LFR, tree)"],
    "in": ["PR(eta=1.0)", "PR(eta=10.0)", "PR(eta=100.0)"],
    "post": ["Post(CEO(cost=weighted), tree)", "Post(CEO(cost=fnr), tree)",
             "Post(CEO(cost=fpr), tree)"],
}


def random_step1_table(rng, n_datasets=2):
    records, plain = [], []
    for d in range(n_datasets):
        ds = f"d{d}"
        for kind, texts in KIND_TEXTS.items():
            n_c = int(rng.integers(1, len(texts) + 1))
            mode = rng.integers(0, 3)  # 0: normal, 1: all fail F1, 2: all fail F2
            for text in texts[:n_c]:
                center_di = rng.uniform(0.3, 0.75) if mode == 1 else rng.uniform(0.5, 1.4)
                prec_c = rng.uniform(0.2, 0.9)
                for t in range(2):
                    for f in range(3):
                        m = {
                            "di": float(np.clip(center_di + rng.normal(0, 0.05), 0.01, None)),
                            "spd": 0.0,
                            "precision": float(prec_c + rng.normal(0, 0.03)),
                            "recall": float(rng.uniform(0.2, 1.0)),
                            "f1": float(np.round(rng.uniform(0.3, 0.9), 2)),  # ties on purpose
                            "accuracy": 0.5,
                        }
                        base = 0.99 if mode == 2 else float(rng.uniform(0.3, 0.6))
                        records.append(TrialRecord(ds, text, t, f, 0, 0, m, 0.0, None, base))
                        plain.append({"dataset": ds, "pipeline": text, "kind": kind,
                                      **m, "base_rate": base})
    return records, plain


def test_c08_selection_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    disagreements = 0
    relaxed_seen = 0
    for i in range(50):
        records, plain = random_step1_table(rng)
        metric = "precision" if i % 2 else "recall"
        choice = select_step1(records, metric)
        for ds in ("d0", "d1"):
            for kind in KIND_TEXTS:
                rows = [r for r in plain if r["dataset"] == ds and r["kind"] == kind]
                want, relaxed = oracle_step1(rows, metric)
                relaxed_seen += relaxed
                if choice.pipelines[ds][kind] != want or \
                        choice.audit[ds][kind]["relaxed"] != relaxed:
                    disagreements += 1
    elapsed = time.perf_counter() - t0
    ok = disagreements == 0 and relaxed_seen > 0 and elapsed < 10
    report(8, "step-1 selection oracle", ok,
           f"{disagreements} disagreements, {relaxed_seen} relaxed cases, {elapsed:.2f}s")
    assert ok


# 9 ---------------------------------------------------------------------------

def guidance_store(rng, layout):
    """Synthetic records: ``layout`` maps dataset -> (n_rows, baseline_di)."""
    pipes = [f"Bag(tree, {n})" for n in (1, 2, 3, 5, 8, 13, 21)]
    records = []
    for ds in layout:
        for p in pipes:
            mu_di, mu_f1 = rng.uniform(0.4, 1.0), rng.uniform(0.4, 0.9)
            for t in range(2):
                for f in range(3):
                    m = {"di": float(mu_di + rng.normal(0, 0.05)), "spd": 0.0,
                         "precision": 0.5, "recall": 0.5,
                         "f1": float(mu_f1 + rng.normal(0, 0.03)), "accuracy": 0.5}
                    records.append(TrialRecord(ds, p, t, f, 0, 0, m, 0.0, None, 0.5))
    info = {d: {"n_rows": n, "baseline_di": di} for d, (n, di) in layout.items()}
    return records, DiagramParams(info)


LAYOUT = {"sf1": (500, 0.8), "sf2": (900, 0.7), "su1": (300, 0.3), "su2": (700, 0.2),
          "lf1": (9000, 0.9), "lf2": (20000, 0.6), "lu1": (12000, 0.25)}


def test_c09_guidance_determinism_locality_loo(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    records, params = guidance_store(rng, LAYOUT)
    a = emit(generate_diagram(records, params), "json")
    b = emit(generate_diagram(list(reversed(records)), params), "json")
    deterministic = a == b and emit(generate_diagram(records, params), "dot") == \
        emit(generate_diagram(records, params), "dot")
    full = generate_diagram(records, params)
    local = True
    for q in full.quadrants:
        sub = [r for r in records if r.dataset in q["datasets"]]
        part = generate_diagram(sub, params).quadrant(q["size"], q["fairness"])
        local &= part["cells"] == q["cells"] and part["status"] == q["status"]

    # a dataset whose pipelines never make both top thirds
    extra = []
    d = "sf_ghost"
    pipes = ["Bag(tree, 1)", "Bag(tree, 2)", "Bag(tree, 3)"]
    for p, (di, f1) in zip(pipes, [(0.95, 0.5), (0.7, 0.9), (0.6, 0.6)]):
        for f in range(3):
            m = {"di": di, "spd": 0.0, "precision": 0.5, "recall": 0.5, "f1": f1,
                 "accuracy": 0.5}
            extra.append(TrialRecord(d, p, 0, f, 0, 0, m, 0.0, None, 0.5))
    info = dict(params.datasets)
    info[d] = {"n_rows": 400, "baseline_di": 0.9}
    p2 = DiagramParams(info)
    loo = leave_one_out(records + extra, p2)
    row = next(r for r in loo.rows if r.dataset == d)
    loo_zero = row.status == "ok" and all(v["num"] == 0 and v["delta"] == 0.0
                                          for v in row.metrics.values())
    elapsed = time.perf_counter() - t0
    ok = deterministic and local and loo_zero and elapsed < 10
    report(9, "guidance determinism/locality/LOO", ok,
           f"deterministic={deterministic}, local={local}, loo_zero={loo_zero}, {elapsed:.2f}s")
    assert ok


# 10 --------------------------------------------------------------------------

def test_c10_blended_scorer_traces(report):
    t0 = time.perf_counter()
    refs = ScorerRefs(min_di=0.4, min_f1=0.6, max_f1=0.9)
    # di' = 0.3/0.6 = 0.5 -> 2*0.5 - 0.66 = 0.34 ; f1' = 1 ; (0.34 + 1) / 2
    s1 = blended_from_values(0.7, 0.9, refs)
    # both scaled values at 1, nothing amplified
    s2 = blended_from_values(1.0, 0.9, refs)
    # di' = 0 -> -0.66 ; f1' = 0.6/... use f1 = 0.9 -> 1 ; (-0.66 + 1) / 2
    s3 = blended_from_values(0.4, 0.9, refs)
    errs = [abs(s1 - 0.67), abs(s2 - 1.0), abs(s3 - 0.17)]
    elapsed = time.perf_counter() - t0
    ok = max(errs) <= 1e-12 and elapsed < 1
    report(10, "blended scorer traces", ok, f"scores {s1!r}, {s2!r}, {s3!r}")
    assert ok


# 11 --------------------------------------------------------------------------

E2E_CONFIG = {
    "seed": 11,
    "datasets": [
        {"name": "synth_unfair", "synthetic": {"n": 400, "rate_priv": 0.8, "rate_unpriv": 0.3,
                                                "seed": 1}},
        {"name": "synth_fair", "synthetic": {"n": 400, "rate_priv": 0.7, "rate_unpriv": 0.6,
                                              "seed": 2}, "selection_metric": "precision"},
    ],
    "step1": {"pipelines": ["Pr(DIR(0.4), tree)", "Pr(DIR(1.0), tree)", "Pr(Reweigh, tree)",
                            "PR(eta=1.0)", "PR(eta=100.0)", "Post(CEO(cost=weighted), tree)",
                            "Post(CEO(cost=fnr), tree)"]},
    "grid": {
        "pipelines": ["Bag(tree, {bag_n})", "Bag(Pr({pre}, tree), {bag_n})",
                      "Pr({pre}, Bag(tree, {bag_n}))", "Boost(tree, {boost_n})",
                      "Boost(Pr({pre}, tree), {boost_n})", "Post({post}, Boost(tree, {boost_n}))",
                      "Vote([{palette}], hard)", "Stack([{palette}], gbt, passthrough=false)",
                      "Boost({in}, {boost_n})"],
        "bag_sizes": [1, 10], "boost_sizes": [10], "palette": ["tree", "knn", "logreg"],
    },
}


def _dot_ok(text):
    import pydot

    graphs = pydot.graph_from_dot_data(text)
    return graphs is not None and len(graphs) == 1 and len(graphs[0].get_nodes()) > 0


def test_c11_end_to_end_desk_run(report, tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({**E2E_CONFIG, "out": "out"}))
    env = {**os.environ, "PYTHONWARNINGS": "ignore"}
    codes = []
    for cmd in ("grid", "guide"):
        p = subprocess.run([sys.executable, "-m", "fairensemble", cmd, "--config", str(cfg)],
                           capture_output=True, text=True, env=env)
        codes.append(p.returncode)
    out = tmp_path / "out"
    diagram = json.loads((out / "diagram.json").read_text())
    quads = {(q["size"], q["fairness"]) for q in diagram["quadrants"]}
    lines = (out / "results.jsonl").read_text().splitlines()
    recs = [json.loads(x) for x in lines[1:]]
    per_ds = {}
    for r in recs:
        per_ds.setdefault(r["dataset"], set()).add(r["pipeline"])
    elapsed = time.perf_counter() - t0
    ok = (codes == [0, 0] and len(diagram["quadrants"]) == 4 and len(quads) == 4
          and all(len(v) == 12 for v in per_ds.values()) and len(per_ds) == 2
          and len(recs) == 2 * 12 * 15 and _dot_ok((out / "diagram.dot").read_text())
          and elapsed < 600)
    report(11, "end-to-end desk run", ok,
           f"exit codes {codes}, {len(recs)} records, pipelines/dataset "
           f"{sorted(len(v) for v in per_ds.values())}, {elapsed:.1f}s")
    assert ok
