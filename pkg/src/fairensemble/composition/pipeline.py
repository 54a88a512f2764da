"""Fitting and prediction for composed mitigator/ensemble pipelines.

Every node is fitted into an immutable counterpart exposing
``scores(X, g)`` (class-1 probability or a 0/1 label when the node has no
probabilities) and ``predict(X, g)``. A min-max scaler fitted on the
training slice sits in front of the whole tree.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .. import learners
from .._rng import derive_seed
from ..datasets import Dataset, stratified_assign, stratified_holdout
from ..mitigation import (
    ceo_apply, ceo_fit, lfr_fit, lfr_transform, prejudice_fit, repair_apply, repair_fit, reweigh,
)
from .grammar import (
    Bag, Boost, FeasibilityError, InEst, Learner, Post, Pre, Stack, Vote, parse, supports_proba,
    to_text, validate, walk,
)

POST_CALIBRATION_FRACTION = 0.3
STACK_FOLDS = 3


def supports_weights(node) -> bool:
    if isinstance(node, Learner):
        return learners.CAPABILITIES[node.kind]["supports_weights"]
    if isinstance(node, (InEst, Bag, Boost)):
        return True
    if isinstance(node, (Pre, Post)):
        return supports_weights(node.inner)
    if isinstance(node, Vote):
        return all(map(supports_weights, node.members))
    if isinstance(node, Stack):
        return all(map(supports_weights, node.members)) and supports_weights(node.final)
    raise TypeError(f"not a pipeline node: {node!r}")


def _hard(s: np.ndarray) -> np.ndarray:
    # ties go to class 0, like the base learners
    return (s > 0.5).astype(np.int64)


# ------------------------------------------------------------ fitted nodes


@dataclass(frozen=True, eq=False)
class _FLearner:
    model: learners.TrainedModel

    def scores(self, X, g):
        return self.model.predict_proba(X)[:, 1]

    def predict(self, X, g):
        return self.model.predict(X)


@dataclass(frozen=True, eq=False)
class _FInEst:
    model: object

    def scores(self, X, g):
        return self.model.predict_proba(X)[:, 1]

    def predict(self, X, g):
        return self.model.predict(X)


@dataclass(frozen=True, eq=False)
class _FPre:
    name: str
    state: object
    numeric_mask: np.ndarray
    inner: object

    def transform(self, X, g):
        if self.name == "DIR":
            cols = np.flatnonzero(self.numeric_mask)
            if not cols.size:
                return X
            X = X.copy()
            X[:, cols] = repair_apply(self.state, X[:, cols], g)
            return X
        if self.name == "LFR":
            return lfr_transform(self.state, X)
        return X

    def scores(self, X, g):
        return self.inner.scores(self.transform(X, g), g)

    def predict(self, X, g):
        return self.inner.predict(self.transform(X, g), g)


@dataclass(frozen=True, eq=False)
class _FPost:
    ceo: object
    proba_source: bool
    inner: object

    def scores(self, X, g):
        raw = self.inner.scores(X, g) if self.proba_source else self.inner.predict(X, g)
        return _hard(ceo_apply(self.ceo, raw, g)).astype(float)

    def predict(self, X, g):
        return self.scores(X, g).astype(np.int64)


@dataclass(frozen=True, eq=False)
class _FBag:
    members: tuple
    use_proba: bool

    def scores(self, X, g):
        if self.use_proba:
            return np.mean([m.scores(X, g) for m in self.members], axis=0)
        return np.mean([m.predict(X, g) for m in self.members], axis=0)

    def predict(self, X, g):
        return _hard(self.scores(X, g))


@dataclass(frozen=True, eq=False)
class _FBoost:
    members: tuple
    alphas: tuple

    def scores(self, X, g):
        a = np.asarray(self.alphas)
        votes = np.array([m.predict(X, g) for m in self.members], dtype=float)
        return a @ votes / a.sum()

    def predict(self, X, g):
        return _hard(self.scores(X, g))


@dataclass(frozen=True, eq=False)
class _FVote:
    members: tuple
    mode: str

    def scores(self, X, g):
        if self.mode == "soft":
            return np.mean([m.scores(X, g) for m in self.members], axis=0)
        return np.mean([m.predict(X, g) for m in self.members], axis=0)

    def predict(self, X, g):
        return _hard(self.scores(X, g))


@dataclass(frozen=True, eq=False)
class _FStack:
    members: tuple
    member_proba: tuple
    final: object
    passthrough: bool

    def meta(self, X, g):
        cols = [m.scores(X, g) if p else m.predict(X, g).astype(float)
                for m, p in zip(self.members, self.member_proba)]
        M = np.column_stack(cols)
        return np.hstack([M, X]) if self.passthrough else M

    def scores(self, X, g):
        return self.final.scores(self.meta(X, g), g)

    def predict(self, X, g):
        return self.final.predict(self.meta(X, g), g)


# ------------------------------------------------------------------ fitting


def _member_seed(seed: int, tag: str, i: int) -> int:
    # member 0 inherits the parent seed so a one-member ensemble equals its member
    return seed if i == 0 else derive_seed(seed, tag, i)


def _fit(node, X, y, g, w, mask, seed):
    """Fit ``node`` on one training slice; ``w`` may be None (uniform)."""
    if isinstance(node, Learner):
        return _FLearner(learners.fit(node.spec(seed), X, y, w))

    if isinstance(node, InEst):
        p = dict(node.params)
        return _FInEst(prejudice_fit(X, y, g, eta=p["eta"], l2=p["l2"],
                                     max_iters=p["max_iters"], seed=seed, weights=w))

    if isinstance(node, Pre):
        name = node.mitigator.name
        inner_seed = derive_seed(seed, "inner")
        if name == "Reweigh":
            rw = reweigh(y, g, w).row_weights
            return _FPre(name, None, mask, _fit(node.inner, X, y, g, rw, mask, inner_seed))
        if name == "DIR":
            cols = np.flatnonzero(mask)
            state = repair_fit(X[:, cols], g, node.mitigator.get("level"))
            pre = _FPre(name, state, mask, None)
            Xt = pre.transform(X, g)
            return _FPre(name, state, mask, _fit(node.inner, Xt, y, g, w, mask, inner_seed))
        p = dict(node.mitigator.params)
        state = lfr_fit(X, y, g, k=p["k"], Ax=p["Ax"], Ay=p["Ay"], Az=p["Az"],
                        max_iters=p["max_iters"], seed=derive_seed(seed, "lfr"))
        Xt = lfr_transform(state, X)
        inner_mask = np.ones(Xt.shape[1], bool)
        return _FPre(name, state, mask, _fit(node.inner, Xt, y, g, w, inner_mask, inner_seed))

    if isinstance(node, Post):
        rng = np.random.default_rng(derive_seed(seed, "calibration"))
        fit_idx, cal_idx = stratified_holdout(y, g, POST_CALIBRATION_FRACTION, rng)
        if len(fit_idx) == 0 or len(cal_idx) == 0:
            fit_idx = cal_idx = np.arange(len(y))
        sub_w = None if w is None else w[fit_idx]
        inner = _fit(node.inner, X[fit_idx], y[fit_idx], g[fit_idx], sub_w, mask,
                     derive_seed(seed, "inner"))
        use_proba = supports_proba(node.inner)
        Xc, gc = X[cal_idx], g[cal_idx]
        raw = inner.scores(Xc, gc) if use_proba else inner.predict(Xc, gc).astype(float)
        ceo = ceo_fit(raw, y[cal_idx], gc, node.mitigator.get("cost"))
        return _FPost(ceo, use_proba, inner)

    if isinstance(node, Bag):
        n = len(y)
        members = []
        p = None if w is None else w / w.sum()
        for i in range(int(node.n)):
            s = _member_seed(seed, "bag", i)
            if node.bootstrap:
                draw = np.random.default_rng(derive_seed(seed, "bag-sample", i))
                idx = draw.choice(n, size=n, replace=True, p=p)
                members.append(_fit(node.inner, X[idx], y[idx], g[idx], None, mask, s))
            else:
                members.append(_fit(node.inner, X, y, g, w, mask, s))
        return _FBag(tuple(members), supports_proba(node.inner))

    if isinstance(node, Boost):
        return _fit_samme(node, X, y, g, w, mask, seed)

    if isinstance(node, Vote):
        # members differ by construction; identical members must agree
        members = tuple(_fit(m, X, y, g, w, mask, seed) for m in node.members)
        return _FVote(members, node.mode)

    if isinstance(node, Stack):
        return _fit_stack(node, X, y, g, w, mask, seed)

    raise TypeError(f"not a pipeline node: {node!r}")


def _fit_samme(node: Boost, X, y, g, w, mask, seed):
    n = len(y)
    sw = np.ones(n) / n if w is None else w / w.sum()
    weighted = supports_weights(node.inner)
    members, alphas = [], []
    for m in range(int(node.n)):
        s = _member_seed(seed, "boost", m)
        if weighted:
            member = _fit(node.inner, X, y, g, sw * n, mask, s)
        elif np.ptp(sw) == 0:  # uniform weights need no resampling
            member = _fit(node.inner, X, y, g, None, mask, s)
        else:
            draw = np.random.default_rng(derive_seed(seed, "boost-sample", m))
            idx = draw.choice(n, size=n, replace=True, p=sw)
            member = _fit(node.inner, X[idx], y[idx], g[idx], None, mask, s)
        wrong = member.predict(X, g) != y
        err = float(sw[wrong].sum())
        if err >= 0.5:
            if not members:
                # keep a weak first learner so the ensemble is defined
                members.append(member)
                alphas.append(1.0)
            break
        if err <= 1e-10:
            members.append(member)
            alphas.append(1.0 if not members[:-1] else float(np.log((1 - 1e-10) / 1e-10)))
            break
        alpha = float(np.log((1 - err) / err))
        members.append(member)
        alphas.append(alpha)
        sw = sw * np.exp(alpha * wrong)
        sw = sw / sw.sum()
    return _FBoost(tuple(members), tuple(alphas))


def _fit_stack(node: Stack, X, y, g, w, mask, seed):
    n = len(y)
    k = min(STACK_FOLDS, n)
    folds = stratified_assign(y, g, k, np.random.default_rng(derive_seed(seed, "stack-folds")))
    proba = tuple(supports_proba(m) for m in node.members)
    meta = np.zeros((n, len(node.members)))
    for i, member in enumerate(node.members):
        for f in range(k):
            tr = folds != f
            te = ~tr
            fitted = _fit(member, X[tr], y[tr], g[tr], None if w is None else w[tr], mask,
                          derive_seed(seed, "stack-oof", i, f))
            meta[te, i] = fitted.scores(X[te], g[te]) if proba[i] else fitted.predict(X[te], g[te])
    members = tuple(_fit(m, X, y, g, w, mask, seed) for m in node.members)
    if node.passthrough:
        meta = np.hstack([meta, X])
        final_mask = np.concatenate([np.zeros(len(node.members), bool), mask])
    else:
        final_mask = np.zeros(len(node.members), bool)
    final = _fit(node.final, meta, y, g, w, final_mask, derive_seed(seed, "final"))
    return _FStack(members, proba, final, node.passthrough)


# ----------------------------------------------------------------- public


@dataclass(frozen=True, eq=False)
class TrainedPipeline:
    expr: object
    text: str
    root: object
    scale_min: np.ndarray
    scale_range: np.ndarray
    n_cols: int
    supports_proba: bool
    needs_g: tuple  # paths of nodes that read g at predict time
    fit_seconds: float
    seed: int

    def _scale(self, X):
        X = np.asarray(X, float)
        if X.ndim != 2 or X.shape[1] != self.n_cols:
            raise ValueError(f"expected {self.n_cols} columns, got shape {X.shape}")
        return (X - self.scale_min) / self.scale_range

    def predict(self, X, g=None) -> np.ndarray:
        return predict_pipeline(self, X, g)

    def predict_proba(self, X, g=None) -> np.ndarray:
        if not self.supports_proba:
            raise learners.CapabilityError(f"{self.text} does not produce probabilities")
        Xs = self._scale(X)
        g = _check_g(self, g, len(Xs))
        p1 = np.clip(self.root.scores(Xs, g), 0, 1)
        return np.column_stack([1 - p1, p1])


def _needs_g(expr) -> tuple:
    out = []
    for path, n in walk(expr):
        if isinstance(n, Post) or (isinstance(n, Pre) and n.mitigator.name == "DIR"):
            out.append(f"{path} ({to_text(n).split('(')[0]} {n.mitigator.name})")
    return tuple(out)


def _check_g(trained: TrainedPipeline, g, n):
    if g is None:
        if trained.needs_g:
            raise ValueError(f"protected attribute g is required by {trained.needs_g[0]}")
        return np.zeros(n, dtype=np.int64)
    g = np.asarray(g)
    if len(g) != n:
        raise ValueError(f"g has {len(g)} entries for {n} rows")
    return g


def fit_pipeline(expr, ds: Dataset, train_idx=None, seed: int = 0) -> TrainedPipeline:
    """Fit a feasible pipeline on ``ds`` restricted to ``train_idx`` rows."""
    if isinstance(expr, str):
        expr = parse(expr)
    validate(expr)
    idx = np.arange(ds.n_rows) if train_idx is None else np.asarray(train_idx)
    X = np.asarray(ds.X[idx], float)
    y = np.asarray(ds.y[idx]).astype(np.int64)
    g = np.asarray(ds.g[idx]).astype(np.int64)
    t0 = time.perf_counter()
    lo = X.min(axis=0) if len(X) else np.zeros(X.shape[1])
    rng = (X.max(axis=0) - lo) if len(X) else np.ones(X.shape[1])
    rng = np.where(rng > 0, rng, 1.0)
    Xs = (X - lo) / rng
    root = _fit(expr, Xs, y, g, None, np.asarray(ds.numeric_mask, bool), seed)
    return TrainedPipeline(
        expr=expr, text=to_text(expr), root=root, scale_min=lo, scale_range=rng,
        n_cols=X.shape[1], supports_proba=supports_proba(expr), needs_g=_needs_g(expr),
        fit_seconds=time.perf_counter() - t0, seed=seed,
    )


def predict_pipeline(trained: TrainedPipeline, X, g=None) -> np.ndarray:
    Xs = trained._scale(X)
    g = _check_g(trained, g, len(Xs))
    return np.asarray(trained.root.predict(Xs, g), dtype=np.int64)


__all__ = ["FeasibilityError", "TrainedPipeline", "fit_pipeline", "predict_pipeline",
           "supports_weights"]
