"""Self-contained base estimators with a uniform fit/predict contract.

All learners accept optional non-negative sample weights (the constant
learner ignores them) and expose class-1 probabilities. Fitting is
deterministic for fixed inputs.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .optim import descend

KINDS = ("decision_tree", "logistic_regression", "knn", "gradient_boosted_trees", "dummy_constant")

ALIASES = {
    "tree": "decision_tree",
    "logreg": "logistic_regression",
    "knn": "knn",
    "gbt": "gradient_boosted_trees",
    "dummy": "dummy_constant",
}
SHORT_NAMES = {v: k for k, v in ALIASES.items()}

DEFAULTS: dict[str, dict[str, Any]] = {
    "decision_tree": {"max_depth": None, "min_leaf": 1},
    "logistic_regression": {"l2": 1e-4, "learning_rate": 1.0, "max_iters": 500},
    "knn": {"k": 5},
    "gradient_boosted_trees": {"n_rounds": 50, "learning_rate": 0.1, "max_depth": 3},
    "dummy_constant": {"constant": 1},
}

# capability flags are fixed per kind
CAPABILITIES = {
    "decision_tree": {"supports_proba": True, "supports_weights": True},
    "logistic_regression": {"supports_proba": True, "supports_weights": True},
    "knn": {"supports_proba": True, "supports_weights": True},
    "gradient_boosted_trees": {"supports_proba": True, "supports_weights": True},
    "dummy_constant": {"supports_proba": True, "supports_weights": False},
}

MODEL_FORMAT = "fairensemble.model/1"


class CapabilityError(RuntimeError):
    pass


def _check_params(kind: str, params: Mapping) -> dict:
    defaults = DEFAULTS[kind]
    unknown = set(params) - set(defaults)
    if unknown:
        raise ValueError(f"{kind}: unknown hyperparameters {sorted(unknown)}")
    p = {**defaults, **params}
    if kind == "decision_tree":
        if p["max_depth"] is not None and int(p["max_depth"]) < 1:
            raise ValueError("max_depth must be >= 1 or None")
        if int(p["min_leaf"]) < 1:
            raise ValueError("min_leaf must be >= 1")
    elif kind == "logistic_regression":
        if p["l2"] < 0 or p["learning_rate"] <= 0 or int(p["max_iters"]) < 0:
            raise ValueError("logistic_regression: need l2 >= 0, learning_rate > 0, max_iters >= 0")
    elif kind == "knn":
        if int(p["k"]) < 1:
            raise ValueError("knn: k must be >= 1")
    elif kind == "gradient_boosted_trees":
        if int(p["n_rounds"]) < 1 or not 0 < p["learning_rate"] <= 1 or int(p["max_depth"]) < 1:
            raise ValueError("gbt: need n_rounds >= 1, 0 < learning_rate <= 1, max_depth >= 1")
    elif kind == "dummy_constant":
        if p["constant"] not in (0, 1):
            raise ValueError("dummy_constant: constant must be 0 or 1")
    return p


@dataclass(frozen=True)
class LearnerSpec:
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        kind = ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        _check_params(kind, dict(self.params))

    @property
    def resolved(self) -> dict:
        return _check_params(self.kind, dict(self.params))


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, float)))


def _logit(p: float) -> float:
    return float(np.log(p) - np.log1p(-p))


# ---------------------------------------------------------------- trees


@dataclass
class _Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = np.arange(len(X))
        while active.size:
            f = self.feature[node[active]]
            internal = f >= 0
            active = active[internal]
            if not active.size:
                break
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
        return node

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d) -> "_Tree":
        return cls(
            np.asarray(d["feature"], np.int64), np.asarray(d["threshold"], float),
            np.asarray(d["left"], np.int64), np.asarray(d["right"], np.int64),
            np.asarray(d["value"], float),
        )


def grow_tree(X, t, w, max_depth=None, min_leaf=1) -> _Tree:
    """Grow a binary tree that splits to maximise sum(S_c**2 / W_c) over children.

    ``S_c`` is the weighted target sum and ``W_c`` the weight of child ``c``.
    For 0/1 targets this is the weighted Gini criterion, for real targets
    squared error. Among equal scores the lowest feature index wins, then
    the lowest threshold. Impure nodes split even at zero gain so that
    unbounded trees separate every pair of distinct rows.
    """
    X = np.asarray(X, float)
    t = np.asarray(t, float)
    w = np.asarray(w, float)
    n, d = X.shape
    wt = w * t
    XT = np.ascontiguousarray(X.T)
    rows_d = np.arange(d)[:, None]
    order0 = np.argsort(XT, axis=1, kind="stable")

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(val):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(val)
        return len(feature) - 1

    W0 = w.sum()
    root = new_node(wt.sum() / W0 if W0 > 0 else 0.0)
    stack = [(root, order0, 0)]
    mark = np.zeros(n, dtype=bool)
    while stack:
        node, order, depth = stack.pop()
        m = order.shape[1]
        if m < 2 * min_leaf or (max_depth is not None and depth >= max_depth):
            continue
        idx = order[0]
        tn = t[idx]
        if tn.min() == tn.max():
            continue
        xs = XT[rows_d, order]
        cw = np.cumsum(w[order], axis=1)
        cs = np.cumsum(wt[order], axis=1)
        W, S = cw[0, -1], cs[0, -1]
        Wl, Sl = cw[:, :-1], cs[:, :-1]
        Wr, Sr = W - Wl, S - Sl
        with np.errstate(divide="ignore", invalid="ignore"):
            score = np.where(Wl > 0, Sl * Sl / Wl, 0.0) + np.where(Wr > 0, Sr * Sr / Wr, 0.0)
        valid = xs[:, 1:] > xs[:, :-1]
        if min_leaf > 1:
            pos = np.arange(1, m)
            valid &= ((pos >= min_leaf) & (m - pos >= min_leaf))[None, :]
        if not valid.any():
            continue
        score = np.where(valid, score, -np.inf)
        best = score.max()
        # first near-maximum: lowest feature, then lowest threshold; the relative
        # tolerance keeps rounding noise from breaking exact ties
        flat = int(np.flatnonzero(score.ravel() >= best - 1e-12 * abs(best))[0])
        j, i = divmod(flat, m - 1)
        lo, hi = xs[j, i], xs[j, i + 1]
        thr = 0.5 * (lo + hi)
        if not lo <= thr < hi:
            thr = lo
        left_rows = order[j, : i + 1]
        mark[left_rows] = True
        in_left = mark[order]
        mark[left_rows] = False
        lorder = order[in_left].reshape(d, i + 1)
        rorder = order[~in_left].reshape(d, m - i - 1)
        wl, wr = Wl[j, i], Wr[j, i]
        lnode = new_node(Sl[j, i] / wl if wl > 0 else value[node])
        rnode = new_node(Sr[j, i] / wr if wr > 0 else value[node])
        feature[node] = j
        threshold[node] = thr
        left[node] = lnode
        right[node] = rnode
        stack.append((rnode, rorder, depth + 1))
        stack.append((lnode, lorder, depth + 1))

    return _Tree(
        np.asarray(feature, np.int64), np.asarray(threshold, float),
        np.asarray(left, np.int64), np.asarray(right, np.int64), np.asarray(value, float),
    )


# --------------------------------------------------------------- models


@dataclass
class TrainedModel:
    kind: str
    params: dict
    n_rows: int
    n_cols: int
    seed: int
    fit_seconds: float = 0.0
    degenerate: bool = False

    @property
    def capabilities(self) -> dict:
        return dict(CAPABILITIES[self.kind])

    @property
    def supports_proba(self) -> bool:
        return CAPABILITIES[self.kind]["supports_proba"]

    @property
    def supports_weights(self) -> bool:
        return CAPABILITIES[self.kind]["supports_weights"]

    def _check_width(self, X) -> np.ndarray:
        X = np.asarray(X, float)
        if X.ndim != 2 or X.shape[1] != self.n_cols:
            raise ValueError(f"{self.kind}: expected {self.n_cols} columns, got {X.shape}")
        return X

    def _proba1(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict_proba(self, X) -> np.ndarray:
        if not self.supports_proba:
            raise CapabilityError(f"{self.kind} does not produce probabilities")
        p1 = np.clip(self._proba1(self._check_width(X)), 0.0, 1.0)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X) -> np.ndarray:
        p1 = np.clip(self._proba1(self._check_width(X)), 0.0, 1.0)
        # ties go to class 0, matching argmax over [p0, p1]
        return (p1 > 1.0 - p1).astype(np.int64)

    def _state(self) -> dict:
        return {}

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "kind": self.kind,
            "hyperparameters": self.params,
            "parameters": self._state(),
            "capabilities": self.capabilities,
            "metadata": {
                "n_rows": self.n_rows, "n_cols": self.n_cols, "seed": self.seed,
                "fit_seconds": self.fit_seconds, "degenerate": self.degenerate,
            },
        }


@dataclass
class ConstantModel(TrainedModel):
    p1: float = 1.0

    def _proba1(self, X):
        return np.full(len(X), self.p1)

    def _state(self):
        return {"p1": self.p1}


@dataclass
class TreeModel(TrainedModel):
    tree: _Tree = None

    def _proba1(self, X):
        return self.tree.value[self.tree.apply(X)]

    def _state(self):
        return {"tree": self.tree.to_dict()}


@dataclass
class LogisticModel(TrainedModel):
    coef: np.ndarray = None
    intercept: float = 0.0
    converged: bool = True

    def decision_function(self, X) -> np.ndarray:
        return self._check_width(X) @ self.coef + self.intercept

    def _proba1(self, X):
        return sigmoid(X @ self.coef + self.intercept)

    def _state(self):
        return {"coef": self.coef.tolist(), "intercept": self.intercept, "converged": self.converged}


@dataclass
class KnnModel(TrainedModel):
    X_train: np.ndarray = None
    y_train: np.ndarray = None
    w_train: np.ndarray = None

    def neighbors(self, X) -> np.ndarray:
        """Indices of the k nearest training rows; distance ties go to the lower row index."""
        X = self._check_width(X)
        k = min(int(self.params["k"]), len(self.X_train))
        out = np.empty((len(X), k), dtype=np.int64)
        chunk = max(1, 2_000_000 // max(1, len(self.X_train) * max(1, self.n_cols)))
        for s in range(0, len(X), chunk):
            diff = X[s : s + chunk, None, :] - self.X_train[None, :, :]
            dist = np.einsum("ijk,ijk->ij", diff, diff)
            out[s : s + chunk] = np.argsort(dist, axis=1, kind="stable")[:, :k]
        return out

    def _proba1(self, X):
        nb = self.neighbors(X)
        w = self.w_train[nb]
        votes = (w * self.y_train[nb]).sum(axis=1)
        tot = w.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(tot > 0, votes / tot, 0.5)

    def _state(self):
        return {"X": self.X_train.tolist(), "y": self.y_train.tolist(), "w": self.w_train.tolist()}


@dataclass
class GbtModel(TrainedModel):
    init: float = 0.0
    trees: list = field(default_factory=list)

    def decision_function(self, X) -> np.ndarray:
        X = self._check_width(X)
        return self._raw(X)

    def _raw(self, X):
        F = np.full(len(X), self.init)
        for tree in self.trees:
            F = F + tree.value[tree.apply(X)]
        return F

    def _proba1(self, X):
        return sigmoid(self._raw(X))

    def _state(self):
        return {"init": self.init, "trees": [t.to_dict() for t in self.trees]}


# ------------------------------------------------------------ training


def logistic_objective(X, y, w, l2):
    """Weighted mean negative log-likelihood plus ``l2/2 * ||coef||^2``.

    Parameters are packed as ``[coef..., intercept]``. Returns a function
    mapping the packed vector to ``(value, gradient)``.
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    wn = np.asarray(w, float) / np.sum(w)

    def fg(theta):
        coef, b = theta[:-1], theta[-1]
        z = X @ coef + b
        # log(1 + exp(z)) - y z, computed stably
        nll = np.logaddexp(0.0, z) - y * z
        f = float(wn @ nll + 0.5 * l2 * coef @ coef)
        r = wn * (sigmoid(z) - y)
        grad = np.empty_like(theta)
        grad[:-1] = X.T @ r + l2 * coef
        grad[-1] = r.sum()
        return f, grad

    return fg


def _weighted_rate(y, w) -> float:
    return float(np.sum(w * y) / np.sum(w))


def _fit_logistic(X, y, w, p, seed) -> LogisticModel:
    rate = min(max(_weighted_rate(y, w), 1e-12), 1 - 1e-12)
    theta0 = np.zeros(X.shape[1] + 1)
    theta0[-1] = _logit(rate)
    res = descend(logistic_objective(X, y, w, p["l2"]), theta0,
                  max_iters=int(p["max_iters"]), step0=p["learning_rate"])
    return LogisticModel("logistic_regression", p, len(y), X.shape[1], seed,
                         coef=res.x[:-1].copy(), intercept=float(res.x[-1]),
                         converged=res.converged)


def _leaf_line_search(leaf, F, y, w, n_leaves, bound=30.0, iters=64) -> np.ndarray:
    """Per-leaf additive step minimising the weighted log-loss.

    Uses the closed form when the leaf's current margin is constant, and
    bisection on the monotone first-order condition otherwise.
    """
    gamma = np.zeros(n_leaves)
    Wl = np.bincount(leaf, weights=w, minlength=n_leaves)
    Yl = np.bincount(leaf, weights=w * y, minlength=n_leaves)
    Fmin = np.full(n_leaves, np.inf)
    Fmax = np.full(n_leaves, -np.inf)
    np.minimum.at(Fmin, leaf, F)
    np.maximum.at(Fmax, leaf, F)
    present = Wl > 0
    const = present & (Fmin == Fmax)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(present, Yl / np.where(present, Wl, 1.0), 0.5)
    pc = np.clip(p, 1e-13, 1 - 1e-13)
    closed = np.log(pc) - np.log1p(-pc) - np.where(const, Fmin, 0.0)
    gamma[const] = np.clip(closed[const], -bound, bound)
    todo = present & ~const
    if todo.any():
        lo = np.full(n_leaves, -bound)
        hi = np.full(n_leaves, bound)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            gsum = np.bincount(leaf, weights=w * (y - sigmoid(F + mid[leaf])), minlength=n_leaves)
            up = gsum > 0
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
        gamma[todo] = 0.5 * (lo + hi)[todo]
    return gamma


def _fit_gbt(X, y, w, p, seed) -> GbtModel:
    rate = min(max(_weighted_rate(y, w), 1e-12), 1 - 1e-12)
    init = _logit(rate)
    F = np.full(len(y), init)
    trees = []
    for _ in range(int(p["n_rounds"])):
        resid = y - sigmoid(F)
        tree = grow_tree(X, resid, w, max_depth=int(p["max_depth"]))
        leaf = tree.apply(X)
        gamma = _leaf_line_search(leaf, F, y, w, len(tree.value))
        step = p["learning_rate"] * gamma
        tree.value = np.where(tree.feature < 0, step, 0.0)
        F = F + tree.value[leaf]
        trees.append(tree)
    return GbtModel("gradient_boosted_trees", p, len(y), X.shape[1], seed, init=init, trees=trees)


def fit(spec: LearnerSpec, X, y, weights=None) -> TrainedModel:
    """Train the learner described by ``spec``.

    A single-class ``y`` yields a constant predictor and a warning rather
    than an error.
    """
    X = np.asarray(X, float)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or len(y) != X.shape[0]:
        raise ValueError(f"X has shape {X.shape} but y has {len(y)} entries")
    if weights is None:
        w = np.ones(len(y))
    else:
        w = np.asarray(weights, float)
        if w.shape != y.shape:
            raise ValueError("weights must have one entry per row")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        if w.sum() <= 0:
            raise ValueError("total sample weight is zero")
    p = spec.resolved
    kind = spec.kind
    t0 = time.perf_counter()
    if kind == "dummy_constant":
        model: TrainedModel = ConstantModel(kind, p, len(y), X.shape[1], spec.seed,
                                            p1=float(p["constant"]))
    elif len(y) == 0 or y.min() == y.max():
        warnings.warn(f"{kind}: single-class training labels, fitting a constant predictor",
                      stacklevel=2)
        model = ConstantModel(kind, p, len(y), X.shape[1], spec.seed,
                              p1=float(y[0]) if len(y) else 0.5, degenerate=True)
    elif kind == "decision_tree":
        tree = grow_tree(X, y, w, p["max_depth"], int(p["min_leaf"]))
        model = TreeModel(kind, p, len(y), X.shape[1], spec.seed, tree=tree)
    elif kind == "logistic_regression":
        model = _fit_logistic(X, y, w, p, spec.seed)
    elif kind == "knn":
        model = KnnModel(kind, p, len(y), X.shape[1], spec.seed,
                         X_train=X.copy(), y_train=y.copy(), w_train=w.copy())
    else:
        model = _fit_gbt(X, y, w, p, spec.seed)
    model.fit_seconds = time.perf_counter() - t0
    return model


def predict(model: TrainedModel, X) -> np.ndarray:
    return model.predict(X)


def predict_proba(model: TrainedModel, X) -> np.ndarray:
    return model.predict_proba(X)


def model_from_dict(d: Mapping) -> TrainedModel:
    """Rebuild a model serialised with :meth:`TrainedModel.to_dict`."""
    if d.get("format") != MODEL_FORMAT:
        raise ValueError(f"unsupported model format {d.get('format')!r}")
    kind = d["kind"]
    meta = d["metadata"]
    base = dict(kind=kind, params=dict(d["hyperparameters"]), n_rows=meta["n_rows"],
                n_cols=meta["n_cols"], seed=meta["seed"], fit_seconds=meta["fit_seconds"],
                degenerate=meta.get("degenerate", False))
    st = d["parameters"]
    if "p1" in st:
        return ConstantModel(**base, p1=st["p1"])
    if kind == "decision_tree":
        return TreeModel(**base, tree=_Tree.from_dict(st["tree"]))
    if kind == "logistic_regression":
        return LogisticModel(**base, coef=np.asarray(st["coef"], float),
                             intercept=st["intercept"], converged=st["converged"])
    if kind == "knn":
        return KnnModel(**base, X_train=np.asarray(st["X"], float),
                        y_train=np.asarray(st["y"], np.int64), w_train=np.asarray(st["w"], float))
    if kind == "gradient_boosted_trees":
        return GbtModel(**base, init=st["init"], trees=[_Tree.from_dict(t) for t in st["trees"]])
    raise ValueError(f"unknown model kind {kind!r}")
