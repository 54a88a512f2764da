"""Pre-, in-, and post-estimator bias mitigators.

* :func:`reweigh` - per-(group, label) instance weights that decouple label
  and group.
* :func:`repair_fit` / :func:`repair_apply` - rank-preserving quantile repair
  of numeric features towards the cross-group median distribution.
* :func:`lfr_fit` / :func:`lfr_transform` - learned fair prototypes.
* :func:`prejudice_fit` - logistic regression with a mutual-information
  penalty between predictions and group.
* :func:`ceo_fit` / :func:`ceo_apply` - calibrated equalized-odds score mixing.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .learners import LogisticModel, logistic_objective, sigmoid
from .optim import descend

# ------------------------------------------------------------ reweighing


@dataclass(frozen=True, eq=False)
class ReweighingWeights:
    cell_weights: dict  # (group, label) -> weight
    row_weights: np.ndarray


def reweigh(y, g, weights=None) -> ReweighingWeights:
    """Weights ``P(g) P(y) / P(g, y)`` so that labels become independent of group.

    Existing ``weights`` are respected in the probability estimates and
    multiplied into the returned per-row weights.
    """
    y = np.asarray(y)
    g = np.asarray(g)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, float)
    W = w.sum()
    cells = {}
    row = np.empty(len(y))
    for grp in (0, 1):
        for lab in (0, 1):
            sel = (g == grp) & (y == lab)
            w_gl = w[sel].sum()
            if w_gl <= 0:
                warnings.warn(f"reweigh: empty (group={grp}, label={lab}) cell, weight set to 1",
                              stacklevel=2)
                cells[(grp, lab)] = 1.0
            else:
                cells[(grp, lab)] = float(w[g == grp].sum() * w[y == lab].sum() / (W * w_gl))
            row[sel] = cells[(grp, lab)]
    return ReweighingWeights(cells, w * row)


# -------------------------------------------------------- quantile repair


@dataclass(frozen=True, eq=False)
class RepairModel:
    level: float
    # per column: (sorted values of group 0, sorted values of group 1)
    sorted_values: tuple

    @property
    def n_cols(self) -> int:
        return len(self.sorted_values)


def _quantile_position(sorted_vals: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Map values to [0, 1] through a group's empirical quantile function.

    Values present in the sample map to the mean rank of their ties; values
    in between interpolate linearly; values outside clamp to the ends.
    """
    m = len(sorted_vals)
    if m == 1:
        return np.full(len(x), 0.5)
    lo = np.searchsorted(sorted_vals, x, side="left")
    hi = np.searchsorted(sorted_vals, x, side="right")
    pos = np.empty(len(x))
    hit = hi > lo
    pos[hit] = 0.5 * (lo[hit] + hi[hit] - 1)
    miss = ~hit
    if miss.any():
        k = lo[miss]
        below = k == 0
        above = k == m
        inner = ~(below | above)
        pm = np.empty(miss.sum())
        pm[below] = 0.0
        pm[above] = m - 1
        ki = k[inner]
        a, b = sorted_vals[ki - 1], sorted_vals[ki]
        pm[inner] = (ki - 1) + (x[miss][inner] - a) / (b - a)
        pos[miss] = pm
    return pos / (m - 1)


def _quantile_value(sorted_vals: np.ndarray, u: np.ndarray) -> np.ndarray:
    m = len(sorted_vals)
    return np.interp(u * (m - 1), np.arange(m), sorted_vals)


def repair_fit(X_num, g, level: float) -> RepairModel:
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"repair level must lie in [0, 1], got {level}")
    X_num = np.asarray(X_num, float)
    g = np.asarray(g)
    for grp in (0, 1):
        if not np.any(g == grp):
            raise ValueError(f"repair_fit: group {grp} has no rows")
    cols = tuple(
        (np.sort(X_num[g == 0, j]), np.sort(X_num[g == 1, j])) for j in range(X_num.shape[1])
    )
    return RepairModel(float(level), cols)


def repair_apply(model: RepairModel, X_num, g) -> np.ndarray:
    """Move each value towards the cross-group median at its in-group quantile."""
    X_num = np.asarray(X_num, float)
    if model.level == 0.0:
        return X_num.copy()
    g = np.asarray(g)
    out = X_num.copy()
    for j, groups in enumerate(model.sorted_values):
        for grp in (0, 1):
            rows = np.flatnonzero(g == grp)
            if not rows.size:
                continue
            u = _quantile_position(groups[grp], X_num[rows, j])
            # median over two groups is their mean
            target = np.median(np.vstack([_quantile_value(s, u) for s in groups]), axis=0)
            out[rows, j] = (1.0 - model.level) * X_num[rows, j] + model.level * target
    return out


# ------------------------------------------------------------------ LFR


@dataclass(frozen=True, eq=False)
class LfrModel:
    prototypes: np.ndarray  # k x d
    label_logits: np.ndarray  # k; prototype label weight is sigmoid of this
    k: int
    Ax: float
    Ay: float
    Az: float
    seed: int
    objective: float
    converged: bool
    trace: tuple = field(default=(), repr=False)

    @property
    def label_weights(self) -> np.ndarray:
        return sigmoid(self.label_logits)


def _memberships(X, V):
    D = ((X[:, None, :] - V[None, :, :]) ** 2).sum(axis=2)
    D = D - D.min(axis=1, keepdims=True)
    E = np.exp(-D)
    return E / E.sum(axis=1, keepdims=True)


_SMOOTH_ABS = 1e-8


def lfr_objective(X, y, g, k, Ax, Ay, Az):
    """``Ax * reconstruction + Ay * log-loss + Az * parity`` and its gradient.

    Parameters pack the ``k x d`` prototypes followed by ``k`` label logits.
    Parity is the summed (smoothed) absolute gap between the groups' mean
    prototype memberships.
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    g = np.asarray(g)
    n, d = X.shape
    priv = g == 1
    n1 = max(int(priv.sum()), 1)
    n0 = max(int((~priv).sum()), 1)

    def fg(theta):
        V = theta[: k * d].reshape(k, d)
        u = theta[k * d :]
        wk = sigmoid(u)
        M = _memberships(X, V)
        Xh = M @ V
        R = Xh - X
        Lx = float((R * R).sum() / n)
        yh = np.clip(M @ wk, 1e-9, 1 - 1e-9)
        Ly = float(-np.mean(y * np.log(yh) + (1 - y) * np.log(1 - yh)))
        gap = M[priv].sum(axis=0) / n1 - M[~priv].sum(axis=0) / n0
        sa = np.sqrt(gap * gap + _SMOOTH_ABS)
        Lz = float(sa.sum())
        f = Ax * Lx + Ay * Ly + Az * Lz

        # dL/dM
        G = Ax * (2.0 / n) * (R @ V.T)
        dyh = (-(y / yh) + (1 - y) / (1 - yh)) / n
        G += Ay * dyh[:, None] * wk[None, :]
        s = gap / sa
        G += Az * np.where(priv[:, None], s[None, :] / n1, -s[None, :] / n0)
        # through the softmax over -D
        E = -M * (G - (M * G).sum(axis=1, keepdims=True))
        gV = -2.0 * (E.T @ X - E.sum(axis=0)[:, None] * V)
        gV += Ax * (2.0 / n) * (M.T @ R)
        gu = Ay * (M.T @ dyh) * wk * (1 - wk)
        return f, np.concatenate([gV.ravel(), gu])

    return fg


def lfr_fit(X, y, g, k: int = 5, Ax: float = 0.01, Ay: float = 1.0, Az: float = 50.0,
            max_iters: int = 200, seed: int = 0, restarts: int = 3) -> LfrModel:
    """Fit prototypes by line-search gradient descent from several random starts.

    Each restart seeds prototypes at distinct random rows; the restart with
    the lowest final objective wins. ``converged`` is False when the winning
    run hit ``max_iters`` first.
    """
    if k < 2:
        raise ValueError("LFR needs k >= 2")
    if min(Ax, Ay, Az) < 0:
        raise ValueError("LFR coefficients must be non-negative")
    X = np.asarray(X, float)
    n, d = X.shape
    rng = np.random.default_rng(seed)
    fg = lfr_objective(X, y, g, k, Ax, Ay, Az)
    best = None
    for _ in range(max(1, restarts)):
        rows = rng.choice(n, size=k, replace=n < k)
        V0 = X[rows] + 0.01 * rng.normal(size=(k, d))
        u0 = rng.normal(scale=0.1, size=k)
        res = descend(fg, np.concatenate([V0.ravel(), u0]), max_iters=max_iters, tol=1e-6)
        if best is None or res.fun < best.fun:
            best = res
    return LfrModel(
        prototypes=best.x[: k * d].reshape(k, d).copy(), label_logits=best.x[k * d :].copy(),
        k=k, Ax=Ax, Ay=Ay, Az=Az, seed=seed, objective=best.fun,
        converged=best.converged, trace=tuple(best.trace),
    )


def lfr_transform(model: LfrModel, X) -> np.ndarray:
    """Prototype membership probabilities, one row per input row."""
    return _memberships(np.asarray(X, float), model.prototypes)


# ----------------------------------------------------- prejudice remover

_PI_SMOOTH = 0.5


def prejudice_index(p, g, w=None) -> float:
    """Mutual information between soft predictions and group (2x2 table, +0.5 per cell)."""
    return _prejudice(np.asarray(p, float), np.asarray(g), w)[0]


def _prejudice(p, g, w=None):
    n = len(p)
    wt = np.ones(n) if w is None else np.asarray(w, float) * n / np.sum(w)
    priv = g == 1
    n1s = np.array([(wt * p)[~priv].sum(), (wt * p)[priv].sum()]) + _PI_SMOOTH
    n0s = np.array([(wt * (1 - p))[~priv].sum(), (wt * (1 - p))[priv].sum()]) + _PI_SMOOTH
    table = np.vstack([n0s, n1s])  # rows: prediction 0/1, cols: group 0/1
    N = table.sum()
    row = table.sum(axis=1, keepdims=True)
    col = table.sum(axis=0, keepdims=True)
    mi = float((table / N * np.log(table * N / (row * col))).sum())
    # d MI / d n_ys = (log n_ys - log n_y.) / N ; group margins and N do not depend on p
    dn = (np.log(table) - np.log(row)) / N
    gi = priv.astype(int)
    dmi_dp = wt * (dn[1, gi] - dn[0, gi])
    return mi, dmi_dp


def prejudice_objective(X, y, g, eta, l2, weights=None):
    X = np.asarray(X, float)
    g = np.asarray(g)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, float)
    base = logistic_objective(X, y, w, l2)

    def fg(theta):
        f, grad = base(theta)
        if eta == 0:
            return f, grad
        p = sigmoid(X @ theta[:-1] + theta[-1])
        mi, dmi_dp = _prejudice(p, g, w)
        dz = dmi_dp * p * (1 - p)
        grad = grad.copy()
        grad[:-1] += eta * (X.T @ dz)
        grad[-1] += eta * dz.sum()
        return f + eta * mi, grad

    return fg


@dataclass
class PrejudiceRemoverModel(LogisticModel):
    eta: float = 0.0
    trace: tuple = ()


def prejudice_fit(X, y, g, eta: float = 1.0, l2: float = 1e-4, max_iters: int = 500,
                  seed: int = 0, weights=None) -> PrejudiceRemoverModel:
    """Logistic regression penalised by ``eta`` times the prejudice index.

    Starts from the intercept-only solution; ``seed`` is recorded for lineage
    only since the fit itself is deterministic.
    """
    if eta < 0:
        raise ValueError("eta must be non-negative")
    X = np.asarray(X, float)
    y = np.asarray(y).astype(np.int64)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, float)
    rate = float(np.clip(np.sum(w * y) / np.sum(w), 1e-12, 1 - 1e-12))
    theta0 = np.zeros(X.shape[1] + 1)
    theta0[-1] = np.log(rate) - np.log1p(-rate)
    res = descend(prejudice_objective(X, y, g, eta, l2, w), theta0, max_iters=max_iters)
    if not np.all(np.isfinite(res.x)):
        raise FloatingPointError("prejudice_fit diverged (non-finite coefficients)")
    params = {"eta": eta, "l2": l2, "max_iters": max_iters}
    return PrejudiceRemoverModel(
        "logistic_regression", params, len(y), X.shape[1], seed,
        coef=res.x[:-1].copy(), intercept=float(res.x[-1]), converged=res.converged,
        eta=eta, trace=tuple(res.trace),
    )


# ---------------------------------------------- calibrated equalized odds

COSTS = ("weighted", "fpr", "fnr")
ALPHA_GRID = np.round(np.linspace(0.0, 1.0, 101), 2)
# half a grid step in cost units; mixing slopes never exceed 1
EQUAL_COST_TOL = 0.005


@dataclass(frozen=True)
class CeoModel:
    alpha_priv: float
    alpha_unpriv: float
    base_rate_priv: float
    base_rate_unpriv: float
    cost: str
    cost_priv: float = 0.0
    cost_unpriv: float = 0.0


def group_cost(scores, y, cost: str) -> float:
    """Calibrated cost of one group's scores under the chosen constraint."""
    scores = np.asarray(scores, float)
    y = np.asarray(y)
    mu = float(y.mean()) if len(y) else 0.0
    neg, pos = y == 0, y == 1
    gfpr = float(scores[neg].mean()) if neg.any() else 0.0
    gfnr = float((1 - scores[pos]).mean()) if pos.any() else 0.0
    if cost == "fpr":
        return gfpr * (1 - mu)
    if cost == "fnr":
        return gfnr * mu
    if cost == "weighted":
        return 0.5 * gfpr * (1 - mu) + 0.5 * gfnr * mu
    raise ValueError(f"unknown cost {cost!r}; expected one of {COSTS}")


def _mixed_cost(c, c_trivial, alpha):
    return (1 - alpha) * c + alpha * c_trivial


def ceo_fit(scores, y, g, cost: str = "weighted") -> CeoModel:
    """Choose the mixing rate that equalises calibrated costs across groups.

    Only the group with the lower cost is mixed towards its base rate. The
    rate is the grid point in {0, 0.01, ..., 1} with the smallest remaining
    cost gap (ties to the smaller rate).
    """
    if cost not in COSTS:
        raise ValueError(f"unknown cost {cost!r}; expected one of {COSTS}")
    scores = np.asarray(scores, float)
    y = np.asarray(y)
    g = np.asarray(g)
    if np.any((scores < 0) | (scores > 1)):
        raise ValueError("scores must lie in [0, 1]")
    mus, cs, trivial = {}, {}, {}
    for grp in (0, 1):
        sel = g == grp
        mus[grp] = float(y[sel].mean()) if sel.any() else 0.0
        cs[grp] = group_cost(scores[sel], y[sel], cost) if sel.any() else 0.0
        trivial[grp] = group_cost(np.full(sel.sum(), mus[grp]), y[sel], cost) if sel.any() else 0.0
    alphas = {0: 0.0, 1: 0.0}
    if (g == 0).any() and (g == 1).any() and abs(cs[1] - cs[0]) > EQUAL_COST_TOL:
        low = 0 if cs[0] < cs[1] else 1
        high = 1 - low
        gaps = np.abs(_mixed_cost(cs[low], trivial[low], ALPHA_GRID) - cs[high])
        # float noise must not break ties away from the smallest rate
        alphas[low] = float(ALPHA_GRID[np.flatnonzero(gaps <= gaps.min() + 1e-12)[0]])
    return CeoModel(alphas[1], alphas[0], mus[1], mus[0], cost, cs[1], cs[0])


def ceo_apply(model: CeoModel, scores, g) -> np.ndarray:
    """Mix scores towards the group base rate.

    The expected-value form of the randomized mixture is used, so results
    are deterministic and group costs move exactly linearly in alpha.
    """
    scores = np.asarray(scores, float)
    g = np.asarray(g)
    alpha = np.where(g == 1, model.alpha_priv, model.alpha_unpriv)
    mu = np.where(g == 1, model.base_rate_priv, model.base_rate_unpriv)
    return (1 - alpha) * scores + alpha * mu
