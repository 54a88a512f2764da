"""Budgeted search over pipeline templates, scored by the blended objective.

Two strategies share one evaluation path: seeded random sampling, and an
adaptive mode that fits a Gaussian-process surrogate to the scores seen so
far and proposes the candidate with the highest expected improvement.
"""
from __future__ import annotations

import math
import multiprocessing as mp
import string
import time
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm

from ._rng import derive_seed
from .composition import canonical, fit_pipeline, predict_pipeline
from .datasets import Dataset, stratified_kfold
from .harness import TrialRecord, pipeline_seed
from .metrics import ScorerRefs, blended_from_values, evaluate, symmetric_di

# ------------------------------------------------------------------ space


@dataclass(frozen=True)
class Choice:
    values: tuple

    def sample(self, rng):
        return self.values[int(rng.integers(len(self.values)))]

    def encode(self, v) -> list[float]:
        return [1.0 if v == x else 0.0 for x in self.values]


@dataclass(frozen=True)
class IntRange:
    low: int
    high: int
    log: bool = False

    def sample(self, rng):
        if self.log:
            return int(round(math.exp(rng.uniform(math.log(self.low), math.log(self.high)))))
        return int(rng.integers(self.low, self.high + 1))

    def encode(self, v) -> list[float]:
        if self.high == self.low:
            return [0.0]
        if self.log:
            return [(math.log(v) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))]
        return [(v - self.low) / (self.high - self.low)]


@dataclass(frozen=True)
class FloatRange:
    low: float
    high: float
    log: bool = False

    def sample(self, rng):
        if self.log:
            return float(math.exp(rng.uniform(math.log(self.low), math.log(self.high))))
        return float(rng.uniform(self.low, self.high))

    def encode(self, v) -> list[float]:
        if self.high == self.low:
            return [0.0]
        if self.log:
            return [(math.log(v) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))]
        return [(v - self.low) / (self.high - self.low)]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(round(v, 4))
    return str(v)


@dataclass(frozen=True)
class SearchSpace:
    """Pipeline templates plus domains for their ``{placeholder}`` fields."""

    templates: tuple
    domains: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "templates", tuple(self.templates))
        if not self.templates:
            raise ValueError("search space has no templates")
        for t in self.templates:
            missing = self.fields(t) - set(self.domains)
            if missing:
                raise ValueError(f"template {t!r} has no domain for {sorted(missing)}")

    @staticmethod
    def fields(template: str) -> set:
        return {f for _, f, _, _ in string.Formatter().parse(template) if f}

    def sample(self, rng) -> tuple[int, dict]:
        i = int(rng.integers(len(self.templates)))
        vals = {f: self.domains[f].sample(rng) for f in sorted(self.fields(self.templates[i]))}
        return i, vals

    def render(self, config: tuple[int, dict]) -> str:
        i, vals = config
        return canonical(self.templates[i].format(**{k: _fmt(v) for k, v in vals.items()}))

    def encode(self, config: tuple[int, dict]) -> np.ndarray:
        i, vals = config
        out = [1.0 if j == i else 0.0 for j in range(len(self.templates))]
        for f in sorted(self.domains):
            dom = self.domains[f]
            if f in vals:
                out += dom.encode(vals[f])
            else:
                out += [0.0] * len(dom.encode(dom.sample(np.random.default_rng(0))))
        return np.asarray(out)


@dataclass(frozen=True)
class SearchBudget:
    max_trials: int = 20
    trial_timeout: float = 60.0
    total_timeout: float = 1200.0
    master_seed: int = 0

    def __post_init__(self):
        if self.max_trials <= 0 or self.trial_timeout <= 0 or self.total_timeout <= 0:
            raise ValueError("search budget values must be positive")


@dataclass
class TrialOutcome:
    pipeline: str
    status: str  # "ok", "timeout", or "error: ..."
    score: float | None
    seconds: float
    records: list = field(default_factory=list)


@dataclass
class SearchResult:
    pipeline: str
    score: float
    records: list
    trials: list

    def report(self) -> dict:
        f1 = [r.metrics["f1"] for r in self.records]
        di = [r.metrics["di"] for r in self.records if r.metrics["di"] is not None]
        return {
            "pipeline": self.pipeline,
            "f1_mean": float(np.mean(f1)), "f1_std": float(np.std(f1, ddof=1)) if len(f1) > 1 else 0.0,
            "di_mean": float(np.mean(di)) if di else None,
            "di_std": float(np.std(di, ddof=1)) if len(di) > 1 else 0.0,
        }


class NoCompletedTrials(RuntimeError):
    pass


# ------------------------------------------------------------- evaluation


def evaluate_pipeline(text: str, ds: Dataset, refs: ScorerRefs, master_seed: int,
                      k: int = 3) -> tuple[float, list[TrialRecord]]:
    """Mean blended score over one seeded stratified ``k``-fold split."""
    plan = stratified_kfold(ds, k, derive_seed(master_seed, ds.name, "search-folds"))
    scores, records = [], []
    for fold, (tr, te) in enumerate(plan.splits()):
        seed = pipeline_seed(master_seed, ds.name, text, 0, fold)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = fit_pipeline(text, ds, tr, seed)
        pred = predict_pipeline(model, ds.X[te], ds.g[te])
        m = evaluate(ds.y[te], pred, ds.g[te], ds.group_mask[te])
        scores.append(blended_from_values(symmetric_di(m["di"]), m["f1"], refs))
        records.append(TrialRecord(ds.name, text, 0, fold, seed, master_seed, m,
                                   model.fit_seconds, None, float(np.mean(ds.y[te]))))
    return float(np.mean(scores)), records


def _child(conn, text, ds, refs, master_seed):
    try:
        conn.send(("ok", evaluate_pipeline(text, ds, refs, master_seed)))
    except Exception as exc:
        conn.send(("error", f"{type(exc).__name__}: {exc}"))
    finally:
        conn.close()


def _run_trial(text, ds, refs, master_seed, timeout) -> TrialOutcome:
    t0 = time.perf_counter()
    if math.isinf(timeout) or "fork" not in mp.get_all_start_methods():
        try:
            score, recs = evaluate_pipeline(text, ds, refs, master_seed)
            return TrialOutcome(text, "ok", score, time.perf_counter() - t0, recs)
        except Exception as exc:
            return TrialOutcome(text, f"error: {type(exc).__name__}: {exc}", None,
                                time.perf_counter() - t0)
    ctx = mp.get_context("fork")
    parent, child = ctx.Pipe(duplex=False)
    proc = ctx.Process(target=_child, args=(child, text, ds, refs, master_seed), daemon=True)
    proc.start()
    child.close()
    ready = parent.poll(timeout)
    if not ready:
        proc.kill()
        proc.join()
        return TrialOutcome(text, "timeout", None, time.perf_counter() - t0)
    try:
        status, payload = parent.recv()
    except EOFError:
        status, payload = "error", "worker exited without a result"
    proc.join()
    if status == "ok":
        score, recs = payload
        return TrialOutcome(text, "ok", score, time.perf_counter() - t0, recs)
    return TrialOutcome(text, f"error: {payload}", None, time.perf_counter() - t0)


# -------------------------------------------------------------- surrogate


def _gp_posterior(Xo, yo, Xc, length=0.5, noise=1e-3):
    """Mean and std of a zero-mean RBF Gaussian process on standardized scores."""
    mu, sd = yo.mean(), yo.std() or 1.0
    z = (yo - mu) / sd

    def k(a, b):
        d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
        return np.exp(-0.5 * d / length**2)

    K = k(Xo, Xo) + noise * np.eye(len(Xo))
    L = np.linalg.cholesky(K)
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, z))
    Ks = k(Xc, Xo)
    mean = Ks @ alpha
    v = np.linalg.solve(L, Ks.T)
    var = np.clip(1.0 - (v * v).sum(0), 1e-12, None)
    return mu + sd * mean, sd * np.sqrt(var)


def expected_improvement(mean, std, best, xi=0.01):
    imp = mean - best - xi
    zz = imp / std
    return imp * norm.cdf(zz) + std * norm.pdf(zz)


_RESAMPLE_TRIES = 50


def auto_search(ds: Dataset, space: SearchSpace, budget: SearchBudget, refs: ScorerRefs,
                mode: str = "random", n_initial: int = 5, n_candidates: int = 100) -> SearchResult:
    """Return the incumbent best pipeline after spending the budget.

    Duplicate renderings are not re-evaluated; they count towards the trial
    budget so the trial sequence stays a pure function of the seed.
    """
    if mode not in ("random", "adaptive"):
        raise ValueError(f"unknown search mode {mode!r}")
    rng = np.random.default_rng(derive_seed(budget.master_seed, ds.name, "search"))
    start = time.perf_counter()
    trials: list[TrialOutcome] = []
    seen: dict[str, TrialOutcome] = {}
    obs_x, obs_y = [], []
    for t in range(budget.max_trials):
        if time.perf_counter() - start >= budget.total_timeout:
            break
        ok_count = len(obs_y)
        if mode == "adaptive" and ok_count >= max(2, n_initial):
            cands = [space.sample(rng) for _ in range(n_candidates)]
            Xc = np.array([space.encode(c) for c in cands])
            mean, std = _gp_posterior(np.array(obs_x), np.array(obs_y), Xc)
            config = cands[int(np.argmax(expected_improvement(mean, std, max(obs_y))))]
        else:
            # prefer configurations not rendered before
            for _ in range(_RESAMPLE_TRIES):
                config = space.sample(rng)
                try:
                    if space.render(config) not in seen:
                        break
                except ValueError:
                    break
        try:
            text = space.render(config)
        except ValueError as exc:
            trials.append(TrialOutcome(str(config), f"error: {exc}", None, 0.0))
            continue
        if text in seen:
            trials.append(seen[text])
            continue
        remaining = budget.total_timeout - (time.perf_counter() - start)
        outcome = _run_trial(text, ds, refs, budget.master_seed,
                             min(budget.trial_timeout, max(remaining, 1e-3)))
        seen[text] = outcome
        trials.append(outcome)
        if outcome.status == "ok":
            obs_x.append(space.encode(config))
            obs_y.append(outcome.score)
    done = [o for o in seen.values() if o.status == "ok"]
    if not done:
        raise NoCompletedTrials(f"{ds.name}: no search trial completed within the budget")
    best = min(done, key=lambda o: (-o.score, o.pipeline))
    return SearchResult(best.pipeline, best.score, best.records, trials)


def single_config_space(pipeline: str) -> SearchSpace:
    return SearchSpace((pipeline.replace("{", "{{").replace("}", "}}"),), {})


def default_space(palette: Sequence[str] = ("gbt", "tree", "knn", "logreg")) -> SearchSpace:
    """Templates covering every mitigation kind at base and ensemble level."""
    est = Choice(tuple(palette))
    members = ", ".join(palette)
    templates = (
        "{est}", "Pr(DIR({level}), {est})", "Pr(Reweigh, {est})",
        "Pr(LFR(k={k}, Ax=0.01, Ay={ay}, Az={az}), {est})", "PR(eta={eta})",
        "Post(CEO(cost={cost}), {est})",
        "Bag({est}, {bag_n})", "Bag(Pr(DIR({level}), tree), {bag_n})",
        "Pr(DIR({level}), Bag(tree, {bag_n}))", "Bag(PR(eta={eta}), {bag_n})",
        "Post(CEO(cost={cost}), Bag(tree, {bag_n}))",
        "Boost(tree(max_depth={depth}), {boost_n})",
        "Boost(Pr(Reweigh, tree(max_depth={depth})), {boost_n})",
        "Pr(DIR({level}), Boost(tree(max_depth={depth}), {boost_n}))",
        f"Vote([{members}], {{vote_mode}})", f"Pr(DIR({{level}}), Vote([{members}], {{vote_mode}}))",
        f"Stack([{members}], gbt, passthrough={{passthrough}})",
        f"Pr(DIR({{level}}), Stack([{members}], gbt, passthrough={{passthrough}}))",
    )
    domains = {
        "est": est, "level": FloatRange(0.0, 1.0), "k": Choice((5, 10, 20)),
        "ay": Choice((1, 5, 10, 50)), "az": Choice((1, 5, 10, 50)),
        "eta": FloatRange(0.1, 1000.0, log=True), "cost": Choice(("weighted", "fpr", "fnr")),
        "bag_n": IntRange(2, 50, log=True), "boost_n": IntRange(2, 100, log=True),
        "depth": IntRange(1, 4), "vote_mode": Choice(("hard", "soft")),
        "passthrough": Choice((True, False)),
    }
    return SearchSpace(templates, domains)
