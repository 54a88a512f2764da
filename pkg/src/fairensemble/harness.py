"""Cross-validated trials, the two-step grid, and a JSON-Lines result store."""
from __future__ import annotations

import itertools
import json
import logging
import math
import string
import tracemalloc
import warnings
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._rng import derive_seed
from .composition import (
    InEst, Learner, Post, Pre, canonical, fit_pipeline, mitigation_kinds, mitigator_text, parse,
    predict_pipeline, to_text, validate, walk,
)
from .datasets import Dataset, stratified_kfold
from .metrics import ScorerRefs, disparate_impact, evaluate, f1_score, symmetric_di

log = logging.getLogger(__name__)

SCHEMA = "trialrecord/1"
METRIC_KEYS = ("di", "spd", "precision", "recall", "f1", "accuracy")


@dataclass(frozen=True)
class TrialRecord:
    dataset: str
    pipeline: str
    trial: int
    fold: int
    seed: int
    master_seed: int
    metrics: dict
    fit_seconds: float
    memory_mb: float | None = None
    base_rate: float | None = None  # favorable rate of the test fold's true labels

    @property
    def key(self) -> tuple:
        return (self.dataset, self.pipeline, self.trial, self.fold, self.master_seed)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrialRecord":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


# ------------------------------------------------------------------ store


class ResultStore:
    """Append-only JSONL store keyed by (dataset, pipeline, trial, fold, master seed).

    Failures go to a ``.failures.jsonl`` sidecar next to the store.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.failure_path = self.path.with_name(self.path.stem + ".failures.jsonl")
        self._records: list[TrialRecord] = []
        self._keys: set = set()
        if self.path.exists() and self.path.stat().st_size:
            with self.path.open() as fh:
                header = json.loads(fh.readline())
                if header.get("schema") != SCHEMA:
                    raise ValueError(f"{self.path}: unsupported schema {header!r}")
                for line in fh:
                    if line.strip():
                        rec = TrialRecord.from_dict(json.loads(line))
                        self._records.append(rec)
                        self._keys.add(rec.key)

    @classmethod
    def in_memory(cls, records: Iterable[TrialRecord] = ()) -> "MemoryStore":
        return MemoryStore(records)

    def __len__(self):
        return len(self._records)

    def __contains__(self, key) -> bool:
        return tuple(key) in self._keys

    @property
    def records(self) -> list[TrialRecord]:
        return list(self._records)

    def append(self, records: Iterable[TrialRecord]) -> int:
        new = [r for r in records if r.key not in self._keys]
        if not new:
            return 0
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not self.path.exists() or self.path.stat().st_size == 0
        with self.path.open("a") as fh:
            if fresh:
                fh.write(json.dumps({"schema": SCHEMA}) + "\n")
            for r in new:
                fh.write(r.to_json() + "\n")
                self._keys.add(r.key)
                self._records.append(r)
        return len(new)

    def add_failure(self, dataset: str, pipeline: str, reason: str, master_seed: int):
        entry = {"dataset": dataset, "pipeline": pipeline, "reason": reason,
                 "master_seed": master_seed}
        if entry in self.failures():
            return
        self.failure_path.parent.mkdir(parents=True, exist_ok=True)
        with self.failure_path.open("a") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def failures(self) -> list[dict]:
        if not self.failure_path.exists():
            return []
        with self.failure_path.open() as fh:
            return [json.loads(line) for line in fh if line.strip()]


class MemoryStore(ResultStore):
    def __init__(self, records: Iterable[TrialRecord] = ()):
        self._records, self._keys, self._failures = [], set(), []
        self.path = None
        self.append(records)

    def append(self, records):
        new = [r for r in records if r.key not in self._keys]
        for r in new:
            self._keys.add(r.key)
            self._records.append(r)
        return len(new)

    def add_failure(self, dataset, pipeline, reason, master_seed):
        entry = {"dataset": dataset, "pipeline": pipeline, "reason": reason,
                 "master_seed": master_seed}
        if entry not in self._failures:
            self._failures.append(entry)

    def failures(self):
        return list(self._failures)


# ------------------------------------------------------------- CV trials

_WORKER_DATA: dict = {}


def _init_worker(datasets):
    _WORKER_DATA.clear()
    _WORKER_DATA.update(datasets)


def fold_seed(master_seed: int, dataset: str, trial: int) -> int:
    # shared by every pipeline so all configurations see the same folds
    return derive_seed(master_seed, dataset, "folds", trial)


def pipeline_seed(master_seed: int, dataset: str, pipeline: str, trial: int, fold: int) -> int:
    return derive_seed(master_seed, dataset, pipeline, trial, fold)


def _run_task(task) -> TrialRecord:
    ds_name, text, trial, fold, k, master_seed, measure_memory = task
    ds: Dataset = _WORKER_DATA[ds_name]
    plan = stratified_kfold(ds, k, fold_seed(master_seed, ds_name, trial))
    tr, te = plan.train_indices(fold), plan.test_indices(fold)
    seed = pipeline_seed(master_seed, ds_name, text, trial, fold)
    if measure_memory:
        tracemalloc.start()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = fit_pipeline(parse(text), ds, tr, seed)
        mem = None
        if measure_memory:
            mem = tracemalloc.get_traced_memory()[1] / 2**20
    finally:
        if measure_memory:
            tracemalloc.stop()
    pred = predict_pipeline(model, ds.X[te], ds.g[te])
    metrics = evaluate(ds.y[te], pred, ds.g[te], ds.group_mask[te])
    return TrialRecord(ds_name, text, trial, fold, seed, master_seed, metrics,
                       model.fit_seconds, mem, float(np.mean(ds.y[te])))


def _safe_task(task):
    try:
        return _run_task(task)
    except Exception as exc:  # reported per pipeline by the caller
        return exc


def _execute(tasks: list, datasets: Mapping[str, Dataset], workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        _init_worker(datasets)
        return [_safe_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                             initargs=(dict(datasets),)) as ex:
        # map keeps submission order, so output never depends on scheduling
        return list(ex.map(_safe_task, tasks, chunksize=max(1, len(tasks) // (8 * workers))))


def run_cv(expr, ds: Dataset, n_trials: int = 5, k: int = 3, master_seed: int = 0,
           workers: int = 1, measure_memory: bool = False) -> list[TrialRecord]:
    """``n_trials`` repetitions of stratified ``k``-fold CV, one record per fold."""
    text = to_text(validate(parse(expr) if isinstance(expr, str) else expr))
    tasks = [(ds.name, text, t, f, k, master_seed, measure_memory)
             for t in range(n_trials) for f in range(k)]
    out = _execute(tasks, {ds.name: ds}, workers)
    for r in out:
        if isinstance(r, Exception):
            raise r
    return out


# --------------------------------------------------------------- summaries


def _mean(vals):
    vals = [v for v in vals if v is not None and not (isinstance(v, float) and math.isnan(v))]
    return float(np.mean(vals)) if vals else float("nan")


def _std(vals):
    vals = [v for v in vals if v is not None and not (isinstance(v, float) and math.isnan(v))]
    return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0


def summarize(records: Iterable[TrialRecord]) -> dict:
    """Mean and sample std of every metric per (dataset, pipeline)."""
    groups = defaultdict(list)
    for r in records:
        groups[(r.dataset, r.pipeline)].append(r)
    out = {}
    for key in sorted(groups):
        rs = groups[key]
        row = {"n": len(rs)}
        for m in METRIC_KEYS:
            vals = [r.metrics.get(m) for r in rs]
            row[f"{m}_mean"] = _mean(vals)
            row[f"{m}_std"] = _std(vals)
        row["base_rate_mean"] = _mean([r.base_rate for r in rs])
        row["fit_seconds_mean"] = _mean([r.fit_seconds for r in rs])
        out[key] = row
    return out


# ------------------------------------------------------------- step one

KINDS3 = ("pre", "in", "post")


def mitigator_kind(pipeline: str) -> str | None:
    kinds = mitigation_kinds(parse(pipeline))
    return next(iter(kinds)) if len(kinds) == 1 else None


@dataclass
class Step1Choice:
    # dataset -> kind -> chosen step-1 pipeline text
    pipelines: dict = field(default_factory=dict)
    # dataset -> kind -> audit trail
    audit: dict = field(default_factory=dict)

    def mitigator(self, dataset: str, kind: str) -> str | None:
        text = self.pipelines.get(dataset, {}).get(kind)
        if text is None:
            return None
        for _, n in walk(parse(text)):
            if isinstance(n, (Pre, InEst, Post)):
                return mitigator_text(n)
        return None

    def to_dict(self) -> dict:
        return {"pipelines": self.pipelines, "audit": self.audit}

    @classmethod
    def from_dict(cls, d) -> "Step1Choice":
        return cls(dict(d["pipelines"]), dict(d.get("audit", {})))


def _apply_filters(cands: dict, metric: str):
    """F1..F3 as filters (skipped when they would empty the set), then F4 argmax."""
    f1_vals = [c["f1_mean"] for c in cands.values()]
    f3_threshold = max(float(np.mean(f1_vals)), float(np.median(f1_vals)))
    tests = {
        "F1": lambda c: 0.8 <= c["di_mean"] <= 1.25,
        "F2": lambda c: c["precision_mean"] > c["base_rate_mean"],
        "F3": lambda c: c["f1_mean"] > f3_threshold,
    }
    survivors = sorted(cands)
    trail = {"candidates": list(survivors), "f3_threshold": f3_threshold,
             "f3_population": "all candidates of this mitigator kind", "skipped": []}
    for name, test in tests.items():
        keep = [p for p in survivors if test(cands[p])]
        if keep:
            survivors = keep
        else:
            trail["skipped"].append(name)
        trail[name] = list(survivors)
    # highest metric wins; ties go to the lexicographically smallest text
    best = min(survivors, key=lambda p: (-cands[p][f"{metric}_mean"], p))
    trail["F4"] = {"metric": metric, "chosen": best, "value": cands[best][f"{metric}_mean"]}
    trail["relaxed"] = bool(trail["skipped"])
    return best, trail


def select_step1(records: Iterable[TrialRecord], selection_metric="recall") -> Step1Choice:
    """Pick one pre-, in-, and post-estimator configuration per dataset.

    ``selection_metric`` is ``"precision"``, ``"recall"``, or a mapping from
    dataset name to one of those.
    """
    summ = summarize(records)
    by = defaultdict(dict)
    for (ds, pipe), row in summ.items():
        kind = mitigator_kind(pipe)
        if kind is not None:
            by[(ds, kind)][pipe] = row
    choice = Step1Choice()
    datasets = sorted({ds for ds, _ in summ})
    for ds in datasets:
        metric = selection_metric.get(ds, "recall") if isinstance(selection_metric, Mapping) \
            else selection_metric
        if metric not in ("precision", "recall"):
            raise ValueError(f"selection metric must be precision or recall, got {metric!r}")
        for kind in KINDS3:
            cands = by.get((ds, kind))
            if not cands:
                warnings.warn(f"{ds}: no {kind}-estimator candidates", stacklevel=2)
                continue
            best, trail = _apply_filters(cands, metric)
            choice.pipelines.setdefault(ds, {})[kind] = best
            choice.audit.setdefault(ds, {})[kind] = trail
    return choice


def audit_text(choice: Step1Choice) -> str:
    lines = []
    for ds in sorted(choice.audit):
        for kind in KINDS3:
            a = choice.audit[ds].get(kind)
            if a is None:
                continue
            lines.append(f"[{ds}] {kind}-estimator: {len(a['candidates'])} candidates")
            for f in ("F1", "F2", "F3"):
                note = " (skipped: would empty the set)" if f in a["skipped"] else ""
                lines.append(f"  {f}: {len(a[f])} survivors{note}")
            lines.append(f"  F3 threshold {a['f3_threshold']:.4f} over {a['f3_population']}")
            lines.append(f"  F4: max {a['F4']['metric']} -> {a['F4']['chosen']} "
                         f"({a['F4']['value']:.4f}){' [relaxed]' if a['relaxed'] else ''}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ grids

PALETTE = ("gbt", "tree", "knn", "logreg")


def default_step1_pipelines() -> list[str]:
    pre = [f"Pr(DIR({lv}), tree)" for lv in (0.2, 0.4, 0.6, 0.8, 1.0)]
    pre.append("Pr(Reweigh, tree)")
    for k, ay, az in ((5, 1, 10), (5, 10, 5), (5, 5, 10), (5, 50, 5), (20, 1, 10)):
        pre.append(f"Pr(LFR(k={k}, Ax=0.01, Ay={ay}, Az={az}), tree)")
    inn = [f"PR(eta={eta})" for eta in (1.0, 10.0, 100.0, 1000.0)]
    post = [f"Post(CEO(cost={c}), tree)" for c in ("weighted", "fpr", "fnr")]
    return [canonical(p) for p in pre + inn + post]


def default_step2_templates() -> list[str]:
    """Placements of each mitigator kind at base and ensemble level."""
    t = ["Bag(tree, {bag_n})", "Boost(tree, {boost_n})",
         "Vote([{palette}], {vote_mode})", "Stack([{palette}], gbt, passthrough={passthrough})"]
    t += ["Pr({pre}, Bag(tree, {bag_n}))", "Bag(Pr({pre}, tree), {bag_n})",
          "Bag({in}, {bag_n})",
          "Post({post}, Bag(tree, {bag_n}))", "Bag(Post({post}, tree), {bag_n})"]
    t += ["Pr({pre}, Boost(tree, {boost_n}))", "Boost(Pr({pre}, tree), {boost_n})",
          "Boost({in}, {boost_n})",
          "Post({post}, Boost(tree, {boost_n}))", "Boost(Post({post}, tree), {boost_n})"]
    t += ["Pr({pre}, Vote([{palette}], {vote_mode}))", "Vote([{pre_palette}], {vote_mode})",
          "Vote([{in_palette}], {vote_mode})",
          "Post({post}, Vote([{palette}], {vote_mode}))", "Vote([{post_palette}], hard)"]
    t += ["Pr({pre}, Stack([{palette}], gbt, passthrough={passthrough}))",
          "Stack([{pre_palette}], gbt, passthrough={passthrough})",
          "Stack([{palette}], Pr({pre}, gbt), passthrough=true)",
          "Stack([{in_palette}], gbt, passthrough={passthrough})",
          "Stack([{palette}], {in}, passthrough=true)",
          "Post({post}, Stack([{palette}], gbt, passthrough={passthrough}))",
          "Stack([{post_palette}], gbt, passthrough={passthrough})",
          "Stack([{palette}], Post({post}, gbt), passthrough=true)"]
    return t


@dataclass
class GridSpec:
    pipelines: list
    bag_sizes: tuple = (1, 10, 100)
    boost_sizes: tuple = (1, 50, 500)
    passthrough: tuple = (True, False)
    vote_modes: tuple = ("hard",)
    palette: tuple = PALETTE

    @classmethod
    def from_dict(cls, d: Mapping) -> "GridSpec":
        d = {k: v for k, v in d.items() if k not in ("n_trials", "k")}
        pipes = d.pop("pipelines", None) or default_step2_templates()
        return cls(pipelines=list(pipes), **{k: tuple(v) for k, v in d.items()})


_PR_ETAS = (1.0, 10.0, 100.0, 1000.0)


def _in_palette(in_text: str) -> str:
    # four distinct in-estimator members: the chosen one plus other strengths
    chosen = parse(in_text)
    others = [f"PR(eta={e})" for e in _PR_ETAS if e != chosen.get("eta")]
    return ", ".join([in_text] + others[:3])


def instantiate(template: str, mitigators: Mapping[str, str], grid: GridSpec) -> list[str]:
    """All canonical pipeline texts produced by one template.

    Raises KeyError when the template needs a mitigator that is not available.
    """
    fields = {f for _, f, _, _ in string.Formatter().parse(template) if f}
    values: dict[str, list] = {}
    for f in sorted(fields):
        if f == "bag_n":
            values[f] = [str(n) for n in grid.bag_sizes]
        elif f == "boost_n":
            values[f] = [str(n) for n in grid.boost_sizes]
        elif f == "passthrough":
            values[f] = ["true" if p else "false" for p in grid.passthrough]
        elif f == "vote_mode":
            values[f] = list(grid.vote_modes)
        elif f == "palette":
            values[f] = [", ".join(grid.palette)]
        elif f in ("pre", "in", "post"):
            if not mitigators.get(f):
                raise KeyError(f"no {f}-estimator mitigator selected")
            values[f] = [mitigators[f]]
        elif f == "pre_palette":
            values[f] = [", ".join(f"Pr({mitigators['pre']}, {e})" for e in grid.palette)]
        elif f == "post_palette":
            values[f] = [", ".join(f"Post({mitigators['post']}, {e})" for e in grid.palette)]
        elif f == "in_palette":
            if not mitigators.get("in"):
                raise KeyError("no in-estimator mitigator selected")
            values[f] = [_in_palette(mitigators["in"])]
        else:
            raise KeyError(f"unknown template field {f!r}")
    names = sorted(values)
    out = []
    for combo in itertools.product(*(values[n] for n in names)):
        text = template.format(**dict(zip(names, combo)))
        try:
            text = canonical(text)
        except ValueError:
            pass  # reported by the caller when validation fails
        if text not in out:
            out.append(text)
    return out


def run_pipelines(datasets: Sequence[Dataset], pipelines: Mapping[str, Sequence[str]],
                  store: ResultStore, master_seed: int = 0, n_trials: int = 5, k: int = 3,
                  workers: int = 1, measure_memory: bool = False) -> ResultStore:
    """Run CV for every (dataset, pipeline); a failing pipeline leaves only a failure entry."""
    by_name = {d.name: d for d in datasets}
    tasks, owners = [], []
    for ds in datasets:
        for text in pipelines.get(ds.name, ()):
            try:
                text = to_text(validate(parse(text)))
            except Exception as exc:
                log.warning("%s: %s rejected: %s", ds.name, text, exc)
                store.add_failure(ds.name, text, f"{type(exc).__name__}: {exc}", master_seed)
                continue
            keys = [(ds.name, text, t, f, master_seed) for t in range(n_trials) for f in range(k)]
            if all(key in store for key in keys):
                continue
            owners.append((ds.name, text, len(tasks), len(keys)))
            tasks += [(ds.name, text, t, f, k, master_seed, measure_memory)
                      for t in range(n_trials) for f in range(k)]
    results = _execute(tasks, by_name, workers)
    for ds_name, text, start, n in owners:
        chunk = results[start:start + n]
        errs = [r for r in chunk if isinstance(r, Exception)]
        if errs:
            log.warning("%s: %s failed: %s", ds_name, text, errs[0])
            store.add_failure(ds_name, text, f"{type(errs[0]).__name__}: {errs[0]}", master_seed)
        else:
            store.append(chunk)
    return store


def run_grid(datasets: Sequence[Dataset], grid: GridSpec, step1: Step1Choice, store: ResultStore,
             master_seed: int = 0, n_trials: int = 5, k: int = 3, workers: int = 1,
             measure_memory: bool = False) -> ResultStore:
    """Second step: instantiate templates with each dataset's step-1 mitigators and run them."""
    plan = {}
    for ds in datasets:
        mits = {kind: step1.mitigator(ds.name, kind) for kind in KINDS3}
        texts = []
        for template in grid.pipelines:
            try:
                texts += [t for t in instantiate(template, mits, grid) if t not in texts]
            except KeyError as exc:
                store.add_failure(ds.name, template, f"KeyError: {exc}", master_seed)
        plan[ds.name] = texts
    return run_pipelines(datasets, plan, store, master_seed, n_trials, k, workers, measure_memory)


# ----------------------------------------------------------- scorer refs


def make_scorer_refs(ds: Dataset, seed: int = 0, k: int = 3) -> ScorerRefs:
    """Reference points for the blended score, computed from the dataset itself.

    ``min_di``: folded DI of the true labels; ``min_f1``: F1 of always
    predicting favorable; ``max_f1``: mean CV F1 of the gradient-boosted
    learner (1.0 when that does not beat the constant predictor).
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        min_di = symmetric_di(disparate_impact(ds.y, ds.g, ds.group_mask))
    min_f1 = f1_score(ds.y, np.ones(ds.n_rows, dtype=np.int64))
    plan = stratified_kfold(ds, k, derive_seed(seed, ds.name, "refs"))
    f1s = []
    for fold, (tr, te) in enumerate(plan.splits()):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            m = fit_pipeline(Learner("gbt"), ds, tr, derive_seed(seed, ds.name, "refs", fold))
        f1s.append(f1_score(ds.y[te], predict_pipeline(m, ds.X[te], ds.g[te])))
    max_f1 = float(np.mean(f1s))
    if max_f1 <= min_f1:
        max_f1 = 1.0
    return ScorerRefs(min_di=min(min_di, 1.0), min_f1=min_f1, max_f1=max_f1)
