"""Cross-dataset standardization and the quadrant guidance diagram."""
from __future__ import annotations

import json
import math
import warnings
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

import numpy as np

FOLDABLE = ("di", "spd", "f1", "precision", "recall")
TARGETS = ("di_mean", "di_std", "f1_mean")
QUADRANTS = (("small", "fair"), ("small", "unfair"), ("large", "fair"), ("large", "unfair"))


def fold_metric(values, metric: str) -> np.ndarray:
    """Fold raw metric values so that larger is better (DI) or smaller is better (SPD).

    DI becomes ``min(v, 1/v)`` with undefined or non-positive values mapped
    to 0; SPD becomes ``|v|`` with undefined mapped to 1; the F1 family is
    unchanged.
    """
    if metric not in FOLDABLE:
        raise ValueError(f"unknown metric {metric!r}; expected one of {FOLDABLE}")
    out = []
    for v in values:
        bad = v is None or (isinstance(v, float) and math.isnan(v))
        if metric == "di":
            out.append(0.0 if bad or v <= 0 else min(v, 1.0 / v))
        elif metric == "spd":
            out.append(1.0 if bad else abs(v))
        else:
            out.append(0.0 if bad else float(v))
    return np.asarray(out, float)


@dataclass(frozen=True)
class StandardizedResult:
    dataset: str
    pipeline: str
    metric: str
    raw_mean: float
    raw_std: float
    scaled_mean: float  # 1 = best outcome in this dataset
    scaled_std: float  # 0 = most stable in this dataset


def _minmax(vals: np.ndarray, what: str) -> np.ndarray:
    lo, hi = vals.min(), vals.max()
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        warnings.warn(f"{what}: all values equal, scaled to 0.5", stacklevel=3)
        return np.full(len(vals), 0.5)
    return (vals - lo) / (hi - lo)


def standardize(records: Iterable, metric: str) -> list[StandardizedResult]:
    """Per-dataset min-max scaling of each pipeline's folded mean and std."""
    groups = defaultdict(lambda: defaultdict(list))
    for r in records:
        groups[r.dataset][r.pipeline].append(((r.master_seed, r.trial, r.fold), r.metrics.get(metric)))
    out = []
    for ds in sorted(groups):
        pipes = sorted(groups[ds])
        # fixed summation order keeps the output independent of store order
        folded = [fold_metric([v for _, v in sorted(groups[ds][p], key=lambda kv: kv[0])], metric)
                  for p in pipes]
        means = np.array([f.mean() for f in folded])
        stds = np.array([f.std(ddof=1) if len(f) > 1 else 0.0 for f in folded])
        sm = _minmax(means, f"{ds}/{metric} means")
        if metric == "spd":
            sm = 1.0 - sm
        ss = _minmax(stds, f"{ds}/{metric} stds")
        out += [StandardizedResult(ds, p, metric, float(m), float(s), float(a), float(b))
                for p, m, s, a, b in zip(pipes, means, stds, sm, ss)]
    return out


@dataclass(frozen=True)
class Quadrant:
    size: str
    fairness: str
    rows_threshold: int = 8000
    di_threshold: float = 0.45

    @property
    def key(self) -> tuple[str, str]:
        return (self.size, self.fairness)


def assign_quadrant(n_rows: int, baseline_di: float, rows_threshold: int = 8000,
                    di_threshold: float = 0.45) -> Quadrant:
    folded = fold_metric([baseline_di], "di")[0]
    return Quadrant("large" if n_rows >= rows_threshold else "small",
                    "fair" if folded >= di_threshold else "unfair", rows_threshold, di_threshold)


@dataclass(frozen=True)
class DiagramParams:
    datasets: Mapping = field(default_factory=dict)  # name -> {"n_rows", "baseline_di"}
    rows_threshold: int = 8000
    di_threshold: float = 0.45
    top_fraction: float = 1.0 / 3.0

    def quadrant_of(self, dataset: str) -> Quadrant:
        info = self.datasets.get(dataset)
        if info is None:
            raise KeyError(f"no size/baseline DI information for dataset {dataset!r}")
        return assign_quadrant(info["n_rows"], info["baseline_di"], self.rows_threshold,
                               self.di_threshold)

    def to_dict(self) -> dict:
        return {"datasets": {k: dict(self.datasets[k]) for k in sorted(self.datasets)},
                "rows_threshold": self.rows_threshold, "di_threshold": self.di_threshold,
                "top_fraction": self.top_fraction}


@dataclass
class GuidanceDiagram:
    params: dict
    # one entry per quadrant in QUADRANTS order
    quadrants: list

    def cell(self, size: str, fairness: str, target: str) -> list[dict]:
        for q in self.quadrants:
            if (q["size"], q["fairness"]) == (size, fairness):
                return q["cells"].get(target, [])
        raise KeyError((size, fairness))

    def quadrant(self, size: str, fairness: str) -> dict:
        return next(q for q in self.quadrants if (q["size"], q["fairness"]) == (size, fairness))

    def to_dict(self) -> dict:
        return {"params": self.params, "quadrants": self.quadrants}


def _top_by_rank(scores: Mapping[str, float], fraction: float) -> set:
    """Pipelines whose competition rank (1 = best) is within ``ceil(n * fraction)``."""
    n = len(scores)
    cutoff = math.ceil(n * fraction - 1e-9)
    vals = list(scores.values())
    return {p for p, v in scores.items() if 1 + sum(x > v for x in vals) <= cutoff}


def survivors(records: list, params: DiagramParams) -> dict[str, dict[str, dict]]:
    """Dataset -> pipeline -> standardized targets, after the top-fraction filter."""
    di = standardize(records, "di")
    f1 = standardize(records, "f1")
    by_ds = defaultdict(dict)
    for r in di:
        by_ds[r.dataset].setdefault(r.pipeline, {})["di"] = r
    for r in f1:
        by_ds[r.dataset].setdefault(r.pipeline, {})["f1"] = r
    out = {}
    for ds in sorted(by_ds):
        rows = by_ds[ds]
        top_di = _top_by_rank({p: v["di"].scaled_mean for p, v in rows.items()}, params.top_fraction)
        top_f1 = _top_by_rank({p: v["f1"].scaled_mean for p, v in rows.items()}, params.top_fraction)
        out[ds] = {p: {"di_mean": rows[p]["di"].scaled_mean, "di_std": rows[p]["di"].scaled_std,
                       "f1_mean": rows[p]["f1"].scaled_mean}
                   for p in sorted(top_di & top_f1)}
    return out


def _rank_cell(avg: Mapping[str, float], target: str) -> list[dict]:
    if target == "di_std":
        order = sorted(avg, key=lambda p: (avg[p], p))
    else:
        order = sorted(avg, key=lambda p: (-avg[p], p))
    return [{"pipeline": p, "value": float(avg[p])} for p in order[:3]]


def generate_diagram(records: Iterable, params: DiagramParams) -> GuidanceDiagram:
    """Top-3 configurations per (quadrant, target) after filtering and averaging."""
    records = list(records)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        surv = survivors(records, params) if records else {}
    datasets = sorted({r.dataset for r in records})
    quads = []
    for size, fairness in QUADRANTS:
        members = [d for d in datasets if params.quadrant_of(d).key == (size, fairness)]
        entry = {"size": size, "fairness": fairness, "datasets": members, "cells": {}}
        if not members:
            entry["status"] = "no data"
        else:
            sums = defaultdict(lambda: defaultdict(list))
            for d in members:
                for p, vals in surv.get(d, {}).items():
                    for t in TARGETS:
                        sums[t][p].append(vals[t])
            if not sums:
                entry["status"] = "no survivors"
            else:
                entry["status"] = "ok"
                for t in TARGETS:
                    avg = {p: float(np.mean(v)) for p, v in sums[t].items()}
                    entry["cells"][t] = _rank_cell(avg, t)
        quads.append(entry)
    return GuidanceDiagram(params.to_dict(), quads)


# ---------------------------------------------------------- leave-one-out


def _raw_quadrant_value(records: list, datasets: list, pipeline: str, target: str) -> float | None:
    metric, stat = target.split("_")
    vals = []
    for d in datasets:
        rows = sorted((r for r in records if r.dataset == d and r.pipeline == pipeline),
                      key=lambda r: (r.master_seed, r.trial, r.fold))
        folded = fold_metric([r.metrics.get(metric) for r in rows], metric)
        if len(folded) == 0:
            continue
        vals.append(folded.mean() if stat == "mean" else (folded.std(ddof=1) if len(folded) > 1 else 0.0))
    return float(np.mean(vals)) if vals else None


@dataclass
class LooRow:
    dataset: str
    size: str
    fairness: str
    status: str  # "ok" or "quadrant emptied"
    # target -> {"num": int, "delta": float | None}
    metrics: dict


@dataclass
class LooReport:
    rows: list

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows]}


def leave_one_out(records: Iterable, params: DiagramParams) -> LooReport:
    """Compare each quadrant cell with the cell regenerated without one dataset.

    ``num`` counts full-diagram top-3 pipelines missing from the reduced
    top-3; ``delta`` is the raw folded quadrant average of the full rank-1
    pipeline minus that of the reduced rank-1, both on the full store.
    """
    records = list(records)
    full = generate_diagram(records, params)
    rows = []
    for d in sorted({r.dataset for r in records}):
        q = params.quadrant_of(d)
        qfull = full.quadrant(*q.key)
        others = [x for x in qfull["datasets"] if x != d]
        if not others:
            rows.append(LooRow(d, q.size, q.fairness, "quadrant emptied", {}))
            continue
        loo = generate_diagram([r for r in records if r.dataset != d], params)
        qloo = loo.quadrant(*q.key)
        out = {}
        for t in TARGETS:
            top_full = [e["pipeline"] for e in qfull["cells"].get(t, [])]
            top_loo = [e["pipeline"] for e in qloo["cells"].get(t, [])]
            num = len(set(top_full) - set(top_loo))
            delta = 0.0
            if top_full and top_loo and top_full[0] != top_loo[0]:
                a = _raw_quadrant_value(records, qfull["datasets"], top_full[0], t)
                b = _raw_quadrant_value(records, qfull["datasets"], top_loo[0], t)
                delta = None if a is None or b is None else a - b
            elif bool(top_full) != bool(top_loo):
                delta = None
            out[t] = {"num": num, "delta": delta}
        rows.append(LooRow(d, q.size, q.fairness, "ok", out))
    return LooReport(rows)


def loo_text(report: LooReport) -> str:
    head = f"{'Dataset':<16}" + "".join(f"{t + ' Num':>14}{t + ' Metric':>16}" for t in TARGETS)
    lines = [head]
    for r in report.rows:
        if r.status != "ok":
            lines.append(f"{r.dataset:<16}  ({r.status})")
            continue
        cells = ""
        for t in TARGETS:
            m = r.metrics[t]
            delta = "n/a" if m["delta"] is None else f"{m['delta']:+.3f}"
            cells += f"{m['num']:>14}{delta:>16}"
        lines.append(f"{r.dataset:<16}{cells}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ emit

_TARGET_LABEL = {"di_mean": "best DI outcome", "di_std": "most stable DI",
                 "f1_mean": "best F1 outcome"}


def _q(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _dot(diagram: GuidanceDiagram) -> str:
    lines = ["digraph guidance {", "  node [shape=box, fontname=\"Helvetica\"];",
             f"  root [label={_q('dataset')}];"]
    for size in ("small", "large"):
        sid = f"size_{size}"
        thr = diagram.params.get("rows_threshold", 8000)
        lines.append(f"  {sid} [label={_q(size)}];")
        lines.append(f"  root -> {sid} [label={_q(('rows >= ' if size == 'large' else 'rows < ') + str(thr))}];")
        for fairness in ("fair", "unfair"):
            qid = f"{sid}_{fairness}"
            q = diagram.quadrant(size, fairness)
            thr_di = diagram.params.get("di_threshold", 0.45)
            edge = ("DI >= " if fairness == "fair" else "DI < ") + str(thr_di)
            lines.append(f"  {qid} [label={_q(f'{size}, {fairness}')}];")
            lines.append(f"  {sid} -> {qid} [label={_q(edge)}];")
            if q["status"] != "ok":
                lid = f"{qid}_status"
                lines.append(f"  {lid} [shape=note, label={_q(q['status'])}];")
                lines.append(f"  {qid} -> {lid};")
                continue
            for t in TARGETS:
                lid = f"{qid}_{t}"
                body = "\\n".join(f"{i + 1}. {e['pipeline']} ({e['value']:.3f})"
                                  for i, e in enumerate(q["cells"][t]))
                label = f"{_TARGET_LABEL[t]}\\n" + body
                lines.append(f'  {lid} [shape=note, label="{_esc_keep_newlines(label)}"];')
                lines.append(f"  {qid} -> {lid};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _esc_keep_newlines(s: str) -> str:
    return s.replace('"', '\\"')


def _text(diagram: GuidanceDiagram) -> str:
    out = []
    for q in diagram.quadrants:
        out.append(f"[{q['size']}, {q['fairness']}] datasets: {', '.join(q['datasets']) or '-'}")
        if q["status"] != "ok":
            out.append(f"  {q['status']}")
            continue
        for t in TARGETS:
            out.append(f"  {_TARGET_LABEL[t]}:")
            for i, e in enumerate(q["cells"][t]):
                out.append(f"    {i + 1}. {e['pipeline']}  ({e['value']:.3f})")
    return "\n".join(out) + "\n"


def emit(diagram: GuidanceDiagram, fmt: str = "json") -> str:
    if fmt == "json":
        return json.dumps(diagram.to_dict(), indent=2, sort_keys=True) + "\n"
    if fmt == "dot":
        return _dot(diagram)
    if fmt == "text":
        return _text(diagram)
    raise ValueError(f"unknown format {fmt!r}; expected json, dot or text")
