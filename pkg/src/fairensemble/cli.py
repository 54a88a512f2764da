"""Command-line entry point: ``fairensemble <command> --config FILE``.

Commands: encode, cv, grid, auto, guide, loo. Exit codes are 0 on success,
2 for configuration errors, and 3 when no usable results were produced.

Config files are JSON or TOML::

    seed = 0                 # master seed (overridden by --seed)
    workers = 1
    out = "runs/demo"

    [[datasets]]
    csv = "data/credit-g.csv"
    recipe = "credit-g"      # bundled recipe name or a recipe file path
    selection_metric = "recall"

    [[datasets]]
    name = "synth_a"
    synthetic = { n = 600, rate_priv = 0.8, rate_unpriv = 0.4, seed = 1 }

    [cv]     pipelines = [...], n_trials = 5, k = 3
    [step1]  pipelines = [...]  (defaults to the built-in mitigator grid)
    [grid]   pipelines = [...] templates, bag_sizes, boost_sizes, passthrough, vote_modes
    [auto]   max_trials, trial_timeout, total_timeout, mode = "random" | "adaptive"
    [guide]  store, rows_threshold, di_threshold, top_fraction
"""
from __future__ import annotations

import argparse
import json
import logging
import secrets
import sys
import warnings
from pathlib import Path

import numpy as np

from . import guidance, harness, search
from .datasets import (
    CsvParseError, Dataset, RecipeError, bundled_recipe, encode, load_csv, load_recipe,
    save_dataset, synth_biased,
)

log = logging.getLogger("fairensemble")

EXIT_OK, EXIT_CONFIG, EXIT_NO_RESULTS = 0, 2, 3


class ConfigError(Exception):
    pass


class NoResults(Exception):
    pass


def _read_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text(encoding="utf-8")
    try:
        if p.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            cfg = tomllib.loads(text)
        else:
            cfg = json.loads(text)
    except Exception as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from None
    cfg["_base"] = str(p.parent)
    return cfg


def _resolve(cfg: dict, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(cfg.get("_base", ".")) / p


def _load_datasets(cfg: dict) -> list[Dataset]:
    entries = cfg.get("datasets")
    if not entries:
        raise ConfigError("config lists no datasets")
    out = []
    for e in entries:
        if "synthetic" in e:
            s = dict(e["synthetic"])
            try:
                ds = synth_biased(int(s.get("n", 1000)), float(s.get("rate_priv", 0.8)),
                                  float(s.get("rate_unpriv", 0.4)), int(s.get("n_features", 5)),
                                  int(s.get("seed", 0)), e.get("name"))
            except ValueError as exc:
                raise ConfigError(f"synthetic dataset {e.get('name')}: {exc}") from None
        else:
            if "csv" not in e or "recipe" not in e:
                raise ConfigError("dataset entries need csv and recipe (or synthetic)")
            csv = _resolve(cfg, e["csv"])
            if not csv.is_file():
                raise ConfigError(f"data file not found: {csv}")
            try:
                rp = _resolve(cfg, e["recipe"])
                recipe = load_recipe(rp) if rp.is_file() else bundled_recipe(e["recipe"])
                if e.get("name"):
                    recipe = type(recipe).from_dict({**recipe.to_dict(), "name": e["name"]})
                ds = encode(load_csv(csv), recipe)
            except (CsvParseError, RecipeError, FileNotFoundError, KeyError, ValueError) as exc:
                raise ConfigError(f"{csv}: {exc}") from None
        out.append(ds)
    names = [d.name for d in out]
    if len(set(names)) != len(names):
        raise ConfigError(f"dataset names must be unique, got {names}")
    return out


def _selection(cfg, datasets) -> dict:
    # entries and loaded datasets line up one to one
    return {d.name: e.get("selection_metric", "recall")
            for e, d in zip(cfg.get("datasets", []), datasets)}


def _summaries(datasets) -> list[dict]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return [d.summary() for d in datasets]


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ------------------------------------------------------------- commands


def cmd_encode(cfg, out: Path, seed: int, workers: int, fmt: str):
    datasets = _load_datasets(cfg)
    rows = _summaries(datasets)
    for d in datasets:
        save_dataset(d, out / "datasets" / d.name)
    _write(out / "datasets.json", _dump(rows))
    if fmt == "json":
        print(_dump(rows), end="")
    else:
        print(f"{'dataset':<20}{'rows':>8}{'cols':>6}{'DI':>8}")
        for r in rows:
            di = "undef" if r["baseline_di"] is None else f"{r['baseline_di']:.3f}"
            print(f"{r['name']:<20}{r['n_rows']:>8}{r['n_cols']:>6}{di:>8}")


def cmd_cv(cfg, out: Path, seed: int, workers: int, fmt: str):
    datasets = _load_datasets(cfg)
    c = cfg.get("cv", {})
    pipes = c.get("pipelines")
    if not pipes:
        raise ConfigError("cv.pipelines is empty")
    store = harness.ResultStore(out / "results.jsonl")
    harness.run_pipelines(datasets, {d.name: pipes for d in datasets}, store, seed,
                          int(c.get("n_trials", 5)), int(c.get("k", 3)), workers,
                          bool(cfg.get("memory", False)))
    _write(out / "datasets.json", _dump(_summaries(datasets)))
    if not len(store):
        raise NoResults("no successful trials")
    _print_summary(store.records, fmt)


def _print_summary(records, fmt):
    summ = harness.summarize(records)
    if fmt == "json":
        print(_dump([{"dataset": d, "pipeline": p, **row} for (d, p), row in summ.items()]), end="")
        return
    for (d, p), row in summ.items():
        print(f"{d:<14} f1 {row['f1_mean']:.3f} ({row['f1_std']:.3f})  "
              f"di {row['di_mean']:.3f} ({row['di_std']:.3f})  {p}")


def cmd_grid(cfg, out: Path, seed: int, workers: int, fmt: str):
    datasets = _load_datasets(cfg)
    _write(out / "datasets.json", _dump(_summaries(datasets)))
    s1 = cfg.get("step1", {})
    n_trials, k = int(s1.get("n_trials", 5)), int(s1.get("k", 3))
    memory = bool(cfg.get("memory", False))
    step1_pipes = s1.get("pipelines") or harness.default_step1_pipelines()
    step1_store = harness.ResultStore(out / "step1.jsonl")
    harness.run_pipelines(datasets, {d.name: step1_pipes for d in datasets}, step1_store, seed,
                          n_trials, k, workers, memory)
    choice = harness.select_step1(step1_store.records, _selection(cfg, datasets))
    _write(out / "step1.json", _dump(choice.to_dict()))
    _write(out / "audit.txt", harness.audit_text(choice))

    g = cfg.get("grid", {})
    try:
        grid = harness.GridSpec.from_dict(g)
    except TypeError as exc:
        raise ConfigError(f"grid: {exc}") from None
    store = harness.ResultStore(out / "results.jsonl")
    harness.run_grid(datasets, grid, choice, store, seed, int(g.get("n_trials", n_trials)),
                     int(g.get("k", k)), workers, memory)
    fails = store.failures()
    if fails:
        log.warning("%d pipeline(s) failed; see %s", len(fails), store.failure_path)
    if not len(store):
        raise NoResults("no successful trials")
    if fmt == "text":
        print(harness.audit_text(choice), end="")
    print(f"{len(store)} records in {store.path}")


def cmd_auto(cfg, out: Path, seed: int, workers: int, fmt: str):
    datasets = _load_datasets(cfg)
    a = cfg.get("auto", {})
    try:
        budget = search.SearchBudget(int(a.get("max_trials", 20)), float(a.get("trial_timeout", 60)),
                                     float(a.get("total_timeout", 1200)), seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if "pipelines" in a:
        space = search.SearchSpace(
            ("{pipeline}",), {"pipeline": search.Choice(tuple(a["pipelines"]))})
    else:
        space = search.default_space()
    report = []
    for ds in datasets:
        refs = harness.make_scorer_refs(ds, seed)
        try:
            res = search.auto_search(ds, space, budget, refs, mode=a.get("mode", "random"))
        except search.NoCompletedTrials as exc:
            log.warning("%s", exc)
            continue
        row = {"dataset": ds.name, **res.report(), "blended_score": res.score,
               "trials": [{"pipeline": t.pipeline, "status": t.status, "score": t.score}
                          for t in res.trials]}
        report.append(row)
    if not report:
        raise NoResults("every search trial failed or timed out")
    _write(out / "auto.json", _dump(report))
    if fmt == "json":
        print(_dump([{k: v for k, v in r.items() if k != "trials"} for r in report]), end="")
    else:
        for r in report:
            di = "undef" if r["di_mean"] is None else f"{r['di_mean']:.3f} ({r['di_std']:.3f})"
            print(f"{r['dataset']:<14} {r['pipeline']}  F1 {r['f1_mean']:.3f} ({r['f1_std']:.3f})"
                  f"  DI {di}  score {r['blended_score']:.3f}")


def _guide_inputs(cfg, out: Path):
    gcfg = cfg.get("guide", {})
    store_path = _resolve(cfg, gcfg["store"]) if "store" in gcfg else out / "results.jsonl"
    info_path = _resolve(cfg, gcfg["datasets"]) if "datasets" in gcfg else out / "datasets.json"
    if not store_path.is_file():
        raise NoResults(f"result store not found: {store_path}")
    store = harness.ResultStore(store_path)
    if not len(store):
        raise NoResults(f"result store is empty: {store_path}")
    if not info_path.is_file():
        raise ConfigError(f"dataset summary not found: {info_path} (run encode or grid first)")
    info = {r["name"]: {"n_rows": r["n_rows"], "baseline_di": r["baseline_di"]}
            for r in json.loads(info_path.read_text(encoding="utf-8"))}
    missing = {r.dataset for r in store.records} - set(info)
    if missing:
        raise ConfigError(f"no dataset summary for {sorted(missing)}")
    params = guidance.DiagramParams(
        info, int(gcfg.get("rows_threshold", 8000)), float(gcfg.get("di_threshold", 0.45)),
        float(gcfg.get("top_fraction", 1 / 3)))
    return store, params


def cmd_guide(cfg, out: Path, seed: int, workers: int, fmt: str):
    store, params = _guide_inputs(cfg, out)
    diagram = guidance.generate_diagram(store.records, params)
    _write(out / "diagram.json", guidance.emit(diagram, "json"))
    _write(out / "diagram.dot", guidance.emit(diagram, "dot"))
    print(guidance.emit(diagram, fmt), end="")


def cmd_loo(cfg, out: Path, seed: int, workers: int, fmt: str):
    store, params = _guide_inputs(cfg, out)
    report = guidance.leave_one_out(store.records, params)
    _write(out / "loo.json", _dump(report.to_dict()))
    _write(out / "loo.txt", guidance.loo_text(report))
    print(_dump(report.to_dict()) if fmt == "json" else guidance.loo_text(report), end="")


COMMANDS = {"encode": cmd_encode, "cv": cmd_cv, "grid": cmd_grid, "auto": cmd_auto,
            "guide": cmd_guide, "loo": cmd_loo}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fairensemble", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON or TOML run configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--workers", type=int, help="worker processes for CV trials")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--format", choices=("json", "dot", "text"), default="text")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _read_config(args.config)
        seed = args.seed if args.seed is not None else cfg.get("seed")
        if seed is None:
            seed = secrets.randbelow(2**31)
            log.warning("no seed given; using %d", seed)
        workers = args.workers if args.workers is not None else int(cfg.get("workers", 1))
        out = Path(args.out) if args.out else _resolve(cfg, cfg.get("out", "fairensemble-out"))
        fmt = args.format
        if fmt == "dot" and args.command != "guide":
            raise ConfigError("--format dot only applies to the guide command")
        COMMANDS[args.command](cfg, out, int(seed), max(1, workers), fmt)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoResults as exc:
        print(f"no usable results: {exc}", file=sys.stderr)
        return EXIT_NO_RESULTS
    return EXIT_OK


if __name__ == "__main__":
    np.seterr(all="ignore")
    sys.exit(main())
