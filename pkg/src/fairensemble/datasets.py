"""Tabular ingestion, recipe-driven encoding, and stratified fold plans.

A :class:`DatasetRecipe` says which column is the target, which value of it
is favorable, which columns are protected and how their privileged group is
recognised, and how the remaining columns are typed. :func:`encode` turns a
:class:`RawTable` into a :class:`Dataset` of finite floats plus the label
vector ``y`` and the group vector ``g``.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

MISSING_TOKENS = frozenset({"", "?", "NA", "N/A", "nan", "NaN"})


class CsvParseError(ValueError):
    pass


class RecipeError(ValueError):
    pass


@dataclass(frozen=True)
class RawTable:
    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if len(set(self.columns)) != len(self.columns):
            raise CsvParseError(f"duplicate column names in {list(self.columns)}")
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise CsvParseError(f"row {i + 1} has {len(row)} cells, expected {width}")

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list[str]:
        j = self.columns.index(name)
        return [row[j] for row in self.rows]


def load_csv(path, has_header: bool = True) -> RawTable:
    """Read a UTF-8 CSV file (RFC-4180 quoting) without typing any cell.

    Rows are numbered from 1 in error messages, counting the header line.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        records = [rec for rec in csv.reader(fh)]
    # a trailing newline can leave an empty record behind
    while records and records[-1] == []:
        records.pop()
    if not records:
        raise CsvParseError(f"{path}: empty file")
    if has_header:
        columns = tuple(c.strip() for c in records[0])
        body = records[1:]
        first = 2
    else:
        columns = tuple(f"c{j}" for j in range(len(records[0])))
        body = records
        first = 1
    for i, rec in enumerate(body):
        if len(rec) != len(columns):
            raise CsvParseError(
                f"{path}: row {i + first} has {len(rec)} cells, expected {len(columns)}"
            )
    return RawTable(columns, tuple(tuple(rec) for rec in body))


def _to_float(cell: str) -> float | None:
    cell = cell.strip()
    if cell in MISSING_TOKENS:
        return None
    try:
        v = float(cell)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


@dataclass(frozen=True)
class PrivilegedPredicate:
    """Recognises privileged values of one protected column.

    Either an explicit value set, or an inclusive numeric range where an
    open end is ``None``.
    """

    values: tuple[str, ...] | None = None
    min: float | None = None
    max: float | None = None

    def __post_init__(self):
        if self.values is None and self.min is None and self.max is None:
            raise RecipeError("privileged predicate needs values or a min/max range")
        if self.values is not None and (self.min is not None or self.max is not None):
            raise RecipeError("privileged predicate takes values or a range, not both")

    def __call__(self, cell: str) -> bool | None:
        cell = cell.strip()
        if cell in MISSING_TOKENS:
            return None
        if self.values is not None:
            return cell in self.values
        v = _to_float(cell)
        if v is None:
            return None
        return (self.min is None or v >= self.min) and (self.max is None or v <= self.max)

    def to_dict(self) -> dict:
        if self.values is not None:
            return {"values": list(self.values)}
        return {"min": self.min, "max": self.max}


@dataclass(frozen=True)
class ProtectedAttribute:
    column: str
    privileged: PrivilegedPredicate


@dataclass(frozen=True)
class DatasetRecipe:
    name: str
    target: str
    favorable: str
    protected: tuple[ProtectedAttribute, ...]
    categorical: frozenset[str] = frozenset()
    numeric: frozenset[str] = frozenset()
    scale_numeric: bool = False
    drop: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.protected:
            raise RecipeError("recipe needs at least one protected attribute")
        if self.target in self.drop:
            raise RecipeError(f"target {self.target!r} is in the drop set")
        both = self.categorical & self.numeric
        if both:
            raise RecipeError(f"columns both categorical and numeric: {sorted(both)}")
        names = [p.column for p in self.protected]
        if len(set(names)) != len(names):
            raise RecipeError("protected attributes must be distinct columns")

    @classmethod
    def from_dict(cls, d: Mapping) -> "DatasetRecipe":
        known = {"name", "target", "favorable", "protected", "categorical", "numeric",
                 "scale_numeric", "drop"}
        unknown = set(d) - known
        if unknown:
            raise RecipeError(f"unknown recipe fields: {sorted(unknown)}")
        protected = []
        for p in d["protected"]:
            priv = p["privileged"]
            if isinstance(priv, Mapping):
                pred = PrivilegedPredicate(
                    values=tuple(str(v) for v in priv["values"]) if "values" in priv else None,
                    min=priv.get("min"),
                    max=priv.get("max"),
                )
            else:
                pred = PrivilegedPredicate(values=tuple(str(v) for v in priv))
            protected.append(ProtectedAttribute(p["column"], pred))
        return cls(
            name=d.get("name", "dataset"),
            target=d["target"],
            favorable=str(d["favorable"]),
            protected=tuple(protected),
            categorical=frozenset(d.get("categorical", ())),
            numeric=frozenset(d.get("numeric", ())),
            scale_numeric=bool(d.get("scale_numeric", False)),
            drop=frozenset(d.get("drop", ())),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "target": self.target,
            "favorable": self.favorable,
            "protected": [
                {"column": p.column, "privileged": p.privileged.to_dict()} for p in self.protected
            ],
            "categorical": sorted(self.categorical),
            "numeric": sorted(self.numeric),
            "scale_numeric": self.scale_numeric,
            "drop": sorted(self.drop),
        }


def load_recipe(path) -> DatasetRecipe:
    """Load a recipe from JSON, or from TOML when a TOML parser is available."""
    path = Path(path)
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        with open(path, "rb") as fh:
            return DatasetRecipe.from_dict(tomllib.load(fh))
    with open(path, encoding="utf-8") as fh:
        return DatasetRecipe.from_dict(json.load(fh))


def bundled_recipe(name: str) -> DatasetRecipe:
    """Recipe shipped with the package, e.g. ``"credit-g"`` or ``"compas"``."""
    path = Path(__file__).parent / "recipes" / f"{name.replace('-', '_')}.json"
    if not path.exists():
        raise FileNotFoundError(f"no bundled recipe named {name!r}")
    return load_recipe(path)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Encoded dataset.

    ``g`` is 1 for the privileged group. When several protected attributes
    are combined, rows that are privileged on some attributes but not on
    others sit outside both comparison groups; ``group_mask`` is False for
    them and fairness metrics ignore them. Mitigators see them as ``g = 0``.

    ``numeric_mask`` flags the columns a quantile repair may touch: parsed
    numeric, non-protected features. One-hot and protected columns are left
    alone.
    """

    name: str
    X: np.ndarray
    y: np.ndarray
    g: np.ndarray
    feature_names: tuple[str, ...]
    numeric_mask: np.ndarray = None
    group_mask: np.ndarray = None
    favorable_value: str = "1"
    protected: tuple[str, ...] = ()
    n_dropped: int = 0

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be two-dimensional")
        n, d = X.shape
        y = np.asarray(self.y).astype(np.int64)
        g = np.asarray(self.g).astype(np.int64)
        if y.shape != (n,) or g.shape != (n,):
            raise ValueError(f"|y|={y.shape}, |g|={g.shape} but X has {n} rows")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        if not (np.isin(y, (0, 1)).all() and np.isin(g, (0, 1)).all()):
            raise ValueError("y and g must be 0/1 vectors")
        if len(self.feature_names) != d or len(set(self.feature_names)) != d:
            raise ValueError("feature names must be unique, one per column")
        nm = np.ones(d, bool) if self.numeric_mask is None else np.asarray(self.numeric_mask, bool)
        gm = np.ones(n, bool) if self.group_mask is None else np.asarray(self.group_mask, bool)
        if nm.shape != (d,) or gm.shape != (n,):
            raise ValueError("mask shapes do not match X")
        if n >= 4:
            if len(np.unique(y)) < 2:
                warnings.warn(f"dataset {self.name!r}: only one label value present", stacklevel=3)
            if len(np.unique(g[gm])) < 2:
                warnings.warn(f"dataset {self.name!r}: only one group present", stacklevel=3)
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "g", _readonly(g))
        object.__setattr__(self, "numeric_mask", _readonly(nm))
        object.__setattr__(self, "group_mask", _readonly(gm))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "protected", tuple(self.protected))

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_cols(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.name, self.X[idx], self.y[idx], self.g[idx], self.feature_names,
            self.numeric_mask, self.group_mask[idx], self.favorable_value, self.protected,
        )

    def summary(self) -> dict:
        from .metrics import disparate_impact, symmetric_di

        di = disparate_impact(self.y, self.g, mask=self.group_mask)
        return {
            "name": self.name,
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "baseline_di": di,
            "baseline_di_folded": symmetric_di(di),
            "favorable_rate": float(self.y.mean()) if self.n_rows else 0.0,
        }


def _categories(cells: Sequence[str]) -> list[str]:
    seen: dict[str, None] = {}
    for c in cells:
        seen.setdefault(c, None)
    return list(seen)


def encode(raw: RawTable, recipe: DatasetRecipe) -> Dataset:
    """Encode ``raw`` according to ``recipe``.

    Categorical columns become one-hot blocks named ``col_value`` in order of
    first appearance; missing categorical cells get their own ``col_missing``
    indicator. Numeric columns are parsed, missing cells imputed with the
    column median, and optionally min-max scaled to [0, 1]. Columns named in
    neither set are typed automatically (numeric if every present cell
    parses). A protected column that is not explicitly typed becomes a single
    0/1 privileged indicator named after the column.

    Rows whose target or protected cells cannot be read are dropped; the
    count ends up in ``Dataset.n_dropped``.
    """
    cols = set(raw.columns)
    wanted = {recipe.target} | {p.column for p in recipe.protected}
    wanted |= recipe.categorical | recipe.numeric | recipe.drop
    missing = sorted(wanted - cols)
    if missing:
        raise RecipeError(f"recipe columns not in table: {missing}")

    target = raw.column(recipe.target)
    keep = np.array([c.strip() not in MISSING_TOKENS for c in target], bool)
    priv_cols = []
    for p in recipe.protected:
        flags = [p.privileged(c) for c in raw.column(p.column)]
        keep &= np.array([f is not None for f in flags], bool)
        priv_cols.append(flags)
    n_dropped = int((~keep).sum())
    if n_dropped:
        warnings.warn(f"{recipe.name}: dropped {n_dropped} rows with unreadable "
                      "target or protected values", stacklevel=2)
    rows = np.flatnonzero(keep)

    fav = recipe.favorable.strip()
    fav_num = _to_float(fav)

    def is_fav(cell: str) -> bool:
        cell = cell.strip()
        if cell == fav:
            return True
        v = _to_float(cell)
        return fav_num is not None and v is not None and v == fav_num

    y = np.array([is_fav(target[i]) for i in rows], dtype=np.int64)
    if len(y) == 0 or y.min() == y.max():
        raise RecipeError(f"{recipe.name}: degenerate target (a single label value)")

    privs = []
    for p, flags in zip(recipe.protected, priv_cols):
        a = np.array([bool(flags[i]) for i in rows])
        if not a.any():
            raise RecipeError(f"{recipe.name}: privileged predicate for {p.column!r} matches no rows")
        privs.append(a)
    privs_arr = np.vstack(privs)
    g = privs_arr.all(axis=0).astype(np.int64)
    group_mask = privs_arr.all(axis=0) | (~privs_arr).all(axis=0)

    protected_names = {p.column for p in recipe.protected}
    blocks: list[np.ndarray] = []
    names: list[str] = []
    numeric_flags: list[bool] = []
    for j, col in enumerate(raw.columns):
        if col == recipe.target or col in recipe.drop:
            continue
        cells = [raw.rows[i][j].strip() for i in rows]
        if col in protected_names and col not in recipe.categorical and col not in recipe.numeric:
            k = [p.column for p in recipe.protected].index(col)
            blocks.append(privs[k].astype(float)[:, None])
            names.append(col)
            numeric_flags.append(False)
            continue
        if col in recipe.categorical:
            kind = "categorical"
        elif col in recipe.numeric:
            kind = "numeric"
        else:
            present = [c for c in cells if c not in MISSING_TOKENS]
            kind = "numeric" if present and all(_to_float(c) is not None for c in present) else "categorical"
        if kind == "categorical":
            vals = ["missing" if c in MISSING_TOKENS else c for c in cells]
            for cat in _categories(vals):
                blocks.append(np.array([v == cat for v in vals], float)[:, None])
                names.append(f"{col}_{cat}")
                numeric_flags.append(False)
        else:
            parsed = np.array([np.nan if (v := _to_float(c)) is None else v for c in cells])
            ok = ~np.isnan(parsed)
            fill = float(np.median(parsed[ok])) if ok.any() else 0.0
            parsed[~ok] = fill
            if recipe.scale_numeric:
                lo, hi = parsed.min(), parsed.max()
                parsed = (parsed - lo) / (hi - lo) if hi > lo else np.zeros_like(parsed)
            blocks.append(parsed[:, None])
            names.append(col)
            numeric_flags.append(col not in protected_names)

    X = np.hstack(blocks) if blocks else np.zeros((len(rows), 0))
    return Dataset(
        name=recipe.name, X=X, y=y, g=g, feature_names=tuple(names),
        numeric_mask=np.array(numeric_flags, bool), group_mask=group_mask,
        favorable_value=recipe.favorable, protected=tuple(p.column for p in recipe.protected),
        n_dropped=n_dropped,
    )


def save_dataset(ds: Dataset, path) -> Path:
    """Cache ``ds`` as ``<path>.npz`` plus a sidecar ``<path>.json``."""
    path = Path(path).with_suffix("")
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        path.with_suffix(".npz"), X=ds.X, y=ds.y, g=ds.g,
        numeric_mask=ds.numeric_mask, group_mask=ds.group_mask,
    )
    meta = {
        "name": ds.name,
        "n_rows": ds.n_rows,
        "n_cols": ds.n_cols,
        "favorable_value": ds.favorable_value,
        "protected": list(ds.protected),
        "feature_names": list(ds.feature_names),
        "n_dropped": ds.n_dropped,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return path.with_suffix(".npz")


def load_dataset(path) -> Dataset:
    path = Path(path).with_suffix("")
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    with np.load(path.with_suffix(".npz")) as z:
        return Dataset(
            name=meta["name"], X=z["X"], y=z["y"], g=z["g"],
            feature_names=tuple(meta["feature_names"]),
            numeric_mask=z["numeric_mask"], group_mask=z["group_mask"],
            favorable_value=meta["favorable_value"], protected=tuple(meta["protected"]),
            n_dropped=meta.get("n_dropped", 0),
        )


@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    assignments: np.ndarray
    strata: np.ndarray = field(repr=False)
    seed: int = 0

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def splits(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for f in range(self.k):
            yield self.train_indices(f), self.test_indices(f)


def stratified_assign(y, g, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold index per row, balanced within every (label, group) stratum.

    Strata are dealt round-robin with the fold counter carried over from one
    stratum to the next, so folds stay non-empty whenever ``n >= k``.
    """
    y = np.asarray(y)
    g = np.asarray(g)
    out = np.empty(len(y), dtype=np.int64)
    offset = 0
    for label in (0, 1):
        for group in (0, 1):
            rows = np.flatnonzero((y == label) & (g == group))
            if len(rows) == 0:
                continue
            rows = rng.permutation(rows)
            out[rows] = (offset + np.arange(len(rows))) % k
            offset = (offset + len(rows)) % k
    return out


def stratified_kfold(ds: Dataset, k: int, seed: int) -> FoldPlan:
    """Stratify on labels and protected groups jointly."""
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    if k > ds.n_rows:
        raise ValueError(f"k={k} exceeds the number of rows ({ds.n_rows})")
    assign = stratified_assign(ds.y, ds.g, k, np.random.default_rng(seed))
    assign.setflags(write=False)
    strata = np.column_stack([ds.y, ds.g])
    return FoldPlan(k=k, assignments=assign, strata=strata, seed=seed)


def stratified_holdout(y, g, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Split rows into (fit, holdout) with ``fraction`` of every stratum held out."""
    y = np.asarray(y)
    g = np.asarray(g)
    hold = np.zeros(len(y), bool)
    for label in (0, 1):
        for group in (0, 1):
            rows = rng.permutation(np.flatnonzero((y == label) & (g == group)))
            m = int(round(fraction * len(rows)))
            if len(rows) >= 2:
                m = min(max(m, 1), len(rows) - 1)
            hold[rows[:m]] = True
    return np.flatnonzero(~hold), np.flatnonzero(hold)


def synth_biased(
    n: int,
    favorable_rate_priv: float,
    favorable_rate_unpriv: float,
    n_features: int = 5,
    seed: int = 0,
    name: str | None = None,
) -> Dataset:
    """Synthetic dataset with a controlled base-rate gap between groups.

    Half the rows (rounded down) are unprivileged. Within each group the
    number of favorable labels is the rounded target rate times the group
    size, so the labels' disparate impact tracks the rate ratio closely.

    Features: column 0 carries label signal, column 1 tracks the group,
    column 2 mixes both, the rest are noise; the last column is the 0/1
    privileged indicator itself.
    """
    if n < 8:
        raise ValueError(f"n must be at least 8, got {n}")
    for r in (favorable_rate_priv, favorable_rate_unpriv):
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"rates must lie in [0, 1], got {r}")
    if n_features < 1:
        raise ValueError("n_features must be positive")
    rng = np.random.default_rng(seed)
    n_unpriv = n // 2
    g = np.r_[np.zeros(n_unpriv, np.int64), np.ones(n - n_unpriv, np.int64)]
    y = np.zeros(n, np.int64)
    for grp, rate in ((0, favorable_rate_unpriv), (1, favorable_rate_priv)):
        rows = np.flatnonzero(g == grp)
        n_fav = int(round(rate * len(rows)))
        y[rng.choice(rows, size=n_fav, replace=False)] = 1
    noise = rng.normal(size=(n, n_features))
    X = noise.copy()
    X[:, 0] = 1.2 * y + noise[:, 0]
    if n_features > 1:
        X[:, 1] = 1.0 * g + noise[:, 1]
    if n_features > 2:
        X[:, 2] = 0.6 * y + 0.6 * g + noise[:, 2]
    X = np.column_stack([X, g.astype(float)])
    order = rng.permutation(n)
    names = tuple(f"x{j}" for j in range(n_features)) + ("protected",)
    return Dataset(
        name=name or f"synth_{favorable_rate_priv:g}_{favorable_rate_unpriv:g}_{seed}",
        X=X[order], y=y[order], g=g[order], feature_names=names,
        numeric_mask=np.r_[np.ones(n_features, bool), False],
        protected=("protected",),
    )
