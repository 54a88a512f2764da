"""Pipeline expressions: AST, parser, canonical text, and feasibility rules.

Grammar (whitespace insignificant, names case-sensitive)::

    expr  := NAME | NAME '(' [arg (',' arg)*] ')'
    arg   := [NAME '='] value
    value := expr | NUMBER | '[' [value (',' value)*] ']'

Estimator names: ``Pr``, ``Post``, ``Bag``, ``Boost``, ``Vote``, ``Stack``,
``PR`` and the learner kinds. ``Reweigh``, ``DIR``, ``LFR`` and ``CEO``
name mitigators and may only appear as the first argument of ``Pr`` /
``Post``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Union

from ..learners import ALIASES, KINDS, SHORT_NAMES, LearnerSpec


class PipelineSyntaxError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnknownNameError(PipelineSyntaxError):
    pass


@dataclass(frozen=True)
class FeasibilityError(Exception):
    rule: str
    message: str
    path: str

    def __str__(self):
        return f"{self.rule} at {self.path}: {self.message}"


# ------------------------------------------------------------------- AST


def _freeze(params) -> tuple:
    if isinstance(params, tuple):
        return params
    return tuple(sorted(dict(params or {}).items()))


@dataclass(frozen=True)
class Learner:
    kind: str
    params: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", ALIASES.get(self.kind, self.kind))
        object.__setattr__(self, "params", _freeze(self.params))
        LearnerSpec(self.kind, dict(self.params))  # validates kind and keys

    def spec(self, seed: int) -> LearnerSpec:
        return LearnerSpec(self.kind, dict(self.params), seed)


PRE_MITIGATORS = ("Reweigh", "DIR", "LFR")
POST_MITIGATORS = ("CEO",)

# name -> (parameter order, defaults, keys always shown in canonical text)
MITIGATOR_PARAMS: dict[str, tuple[tuple[str, ...], dict[str, Any], tuple[str, ...]]] = {
    "Reweigh": ((), {}, ()),
    "DIR": (("level",), {"level": 1.0}, ("level",)),
    "LFR": (("k", "Ax", "Ay", "Az", "max_iters"),
            {"k": 5, "Ax": 0.01, "Ay": 1.0, "Az": 50.0, "max_iters": 200},
            ("k", "Ax", "Ay", "Az")),
    "CEO": (("cost",), {"cost": "weighted"}, ("cost",)),
    "PR": (("eta", "l2", "max_iters"), {"eta": 1.0, "l2": 1e-4, "max_iters": 500}, ("eta",)),
}
_INT_PARAMS = {"k", "max_iters"}


def _resolve_mitigator(name: str, params) -> tuple:
    order, defaults, _ = MITIGATOR_PARAMS[name]
    given = dict(params or {})
    unknown = set(given) - set(order)
    if unknown:
        raise ValueError(f"{name}: unknown parameter(s) {sorted(unknown)}")
    out = {}
    for key in order:
        v = given.get(key, defaults[key])
        if isinstance(defaults[key], str):
            v = str(v)
        elif key in _INT_PARAMS:
            if float(v) != int(v):
                raise ValueError(f"{name}: {key} must be an integer")
            v = int(v)
        else:
            v = float(v)
        out[key] = v
    if name == "DIR" and not 0.0 <= out["level"] <= 1.0:
        raise ValueError("DIR level must lie in [0, 1]")
    if name == "CEO" and out["cost"] not in ("weighted", "fpr", "fnr"):
        raise ValueError(f"CEO cost must be weighted, fpr or fnr, got {out['cost']!r}")
    if name == "LFR" and out["k"] < 2:
        raise ValueError("LFR needs k >= 2")
    if name == "PR" and out["eta"] < 0:
        raise ValueError("PR eta must be non-negative")
    return tuple(out.items())


@dataclass(frozen=True)
class MitigatorSpec:
    name: str
    params: tuple = ()

    def __post_init__(self):
        if self.name not in PRE_MITIGATORS + POST_MITIGATORS:
            raise ValueError(f"unknown mitigator {self.name!r}")
        object.__setattr__(self, "params", _resolve_mitigator(self.name, _freeze(self.params)))

    @property
    def kind(self) -> str:
        return "pre" if self.name in PRE_MITIGATORS else "post"

    def get(self, key):
        return dict(self.params)[key]


@dataclass(frozen=True)
class Pre:
    mitigator: MitigatorSpec
    inner: "Expr"

    def __post_init__(self):
        if self.mitigator.kind != "pre":
            raise ValueError(f"Pr expects a pre-estimator mitigator, got {self.mitigator.name}")


@dataclass(frozen=True)
class InEst:
    """Prejudice-remover estimator; ``inner`` is only set by ill-formed input."""

    params: tuple = ()
    inner: "Expr | None" = None

    def __post_init__(self):
        object.__setattr__(self, "params", _resolve_mitigator("PR", _freeze(self.params)))

    def get(self, key):
        return dict(self.params)[key]


@dataclass(frozen=True)
class Post:
    mitigator: MitigatorSpec
    inner: "Expr"

    def __post_init__(self):
        if self.mitigator.kind != "post":
            raise ValueError(f"Post expects a post-estimator mitigator, got {self.mitigator.name}")


@dataclass(frozen=True)
class Bag:
    inner: "Expr"
    n: int = 10
    bootstrap: bool = True

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"Bag size must be a positive integer, got {self.n}")


@dataclass(frozen=True)
class Boost:
    inner: "Expr"
    n: int = 50

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"Boost size must be a positive integer, got {self.n}")


@dataclass(frozen=True)
class Vote:
    members: tuple
    mode: str = "hard"

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if len(self.members) < 2:
            raise ValueError("Vote needs at least 2 members")
        if self.mode not in ("hard", "soft"):
            raise ValueError(f"Vote mode must be hard or soft, got {self.mode!r}")


@dataclass(frozen=True)
class Stack:
    members: tuple
    final: "Expr"
    passthrough: bool = False

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if len(self.members) < 2:
            raise ValueError("Stack needs at least 2 members")


Expr = Union[Learner, Pre, InEst, Post, Bag, Boost, Vote, Stack]


def children(node) -> list[tuple[str, Any]]:
    """(path step, child) pairs in a fixed order."""
    if isinstance(node, (Pre, Post, Bag, Boost)):
        return [("inner", node.inner)]
    if isinstance(node, InEst):
        return [] if node.inner is None else [("inner", node.inner)]
    if isinstance(node, Vote):
        return [(f"members[{i}]", m) for i, m in enumerate(node.members)]
    if isinstance(node, Stack):
        return [(f"members[{i}]", m) for i, m in enumerate(node.members)] + [("final", node.final)]
    return []


def walk(node, path: str = "root"):
    yield path, node
    for step, child in children(node):
        yield from walk(child, f"{path}.{step}")


def is_mitigation(node) -> bool:
    return isinstance(node, (Pre, InEst, Post))


def is_mitigated(node) -> bool:
    return any(is_mitigation(n) for _, n in walk(node))


def supports_proba(node) -> bool:
    if isinstance(node, (Learner, InEst)):
        return True
    if isinstance(node, (Pre, Bag, Boost)):
        return supports_proba(node.inner)
    if isinstance(node, Post):
        return False
    if isinstance(node, Vote):
        return node.mode == "soft"
    if isinstance(node, Stack):
        return supports_proba(node.final)
    raise TypeError(f"not a pipeline node: {node!r}")


def mitigation_kinds(node) -> set[str]:
    """Subset of {'pre', 'in', 'post'} present anywhere in the tree."""
    out = set()
    for _, n in walk(node):
        if isinstance(n, Pre):
            out.add("pre")
        elif isinstance(n, InEst):
            out.add("in")
        elif isinstance(n, Post):
            out.add("post")
    return out


# ------------------------------------------------------------ validation


def _max_points_on_path(node) -> int:
    own = 1 if is_mitigation(node) else 0
    kids = children(node)
    return own + (max(_max_points_on_path(c) for _, c in kids) if kids else 0)


def feasibility(expr) -> FeasibilityError | None:
    """First violated rule in R1..R5 order, or None when feasible."""
    nodes = list(walk(expr))
    for path, n in nodes:
        if isinstance(n, InEst) and n.inner is not None:
            return FeasibilityError("R1", "an in-estimator mitigator cannot wrap another estimator", path)
    for path, n in nodes:
        if isinstance(n, Vote) and n.mode == "soft":
            for i, m in enumerate(n.members):
                if not supports_proba(m):
                    return FeasibilityError(
                        "R2", "soft voting needs probabilities but this member has none",
                        f"{path}.members[{i}]")
    for path, n in nodes:
        if isinstance(n, Stack) and not n.passthrough and is_mitigated(n.final):
            return FeasibilityError(
                "R3", "the final estimator cannot be mitigated without passthrough features",
                f"{path}.final")
    for path, n in nodes:
        if isinstance(n, Stack) and is_mitigated(n.final) and any(map(is_mitigated, n.members)):
            return FeasibilityError("R4", "mitigate the members or the final estimator, not both", path)
    for path, n in nodes:
        if is_mitigation(n) and _max_points_on_path(n) > 1:
            return FeasibilityError("R5", "more than one mitigation point on a path", path)
    return None


def validate(expr):
    """Raise :class:`FeasibilityError` unless ``expr`` is feasible; return it otherwise."""
    err = feasibility(expr)
    if err is not None:
        raise err
    return expr


# ------------------------------------------------------------- tokenizer

_TOKEN = re.compile(
    r"(?P<ws>\s+)|(?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<punct>[()\[\],=])"
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    offset: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    byte_at = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise PipelineSyntaxError(f"unexpected character {text[pos]!r}", byte_at)
        if m.lastgroup != "ws":
            toks.append(_Tok(m.lastgroup, m.group(), byte_at))
        byte_at += len(m.group().encode("utf-8"))
        pos = m.end()
    toks.append(_Tok("end", "", byte_at))
    return toks


# raw parse tree before name resolution
@dataclass
class _Call:
    name: str
    offset: int
    args: list = field(default_factory=list)
    kwargs: dict = field(default_factory=dict)
    called: bool = False


@dataclass
class _List:
    items: list
    offset: int


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self, kind: str, text: str | None = None) -> _Tok:
        t = self.peek()
        if t.kind != kind or (text is not None and t.text != text):
            want = repr(text) if text else kind
            got = "end of input" if t.kind == "end" else repr(t.text)
            raise PipelineSyntaxError(f"expected {want}, got {got}", t.offset)
        self.i += 1
        return t

    def value(self):
        t = self.peek()
        if t.kind == "num":
            self.i += 1
            return float(t.text) if any(c in t.text for c in ".eE") else int(t.text)
        if t.kind == "punct" and t.text == "[":
            self.i += 1
            items = []
            if not (self.peek().kind == "punct" and self.peek().text == "]"):
                items.append(self.value())
                while self.peek().text == "," and self.peek().kind == "punct":
                    self.i += 1
                    items.append(self.value())
            self.take("punct", "]")
            return _List(items, t.offset)
        if t.kind == "name":
            return self.call()
        got = "end of input" if t.kind == "end" else repr(t.text)
        raise PipelineSyntaxError(f"expected a value, got {got}", t.offset)

    def call(self) -> _Call:
        t = self.take("name")
        node = _Call(t.text, t.offset)
        if self.peek().kind == "punct" and self.peek().text == "(":
            self.i += 1
            node.called = True
            if not (self.peek().kind == "punct" and self.peek().text == ")"):
                self.arg(node)
                while self.peek().kind == "punct" and self.peek().text == ",":
                    self.i += 1
                    self.arg(node)
            self.take("punct", ")")
        return node

    def arg(self, node: _Call):
        t = self.peek()
        nxt = self.toks[self.i + 1]
        if t.kind == "name" and nxt.kind == "punct" and nxt.text == "=":
            self.i += 2
            if t.text in node.kwargs:
                raise PipelineSyntaxError(f"duplicate argument {t.text!r}", t.offset)
            node.kwargs[t.text] = self.value()
        else:
            node.args.append(self.value())


_WORDS = {"true": True, "false": False}
_ENSEMBLES = ("Pr", "Post", "Bag", "Boost", "Vote", "Stack", "PR")


def _scalar(v, what: str, offset: int):
    if isinstance(v, _Call):
        if v.called:
            raise PipelineSyntaxError(f"{what}: expected a plain value, got a call", v.offset)
        return _WORDS.get(v.name, v.name)
    if isinstance(v, _List):
        raise PipelineSyntaxError(f"{what}: expected a plain value, got a list", v.offset)
    return v


def _bind(c: _Call, names: tuple[str, ...], required: int) -> dict:
    if len(c.args) > len(names):
        raise PipelineSyntaxError(f"{c.name} takes at most {len(names)} positional arguments", c.offset)
    bound = dict(zip(names, c.args))
    for k, v in c.kwargs.items():
        if k not in names:
            raise PipelineSyntaxError(f"{c.name}: unknown argument {k!r}", c.offset)
        if k in bound:
            raise PipelineSyntaxError(f"{c.name}: argument {k!r} given twice", c.offset)
        bound[k] = v
    missing = [n for n in names[:required] if n not in bound]
    if missing:
        raise PipelineSyntaxError(f"{c.name}: missing argument(s) {missing}", c.offset)
    return bound


def _wrap(fn, offset):
    try:
        return fn()
    except PipelineSyntaxError:
        raise
    except (ValueError, TypeError) as exc:
        raise PipelineSyntaxError(str(exc), offset) from None


def _mitigator(v, allowed: tuple[str, ...]) -> MitigatorSpec:
    if not isinstance(v, _Call):
        raise PipelineSyntaxError("expected a mitigator", getattr(v, "offset", 0))
    if v.name not in PRE_MITIGATORS + POST_MITIGATORS:
        if v.name in _ENSEMBLES or v.name in ALIASES or v.name in KINDS:
            raise PipelineSyntaxError(f"expected one of {list(allowed)}, got estimator {v.name}", v.offset)
        raise UnknownNameError(f"unknown mitigator {v.name!r}", v.offset)
    if v.name not in allowed:
        raise PipelineSyntaxError(f"expected one of {list(allowed)}, got {v.name}", v.offset)
    order = MITIGATOR_PARAMS[v.name][0]
    bound = _bind(v, order, 0)
    params = {k: _scalar(x, v.name, v.offset) for k, x in bound.items()}
    return _wrap(lambda: MitigatorSpec(v.name, params), v.offset)


def _members(v, owner: str) -> tuple:
    if not isinstance(v, _List):
        raise PipelineSyntaxError(f"{owner} expects a list of estimators", getattr(v, "offset", 0))
    return tuple(_build(x) for x in v.items)


def _build(v):
    if not isinstance(v, _Call):
        off = getattr(v, "offset", 0)
        raise PipelineSyntaxError("expected an estimator", off)
    name, off = v.name, v.offset
    if name == "Pr":
        b = _bind(v, ("mitigator", "inner"), 2)
        return _wrap(lambda: Pre(_mitigator(b["mitigator"], PRE_MITIGATORS), _build(b["inner"])), off)
    if name == "Post":
        if len(v.args) == 1 and not v.kwargs:
            return Post(MitigatorSpec("CEO"), _build(v.args[0]))
        b = _bind(v, ("mitigator", "inner"), 2)
        return Post(_mitigator(b["mitigator"], POST_MITIGATORS), _build(b["inner"]))
    if name == "Bag":
        b = _bind(v, ("inner", "n", "bootstrap"), 1)
        n = _scalar(b.get("n", 10), "Bag size", off)
        boot = _scalar(b.get("bootstrap", True), "bootstrap", off)
        return _wrap(lambda: Bag(_build(b["inner"]), n, bool(boot)), off)
    if name == "Boost":
        b = _bind(v, ("inner", "n"), 1)
        n = _scalar(b.get("n", 50), "Boost size", off)
        return _wrap(lambda: Boost(_build(b["inner"]), n), off)
    if name == "Vote":
        b = _bind(v, ("members", "mode"), 1)
        mode = _scalar(b.get("mode", "hard"), "Vote mode", off)
        return _wrap(lambda: Vote(_members(b["members"], "Vote"), mode), off)
    if name == "Stack":
        b = _bind(v, ("members", "final", "passthrough"), 2)
        pt = _scalar(b.get("passthrough", False), "passthrough", off)
        if not isinstance(pt, bool):
            raise PipelineSyntaxError("passthrough must be true or false", off)
        return _wrap(lambda: Stack(_members(b["members"], "Stack"), _build(b["final"]), pt), off)
    if name == "PR":
        inner = None
        args = list(v.args)
        if args and isinstance(args[-1], _Call) and args[-1].name not in _WORDS:
            inner = _build(args.pop())
        params = dict(zip(MITIGATOR_PARAMS["PR"][0], args))
        for k, x in v.kwargs.items():
            if k not in MITIGATOR_PARAMS["PR"][0]:
                raise PipelineSyntaxError(f"PR: unknown argument {k!r}", off)
            params[k] = x
        params = {k: _scalar(x, "PR", off) for k, x in params.items()}
        return _wrap(lambda: InEst(params, inner), off)
    if name in ALIASES or name in KINDS:
        if v.args:
            raise PipelineSyntaxError(f"{name} takes keyword arguments only", off)
        params = {k: _scalar(x, name, off) for k, x in v.kwargs.items()}
        params = {k: (None if x == "none" else x) for k, x in params.items()}
        return _wrap(lambda: Learner(name, params), off)
    if name in PRE_MITIGATORS + POST_MITIGATORS:
        raise PipelineSyntaxError(f"mitigator {name} is not an estimator; wrap it in Pr or Post", off)
    raise UnknownNameError(f"unknown name {name!r}", off)


def parse(text: str):
    """Parse pipeline text into an AST (feasibility is checked separately)."""
    if not text or not text.strip():
        raise PipelineSyntaxError("empty pipeline text", 0)
    p = _Parser(text)
    tree = p.call()
    if p.peek().kind != "end":
        t = p.peek()
        raise PipelineSyntaxError(f"unexpected trailing input {t.text!r}", t.offset)
    return _build(tree)


# -------------------------------------------------------- canonical text


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _mitigator_text(m: MitigatorSpec) -> str:
    return _params_text(m.name, m.params)


def _params_text(name: str, params: tuple) -> str:
    order, defaults, shown = MITIGATOR_PARAMS[name]
    d = dict(params)
    if name == "DIR":
        return f"DIR({_fmt(d['level'])})"
    parts = [f"{k}={_fmt(d[k])}" for k in order if k in shown or d[k] != defaults[k]]
    return f"{name}({', '.join(parts)})" if parts else name


def to_text(node) -> str:
    """Canonical text; ``parse(to_text(e)) == e`` for every well-formed AST."""
    if isinstance(node, Learner):
        short = SHORT_NAMES.get(node.kind, node.kind)
        if not node.params:
            return short
        return f"{short}({', '.join(f'{k}={_fmt(v)}' for k, v in node.params)})"
    if isinstance(node, Pre):
        return f"Pr({_mitigator_text(node.mitigator)}, {to_text(node.inner)})"
    if isinstance(node, InEst):
        body = _params_text("PR", node.params)
        if node.inner is None:
            return body
        args = body[3:-1] if body.endswith(")") else ""
        return f"PR({to_text(node.inner)}{', ' + args if args else ''})"
    if isinstance(node, Post):
        return f"Post({_mitigator_text(node.mitigator)}, {to_text(node.inner)})"
    if isinstance(node, Bag):
        extra = "" if node.bootstrap else ", bootstrap=false"
        return f"Bag({to_text(node.inner)}, {int(node.n)}{extra})"
    if isinstance(node, Boost):
        return f"Boost({to_text(node.inner)}, {int(node.n)})"
    if isinstance(node, Vote):
        return f"Vote([{', '.join(map(to_text, node.members))}], {node.mode})"
    if isinstance(node, Stack):
        return (f"Stack([{', '.join(map(to_text, node.members))}], {to_text(node.final)}, "
                f"passthrough={_fmt(node.passthrough)})")
    raise TypeError(f"not a pipeline node: {node!r}")


def canonical(text: str) -> str:
    return to_text(parse(text))


def mitigator_text(node) -> str:
    """Text of the mitigator at a node, as used in grid templates."""
    if isinstance(node, (Pre, Post)):
        return _mitigator_text(node.mitigator)
    if isinstance(node, InEst):
        return _params_text("PR", node.params)
    raise TypeError("not a mitigation node")
