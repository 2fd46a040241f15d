"""Programmatic policy language: PID/affine/conditional expressions and regression trees.

Programs are immutable ASTs with an S-expression concrete syntax::

    program := expr | "(program" expr+ ")"
    expr    := "(const" NUM ")"
             | "(feature" INT ")"
             | "(affine" "(" NUM* ")" NUM ")"
             | "(pid" INT NUM NUM NUM NUM ")"      ; feature setpoint kp ki kd
             | "(clip" expr NUM NUM ")"
             | "(if" INT NUM expr expr ")"          ; then-branch when obs[i] < thr
             | "(+" expr expr+ ")"
             | "(tree" tnode ")"
    tnode   := "(leaf" NUM ")"
             | "(leaf-affine" "(" NUM* ")" NUM ")"
             | "(split" INT NUM tnode tnode ")"     ; left when obs[i] < thr

``#`` starts a comment running to the end of the line.

PID nodes carry state outside the AST (:class:`ProgState`), one slot per
``pid`` node in pre-order, so evaluation stays pure and rollouts replayable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

import numpy as np

from .errors import ConfigError, ContractError


class ParseError(ConfigError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {message}")
        self.message = message
        self.line = line
        self.col = col


# --------------------------------------------------------------------------- AST


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Feature:
    index: int


@dataclass(frozen=True)
class Affine:
    weights: tuple[float, ...]
    bias: float


@dataclass(frozen=True)
class Pid:
    feature: int
    setpoint: float
    kp: float
    ki: float
    kd: float


@dataclass(frozen=True)
class Clip:
    child: "Expr"
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ContractError(f"clip bounds must satisfy lo < hi, got {self.lo} >= {self.hi}")


@dataclass(frozen=True)
class If:
    feature: int
    threshold: float
    then: "Expr"
    orelse: "Expr"


@dataclass(frozen=True)
class Sum:
    terms: tuple["Expr", ...]


@dataclass(frozen=True)
class Leaf:
    value: float


@dataclass(frozen=True)
class AffineLeaf:
    weights: tuple[float, ...]
    bias: float


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"


@dataclass(frozen=True)
class Tree:
    root: "TreeNode"


TreeNode = Union[Leaf, AffineLeaf, Split]
Expr = Union[Const, Feature, Affine, Pid, Clip, If, Sum, Tree]


@dataclass(frozen=True)
class Program:
    """One expression per action dimension."""

    outputs: tuple[Expr, ...]

    def __post_init__(self):
        if not self.outputs:
            raise ContractError("program needs at least one output expression")

    @property
    def act_dim(self) -> int:
        return len(self.outputs)

    @property
    def n_pid(self) -> int:
        return len(pid_nodes(self))


NODE_NAMES = frozenset({"const", "feature", "affine", "pid", "clip", "if", "+", "tree"})


@dataclass(frozen=True)
class ClassConfig:
    """Which program class a fitter targets, and what counts as a member."""

    kind: str = "pid-dsl"
    nodes: frozenset = NODE_NAMES
    max_depth: int = 4
    features: Optional[tuple[int, ...]] = None
    affine_leaves: bool = False
    min_leaf: int = 1

    def __post_init__(self):
        if self.kind not in ("pid-dsl", "tree"):
            raise ContractError(f"unknown class kind {self.kind!r}")
        if not self.nodes:
            raise ContractError("class needs a non-empty node set")
        if self.max_depth < 0:
            raise ContractError("max_depth must be >= 0")


# ------------------------------------------------------------------ traversal


def _children(node) -> tuple:
    if isinstance(node, Clip):
        return (node.child,)
    if isinstance(node, If):
        return (node.then, node.orelse)
    if isinstance(node, Sum):
        return node.terms
    if isinstance(node, Tree):
        return (node.root,)
    if isinstance(node, Split):
        return (node.left, node.right)
    return ()


def walk(prog: Program) -> Iterator:
    """Pre-order traversal over every node of every output."""
    stack = list(reversed(prog.outputs))
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(_children(node)))


def pid_nodes(prog: Program) -> list[Pid]:
    return [n for n in walk(prog) if isinstance(n, Pid)]


def tree_depth(node: TreeNode) -> int:
    if isinstance(node, Split):
        return 1 + max(tree_depth(node.left), tree_depth(node.right))
    return 0


def _node_name(node) -> str:
    return {Const: "const", Feature: "feature", Affine: "affine", Pid: "pid", Clip: "clip",
            If: "if", Sum: "+", Tree: "tree"}.get(type(node), "")


def validate(prog: Program, obs_dim: Optional[int] = None, cfg: Optional[ClassConfig] = None) -> Program:
    """Check AST invariants; raises :class:`ContractError` on the first violation."""
    for node in walk(prog):
        for v in _numbers(node):
            if not math.isfinite(v):
                raise ContractError(f"non-finite constant in {type(node).__name__}")
        idx = getattr(node, "feature", None)
        if isinstance(node, Feature):
            idx = node.index
        if idx is not None:
            if idx < 0 or (obs_dim is not None and idx >= obs_dim):
                raise ContractError(f"feature index {idx} out of range for obs_dim={obs_dim}")
            if cfg is not None and cfg.features is not None and idx not in cfg.features:
                raise ContractError(f"feature {idx} not in class whitelist {cfg.features}")
        if isinstance(node, (Affine, AffineLeaf)) and obs_dim is not None and len(node.weights) != obs_dim:
            raise ContractError(f"affine has {len(node.weights)} weights, expected {obs_dim}")
        if cfg is not None:
            name = _node_name(node)
            if name and name not in cfg.nodes:
                raise ContractError(f"node {name!r} not allowed in this class")
            if isinstance(node, Tree) and tree_depth(node.root) > cfg.max_depth:
                raise ContractError(f"tree depth {tree_depth(node.root)} exceeds {cfg.max_depth}")
            if isinstance(node, AffineLeaf) and not cfg.affine_leaves:
                raise ContractError("affine leaves are disabled for this class")
    if cfg is not None and cfg.kind == "tree":
        if not all(isinstance(o, Tree) for o in prog.outputs):
            raise ContractError("tree class programs must be one tree per action dimension")
    return prog


def _numbers(node) -> list[float]:
    if isinstance(node, (Const, Leaf)):
        return [node.value]
    if isinstance(node, (Affine, AffineLeaf)):
        return [*node.weights, node.bias]
    if isinstance(node, Pid):
        return [node.setpoint, node.kp, node.ki, node.kd]
    if isinstance(node, Clip):
        return [node.lo, node.hi]
    if isinstance(node, (If, Split)):
        return [node.threshold]
    return []


# ---------------------------------------------------------------------- parse


@dataclass
class _Tok:
    text: str
    line: int
    col: int


@dataclass
class _List:
    items: list
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line, col = line + 1, 1
            i += 1
        elif ch.isspace():
            i += 1
            col += 1
        elif ch == "#":
            while i < n and text[i] != "\n":
                i += 1
        elif ch in "()":
            toks.append(_Tok(ch, line, col))
            i += 1
            col += 1
        else:
            start, scol = i, col
            while i < n and not text[i].isspace() and text[i] not in "()#":
                i += 1
                col += 1
            word = text[start:i]
            if not all(c.isalnum() or c in "+-._" for c in word):
                bad = next(c for c in word if not (c.isalnum() or c in "+-._"))
                raise ParseError(f"unexpected character {bad!r}", line, scol + word.index(bad))
            toks.append(_Tok(word, line, scol))
    return toks


def _read(toks: list[_Tok], pos: int, eof: tuple[int, int]):
    if pos >= len(toks):
        raise ParseError("unexpected end of input", *eof)
    tok = toks[pos]
    if tok.text == ")":
        raise ParseError("unexpected ')'", tok.line, tok.col)
    if tok.text != "(":
        return tok, pos + 1
    items = []
    pos += 1
    while True:
        if pos >= len(toks):
            raise ParseError("unclosed '('", tok.line, tok.col)
        if toks[pos].text == ")":
            return _List(items, tok.line, tok.col), pos + 1
        item, pos = _read(toks, pos, eof)
        items.append(item)


def _where(x) -> tuple[int, int]:
    return x.line, x.col


def _num(x) -> float:
    if isinstance(x, _List):
        raise ParseError("expected a number, got a list", *_where(x))
    try:
        v = float(x.text)
    except ValueError:
        raise ParseError(f"expected a number, got {x.text!r}", *_where(x)) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite number {x.text!r}", *_where(x))
    return v


def _int(x) -> int:
    if isinstance(x, _List):
        raise ParseError("expected a feature index, got a list", *_where(x))
    if not x.text.isdigit():
        raise ParseError(f"expected a non-negative integer, got {x.text!r}", *_where(x))
    return int(x.text)


def _numlist(x) -> tuple[float, ...]:
    if not isinstance(x, _List):
        raise ParseError(f"expected a parenthesized weight list, got {x.text!r}", *_where(x))
    return tuple(_num(v) for v in x.items)


_ARITY = {"const": 1, "feature": 1, "affine": 2, "pid": 5, "clip": 3, "if": 4,
          "leaf": 1, "leaf-affine": 2, "split": 4, "tree": 1}


def _head(x: _List) -> str:
    if not x.items:
        raise ParseError("empty list", *_where(x))
    h = x.items[0]
    if isinstance(h, _List):
        raise ParseError("expected a node name", *_where(h))
    return h.text


def _check_arity(x: _List, name: str) -> list:
    args = x.items[1:]
    want = _ARITY[name]
    if len(args) != want:
        raise ParseError(f"arity error: '{name}' takes {want} argument(s), got {len(args)}", *_where(x))
    return args


def _expr(x, obs_dim: Optional[int]):
    if not isinstance(x, _List):
        raise ParseError(f"expected an expression, got {x.text!r}", *_where(x))
    name = _head(x)
    if name == "+":
        if len(x.items) < 3:
            raise ParseError("arity error: '+' takes at least 2 arguments", *_where(x))
        return Sum(tuple(_expr(a, obs_dim) for a in x.items[1:]))
    if name not in ("const", "feature", "affine", "pid", "clip", "if", "tree"):
        raise ParseError(f"unknown node {name!r}", *_where(x))
    args = _check_arity(x, name)
    if name == "const":
        return Const(_num(args[0]))
    if name == "feature":
        return Feature(_feat(args[0], obs_dim))
    if name == "affine":
        return Affine(_weights(args[0], obs_dim), _num(args[1]))
    if name == "pid":
        return Pid(_feat(args[0], obs_dim), *(_num(a) for a in args[1:]))
    if name == "clip":
        lo, hi = _num(args[1]), _num(args[2])
        if not lo < hi:
            raise ParseError(f"clip bounds must satisfy lo < hi, got {lo} {hi}", *_where(args[1]))
        return Clip(_expr(args[0], obs_dim), lo, hi)
    if name == "if":
        return If(_feat(args[0], obs_dim), _num(args[1]), _expr(args[2], obs_dim), _expr(args[3], obs_dim))
    return Tree(_tnode(args[0], obs_dim))


def _tnode(x, obs_dim):
    if not isinstance(x, _List):
        raise ParseError(f"expected a tree node, got {x.text!r}", *_where(x))
    name = _head(x)
    if name not in ("leaf", "leaf-affine", "split"):
        raise ParseError(f"unknown tree node {name!r}", *_where(x))
    args = _check_arity(x, name)
    if name == "leaf":
        return Leaf(_num(args[0]))
    if name == "leaf-affine":
        return AffineLeaf(_weights(args[0], obs_dim), _num(args[1]))
    return Split(_feat(args[0], obs_dim), _num(args[1]), _tnode(args[2], obs_dim), _tnode(args[3], obs_dim))


def _feat(x, obs_dim):
    i = _int(x)
    if obs_dim is not None and i >= obs_dim:
        raise ParseError(f"feature index {i} out of range (obs_dim={obs_dim})", *_where(x))
    return i


def _weights(x, obs_dim):
    w = _numlist(x)
    if obs_dim is not None and len(w) != obs_dim:
        raise ParseError(f"expected {obs_dim} weights, got {len(w)}", *_where(x))
    return w


def parse(text: str, obs_dim: Optional[int] = None, cfg: Optional[ClassConfig] = None) -> Program:
    """Parse program source; errors carry the line and column of the offending token."""
    toks = _tokenize(text)
    lines = text.split("\n")
    eof = (len(lines), len(lines[-1]) + 1)
    if not toks:
        raise ParseError("empty program", *eof)
    top, pos = _read(toks, 0, eof)
    if pos != len(toks):
        raise ParseError("trailing input after program", toks[pos].line, toks[pos].col)
    if isinstance(top, _List) and top.items and not isinstance(top.items[0], _List) \
            and top.items[0].text == "program":
        if len(top.items) < 2:
            raise ParseError("arity error: 'program' takes at least 1 expression", *_where(top))
        prog = Program(tuple(_expr(e, obs_dim) for e in top.items[1:]))
    else:
        prog = Program((_expr(top, obs_dim),))
    try:
        validate(prog, obs_dim, cfg)
    except ContractError as exc:
        raise ParseError(str(exc), 1, 1) from None
    return prog


def load_program(path, obs_dim: Optional[int] = None, cfg: Optional[ClassConfig] = None) -> Program:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read(), obs_dim, cfg)


# --------------------------------------------------------------- pretty print


def _f(v: float) -> str:
    return repr(float(v))


def _pp(node) -> str:
    if isinstance(node, Const):
        return f"(const {_f(node.value)})"
    if isinstance(node, Feature):
        return f"(feature {node.index})"
    if isinstance(node, Affine):
        return f"(affine ({' '.join(map(_f, node.weights))}) {_f(node.bias)})"
    if isinstance(node, Pid):
        return f"(pid {node.feature} {_f(node.setpoint)} {_f(node.kp)} {_f(node.ki)} {_f(node.kd)})"
    if isinstance(node, Clip):
        return f"(clip {_pp(node.child)} {_f(node.lo)} {_f(node.hi)})"
    if isinstance(node, If):
        return f"(if {node.feature} {_f(node.threshold)} {_pp(node.then)} {_pp(node.orelse)})"
    if isinstance(node, Sum):
        return f"(+ {' '.join(_pp(t) for t in node.terms)})"
    if isinstance(node, Tree):
        return f"(tree {_pp(node.root)})"
    if isinstance(node, Leaf):
        return f"(leaf {_f(node.value)})"
    if isinstance(node, AffineLeaf):
        return f"(leaf-affine ({' '.join(map(_f, node.weights))}) {_f(node.bias)})"
    if isinstance(node, Split):
        return f"(split {node.feature} {_f(node.threshold)} {_pp(node.left)} {_pp(node.right)})"
    raise ContractError(f"not a program node: {node!r}")


def pretty_print(prog: Program) -> str:
    if prog.act_dim == 1:
        return _pp(prog.outputs[0])
    return "(program " + " ".join(_pp(o) for o in prog.outputs) + ")"


# ----------------------------------------------------------------- evaluation


@dataclass(frozen=True)
class ProgState:
    """Per-PID-slot integral and previous error; ``started`` is False before the first step."""

    integral: tuple[float, ...]
    prev_error: tuple[float, ...]
    started: bool = False

    @classmethod
    def initial(cls, prog: Program) -> "ProgState":
        n = prog.n_pid
        return cls((0.0,) * n, (0.0,) * n, False)


def step_context(prog: Program, state: ProgState, obs, dt: float) -> tuple[np.ndarray, ProgState]:
    """Advance every PID slot once.

    Returns an ``(n_pid, 3)`` array of ``(error, integral', derivative)`` and the
    successor state. The first step uses ``e_prev := e`` so the derivative is 0.
    """
    obs = np.asarray(obs, dtype=float)
    pids = pid_nodes(prog)
    if len(state.integral) != len(pids):
        raise ContractError(f"state has {len(state.integral)} PID slots, program has {len(pids)}")
    ctx = np.empty((len(pids), 3))
    for k, p in enumerate(pids):
        e = p.setpoint - obs[p.feature]
        integ = state.integral[k] + e * dt
        prev = state.prev_error[k] if state.started else e
        ctx[k] = (e, integ, (e - prev) / dt)
    return ctx, ProgState(tuple(ctx[:, 1].tolist()), tuple(ctx[:, 0].tolist()), True)


def eval_step(prog: Program, state: ProgState, obs, dt: float) -> tuple[np.ndarray, ProgState]:
    """Evaluate one control step; returns the raw (unclipped) action and the new state."""
    if dt <= 0:
        raise ContractError("dt must be positive")
    obs = np.asarray(obs, dtype=float)
    if obs.ndim != 1:
        raise ContractError("eval_step takes a single observation vector")
    if np.isnan(obs).any():
        raise ContractError("NaN in observation")
    ctx, new_state = step_context(prog, state, obs, dt)
    out = eval_batch(prog, obs[None, :], ctx[None, :, :])[0]
    return out, new_state


def eval_batch(prog: Program, X, ctx=None) -> np.ndarray:
    """Evaluate on rows of observations with precomputed PID contexts.

    ``X`` is ``(n, obs_dim)``; ``ctx`` is ``(n, n_pid, 3)`` as produced by
    :func:`step_context`. Returns ``(n, act_dim)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if ctx is None:
        ctx = np.zeros((n, 0, 3))
    ctx = np.asarray(ctx, dtype=float)
    slots = iter(range(ctx.shape[1]))
    cols = [_eval(o, X, ctx, slots) for o in prog.outputs]
    if next(slots, None) is not None:
        raise ContractError("context has more PID slots than the program")
    return np.stack(cols, axis=1)


def _eval(node, X, ctx, slots):
    n = X.shape[0]
    if isinstance(node, Const):
        return np.full(n, node.value)
    if isinstance(node, Feature):
        _check_feature(node.index, X)
        return X[:, node.index].copy()
    if isinstance(node, Affine):
        return _affine(node.weights, node.bias, X)
    if isinstance(node, Pid):
        k = next(slots, None)
        if k is None:
            raise ContractError("context has fewer PID slots than the program")
        c = ctx[:, k, :]
        return node.kp * c[:, 0] + node.ki * c[:, 1] + node.kd * c[:, 2]
    if isinstance(node, Clip):
        return np.clip(_eval(node.child, X, ctx, slots), node.lo, node.hi)
    if isinstance(node, If):
        _check_feature(node.feature, X)
        # both branches run so every PID slot advances each step
        a = _eval(node.then, X, ctx, slots)
        b = _eval(node.orelse, X, ctx, slots)
        return np.where(X[:, node.feature] < node.threshold, a, b)
    if isinstance(node, Sum):
        total = _eval(node.terms[0], X, ctx, slots)
        for t in node.terms[1:]:
            total = total + _eval(t, X, ctx, slots)
        return total
    if isinstance(node, Tree):
        return _eval_tree(node.root, X)
    raise ContractError(f"not an expression node: {node!r}")


def _check_feature(i, X):
    if i >= X.shape[1]:
        raise ContractError(f"feature index {i} out of range for obs_dim={X.shape[1]}")


def _affine(weights, bias, X):
    if len(weights) != X.shape[1]:
        raise ContractError(f"affine has {len(weights)} weights, observation has {X.shape[1]}")
    out = np.full(X.shape[0], float(bias))
    for j, w in enumerate(weights):
        out = out + w * X[:, j]
    return out


def _eval_tree(node, X):
    if isinstance(node, Leaf):
        return np.full(X.shape[0], node.value)
    if isinstance(node, AffineLeaf):
        return _affine(node.weights, node.bias, X)
    _check_feature(node.feature, X)
    go_left = X[:, node.feature] < node.threshold
    out = np.empty(X.shape[0])
    if go_left.any():
        out[go_left] = _eval_tree(node.left, X[go_left])
    if (~go_left).any():
        out[~go_left] = _eval_tree(node.right, X[~go_left])
    return out


# ------------------------------------------------------------------ CART fit


@dataclass
class TreeFit:
    program: Program
    sse: float
    per_dim_sse: list[float] = field(default_factory=list)


def fit_tree(X, Y, cfg: ClassConfig) -> TreeFit:
    """Greedy CART: axis-aligned splits minimizing squared error, one tree per action dim."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] == 0:
        raise ContractError("cannot fit a tree to an empty dataset")
    if X.shape[0] != Y.shape[0]:
        raise ContractError("observation and action row counts differ")
    feats = list(cfg.features) if cfg.features is not None else list(range(X.shape[1]))
    outputs, sses = [], []
    for j in range(Y.shape[1]):
        root, sse = _grow(X, Y[:, j], feats, cfg, depth=0)
        outputs.append(Tree(root))
        sses.append(sse)
    return TreeFit(Program(tuple(outputs)), float(sum(sses)), sses)


def _leaf(X, y, cfg):
    if cfg.affine_leaves:
        A = np.hstack([X, np.ones((len(y), 1))])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        r = y - A @ coef
        return AffineLeaf(tuple(coef[:-1].tolist()), float(coef[-1])), float(r @ r)
    m = float(y[0]) if np.all(y == y[0]) else float(y.mean())
    r = y - m
    return Leaf(m), float(r @ r)


def _best_split(X, y, feats, min_leaf):
    n = len(y)
    best = None
    total = y.sum()
    for f in feats:
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        csum = np.cumsum(ys)[:-1]
        csq = np.cumsum(ys * ys)[:-1]
        nl = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not valid.any():
            continue
        # SSE = sum(y^2) - (sum_l^2/n_l) - (sum_r^2/n_r); sum(y^2) is constant
        score = -(csum ** 2) / nl - ((total - csum) ** 2) / (n - nl)
        score = np.where(valid, score, np.inf)
        k = int(np.argmin(score))
        if best is None or score[k] < best[0]:
            best = (score[k], f, 0.5 * (xs[k] + xs[k + 1]))
    return best


def _grow(X, y, feats, cfg, depth):
    leaf, leaf_sse = _leaf(X, y, cfg)
    if depth >= cfg.max_depth or len(y) < 2 or leaf_sse <= 0.0 or np.all(y == y[0]):
        return leaf, leaf_sse
    best = _best_split(X, y, feats, cfg.min_leaf)
    if best is None:
        return leaf, leaf_sse
    _, f, thr = best
    left = X[:, f] < thr
    lnode, lsse = _grow(X[left], y[left], feats, cfg, depth + 1)
    rnode, rsse = _grow(X[~left], y[~left], feats, cfg, depth + 1)
    if lsse + rsse > leaf_sse:
        return leaf, leaf_sse
    return Split(f, float(thr), lnode, rnode), lsse + rsse


# ------------------------------------------------------------- random programs


def random_expr(rng: np.random.Generator, obs_dim: int, depth: int = 3, allow_if: bool = True,
                allow_tree: bool = True, scale: float = 2.0) -> Expr:
    """Random expression for property tests and verifier probes."""
    def num():
        return float(np.round(rng.uniform(-scale, scale), int(rng.integers(0, 6))))

    kinds = ["const", "feature", "affine", "pid"]
    if depth > 0:
        kinds += ["clip", "+", "+"] + (["if"] if allow_if else []) + (["tree"] if allow_tree else [])
    kind = kinds[int(rng.integers(len(kinds)))]
    if kind == "const":
        return Const(num())
    if kind == "feature":
        return Feature(int(rng.integers(obs_dim)))
    if kind == "affine":
        return Affine(tuple(num() for _ in range(obs_dim)), num())
    if kind == "pid":
        return Pid(int(rng.integers(obs_dim)), num(), num(), num(), num())
    sub = lambda: random_expr(rng, obs_dim, depth - 1, allow_if, allow_tree, scale)  # noqa: E731
    if kind == "clip":
        lo = num()
        return Clip(sub(), lo, lo + abs(num()) + 0.5)
    if kind == "+":
        return Sum(tuple(sub() for _ in range(int(rng.integers(2, 4)))))
    if kind == "if":
        return If(int(rng.integers(obs_dim)), num(), sub(), sub())
    return Tree(_random_tnode(rng, obs_dim, min(depth, 3), num))


def _random_tnode(rng, obs_dim, depth, num):
    if depth == 0 or rng.random() < 0.3:
        if rng.random() < 0.3:
            return AffineLeaf(tuple(num() for _ in range(obs_dim)), num())
        return Leaf(num())
    return Split(int(rng.integers(obs_dim)), num(), _random_tnode(rng, obs_dim, depth - 1, num),
                 _random_tnode(rng, obs_dim, depth - 1, num))


def random_program(rng: np.random.Generator, obs_dim: int, act_dim: int = 1, **kw) -> Program:
    return Program(tuple(random_expr(rng, obs_dim, **kw) for _ in range(act_dim)))

