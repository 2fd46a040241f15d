"""Interval bounds on program outputs and Lipschitz certificates over an observation box.

Lipschitz bounds hold at a fixed accumulator state, i.e. for the per-step
feedback map ``s -> u(s)``; the closed loop is not analysed. Guards (``if``
nodes and tree splits) that the box straddles yield discontinuity
certificates instead of a cross-guard bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dsl import (Affine, AffineLeaf, Clip, Const, Feature, If, Leaf, Pid, Program, Split, Sum, Tree,
                  pretty_print)
from .errors import ConfigError, ContractError, VerificationError


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __add__(self, other: "Interval") -> "Interval":
        return Interval(self.lo + other.lo, self.hi + other.hi)

    def __sub__(self, other: "Interval") -> "Interval":
        return Interval(self.lo - other.hi, self.hi - other.lo)

    def scale(self, c: float) -> "Interval":
        a, b = c * self.lo, c * self.hi
        return Interval(min(a, b), max(a, b))

    def hull(self, other: "Interval") -> "Interval":
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def clip(self, lo: float, hi: float) -> "Interval":
        return Interval(min(max(self.lo, lo), hi), min(max(self.hi, lo), hi))

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= x <= self.hi + tol

    @property
    def magnitude(self) -> float:
        return max(abs(self.lo), abs(self.hi))


ZERO = Interval(0.0, 0.0)


@dataclass(frozen=True)
class ObsBox:
    """Observation bounds plus bounds on PID memory.

    ``error_change`` bounds ``|e - e_prev|`` per step (default: the width of the
    error range implied by the box); ``integral`` bounds the accumulated
    integral ``|I|`` that enters the output (default: unbounded).
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    error_change: Optional[float] = None
    integral: Optional[float] = None

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ContractError("box bounds differ in length")
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ContractError("box needs lo <= hi in every dimension")
        for name in ("error_change", "integral"):
            v = getattr(self, name)
            if v is not None and not v >= 0:
                raise ContractError(f"{name} bound must be >= 0")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def feature(self, i: int) -> Interval:
        if i >= self.dim:
            raise ContractError(f"feature {i} outside the {self.dim}-dimensional box")
        return Interval(self.lo[i], self.hi[i])

    def narrowed(self, i: int, lo: Optional[float] = None, hi: Optional[float] = None) -> "ObsBox":
        los, his = list(self.lo), list(self.hi)
        if lo is not None:
            los[i] = max(los[i], lo)
        if hi is not None:
            his[i] = min(his[i], hi)
        return ObsBox(tuple(los), tuple(his), self.error_change, self.integral)


def load_box(path) -> tuple[ObsBox, Optional[float]]:
    """Read a box file: one ``lo hi`` line per feature, optional ``integral B``,
    ``delta B`` and ``dt X`` lines; ``#`` comments. Returns the box and dt (if given)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    lo, hi, extra = [], [], {}
    for n, line in enumerate(text.splitlines(), start=1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        try:
            if parts[0] in ("integral", "delta", "dt") and len(parts) == 2:
                extra[parts[0]] = float(parts[1])
            elif len(parts) == 2:
                lo.append(float(parts[0]))
                hi.append(float(parts[1]))
            else:
                raise ValueError(f"cannot read {line.strip()!r}")
        except ValueError as exc:
            raise ConfigError(f"{path}:{n}: {exc}") from exc
    if not lo:
        raise ConfigError(f"{path}: no feature bounds")
    try:
        box = ObsBox(tuple(lo), tuple(hi), extra.get("delta"), extra.get("integral"))
    except ContractError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return box, extra.get("dt")


class _Ctx:
    def __init__(self, root: ObsBox, dt: float):
        self.root = root
        self.dt = dt

    def error_change(self, i: int) -> float:
        if self.root.error_change is not None:
            return self.root.error_change
        f = self.root.feature(i)
        return f.hi - f.lo

    def integral(self) -> Interval:
        if self.root.integral is None:
            return Interval(-math.inf, math.inf)
        return Interval(-self.root.integral, self.root.integral)


def _range(node, box: ObsBox, ctx: _Ctx) -> Interval:
    if isinstance(node, Const):
        return Interval(node.value, node.value)
    if isinstance(node, Feature):
        return box.feature(node.index)
    if isinstance(node, (Affine, AffineLeaf)):
        return _affine_range(node.weights, node.bias, box)
    if isinstance(node, Pid):
        x = box.feature(node.feature)
        e = Interval(node.setpoint - x.hi, node.setpoint - x.lo)
        out = e.scale(node.kp)
        if node.ki != 0.0:
            if ctx.root.integral is None:
                raise VerificationError(f"unbounded term: pid on feature {node.feature} has ki={node.ki} "
                                        "and no integral bound was given")
            out = out + ctx.integral().scale(node.ki)
        if node.kd != 0.0:
            dmax = ctx.error_change(node.feature) / ctx.dt
            out = out + Interval(-dmax, dmax).scale(node.kd)
        return out
    if isinstance(node, Clip):
        return _range(node.child, box, ctx).clip(node.lo, node.hi)
    if isinstance(node, Sum):
        total = ZERO
        for t in node.terms:
            total = total + _range(t, box, ctx)
        return total
    if isinstance(node, (If, Split)):
        a, b = (node.then, node.orelse) if isinstance(node, If) else (node.left, node.right)
        x = box.feature(node.feature)
        if x.hi < node.threshold:
            return _range(a, box, ctx)
        if x.lo >= node.threshold:
            return _range(b, box, ctx)
        return _range(a, box.narrowed(node.feature, hi=node.threshold), ctx).hull(
            _range(b, box.narrowed(node.feature, lo=node.threshold), ctx))
    if isinstance(node, Tree):
        return _range(node.root, box, ctx)
    if isinstance(node, Leaf):
        return Interval(node.value, node.value)
    raise ContractError(f"not a program node: {node!r}")


def _affine_range(weights, bias, box: ObsBox) -> Interval:
    if len(weights) != box.dim:
        raise ContractError(f"affine has {len(weights)} weights, box has {box.dim} features")
    total = Interval(bias, bias)
    for i, w in enumerate(weights):
        total = total + box.feature(i).scale(w)
    return total


def output_range(prog: Program, box: ObsBox, dt: float) -> list[Interval]:
    """Sound interval enclosure of each output over the box and accumulator bounds."""
    if dt <= 0:
        raise ContractError("dt must be positive")
    ctx = _Ctx(box, dt)
    return [_range(o, box, ctx) for o in prog.outputs]


@dataclass(frozen=True)
class Discontinuity:
    feature: int
    threshold: float
    jump: float


def _grad(node, box: ObsBox, ctx: _Ctx, certs: list) -> np.ndarray:
    """Per-feature bound on |du/ds_j| within each guard piece."""
    g = np.zeros(box.dim)
    if isinstance(node, (Const, Leaf)):
        return g
    if isinstance(node, Feature):
        g[node.index] = 1.0
        return g
    if isinstance(node, (Affine, AffineLeaf)):
        return np.abs(np.asarray(node.weights, dtype=float))
    if isinstance(node, Pid):
        # e = sp - s_i enters through kp*e, ki*(I + e*dt) and kd*(e - e_prev)/dt
        g[node.feature] = abs(node.kp + node.ki * ctx.dt + node.kd / ctx.dt)
        return g
    if isinstance(node, Clip):
        return _grad(node.child, box, ctx, certs)
    if isinstance(node, Sum):
        for t in node.terms:
            g = g + _grad(t, box, ctx, certs)
        return g
    if isinstance(node, Tree):
        return _grad(node.root, box, ctx, certs)
    if isinstance(node, (If, Split)):
        a, b = (node.then, node.orelse) if isinstance(node, If) else (node.left, node.right)
        x = box.feature(node.feature)
        if x.hi < node.threshold:
            return _grad(a, box, ctx, certs)
        if x.lo >= node.threshold:
            return _grad(b, box, ctx, certs)
        on_guard = box.narrowed(node.feature, lo=node.threshold, hi=node.threshold)
        try:
            jump = (_range(a, on_guard, ctx) - _range(b, on_guard, ctx)).magnitude
        except VerificationError:
            jump = math.inf
        certs.append(Discontinuity(node.feature, node.threshold, jump))
        return np.maximum(_grad(a, box.narrowed(node.feature, hi=node.threshold), ctx, certs),
                          _grad(b, box.narrowed(node.feature, lo=node.threshold), ctx, certs))
    raise ContractError(f"not a program node: {node!r}")


def lipschitz_bound(prog: Program, box: ObsBox, dt: float) -> list[tuple[float, list[Discontinuity]]]:
    """Per output: Euclidean Lipschitz bound at fixed accumulator state, and guard certificates.

    For guard-free programs the bound is global over the box; otherwise it
    holds between observations on the same side of every certified guard.
    """
    if dt <= 0:
        raise ContractError("dt must be positive")
    ctx = _Ctx(box, dt)
    out = []
    for o in prog.outputs:
        certs: list[Discontinuity] = []
        g = _grad(o, box, ctx, certs)
        out.append((float(np.linalg.norm(g)), certs))
    return out


@dataclass
class VerifyReport:
    program: Program
    box: ObsBox
    dt: float
    intervals: list[Interval]
    lipschitz: list[float]
    discontinuities: list[list[Discontinuity]] = field(default_factory=list)

    def render_text(self) -> str:
        lines = ["# Lipschitz bounds are for the per-step map at fixed accumulator state; "
                 "closed-loop behaviour is not analysed.",
                 f"program: {pretty_print(self.program)}",
                 f"box: lo={list(self.box.lo)} hi={list(self.box.hi)} "
                 f"error_change={self.box.error_change} integral={self.box.integral} dt={self.dt}"]
        for j, (iv, L, certs) in enumerate(zip(self.intervals, self.lipschitz, self.discontinuities)):
            lines.append(f"act_{j}: interval [{iv.lo!r}, {iv.hi!r}]  L={L!r}  discontinuities={len(certs)}")
            for c in certs:
                lines.append(f"  guard obs_{c.feature} < {c.threshold!r}: jump <= {c.jump!r}")
        return "\n".join(lines) + "\n"

    def csv_rows(self) -> list[list]:
        return [[j, repr(iv.lo), repr(iv.hi), repr(L), len(c)]
                for j, (iv, L, c) in enumerate(zip(self.intervals, self.lipschitz, self.discontinuities))]

    def to_csv(self) -> str:
        body = "".join(",".join(map(str, r)) + "\n" for r in self.csv_rows())
        return "# schema=1\naction,lo,hi,lipschitz,n_discontinuities\n" + body


def verify(prog: Program, box: ObsBox, dt: float) -> VerifyReport:
    intervals = output_range(prog, box, dt)
    lip = lipschitz_bound(prog, box, dt)
    return VerifyReport(prog, box, dt, intervals, [L for L, _ in lip], [c for _, c in lip])
