"""Projected gradient descent with injected errors on box-constrained quadratics.

The iteration is::

    x_{t+1} = clip(P_eps(clip(x_t - eta_t (grad J(x_t) + b + xi_t))))

with a fixed bias ``b`` of norm ``bias``, Gaussian gradient noise ``xi_t`` of
per-coordinate std ``noise``, and ``P_eps`` a random perturbation of norm
``proj_error`` applied after the exact projection (then clipped back into the
box). Repeats run vectorized, each drawing from its own child seed.
"""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError

_CHUNK = 4096


@dataclass(frozen=True)
class MdConfig:
    dim: int = 2
    iterations: int = 10000
    step: str = "constant"          # "constant" | "sqrt" (eta_t = step_c / sqrt(t))
    step_c: float = 0.5
    box_lo: float = -1.0
    box_hi: float = 1.0
    target: tuple[float, ...] = (0.5, -0.3)
    scale: Optional[tuple[tuple[float, ...], ...]] = None   # PSD matrix; None = identity
    bias: float = 0.0
    noise: float = 0.0
    proj_error: float = 0.0
    x0: Optional[tuple[float, ...]] = None
    seed: int = 0
    repeats: int = 32

    def __post_init__(self):
        if self.dim < 1 or self.iterations < 1 or self.repeats < 1:
            raise ConfigError("dim, iterations and repeats must be >= 1")
        if self.step not in ("constant", "sqrt"):
            raise ConfigError(f"unknown step schedule {self.step!r}")
        if not self.step_c > 0:
            raise ConfigError("step_c must be positive")
        if not self.box_lo <= self.box_hi:
            raise ConfigError("empty box")
        if min(self.bias, self.noise, self.proj_error) < 0:
            raise ConfigError("bias, noise and proj_error must be >= 0")
        if len(self.target) != self.dim:
            raise ConfigError(f"target has {len(self.target)} entries, dim is {self.dim}")
        if self.x0 is not None and len(self.x0) != self.dim:
            raise ConfigError(f"x0 has {len(self.x0)} entries, dim is {self.dim}")
        A = self.matrix()
        if A.shape != (self.dim, self.dim) or not np.allclose(A, A.T):
            raise ConfigError("scale must be a symmetric dim x dim matrix")
        if np.linalg.eigvalsh(A).min() < -1e-12:
            raise ConfigError("scale must be positive semidefinite")

    def matrix(self) -> np.ndarray:
        return np.eye(self.dim) if self.scale is None else np.asarray(self.scale, dtype=float)

    def start(self) -> np.ndarray:
        if self.x0 is None:
            return np.full(self.dim, 0.5 * (self.box_lo + self.box_hi))
        return np.clip(np.asarray(self.x0, dtype=float), self.box_lo, self.box_hi)

    def loss(self, x: np.ndarray) -> np.ndarray:
        """J(x) = 0.5 (x - x*)^T A (x - x*), over the last axis."""
        r = x - np.asarray(self.target)
        return 0.5 * np.einsum("...i,ij,...j->...", r, self.matrix(), r)


def oracle_optimum(cfg: MdConfig, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Constrained minimizer: coordinatewise clipping for identity scale, else exact PGD at step 1/L."""
    target = np.asarray(cfg.target, dtype=float)
    if cfg.scale is None:
        return np.clip(target, cfg.box_lo, cfg.box_hi)
    A = cfg.matrix()
    L = float(np.linalg.eigvalsh(A).max())
    x = np.clip(target, cfg.box_lo, cfg.box_hi)
    if L == 0:
        return x
    for _ in range(max_iter):
        nxt = np.clip(x - (A @ (x - target)) / L, cfg.box_lo, cfg.box_hi)
        if np.max(np.abs(nxt - x)) <= tol:
            return nxt
        x = nxt
    return x


@dataclass
class RegretTrace:
    """Per-repeat loss and running average regret, shape ``(repeats, T)``."""

    loss: np.ndarray
    avg_regret: np.ndarray
    dist: np.ndarray
    optimum: np.ndarray
    optimal_loss: float
    box_violation: float = 0.0
    config: Optional[MdConfig] = field(default=None, repr=False)

    @property
    def T(self) -> int:
        return self.loss.shape[1]

    @staticmethod
    def _se(a):
        n = a.shape[0]
        return a.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(a.shape[1])

    @property
    def loss_mean(self):
        return self.loss.mean(axis=0)

    @property
    def loss_se(self):
        return self._se(self.loss)

    @property
    def regret_mean(self):
        return self.avg_regret.mean(axis=0)

    @property
    def regret_se(self):
        return self._se(self.avg_regret)

    def final_regret(self) -> tuple[float, float]:
        return float(self.regret_mean[-1]), float(self.regret_se[-1])

    def final_gap(self) -> float:
        return float(self.loss_mean[-1] - self.optimal_loss)

    def to_csv(self, every: int = 1) -> str:
        buf = io.StringIO()
        buf.write("# schema=1\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "loss_mean", "loss_se", "avg_regret_mean", "avg_regret_se"])
        lm, ls, rm, rs = self.loss_mean, self.loss_se, self.regret_mean, self.regret_se
        idx = sorted(set(range(every - 1, self.T, every)) | {self.T - 1})
        for i in idx:
            w.writerow([i + 1, repr(float(lm[i])), repr(float(ls[i])), repr(float(rm[i])), repr(float(rs[i]))])
        return buf.getvalue()


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(n > 0, v / np.where(n > 0, n, 1.0), 0.0)


def run_approx_pgd(cfg: MdConfig) -> RegretTrace:
    R, T, d = cfg.repeats, cfg.iterations, cfg.dim
    A = cfg.matrix()
    target = np.asarray(cfg.target, dtype=float)
    lo, hi = cfg.box_lo, cfg.box_hi
    xopt = oracle_optimum(cfg)
    jopt = float(cfg.loss(xopt))
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(R)]
    bias = cfg.bias * _unit(np.stack([g.standard_normal(d) for g in rngs]))
    x = np.tile(cfg.start(), (R, 1))
    loss = np.empty((R, T))
    dist = np.empty((R, T))
    violation = 0.0
    for c0 in range(0, T, _CHUNK):
        n = min(_CHUNK, T - c0)
        xi = cfg.noise * np.stack([g.standard_normal((n, d)) for g in rngs], axis=1)
        kick = cfg.proj_error * _unit(np.stack([g.standard_normal((n, d)) for g in rngs], axis=1))
        for k in range(n):
            t = c0 + k
            r = x - target
            loss[:, t] = 0.5 * np.einsum("ri,ij,rj->r", r, A, r)
            dist[:, t] = np.linalg.norm(x - xopt, axis=1)
            eta = cfg.step_c if cfg.step == "constant" else cfg.step_c / np.sqrt(t + 1)
            g = r @ A + bias + xi[k]
            x = np.clip(x - eta * g, lo, hi)
            if cfg.proj_error:
                x = np.clip(x + kick[k], lo, hi)
            violation = max(violation, float(np.max(np.maximum(lo - x, x - hi))))
    avg = np.cumsum(loss - jopt, axis=1) / np.arange(1, T + 1)
    return RegretTrace(loss, avg, dist, xopt, jopt, max(violation, 0.0), cfg)


def loglog_slope(trace: RegretTrace, t_min: int = 100, t_max: Optional[int] = None, points: int = 50) -> float:
    """Least-squares slope of log(mean average regret) against log t on log-spaced t."""
    t_max = trace.T if t_max is None else t_max
    ts = np.unique(np.geomspace(t_min, t_max, points).astype(int))
    y = trace.regret_mean[ts - 1]
    if np.any(y <= 0):
        raise ValueError("average regret must be positive for a log-log fit")
    slope, _ = np.polyfit(np.log(ts), np.log(y), 1)
    return float(slope)


def run_sweep(base: MdConfig, grid: dict[str, Sequence], out_dir, every: int = 1) -> list[dict]:
    """Run every grid point; write ``point_NNN.csv`` per point and ``manifest.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(grid)
    rows = []
    for i, values in enumerate(itertools.product(*(grid[k] for k in names))):
        cfg = replace(base, **dict(zip(names, values)))
        trace = run_approx_pgd(cfg)
        fname = f"point_{i:03d}.csv"
        (out / fname).write_text(trace.to_csv(every), encoding="utf-8")
        m, se = trace.final_regret()
        rows.append({**dict(zip(names, values)), "file": fname, "final_avg_regret_mean": m,
                     "final_avg_regret_se": se})
    buf = io.StringIO()
    buf.write("# schema=1\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", *names, "file", "final_avg_regret_mean", "final_avg_regret_se"])
    for i, r in enumerate(rows):
        w.writerow([i, *(repr(r[k]) for k in names), r["file"], repr(r["final_avg_regret_mean"]),
                    repr(r["final_avg_regret_se"])])
    (out / "manifest.csv").write_text(buf.getvalue(), encoding="utf-8")
    return rows
