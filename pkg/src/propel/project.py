"""PROJECT step: DAgger-style imitation of a mixed policy onto the program class.

PID-class programs are refit by ordinary least squares over their linear
parameters (PID gains, affine weights and biases) with guard thresholds held
fixed; tree-class programs are refit by CART.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import dsl
from .dsl import (Affine, ClassConfig, Clip, Const, Feature, If, Pid, Program, ProgState, Sum, Tree,
                  eval_batch, eval_step, step_context)
from .env import Env, EnvSpec
from .errors import ContractError
from .policy import MixedPolicy, mean_return, program_policy

CTX_NAMES = ("err", "int", "der")


@dataclass
class ImitationDataset:
    """Rows of (observation, template PID context, expert action) plus bookkeeping.

    ``context`` has shape ``(n, n_pid, 3)`` holding, per PID slot of the
    template, the error, updated integral and derivative at that step.
    """

    obs: np.ndarray
    context: np.ndarray
    actions: np.ndarray
    rounds: np.ndarray
    episodes: np.ndarray
    heldout: np.ndarray

    @classmethod
    def empty(cls, obs_dim: int, n_pid: int, act_dim: int) -> "ImitationDataset":
        return cls(np.zeros((0, obs_dim)), np.zeros((0, n_pid, 3)), np.zeros((0, act_dim)),
                   np.zeros(0, dtype=int), np.zeros(0, dtype=int), np.zeros(0, dtype=bool))

    @classmethod
    def from_arrays(cls, obs, actions, context=None, rounds=None) -> "ImitationDataset":
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        actions = np.asarray(actions, dtype=float)
        if actions.ndim == 1:
            actions = actions[:, None]
        n = len(obs)
        context = np.zeros((n, 0, 3)) if context is None else np.asarray(context, dtype=float)
        rounds = np.ones(n, dtype=int) if rounds is None else np.asarray(rounds, dtype=int)
        return cls(obs, context, actions, rounds, np.zeros(n, dtype=int), np.zeros(n, dtype=bool))

    def __len__(self):
        return len(self.obs)

    def __post_init__(self):
        n = len(self.obs)
        if not (len(self.context) == len(self.actions) == len(self.rounds) == len(self.episodes)
                == len(self.heldout) == n):
            raise ContractError("dataset columns have inconsistent row counts")

    def subset(self, mask) -> "ImitationDataset":
        return ImitationDataset(self.obs[mask], self.context[mask], self.actions[mask],
                                self.rounds[mask], self.episodes[mask], self.heldout[mask])

    def extend(self, other: "ImitationDataset") -> "ImitationDataset":
        if len(self) == 0:
            return other
        if other.obs.shape[1:] != self.obs.shape[1:] or other.context.shape[1:] != self.context.shape[1:] \
                or other.actions.shape[1:] != self.actions.shape[1:]:
            raise ContractError("cannot aggregate datasets with different dimensions")
        return ImitationDataset(*(np.concatenate([a, b]) for a, b in zip(
            (self.obs, self.context, self.actions, self.rounds, self.episodes, self.heldout),
            (other.obs, other.context, other.actions, other.rounds, other.episodes, other.heldout))))

    def to_csv(self) -> str:
        n_pid = self.context.shape[1]
        buf = io.StringIO()
        buf.write("# schema=1\n")
        w = csv.writer(buf, lineterminator="\n")
        header = [f"obs_{i}" for i in range(self.obs.shape[1])]
        header += [f"pid{k}_{c}" for k in range(n_pid) for c in CTX_NAMES]
        header += [f"act_{j}" for j in range(self.actions.shape[1])] + ["round"]
        w.writerow(header)
        for i in range(len(self)):
            row = [repr(float(v)) for v in self.obs[i]]
            row += [repr(float(v)) for v in self.context[i].reshape(-1)]
            row += [repr(float(v)) for v in self.actions[i]]
            w.writerow(row + [int(self.rounds[i])])
        return buf.getvalue()


def collect_round(expert: MixedPolicy, learner: Program, env: Env, beta: float, episodes: int, seed: int,
                  horizon: Optional[int] = None, template: Optional[Program] = None,
                  round_index: int = 1) -> ImitationDataset:
    """Roll out the beta-mixture of expert and learner and label every visited state with the expert.

    Episode ``e`` resets the environment with ``seed + e``; the per-step coin
    (expert with probability ``beta``) comes from a generator seeded by ``seed``
    alone, so the state sequence at ``beta = 1`` matches an expert rollout.
    Expert labels carry no exploration noise.
    """
    if not 0.0 <= beta <= 1.0:
        raise ContractError(f"beta must lie in [0, 1], got {beta}")
    template = learner if template is None else template
    spec = env.spec
    horizon = spec.max_horizon if horizon is None else min(horizon, spec.max_horizon)
    coin = np.random.default_rng(np.random.SeedSequence([seed, 0x5eed]))
    learner_pol = program_policy(learner, spec)
    obs_rows, ctx_rows, act_rows, ep_rows = [], [], [], []
    for e in range(episodes):
        obs = env.reset(seed + e)
        ex_state, ln_state = expert.initial_state(), learner_pol.initial_state()
        tp_state = ProgState.initial(template)
        for _ in range(horizon):
            label, ex_state = expert.act(obs, ex_state)
            ln_act, ln_state = learner_pol.act(obs, ln_state)
            ctx, tp_state = step_context(template, tp_state, obs, spec.dt)
            obs_rows.append(obs)
            ctx_rows.append(ctx)
            act_rows.append(label)
            ep_rows.append(e)
            res = env.step(label if coin.random() < beta else ln_act)
            obs = res.obs
            if res.done:
                break
    n = len(obs_rows)
    return ImitationDataset(np.array(obs_rows).reshape(n, spec.obs_dim),
                            np.array(ctx_rows).reshape(n, template.n_pid, 3),
                            np.array(act_rows).reshape(n, spec.act_dim),
                            np.full(n, round_index, dtype=int), np.array(ep_rows, dtype=int),
                            np.zeros(n, dtype=bool))


# ------------------------------------------------------------ least squares


@dataclass
class _Lin:
    cols: list
    offset: np.ndarray
    rebuild: Callable


def _linearize(node, X, C, slots) -> _Lin:
    """Split ``node``'s output into free-parameter columns and a fixed offset."""
    n = X.shape[0]
    if isinstance(node, Const):
        return _Lin([], np.full(n, node.value), lambda it: node)
    if isinstance(node, Feature):
        return _Lin([], X[:, node.index].copy(), lambda it: node)
    if isinstance(node, Affine):
        cols = [X[:, j] for j in range(X.shape[1])] + [np.ones(n)]
        d = X.shape[1]
        return _Lin(cols, np.zeros(n), lambda it: Affine(tuple(next(it) for _ in range(d)), next(it)))
    if isinstance(node, Pid):
        k = next(slots)
        cols = [C[:, k, 0], C[:, k, 1], C[:, k, 2]]
        return _Lin(cols, np.zeros(n),
                    lambda it: Pid(node.feature, node.setpoint, next(it), next(it), next(it)))
    if isinstance(node, Clip):
        # fitted as the identity; censored rows are dropped by the caller
        inner = _linearize(node.child, X, C, slots)
        return _Lin(inner.cols, inner.offset, lambda it: Clip(inner.rebuild(it), node.lo, node.hi))
    if isinstance(node, If):
        m = (X[:, node.feature] < node.threshold).astype(float)
        a = _linearize(node.then, X, C, slots)
        b = _linearize(node.orelse, X, C, slots)
        return _Lin([c * m for c in a.cols] + [c * (1 - m) for c in b.cols],
                    m * a.offset + (1 - m) * b.offset,
                    lambda it: If(node.feature, node.threshold, a.rebuild(it), b.rebuild(it)))
    if isinstance(node, Sum):
        parts = [_linearize(t, X, C, slots) for t in node.terms]
        return _Lin([c for p in parts for c in p.cols], sum(p.offset for p in parts),
                    lambda it: Sum(tuple(p.rebuild(it) for p in parts)))
    if isinstance(node, Tree):
        return _Lin([], eval_batch(Program((node,)), X)[:, 0], lambda it: node)
    raise ContractError(f"cannot fit node {node!r}")


def _at(y, b):
    return np.abs(y - b) <= 1e-12 * max(1.0, abs(b))


def _censored(node, X, y) -> np.ndarray:
    """Rows whose label sits on the bound of a clip the output passes through."""
    if isinstance(node, Clip):
        return _at(y, node.lo) | _at(y, node.hi) | _censored(node.child, X, y)
    if isinstance(node, If):
        m = X[:, node.feature] < node.threshold
        return np.where(m, _censored(node.then, X, y), _censored(node.orelse, X, y))
    return np.zeros(len(y), dtype=bool)


@dataclass
class PidFit:
    program: Program
    mse: float
    rows_used: int
    rank: list[int] = field(default_factory=list)


def fit_pid(dataset: ImitationDataset, template: Program, spec: Optional[EnvSpec] = None) -> PidFit:
    """Ordinary least squares for every linear parameter of ``template``.

    Columns are, per PID slot, (error, integral, derivative) and, per affine
    node, the features plus a constant; guard branches multiply their columns
    by the guard indicator. Rank-deficient systems get the minimum-norm
    solution. Rows whose label is saturated at an env bound (when ``spec`` is
    given) or at an output-path clip bound are left out.
    """
    if len(dataset) == 0:
        raise ContractError("cannot fit a program to an empty dataset")
    if template.act_dim != dataset.actions.shape[1]:
        raise ContractError(f"template has {template.act_dim} outputs, dataset has {dataset.actions.shape[1]}")
    if template.n_pid != dataset.context.shape[1]:
        raise ContractError(f"template has {template.n_pid} PID slots, dataset context has "
                            f"{dataset.context.shape[1]}")
    X, C = dataset.obs, dataset.context
    slots = iter(range(C.shape[1]))
    outputs, sq, used, ranks = [], 0.0, 0, []
    for j, expr in enumerate(template.outputs):
        lin = _linearize(expr, X, C, slots)
        y = dataset.actions[:, j]
        keep = ~_censored(expr, X, y)
        if spec is not None:
            keep &= ~(_at(y, spec.act_low[j]) | _at(y, spec.act_high[j]))
        if not keep.any():
            keep = np.ones(len(y), dtype=bool)
        target = (y - lin.offset)[keep]
        if lin.cols:
            A = np.stack(lin.cols, axis=1)[keep]
            coef, _, rank, _ = np.linalg.lstsq(A, target, rcond=None)
            resid = target - A @ coef
            ranks.append(int(rank))
        else:
            coef, resid = np.zeros(0), target
            ranks.append(0)
        outputs.append(lin.rebuild(iter(coef.tolist())))
        sq += float(resid @ resid)
        used += int(keep.sum())
    return PidFit(Program(tuple(outputs)), sq / used, used, ranks)


def linear_mse(dataset: ImitationDataset, program: Program) -> float:
    """Squared error of the program's clip-free linear form, on every row (what OLS minimizes)."""
    slots = iter(range(dataset.context.shape[1]))
    sq = 0.0
    for j, expr in enumerate(program.outputs):
        lin = _linearize(expr, dataset.obs, dataset.context, slots)
        params = np.array([v for v in _params(expr)])
        pred = lin.offset + (np.stack(lin.cols, axis=1) @ params if lin.cols else 0.0)
        r = dataset.actions[:, j] - pred
        sq += float(r @ r)
    return sq / (len(dataset) * program.act_dim)


def _params(node):
    if isinstance(node, Affine):
        yield from node.weights
        yield node.bias
    elif isinstance(node, Pid):
        yield from (node.kp, node.ki, node.kd)
    elif isinstance(node, (Clip, If, Sum)):
        for c in dsl._children(node):
            yield from _params(c)


def fit_tree(dataset: ImitationDataset, cfg: ClassConfig) -> dsl.TreeFit:
    if cfg.kind != "tree":
        raise ContractError("fit_tree needs a tree class config")
    return dsl.fit_tree(dataset.obs, dataset.actions, cfg)


def imitation_mse(program: Program, dataset: ImitationDataset, spec: Optional[EnvSpec] = None) -> float:
    """Mean squared error between the program's (env-clipped) actions and the labels."""
    if len(dataset) == 0:
        return float("nan")
    ctx = dataset.context if program.n_pid == dataset.context.shape[1] else None
    if ctx is None and program.n_pid:
        raise ContractError("dataset context does not match the program's PID slots")
    pred = eval_batch(program, dataset.obs, ctx)
    if spec is not None:
        pred = np.clip(pred, spec.low, spec.high)
    return float(np.mean((pred - dataset.actions) ** 2))


# ------------------------------------------------------------------- DAgger


@dataclass(frozen=True)
class DaggerConfig:
    rounds: int = 3
    episodes: int = 4
    horizon: Optional[int] = None
    betas: Optional[tuple[float, ...]] = None
    fit: ClassConfig = field(default_factory=ClassConfig)
    heldout_frac: float = 0.2
    eval_seeds: tuple[int, ...] = ()

    def __post_init__(self):
        if self.rounds < 1 or self.episodes < 1:
            raise ContractError("rounds and episodes must be >= 1")
        b = self.schedule()
        if any(not 0 <= x <= 1 for x in b) or any(b[i + 1] > b[i] for i in range(len(b) - 1)):
            raise ContractError(f"beta schedule must lie in [0, 1] and be non-increasing: {b}")
        if not 0 < self.heldout_frac < 1:
            raise ContractError("heldout_frac must lie in (0, 1)")

    def schedule(self) -> tuple[float, ...]:
        """Per-round expert probability; defaults to 1 in round 1 and 0 after."""
        if self.betas is None:
            return tuple(1.0 if k == 0 else 0.0 for k in range(self.rounds))
        if len(self.betas) != self.rounds:
            raise ContractError(f"{len(self.betas)} betas given for {self.rounds} rounds")
        return tuple(float(x) for x in self.betas)


@dataclass
class RoundRecord:
    round: int
    rows: int
    train_mse: float
    heldout_mse: float
    return_mean: float = float("nan")
    return_std: float = float("nan")


@dataclass
class ProjectionMetrics:
    rounds: list[RoundRecord]
    best_round: int
    dataset: ImitationDataset
    programs: list[Program]

    @property
    def best_heldout_mse(self) -> float:
        return self.rounds[self.best_round - 1].heldout_mse

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# schema=1\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "rows", "train_mse", "heldout_mse", "return_mean", "return_std", "selected"])
        for r in self.rounds:
            w.writerow([r.round, r.rows, repr(r.train_mse), repr(r.heldout_mse), repr(r.return_mean),
                        repr(r.return_std), int(r.round == self.best_round)])
        return buf.getvalue()


def _fit(data: ImitationDataset, template: Program, cfg: DaggerConfig, spec: EnvSpec) -> tuple[Program, float]:
    if cfg.fit.kind == "tree":
        tf = dsl.fit_tree(data.obs, data.actions, cfg.fit)
        return tf.program, tf.sse / (len(data) * data.actions.shape[1])
    pf = fit_pid(data, template, spec)
    return pf.program, pf.mse


def project(f: MixedPolicy, env: Env, cfg: DaggerConfig, seed: int,
            template: Optional[Program] = None) -> tuple[Program, ProjectionMetrics]:
    """Run ``cfg.rounds`` of aggregation and refitting; return the round-best program.

    The last ``heldout_frac`` of each round's rows is held out. After the
    final round every round's program is scored on the pooled held-out rows
    and the lowest error wins (earliest round on ties).
    """
    spec = env.spec
    template = template if template is not None else f.program
    if template is None:
        raise ContractError("projection needs a program template (the mixed policy has none)")
    if cfg.fit.kind == "tree":
        ctx_template = Program((Const(0.0),) * spec.act_dim)
    else:
        ctx_template = template
    dsl.validate(template, spec.obs_dim)
    data = ImitationDataset.empty(spec.obs_dim, ctx_template.n_pid, spec.act_dim)
    learner, programs, records = template, [], []
    for k, beta in enumerate(cfg.schedule(), start=1):
        rows = collect_round(f, learner, env, beta, cfg.episodes, seed + 100 * k, cfg.horizon,
                             template=ctx_template, round_index=k)
        n_hold = int(round(cfg.heldout_frac * len(rows)))
        if 0 < len(rows) - n_hold:
            rows.heldout[len(rows) - n_hold:] = True
        data = data.extend(rows)
        learner, train_mse = _fit(data.subset(~data.heldout), template, cfg, spec)
        dsl.validate(learner, spec.obs_dim)
        programs.append(learner)
        rec = RoundRecord(k, len(data), train_mse, imitation_mse(learner, data.subset(data.heldout), spec))
        if cfg.eval_seeds:
            rec.return_mean, rec.return_std = mean_return(program_policy(learner, spec), env, cfg.eval_seeds)
        records.append(rec)
    pooled = data.subset(data.heldout)
    if len(pooled) == 0:
        pooled = data
    scores = [imitation_mse(p, pooled, spec) for p in programs]
    for rec, s in zip(records, scores):
        rec.heldout_mse = s
    best = int(np.argmin(scores))
    return programs[best], ProjectionMetrics(records, best + 1, data, programs)


# ------------------------------------------------------------------- probes


def probe_distance(p: Program, q: Program, spec: EnvSpec, n: int = 1000, seed: int = 0,
                   integral_scale: float = 5.0) -> float:
    """Largest env-clipped action gap between two programs over random probe states.

    Observations are uniform over the env's typical observation box. When both
    programs have the same PID slot count they share a random accumulator state.
    """
    rng = np.random.default_rng(seed)
    lo = np.asarray(spec.obs_low if spec.obs_low is not None else (-1.0,) * spec.obs_dim)
    hi = np.asarray(spec.obs_high if spec.obs_high is not None else (1.0,) * spec.obs_dim)
    same = p.n_pid == q.n_pid
    worst = 0.0
    for _ in range(n):
        obs = rng.uniform(lo, hi)
        if same and p.n_pid:
            st = ProgState(tuple(rng.uniform(-integral_scale, integral_scale, p.n_pid).tolist()),
                           tuple(rng.uniform(-1, 1, p.n_pid).tolist()), True)
            sp = sq = st
        else:
            sp, sq = ProgState.initial(p), ProgState.initial(q)
        a, _ = eval_step(p, sp, obs, spec.dt)
        b, _ = eval_step(q, sq, obs, spec.dt)
        worst = max(worst, float(np.max(np.abs(spec.clip(a) - spec.clip(b)))))
    return worst

