"""Small numpy MLPs, a replay buffer, and the DDPG residual update.

``update_f`` trains the neural residual of a mixed policy
``clip(program(s) + lam * actor(s))`` with deterministic policy gradients while
the program stays fixed. The critic sees the executed (clipped) total action.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .dsl import Program, ProgState, eval_step
from .errors import CheckpointError, ContractError

log = logging.getLogger(__name__)

MAGIC = b"NNP1"
_ACT_CODES = {"tanh": 0, "linear": 1}


@dataclass
class NeuralParams:
    """Weights ``W[k]`` of shape ``(out, in)`` and biases ``b[k]``.

    Hidden layers use tanh. The output layer is ``out_scale * tanh(z)`` when
    ``output == "tanh"`` (actors) or ``z`` when ``"linear"`` (critics).
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output: str = "tanh"
    out_scale: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        if self.output not in _ACT_CODES:
            raise ContractError(f"unknown output activation {self.output!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ContractError("need one bias per weight matrix, and at least one layer")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ContractError(f"layer {k}: weight {W.shape} and bias {b.shape} do not match")
            if k and W.shape[1] != self.weights[k - 1].shape[0]:
                raise ContractError(f"layer {k} expects {W.shape[1]} inputs, previous layer gives "
                                    f"{self.weights[k - 1].shape[0]}")
        self.out_scale = np.broadcast_to(np.asarray(self.out_scale, dtype=float),
                                         (self.weights[-1].shape[0],)).copy()

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    def copy(self) -> "NeuralParams":
        return NeuralParams([W.copy() for W in self.weights], [b.copy() for b in self.biases],
                            self.output, self.out_scale.copy())

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def __eq__(self, other):
        if not isinstance(other, NeuralParams):
            return NotImplemented
        return (self.output == other.output and self.sizes == other.sizes
                and np.array_equal(self.out_scale, other.out_scale)
                and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())))


def init_mlp(sizes: Sequence[int], rng: np.random.Generator, output: str = "tanh",
             out_scale=1.0, final_scale: float = 3e-3) -> NeuralParams:
    """Fan-in uniform init for hidden layers, small uniform init for the output layer."""
    Ws, bs = [], []
    for k in range(len(sizes) - 1):
        lim = final_scale if k == len(sizes) - 2 else 1.0 / math.sqrt(sizes[k])
        Ws.append(rng.uniform(-lim, lim, size=(sizes[k + 1], sizes[k])))
        bs.append(rng.uniform(-lim, lim, size=sizes[k + 1]))
    return NeuralParams(Ws, bs, output, out_scale)


def _as_batch(params, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != params.sizes[0]:
        raise ContractError(f"input has shape {x.shape}, network expects {params.sizes[0]} features")
    return X, single


def _forward_cache(params: NeuralParams, X: np.ndarray):
    acts = [X]
    h = X
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W.T + b
        if k < last or params.output == "tanh":
            h = np.tanh(z)
        else:
            h = z
        acts.append(h)
    out = acts[-1] * params.out_scale if params.output == "tanh" else acts[-1]
    return out, acts


def forward(params: NeuralParams, x) -> np.ndarray:
    X, single = _as_batch(params, x)
    out, _ = _forward_cache(params, X)
    return out[0] if single else out


class Gradients(NamedTuple):
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray


def backward(params: NeuralParams, x, upstream) -> Gradients:
    """Gradients of ``sum(upstream * forward(params, x))`` (summed over the batch)."""
    X, single = _as_batch(params, x)
    G = np.asarray(upstream, dtype=float)
    G = G[None, :] if single else G
    if G.shape != (X.shape[0], params.sizes[-1]):
        raise ContractError(f"upstream gradient has shape {np.shape(upstream)}, expected output shape")
    _, acts = _forward_cache(params, X)
    last = len(params.weights) - 1
    if params.output == "tanh":
        delta = G * params.out_scale * (1.0 - acts[-1] ** 2)
    else:
        delta = G
    dWs: list = [None] * len(params.weights)
    dbs: list = [None] * len(params.weights)
    for k in range(last, -1, -1):
        dWs[k] = delta.T @ acts[k]
        dbs[k] = delta.sum(axis=0)
        dh = delta @ params.weights[k]
        if k > 0:
            delta = dh * (1.0 - acts[k] ** 2)
    return Gradients(dWs, dbs, dh[0] if single else dh)


# ------------------------------------------------------------ serialization


def dumps(params: NeuralParams) -> bytes:
    sizes = params.sizes
    head = struct.pack("<4sI", MAGIC, len(params.weights)) + struct.pack(f"<{len(sizes)}I", *sizes)
    head += struct.pack("<B", _ACT_CODES[params.output])
    body = [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays()]
    return head + b"".join(body) + np.ascontiguousarray(params.out_scale, dtype="<f8").tobytes()


def loads(data: bytes, source: str = "<bytes>") -> NeuralParams:
    try:
        magic, n = struct.unpack_from("<4sI", data, 0)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        off = 8
        sizes = struct.unpack_from(f"<{n + 1}I", data, off)
        off += 4 * (n + 1)
        (code,) = struct.unpack_from("<B", data, off)
        off += 1
        output = {v: k for k, v in _ACT_CODES.items()}[code]
        Ws, bs = [], []
        for k in range(n):
            cnt = sizes[k + 1] * sizes[k]
            Ws.append(np.frombuffer(data, "<f8", cnt, off).reshape(sizes[k + 1], sizes[k]).astype(float))
            off += 8 * cnt
            bs.append(np.frombuffer(data, "<f8", sizes[k + 1], off).astype(float))
            off += 8 * sizes[k + 1]
        scale = np.frombuffer(data, "<f8", sizes[-1], off).astype(float)
        off += 8 * sizes[-1]
        if off != len(data):
            raise ValueError(f"{len(data) - off} trailing bytes")
    except (struct.error, ValueError, KeyError) as exc:
        raise CheckpointError(f"{source}: corrupt neural parameter file ({exc})") from exc
    return NeuralParams(Ws, bs, output, scale)


def save_params(params: NeuralParams, path) -> None:
    Path(path).write_bytes(dumps(params))


def load_params(path) -> NeuralParams:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror or exc}") from exc
    return loads(data, str(path))


# ---------------------------------------------------------------- training


class Adam:
    def __init__(self, params: NeuralParams, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]
        self.t = 0

    def step(self, params: NeuralParams, grads: Gradients) -> None:
        """In-place descent step on ``params``."""
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        gs = [g for pair in zip(grads.weights, grads.biases) for g in pair]
        for a, g, m, v in zip(params.arrays(), gs, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def soft_update(target: NeuralParams, online: NeuralParams, tau: float) -> None:
    for t, o in zip(target.arrays(), online.arrays()):
        t *= 1.0 - tau
        t += tau * o


class ReplayBuffer:
    """Ring buffer of transitions, plus the program's action at s and s'."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ContractError("capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.terminal = np.zeros(capacity)
        self.prog = np.zeros((capacity, act_dim))
        self.prog_next = np.zeros((capacity, act_dim))
        self.count = 0

    def __len__(self):
        return min(self.count, self.capacity)

    def add(self, obs, act, rew, next_obs, terminal, prog, prog_next):
        i = self.count % self.capacity
        self.obs[i], self.act[i], self.rew[i] = obs, act, rew
        self.next_obs[i], self.terminal[i] = next_obs, float(terminal)
        self.prog[i], self.prog_next[i] = prog, prog_next
        self.count += 1

    def sample(self, rng: np.random.Generator, batch: int):
        idx = rng.integers(0, len(self), size=batch)
        return (self.obs[idx], self.act[idx], self.rew[idx], self.next_obs[idx],
                self.terminal[idx], self.prog[idx], self.prog_next[idx])


@dataclass(frozen=True)
class UpdateConfig:
    steps: int = 10000
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    gamma: float = 0.99
    tau: float = 0.005
    noise: float = 0.1
    batch: int = 64
    warmup: int = 1000
    hidden: tuple[int, ...] = (64, 64)
    buffer: int = 100000
    lam: float = 1.0

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1 or self.warmup < 0 or self.buffer < 1:
            raise ContractError("steps, warmup must be >= 0; batch, buffer >= 1")
        if not (self.actor_lr > 0 and self.critic_lr > 0 and self.noise >= 0):
            raise ContractError("learning rates must be positive and noise non-negative")
        if not 0 < self.tau <= 1 or not 0 < self.gamma <= 1:
            raise ContractError("tau and gamma must lie in (0, 1]")
        if not 0 <= self.lam <= 1:
            raise ContractError("lam must lie in [0, 1]")


@dataclass
class UpdateMetrics:
    episode_returns: list[float] = field(default_factory=list)
    episode_lengths: list[int] = field(default_factory=list)
    critic_loss: float = float("nan")
    actor_objective: float = float("nan")
    steps: int = 0
    diverged: bool = False
    message: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# schema=1\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode", "length", "return"])
        for i, (n, r) in enumerate(zip(self.episode_lengths, self.episode_returns)):
            w.writerow([i, n, repr(r)])
        w.writerow(["final_critic_loss", "", repr(self.critic_loss)])
        w.writerow(["final_actor_objective", "", repr(self.actor_objective)])
        return buf.getvalue()


def _grad_mask(a_raw, low, high, ascent):
    # pass the gradient where unclipped, or where it pushes back into the box
    inside = (a_raw > low) & (a_raw < high)
    return inside | ((a_raw >= high) & (ascent < 0)) | ((a_raw <= low) & (ascent > 0))


def update_f(program: Program, theta0: Optional[NeuralParams], env, cfg: UpdateConfig, seed: int):
    """Improve the neural residual by DDPG for ``cfg.steps`` environment steps.

    Returns ``(MixedPolicy, UpdateMetrics)``. On divergence (a loss above 1e6
    or non-finite) training stops and the last finite actor is returned.
    """
    from .policy import MixedPolicy

    spec = env.spec
    rng = np.random.default_rng(seed)
    low, high = spec.low, spec.high
    half = 0.5 * (high - low)
    if theta0 is None:
        theta0 = init_mlp([spec.obs_dim, *cfg.hidden, spec.act_dim], rng, "tanh", half)
    if theta0.sizes[0] != spec.obs_dim or theta0.sizes[-1] != spec.act_dim:
        raise ContractError(f"actor sizes {theta0.sizes} do not fit env {spec.name}")
    metrics = UpdateMetrics()
    if cfg.steps == 0:
        return MixedPolicy(program, theta0, cfg.lam, spec), metrics

    actor = theta0.copy()
    critic = init_mlp([spec.obs_dim + spec.act_dim, *cfg.hidden, 1], rng, "linear")
    actor_t, critic_t = actor.copy(), critic.copy()
    a_opt, c_opt = Adam(actor, cfg.actor_lr), Adam(critic, cfg.critic_lr)
    buf = ReplayBuffer(min(cfg.buffer, cfg.steps), spec.obs_dim, spec.act_dim)
    lam = cfg.lam
    last_good = actor.copy()

    def new_episode():
        obs = env.reset(int(rng.integers(2 ** 31)))
        p_act, p_state = eval_step(program, ProgState.initial(program), obs, spec.dt)
        return obs, p_act, p_state

    obs, p_act, p_state = new_episode()
    ep_ret, ep_len = 0.0, 0
    for step in range(cfg.steps):
        if step < cfg.warmup:
            a = rng.uniform(low, high)
        else:
            a = p_act + lam * forward(actor, obs) + cfg.noise * half * rng.standard_normal(spec.act_dim)
        a = np.clip(a, low, high)
        res = env.step(a)
        ep_ret += res.reward
        ep_len += 1
        # the program's action at s' comes from the state it would really have there
        p_next, p_state_next = eval_step(program, p_state, res.obs, spec.dt)
        buf.add(obs, a, res.reward, res.obs, res.done and not res.truncated, p_act, p_next)
        if res.done:
            metrics.episode_returns.append(ep_ret)
            metrics.episode_lengths.append(ep_len)
            obs, p_act, p_state = new_episode()
            ep_ret, ep_len = 0.0, 0
        else:
            obs, p_act, p_state = res.obs, p_next, p_state_next
        metrics.steps = step + 1

        if step < cfg.warmup or len(buf) < cfg.batch:
            continue
        S, A, R, S2, T, P, P2 = buf.sample(rng, cfg.batch)
        # critic
        A2 = np.clip(P2 + lam * forward(actor_t, S2), low, high)
        q2 = forward(critic_t, np.hstack([S2, A2]))[:, 0]
        y = R + cfg.gamma * (1.0 - T) * q2
        SA = np.hstack([S, A])
        q = forward(critic, SA)[:, 0]
        err = q - y
        c_loss = float(np.mean(err ** 2))
        c_opt.step(critic, backward(critic, SA, (2.0 / cfg.batch) * err[:, None]))
        # actor: ascend Q(s, clip(prog + lam * mu(s)))
        mu = forward(actor, S)
        a_raw = P + lam * mu
        a_pol = np.clip(a_raw, low, high)
        SA_pol = np.hstack([S, a_pol])
        q_pol = forward(critic, SA_pol)
        dq_da = backward(critic, SA_pol, np.ones_like(q_pol)).inputs[:, spec.obs_dim:]
        dq_da = dq_da * _grad_mask(a_raw, low, high, dq_da)
        a_obj = float(np.mean(q_pol))
        a_opt.step(actor, backward(actor, S, -(lam / cfg.batch) * dq_da))
        if not (math.isfinite(c_loss) and math.isfinite(a_obj)) or c_loss > 1e6 or abs(a_obj) > 1e6 \
                or not actor.is_finite():
            metrics.diverged = True
            metrics.message = f"divergence at step {step}: critic loss {c_loss}, actor objective {a_obj}"
            log.warning("update_f: %s; returning last finite actor", metrics.message)
            actor = last_good
            break
        soft_update(actor_t, actor, cfg.tau)
        soft_update(critic_t, critic, cfg.tau)
        metrics.critic_loss, metrics.actor_objective = c_loss, a_obj
        last_good = actor.copy()
    return MixedPolicy(program, actor, lam, spec), metrics
