"""Policies over programs and neural residuals, rollouts and return bookkeeping."""
from __future__ import annotations

import enum
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dsl import Program, ProgState, eval_step
from .env import Env, EnvSpec
from .errors import ContractError
from .neural import NeuralParams, forward


class PolicyKind(enum.Enum):
    PROGRAM = "program-only"
    NEURAL = "neural-only"
    MIXED = "mixed"


@dataclass(frozen=True, eq=False)
class MixedPolicy:
    """``f(s) = clip(program(s) + lam * nn(s))``.

    Either component may be absent: no ``theta`` gives a program-only policy,
    no ``program`` a neural-only one. Program accumulator state is passed in
    and out of :meth:`act` rather than stored here.
    """

    program: Optional[Program]
    theta: Optional[NeuralParams]
    lam: float
    spec: EnvSpec

    def __post_init__(self):
        if self.program is None and self.theta is None:
            raise ContractError("a policy needs a program, a network, or both")
        if not 0.0 <= self.lam <= 1.0:
            raise ContractError(f"lam must lie in [0, 1], got {self.lam}")
        if self.program is not None and self.program.act_dim != self.spec.act_dim:
            raise ContractError(f"program has {self.program.act_dim} outputs, env needs {self.spec.act_dim}")

    @property
    def kind(self) -> PolicyKind:
        if self.theta is None:
            return PolicyKind.PROGRAM
        if self.program is None:
            return PolicyKind.NEURAL
        return PolicyKind.MIXED

    def initial_state(self) -> Optional[ProgState]:
        return None if self.program is None else ProgState.initial(self.program)

    def act(self, history, state: Optional[ProgState]):
        """Action for the latest observation in ``history``; returns ``(action, new_state)``.

        ``state=None`` starts the program's accumulators fresh.
        """
        obs = np.asarray(history, dtype=float)
        if obs.ndim == 2:
            if len(obs) == 0:
                raise ContractError("empty observation history")
            obs = obs[-1]
        if obs.shape != (self.spec.obs_dim,):
            raise ContractError(f"observation has shape {obs.shape}, expected ({self.spec.obs_dim},)")
        kind = self.kind
        if kind is PolicyKind.NEURAL:
            return self.spec.clip(forward(self.theta, obs)), state
        if state is None:
            state = ProgState.initial(self.program)
        prog_act, state = eval_step(self.program, state, obs, self.spec.dt)
        if kind is PolicyKind.PROGRAM:
            return self.spec.clip(prog_act), state
        return self.spec.clip(prog_act + self.lam * forward(self.theta, obs)), state


def program_policy(program: Program, spec: EnvSpec) -> MixedPolicy:
    return MixedPolicy(program, None, 0.0, spec)


def act(policy: MixedPolicy, history, state):
    return policy.act(history, state)


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    total, disc = 0.0, 1.0
    for r in rewards:
        total += disc * r
        disc *= gamma
    return total


@dataclass
class Trajectory:
    steps: list[Transition]
    gamma: float
    ret: float

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps]

    @property
    def observations(self) -> np.ndarray:
        return np.array([s.obs for s in self.steps])

    @property
    def actions(self) -> np.ndarray:
        return np.array([s.action for s in self.steps])


def rollout(policy, env: Env, horizon: Optional[int] = None, seed: int = 0, gamma: float = 1.0) -> Trajectory:
    """Run one episode from ``env.reset(seed)``; accumulators start fresh."""
    horizon = env.spec.max_horizon if horizon is None else horizon
    if horizon > env.spec.max_horizon or horizon < 1:
        raise ContractError(f"horizon {horizon} outside [1, {env.spec.max_horizon}]")
    if not 0 < gamma <= 1:
        raise ContractError("gamma must lie in (0, 1]")
    obs = env.reset(seed)
    state = policy.initial_state()
    steps = []
    for _ in range(horizon):
        a, state = policy.act(obs, state)
        a = env.spec.clip(a)
        res = env.step(a)
        steps.append(Transition(obs, a, res.reward, res.obs, res.done))
        obs = res.obs
        if res.done:
            break
    return Trajectory(steps, gamma, discounted_return([s.reward for s in steps], gamma))


def _episode_return(args):
    policy, env, horizon, seed, gamma = args
    return rollout(policy, env, horizon, seed, gamma).ret


def mean_return(policy, env: Env, seeds: Sequence[int], gamma: float = 1.0,
                horizon: Optional[int] = None, workers: int = 1) -> tuple[float, float]:
    """Mean and (population) standard deviation of episode returns over ``seeds``."""
    seeds = list(seeds)
    if not seeds:
        raise ContractError("need at least one evaluation seed")
    jobs = [(policy, env, horizon, int(s), gamma) for s in seeds]
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rets = list(pool.map(_episode_return, jobs))
    else:
        rets = [_episode_return(j) for j in jobs]
    rets = np.asarray(rets)
    return float(rets.mean()), float(rets.std())
