import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from propel.config import prior_path
from propel.dsl import Const, Program, ProgState, load_program, parse, random_program
from propel.env import Env, EnvSpec, make_env
from propel.errors import ContractError
from propel.neural import NeuralParams, init_mlp
from propel.policy import (MixedPolicy, PolicyKind, Trajectory, act, discounted_return, mean_return,
                           program_policy, rollout)

PEND = make_env("pendulum", 0).spec


class _ConstReward(Env):
    """1-D test env with a fixed per-step reward; the seed only moves the start state."""

    reward = 1.0
    spec = EnvSpec("const", 1, 1, (-1.0,), (1.0,), 0.1, 50, ("x",))

    def _reset_state(self, rng):
        return [rng.uniform(-1, 1)]

    def _euler(self, s, a, h):
        return s + h * a

    def _reward(self, s, a):
        return self.reward


class _ZeroReward(_ConstReward):
    reward = 0.0


class _SeedReward(_ConstReward):
    """Single-step episodes whose reward is the seed itself."""

    spec = EnvSpec("seeded", 1, 1, (-1.0,), (1.0,), 0.1, 1, ("x",))

    def reset(self, seed=None):
        self._seed = seed
        return super().reset(seed)

    def _reward(self, s, a):
        return float(self._seed)


def _output_net(value, obs_dim=3):
    """Network whose output is exactly ``value`` everywhere (linear, zero weights)."""
    return NeuralParams([np.zeros((1, obs_dim))], [np.array([value])], output="linear")


def test_kinds():
    prog = Program((Const(0.0),))
    net = _output_net(1.0)
    assert program_policy(prog, PEND).kind is PolicyKind.PROGRAM
    assert MixedPolicy(None, net, 1.0, PEND).kind is PolicyKind.NEURAL
    assert MixedPolicy(prog, net, 1.0, PEND).kind is PolicyKind.MIXED
    with pytest.raises(ContractError):
        MixedPolicy(None, None, 1.0, PEND)
    with pytest.raises(ContractError):
        MixedPolicy(prog, net, 1.5, PEND)


def test_lambda_zero_is_program():
    rng = np.random.default_rng(0)
    prog = parse("(+ (pid 1 0.0 5.0 0.5 0.2) (pid 2 0.0 1.0 0.0 0.0))")
    net = init_mlp([3, 8, 1], rng, out_scale=2.0, final_scale=1.0)
    mixed, plain = MixedPolicy(prog, net, 0.0, PEND), program_policy(prog, PEND)
    sm, sp = mixed.initial_state(), plain.initial_state()
    for _ in range(20):
        obs = rng.normal(size=3)
        am, sm = mixed.act(obs, sm)
        ap, sp = plain.act(obs, sp)
        assert np.array_equal(am, ap) and sm == sp


def test_zero_network_is_program():
    prog = parse("(affine (1.0 0.5 0.2) 0.1)")
    mixed = MixedPolicy(prog, _output_net(0.0), 1.0, PEND)
    obs = np.array([0.3, -0.2, 1.0])
    assert np.array_equal(mixed.act(obs, None)[0], program_policy(prog, PEND).act(obs, None)[0])


def test_clip_after_sum():
    mixed = MixedPolicy(Program((Const(0.0),)), _output_net(5.0), 1.0, PEND)
    a, _ = act(mixed, np.zeros(3), mixed.initial_state())
    assert a[0] == 2.0
    cancel = MixedPolicy(Program((Const(3.0),)), _output_net(-2.0), 1.0, PEND)
    assert cancel.act(np.zeros(3), None)[0][0] == 1.0  # 3 - 2, not clip(3) - 2


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0))
def test_lambda_continuity(lam):
    prog = parse("(affine (1.0 0.5 0.2) 0.1)")
    obs = np.array([0.1, 0.2, 0.3])
    base = program_policy(prog, PEND).act(obs, None)[0]
    mixed = MixedPolicy(prog, _output_net(0.7), lam, PEND).act(obs, None)[0]
    assert abs(mixed[0] - base[0]) <= 0.7 * lam + 1e-15


def test_history_and_dimension_checks():
    pol = program_policy(parse("(feature 2)"), PEND)
    hist = np.array([[0, 0, 0.1], [0, 0, 0.4]])
    assert pol.act(hist, None)[0][0] == 0.4
    with pytest.raises(ContractError):
        pol.act(np.zeros((0, 3)), None)
    with pytest.raises(ContractError):
        pol.act(np.zeros(2), None)


def test_accumulator_purity():
    pol = program_policy(parse("(pid 2 0.0 1.0 2.0 0.5)"), PEND)
    state = pol.initial_state()
    _, state = pol.act(np.array([1.0, 0.0, 0.3]), state)
    a1, s1 = pol.act(np.array([1.0, 0.0, 0.8]), state)
    a2, s2 = pol.act(np.array([1.0, 0.0, 0.8]), state)
    assert np.array_equal(a1, a2) and s1 == s2


# --------------------------------------------------------------- trajectories

def test_zero_reward_env_return():
    pol = program_policy(parse("(feature 0)"), _ZeroReward.spec)
    assert rollout(pol, _ZeroReward(0), seed=3).ret == 0.0


def test_discounted_constant_reward():
    pol = program_policy(Program((Const(0.0),)), _ConstReward.spec)
    traj = rollout(pol, _ConstReward(0), horizon=3, seed=0, gamma=0.9)
    assert len(traj.steps) == 3
    assert traj.ret == pytest.approx(2.71, abs=1e-12)


def test_return_recomputed_from_steps():
    env = make_env("pendulum", 0)
    pol = program_policy(load_program(prior_path("pendulum"), 3), env.spec)
    traj = rollout(pol, env, seed=4, gamma=0.97)
    fold = 0.0
    for t, s in enumerate(traj.steps):
        fold += 0.97 ** t * s.reward
    assert traj.ret == pytest.approx(fold, rel=1e-12, abs=1e-12)
    assert isinstance(traj, Trajectory) and traj.steps


def test_rollout_deterministic_and_clipped():
    env = make_env("pendulum", 0)
    pol = program_policy(parse("(affine (0 0 50.0) 0)"), env.spec)
    t1, t2 = rollout(pol, env, seed=8), rollout(pol, env, seed=8)
    assert np.array_equal(t1.observations, t2.observations)
    assert np.array_equal(t1.actions, t2.actions)
    assert t1.actions.min() >= -2.0 and t1.actions.max() <= 2.0


def test_rollout_resets_accumulators():
    env = make_env("pendulum", 0)
    pol = program_policy(parse("(pid 2 0.0 0.0 1.0 0.0)"), env.spec)
    first = rollout(pol, env, horizon=20, seed=1)
    rollout(pol, env, horizon=50, seed=2)
    again = rollout(pol, env, horizon=20, seed=1)
    assert np.array_equal(first.actions, again.actions)


def test_rollout_horizon_checks():
    env = make_env("pendulum", 0)
    pol = program_policy(Program((Const(0.0),)), env.spec)
    with pytest.raises(ContractError):
        rollout(pol, env, horizon=env.spec.max_horizon + 1)
    with pytest.raises(ContractError):
        rollout(pol, env, horizon=5, gamma=0.0)


def test_discounted_return_helper():
    assert discounted_return([1.0, 1.0, 1.0], 0.5) == 1.75


# ---------------------------------------------------------------- mean_return

def test_constant_reward_zero_std():
    pol = program_policy(Program((Const(0.0),)), _ConstReward.spec)
    mean, std = mean_return(pol, _ConstReward(0), seeds=[1, 2, 3])
    assert mean == 50.0 and std == 0.0


def test_mean_over_given_seeds():
    pol = program_policy(Program((Const(0.0),)), _SeedReward.spec)
    mean, std = mean_return(pol, _SeedReward(0), seeds=[2, 4])
    assert mean == 3.0 and std == 1.0


def test_mean_return_needs_seeds():
    pol = program_policy(Program((Const(0.0),)), _ConstReward.spec)
    with pytest.raises(ContractError):
        mean_return(pol, _ConstReward(0), seeds=[])


def test_parallel_matches_serial():
    env = make_env("pendulum", 0)
    pol = program_policy(load_program(prior_path("pendulum"), 3), env.spec)
    assert mean_return(pol, env, range(4), workers=2) == mean_return(pol, env, range(4))


def test_prior_beats_random_program():
    env = make_env("pendulum", 0)
    seeds = range(10000, 10010)
    prior, _ = mean_return(program_policy(load_program(prior_path("pendulum"), 3), env.spec), env, seeds)
    rand = random_program(np.random.default_rng(0), 3, depth=3)
    other, _ = mean_return(program_policy(rand, env.spec), env, seeds)
    assert prior > other


def test_energy_controller_beats_zero_policy():
    env = make_env("pendulum", 0)
    seeds = range(10)
    zero, _ = mean_return(program_policy(Program((Const(0.0),)), env.spec), env, seeds)
    energy, _ = mean_return(program_policy(load_program(prior_path("pendulum"), 3), env.spec), env, seeds)
    assert zero < energy


def test_zero_torque_sanity_band():
    env = make_env("pendulum", 0)
    mean, _ = mean_return(program_policy(Program((Const(0.0),)), env.spec), env, range(10))
    assert -2000 <= mean <= 0 and math.isfinite(mean)
