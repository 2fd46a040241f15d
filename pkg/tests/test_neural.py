import math

import numpy as np
import pytest

from propel.dsl import Const, Program, parse
from propel.env import Env, EnvSpec, make_env
from propel.errors import CheckpointError, ContractError
from propel.neural import (Adam, NeuralParams, ReplayBuffer, UpdateConfig, backward, dumps, forward, init_mlp,
                           load_params, loads, save_params, soft_update, update_f)
from propel.policy import mean_return, program_policy

from checks import gradient_check
from oracles import mlp_reference


def _net(rng, sizes=(3, 5, 4, 2), output="tanh"):
    return init_mlp(list(sizes), rng, output, out_scale=1.7, final_scale=1.0)


def test_zero_net_outputs_zero():
    net = NeuralParams([np.zeros((4, 3)), np.zeros((2, 4))], [np.zeros(4), np.zeros(2)])
    assert np.array_equal(forward(net, np.ones(3)), np.zeros(2))


def test_one_by_one_tanh():
    net = NeuralParams([np.ones((1, 1))], [np.zeros(1)])
    for x in (-2.0, 0.3, 5.0):
        assert forward(net, [x])[0] == pytest.approx(math.tanh(x), abs=1e-15)


@pytest.mark.parametrize("output", ["tanh", "linear"])
def test_forward_matches_reference(output):
    rng = np.random.default_rng(1)
    for _ in range(20):
        net = _net(rng, output=output)
        x = rng.normal(size=3)
        ref = mlp_reference(net.weights, net.biases, x, output, net.out_scale)
        np.testing.assert_allclose(forward(net, x), ref, rtol=0, atol=1e-12)


def test_batch_forward_matches_rows():
    rng = np.random.default_rng(2)
    net = _net(rng)
    X = rng.normal(size=(7, 3))
    np.testing.assert_allclose(forward(net, X), np.array([forward(net, x) for x in X]), atol=1e-15)


def test_shape_errors():
    net = _net(np.random.default_rng(0))
    with pytest.raises(ContractError):
        forward(net, np.ones(4))
    with pytest.raises(ContractError):
        backward(net, np.ones(3), np.ones(3))
    with pytest.raises(ContractError):
        NeuralParams([np.ones((2, 3)), np.ones((1, 4))], [np.ones(2), np.ones(1)])


def test_gradients_against_finite_differences():
    assert gradient_check(n_nets=30, seed=3) <= 1e-4


def test_zero_upstream_zero_gradients():
    rng = np.random.default_rng(4)
    net = _net(rng)
    g = backward(net, rng.normal(size=(3, 3)), np.zeros((3, 2)))
    assert all(not w.any() for w in g.weights) and all(not b.any() for b in g.biases)


def test_linear_layer_gradient_is_outer_product():
    rng = np.random.default_rng(5)
    net = NeuralParams([rng.normal(size=(2, 3))], [rng.normal(size=2)], output="linear")
    x, up = rng.normal(size=3), rng.normal(size=2)
    g = backward(net, x, up)
    assert np.array_equal(g.weights[0], np.outer(up, x))
    assert np.array_equal(g.biases[0], up)


def test_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    for output in ("tanh", "linear"):
        net = _net(rng, output=output)
        path = tmp_path / f"{output}.nnp"
        save_params(net, path)
        back = load_params(path)
        assert back == net
        assert dumps(back) == dumps(net)
    data = path.read_bytes()
    assert data[:4] == b"NNP1"


def test_corrupt_files(tmp_path):
    data = dumps(_net(np.random.default_rng(7)))
    for bad in (b"XXXX" + data[4:], data[:-3], data + b"\0", b""):
        with pytest.raises(CheckpointError):
            loads(bad)
    with pytest.raises(CheckpointError, match="missing.nnp"):
        load_params(tmp_path / "missing.nnp")


def test_soft_update_exact():
    rng = np.random.default_rng(8)
    online, target = _net(rng), _net(rng)
    old = target.copy()
    tau = 0.005
    soft_update(target, online, tau)
    for t, o, w in zip(target.arrays(), online.arrays(), old.arrays()):
        expected = w * (1.0 - tau)
        expected += tau * o
        assert np.array_equal(t, expected)


def test_adam_descends_a_quadratic():
    net = NeuralParams([np.array([[3.0]])], [np.array([-2.0])], output="linear")
    opt = Adam(net, lr=0.05)
    x = np.array([[1.0]])
    for _ in range(2000):
        y = forward(net, x)
        opt.step(net, backward(net, x, 2 * y))  # minimize y^2
    assert abs(forward(net, x)[0, 0]) < 1e-3


def test_replay_buffer_wraps():
    buf = ReplayBuffer(3, 1, 1)
    for i in range(5):
        buf.add([i], [i], float(i), [i + 1], False, [0], [0])
    assert len(buf) == 3
    assert sorted(buf.rew.tolist()) == [2.0, 3.0, 4.0]
    S, *_ = buf.sample(np.random.default_rng(0), 10)
    assert S.shape == (10, 1)


def test_update_config_validation():
    with pytest.raises(ContractError):
        UpdateConfig(steps=-1)
    with pytest.raises(ContractError):
        UpdateConfig(lam=1.5)


# ------------------------------------------------------------------- update_f

SMALL = UpdateConfig(steps=400, warmup=100, batch=16, hidden=(16, 16))


def test_zero_steps_returns_theta0():
    env = make_env("pendulum", 0)
    theta0 = init_mlp([3, 8, 1], np.random.default_rng(0), out_scale=2.0)
    prog = Program((Const(0.0),))
    f, m = update_f(prog, theta0, env, UpdateConfig(steps=0), seed=1)
    assert f.theta is theta0 or dumps(f.theta) == dumps(theta0)
    assert m.steps == 0


def test_update_is_deterministic_and_keeps_program():
    prog = parse("(+ (pid 1 0.0 5.0 0.0 0.0) (pid 2 0.0 1.0 0.0 0.0))")
    f1, m1 = update_f(prog, None, make_env("pendulum", 0), SMALL, seed=3)
    f2, m2 = update_f(prog, None, make_env("pendulum", 9), SMALL, seed=3)
    assert m1.to_csv() == m2.to_csv()
    assert dumps(f1.theta) == dumps(f2.theta)
    assert f1.program == prog and f1.program is prog
    assert m1.steps == SMALL.steps and not m1.diverged
    assert m1.episode_returns and all(math.isfinite(r) for r in m1.episode_returns)


def test_update_does_not_touch_theta0():
    env = make_env("pendulum", 0)
    theta0 = init_mlp([3, 16, 16, 1], np.random.default_rng(1), out_scale=2.0)
    before = dumps(theta0)
    update_f(Program((Const(0.0),)), theta0, env, SMALL, seed=0)
    assert dumps(theta0) == before


class _BigReward(Env):
    spec = EnvSpec("big", 1, 1, (-1.0,), (1.0,), 0.1, 50, ("x",))

    def _reset_state(self, rng):
        return [rng.uniform(-1, 1)]

    def _euler(self, s, a, h):
        return s + h * a

    def _reward(self, s, a):
        return 1e6


def test_divergence_returns_finite_actor():
    cfg = UpdateConfig(steps=300, warmup=50, batch=8, hidden=(8,))
    f, m = update_f(Program((Const(0.0),)), None, _BigReward(0), cfg, seed=0)
    assert m.diverged and "divergence" in m.message
    assert f.theta.is_finite()
    assert m.steps < cfg.steps


@pytest.mark.slow
def test_update_from_zero_program_solves_pendulum():
    env = make_env("pendulum", 0)
    f, m = update_f(Program((Const(0.0),)), None, env, UpdateConfig(steps=15000), seed=0)
    mean, _ = mean_return(f, env, range(10000, 10010))
    assert mean >= -400


@pytest.mark.slow
def test_update_from_prior_does_not_hurt():
    from propel.config import prior_path
    from propel.dsl import load_program
    env = make_env("pendulum", 0)
    prior = load_program(prior_path("pendulum"), 3)
    seeds = range(10000, 10010)
    base, _ = mean_return(program_policy(prior, env.spec), env, seeds)
    f, _ = update_f(prior, None, env, UpdateConfig(steps=10000), seed=0)
    mixed, _ = mean_return(f, env, seeds)
    assert mixed >= base - 0.05 * abs(base)
