import numpy as np
import pytest

from propel.config import prior_path
from propel.dsl import ClassConfig, Const, Pid, Program, Tree, load_program, parse, tree_depth, validate
from propel.env import make_env
from propel.errors import ContractError
from propel.neural import init_mlp
from propel.policy import MixedPolicy, program_policy, rollout
from propel.project import (DaggerConfig, ImitationDataset, collect_round, fit_pid, fit_tree, imitation_mse,
                            linear_mse, probe_distance, project)

from checks import TRUE_GAINS, pid_dataset, pid_recovery, self_projection
from oracles import ols_normal_equations

PID_TEMPLATE = Program((Pid(0, 0.0, 0.0, 0.0, 0.0),))


def _expert(env, text="(+ (pid 1 0.0 5.0 0.5 0.2) (pid 2 0.0 1.0 0.0 0.0))", lam=1.0, seed=0):
    spec = env.spec
    theta = init_mlp([spec.obs_dim, 8, spec.act_dim], np.random.default_rng(seed), out_scale=1.0, final_scale=0.5)
    return MixedPolicy(parse(text, spec.obs_dim), theta, lam, spec)


# ------------------------------------------------------------------ collection

def test_beta_one_follows_expert():
    env = make_env("pendulum", 0)
    expert = _expert(env)
    learner = parse("(const 0.0)")
    rows = collect_round(expert, learner, env, 1.0, episodes=2, seed=10, horizon=50)
    for e in range(2):
        traj = rollout(expert, env, horizon=50, seed=10 + e)
        assert np.array_equal(rows.obs[rows.episodes == e], traj.observations)


def test_beta_zero_follows_learner():
    env = make_env("pendulum", 0)
    expert = _expert(env)
    learner = parse("(affine (0.0 -3.0 -1.0) 0.0)")
    rows = collect_round(expert, learner, env, 0.0, episodes=2, seed=20, horizon=50)
    for e in range(2):
        traj = rollout(program_policy(learner, env.spec), env, horizon=50, seed=20 + e)
        assert np.array_equal(rows.obs[rows.episodes == e], traj.observations)


def test_labels_recomputed_post_hoc():
    env = make_env("pendulum", 0)
    expert = _expert(env)
    rows = collect_round(expert, parse("(const 0.0)"), env, 0.5, episodes=3, seed=30, horizon=60)
    for e in range(3):
        state = expert.initial_state()
        for obs, label in zip(rows.obs[rows.episodes == e], rows.actions[rows.episodes == e]):
            a, state = expert.act(obs, state)
            assert np.array_equal(a, label)


def test_collect_round_rejects_bad_beta():
    env = make_env("pendulum", 0)
    with pytest.raises(ContractError):
        collect_round(_expert(env), parse("(const 0)"), env, 1.5, 1, 0)


def test_dataset_csv():
    env = make_env("pendulum", 0)
    expert = _expert(env)
    rows = collect_round(expert, expert.program, env, 1.0, episodes=1, seed=0, horizon=5, round_index=2)
    text = rows.to_csv()
    lines = text.splitlines()
    assert lines[0] == "# schema=1"
    assert lines[1] == ("obs_0,obs_1,obs_2,pid0_err,pid0_int,pid0_der,pid1_err,pid1_int,pid1_der,act_0,round")
    assert len(lines) == 2 + 5 and lines[-1].endswith(",2")


# ------------------------------------------------------------------ fitting

def test_noise_free_recovery():
    assert pid_recovery(noise=0.0, rows=2000, repeats=3) <= 1e-8


def test_noisy_recovery():
    assert pid_recovery(noise=0.01, rows=10_000, repeats=20, seed=1) <= 1e-2


def test_zero_error_stream_min_norm():
    n = 100
    data = ImitationDataset.from_arrays(np.zeros((n, 1)), np.zeros(n), np.zeros((n, 1, 3)))
    p = fit_pid(data, PID_TEMPLATE).program.outputs[0]
    assert (p.kp, p.ki, p.kd) == (0.0, 0.0, 0.0)


def test_ols_matches_normal_equations_and_beats_truth():
    rng = np.random.default_rng(4)
    data = pid_dataset(rng, 3000, noise=0.05)
    fit = fit_pid(data, PID_TEMPLATE)
    p = fit.program.outputs[0]
    ref = ols_normal_equations(data.context[:, 0, :], data.actions[:, 0])
    np.testing.assert_allclose([p.kp, p.ki, p.kd], ref, rtol=1e-9, atol=1e-10)
    truth = Program((Pid(0, 0.0, *TRUE_GAINS),))
    assert fit.mse <= linear_mse(data, truth) + 1e-12
    assert fit.mse == pytest.approx(linear_mse(data, fit.program), rel=1e-9)


def test_affine_and_guarded_template():
    rng = np.random.default_rng(5)
    X = rng.uniform(-1, 1, size=(500, 2))
    y = np.where(X[:, 0] < 0.2, 1.5 * X[:, 1] - 0.3, -2.0 * X[:, 0] + 0.7)
    template = parse("(if 0 0.2 (affine (0 0) 0) (affine (0 0) 0))", 2)
    fit = fit_pid(ImitationDataset.from_arrays(X, y), template)
    assert fit.mse < 1e-25
    then, orelse = fit.program.outputs[0].then, fit.program.outputs[0].orelse
    np.testing.assert_allclose(then.weights + (then.bias,), (0.0, 1.5, -0.3), atol=1e-12)
    np.testing.assert_allclose(orelse.weights + (orelse.bias,), (-2.0, 0.0, 0.7), atol=1e-12)


def test_saturated_labels_are_censored():
    rng = np.random.default_rng(6)
    X = rng.uniform(-1, 1, size=(400, 1))
    y = np.clip(3.0 * X[:, 0] + 0.2, -1.0, 1.0)
    fit = fit_pid(ImitationDataset.from_arrays(X, y), parse("(clip (affine (0) 0) -1 1)", 1))
    inner = fit.program.outputs[0].child
    assert inner.weights[0] == pytest.approx(3.0, abs=1e-10) and inner.bias == pytest.approx(0.2, abs=1e-10)
    assert fit.rows_used < 400


def test_fit_errors():
    with pytest.raises(ContractError):
        fit_pid(ImitationDataset.empty(1, 1, 1), PID_TEMPLATE)
    data = ImitationDataset.from_arrays(np.zeros((3, 1)), np.zeros(3), np.zeros((3, 1, 3)))
    with pytest.raises(ContractError):
        fit_pid(data, parse("(+ (pid 0 0 1 0 0) (pid 0 0 1 0 0))"))
    with pytest.raises(ContractError):
        fit_tree(data, ClassConfig())


def test_imitation_mse_uses_env_bounds():
    spec = make_env("pendulum", 0).spec
    data = ImitationDataset.from_arrays(np.zeros((4, 3)), np.full(4, 2.0))
    assert imitation_mse(parse("(const 5.0)"), data, spec) == 0.0
    assert imitation_mse(parse("(const 5.0)"), data) == 9.0


# ------------------------------------------------------------------ projection

def test_self_projection():
    dist, _ = self_projection("pendulum")
    assert dist <= 1e-6


def test_self_projection_of_prior():
    text = load_program(prior_path("pendulum"), 3)
    from propel.dsl import pretty_print
    dist, _ = self_projection("pendulum", pretty_print(text), seed=3)
    assert dist <= 1e-6


def test_behavioral_cloning_round():
    env = make_env("pendulum", 0)
    expert = _expert(env)
    cfg = DaggerConfig(rounds=1, episodes=2, horizon=40, betas=(1.0,))
    prog, m = project(expert, env, cfg, seed=7)
    rows = collect_round(expert, expert.program, env, 1.0, 2, 7 + 100, 40)
    assert np.array_equal(m.dataset.obs, rows.obs)
    train = m.dataset.subset(~m.dataset.heldout)
    assert prog == fit_pid(train, expert.program, env.spec).program


def test_dataset_growth_and_round_best():
    env = make_env("pendulum", 0)
    cfg = DaggerConfig(rounds=3, episodes=2)
    prog, m = project(_expert(env), env, cfg, seed=1)
    assert [r.rows for r in m.rounds] == [2 * 200, 4 * 200, 6 * 200]
    assert [int((m.dataset.rounds == k).sum()) for k in (1, 2, 3)] == [400, 400, 400]
    scores = [r.heldout_mse for r in m.rounds]
    assert m.best_heldout_mse == min(scores)
    assert m.best_heldout_mse <= scores[0] + 1e-9
    assert prog == m.programs[m.best_round - 1]
    assert m.best_round == scores.index(min(scores)) + 1
    validate(prog, 3)


def test_tree_projection():
    env = make_env("mountain_car", 0)
    expert = _expert(env, "(clip (affine (0.0 1000.0) 0.0) -1.0 1.0)", lam=0.0)
    cfg = DaggerConfig(rounds=2, episodes=2, horizon=200, fit=ClassConfig(kind="tree", max_depth=3))
    prog, m = project(expert, env, cfg, seed=0)
    assert isinstance(prog.outputs[0], Tree) and tree_depth(prog.outputs[0].root) <= 3
    assert m.dataset.context.shape[1] == 0
    assert "selected" in m.to_csv().splitlines()[1]


def test_projection_is_deterministic():
    env = make_env("pendulum", 0)
    a = project(_expert(env), env, DaggerConfig(rounds=2, episodes=1), seed=3)
    b = project(_expert(env), make_env("pendulum", 11), DaggerConfig(rounds=2, episodes=1), seed=3)
    assert a[0] == b[0] and a[1].to_csv() == b[1].to_csv() and a[1].dataset.to_csv() == b[1].dataset.to_csv()


def test_dagger_config_validation():
    with pytest.raises(ContractError):
        DaggerConfig(rounds=2, betas=(0.0, 1.0))
    with pytest.raises(ContractError):
        DaggerConfig(rounds=0)
    with pytest.raises(ContractError):
        DaggerConfig(rounds=2, betas=(1.0,))
    assert DaggerConfig(rounds=3).schedule() == (1.0, 0.0, 0.0)


def test_probe_distance():
    spec = make_env("pendulum", 0).spec
    p = parse("(pid 2 0.0 1.0 0.1 0.0)")
    assert probe_distance(p, p, spec) == 0.0
    assert probe_distance(Program((Const(0.0),)), Program((Const(0.5),)), spec) == 0.5
    assert probe_distance(Program((Const(0.0),)), Program((Const(9.0),)), spec) == 2.0  # env-clipped
