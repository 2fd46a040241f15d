import math

import numpy as np
import pytest

from propel.dsl import parse, random_program
from propel.errors import ConfigError, ContractError, VerificationError
from propel.verify import Interval, ObsBox, lipschitz_bound, load_box, output_range, verify

from checks import verifier_soundness

BOX1 = ObsBox((-1.0,), (2.0,))


def test_const_range():
    assert output_range(parse("(const 0.3)"), BOX1, 0.1) == [Interval(0.3, 0.3)]


def test_affine_range_exact():
    assert output_range(parse("(affine (1.0) 0.0)"), BOX1, 0.1) == [Interval(-1.0, 2.0)]
    box = ObsBox((-1.0, 0.0), (1.0, 2.0))
    assert output_range(parse("(affine (2.0 -1.0) 0.5)"), box, 0.1) == [Interval(-3.5, 2.5)]


def test_affine_lipschitz_is_norm():
    box = ObsBox((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
    (L, certs), = lipschitz_bound(parse("(affine (3.0 -4.0 0.0) 1.0)"), box, 0.1)
    assert L == 5.0 and certs == []


def test_pid_lipschitz():
    box = ObsBox((-1.0, -1.0), (1.0, 1.0))
    (L, _), = lipschitz_bound(parse("(pid 1 0.0 2.0 0.0 0.0)"), box, 0.05)
    assert L == 2.0
    (L, _), = lipschitz_bound(parse("(pid 1 0.0 2.0 1.0 0.1)"), ObsBox((-1.0, -1.0), (1.0, 1.0), integral=1.0), 0.05)
    assert L == pytest.approx(2.0 + 0.05 + 2.0)


def test_unbounded_integral():
    with pytest.raises(VerificationError, match="unbounded term"):
        output_range(parse("(pid 0 0.0 1.0 0.5 0.0)"), BOX1, 0.1)
    iv, = output_range(parse("(pid 0 0.0 1.0 0.5 0.0)"), ObsBox((-1.0,), (2.0,), integral=2.0), 0.1)
    assert iv == Interval(-3.0, 2.0)


def test_derivative_uses_error_change_bound():
    iv, = output_range(parse("(pid 0 0.0 0.0 0.0 1.0)"), ObsBox((-1.0,), (2.0,), error_change=0.5), 0.1)
    assert iv == Interval(-5.0, 5.0)
    iv, = output_range(parse("(pid 0 0.0 0.0 0.0 1.0)"), BOX1, 0.1)
    assert iv == Interval(-30.0, 30.0)


def test_guards():
    prog = parse("(if 0 0.5 (const 1.0) (affine (2.0) 0.0))")
    iv, = output_range(prog, BOX1, 0.1)
    assert iv == Interval(1.0, 4.0)
    (L, certs), = lipschitz_bound(prog, BOX1, 0.1)
    assert L == 2.0
    assert len(certs) == 1 and certs[0].threshold == 0.5 and certs[0].jump == 0.0
    # box entirely on one side: no certificate, branch-only range
    (L, certs), = lipschitz_bound(prog, ObsBox((0.6,), (2.0,)), 0.1)
    assert certs == [] and L == 2.0
    assert output_range(prog, ObsBox((-1.0,), (0.4,)), 0.1) == [Interval(1.0, 1.0)]


def test_tree_certificates():
    prog = parse("(tree (split 0 0.0 (leaf -1.0) (leaf 1.0)))")
    (L, certs), = lipschitz_bound(prog, BOX1, 0.1)
    assert L == 0.0 and certs[0].jump == 2.0


def test_clip_range():
    assert output_range(parse("(clip (affine (5.0) 0.0) -1 1)"), BOX1, 0.1) == [Interval(-1.0, 1.0)]


def test_enlarging_box_never_shrinks():
    rng = np.random.default_rng(0)
    for _ in range(200):
        prog = random_program(rng, 2, depth=3)
        small = ObsBox((-0.5, -0.2), (0.3, 0.4), error_change=0.5, integral=1.0)
        big = ObsBox((-1.0, -0.5), (0.5, 1.0), error_change=0.7, integral=2.0)
        a, = output_range(prog, small, 0.05)
        b, = output_range(prog, big, 0.05)
        assert b.lo <= a.lo and a.hi <= b.hi


def test_monte_carlo_soundness():
    assert verifier_soundness(n_programs=30, probes=1000, seed=3) == (0, 0)


def test_box_validation():
    with pytest.raises(ContractError):
        ObsBox((1.0,), (0.0,))
    with pytest.raises(ContractError):
        ObsBox((0.0,), (1.0,), integral=-1.0)
    with pytest.raises(ContractError):
        output_range(parse("(feature 1)"), BOX1, 0.1)


def test_load_box(tmp_path):
    path = tmp_path / "p.box"
    path.write_text("# pendulum\n-1 1\n-1 1\n-8 8\nintegral 2.5\ndelta 0.4\ndt 0.05\n")
    box, dt = load_box(path)
    assert box.lo == (-1.0, -1.0, -8.0) and box.hi == (1.0, 1.0, 8.0)
    assert box.integral == 2.5 and box.error_change == 0.4 and dt == 0.05
    bad = tmp_path / "bad.box"
    bad.write_text("1 0\n")
    with pytest.raises(ConfigError):
        load_box(bad)
    bad.write_text("1 2 3\n")
    with pytest.raises(ConfigError):
        load_box(bad)


def test_report_outputs():
    prog = parse("(program (const 0.5) (if 0 0.0 (const 0.0) (const 1.0)))")
    rep = verify(prog, BOX1, 0.1)
    text = rep.render_text()
    assert text.startswith("# Lipschitz bounds are for the per-step map at fixed accumulator state")
    assert "act_0: interval [0.5, 0.5]" in text and "guard obs_0 < 0.0: jump <= 1.0" in text
    lines = rep.to_csv().splitlines()
    assert lines[:2] == ["# schema=1", "action,lo,hi,lipschitz,n_discontinuities"]
    assert lines[2] == "0,0.5,0.5,0.0,0" and lines[3] == "1,0.0,1.0,0.0,1"
    assert all(iv.lo <= iv.hi for iv in rep.intervals) and all(L >= 0 and math.isfinite(L) for L in rep.lipschitz)
