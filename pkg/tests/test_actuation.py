import io
import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eventcatch.actuation import (
    CAUGHT,
    MISSED_X,
    MISSED_Z,
    OutOfRangeError,
    RailSpec,
    build_table,
    catch_outcome,
    integrate_jerk_profile,
    plan_move,
    select_command,
)

SPEC = RailSpec()
TOL = 1e-9


def check_caps(plan, spec=SPEC, step=1e-6):
    t = np.arange(0.0, plan.duration + step, step)
    _, v, a, j = plan.sample(t)
    assert np.abs(v).max() <= spec.v_max + TOL
    assert np.abs(a).max() <= spec.a_max + TOL
    assert np.abs(j).max() <= spec.j_max + TOL


def test_zero_move():
    p = plan_move(SPEC, 0.0)
    assert p.duration == 0.0 and p.duration_us == 0


def test_out_of_range():
    with pytest.raises(OutOfRangeError):
        plan_move(SPEC, 0.61)


@pytest.mark.parametrize("d", [0.283, 0.3, 0.2, 0.1, 0.05, 0.001, 0.6])
def test_endpoints_and_caps(d):
    for s in (d, -d):
        p = plan_move(SPEC, s)
        x, v, a, _ = p.sample(p.duration)
        assert abs(x - s) < 1e-9 and abs(v) < 1e-9 and abs(a) < 1e-9
        x0, v0, a0, _ = p.sample(0.0)
        assert x0 == 0 and v0 == 0 and a0 == 0
        check_caps(p)


def test_symmetry():
    for d in (0.05, 0.2, 0.283):
        assert plan_move(SPEC, d).duration == plan_move(SPEC, -d).duration


def test_283mm_against_numeric_oracle():
    p = plan_move(SPEC, 0.283)
    t, x, v, a = integrate_jerk_profile(p, 1e-6)
    # oracle duration: first grid time the integrated state is at rest on target
    at_rest = np.flatnonzero((np.abs(x - 0.283) < 1e-7) & (np.abs(v) < 1e-6))
    assert abs(t[at_rest[0]] - p.duration) < 1e-4
    # closed form 193.8 ms under the default caps
    assert p.duration == pytest.approx(0.19378, abs=5e-5)


def test_phase_structure_when_all_caps_bind():
    # long move: jerk, accel and velocity limits all reached
    spec = RailSpec(half_span=5.0)
    p = plan_move(spec, 6.0)
    tj, ta, _, tv, *_ = p.phases
    assert tj == pytest.approx(50 / 1300)
    assert ta > 0 and tv > 0
    _, v, a, _ = p.sample(np.linspace(0, p.duration, 20_001))
    assert np.abs(v).max() == pytest.approx(10.0, abs=1e-9)
    assert np.abs(a).max() == pytest.approx(50.0, abs=1e-9)


def test_short_move_is_pure_jerk():
    p = plan_move(SPEC, 0.001)
    tj, ta, _, tv, *_ = p.phases
    assert ta == 0 and tv == 0
    assert tj == pytest.approx((0.001 / 2600) ** (1 / 3))


@given(st.floats(-0.6, 0.6))
def test_oracle_equivalence_property(d):
    p = plan_move(SPEC, d)
    t, x, v, a = integrate_jerk_profile(p, 1e-6)
    xc, vc, ac, _ = p.sample(t)
    assert np.abs(xc - x).max() < 1e-7
    assert abs(xc[-1] - d) < 1e-9


@given(st.floats(0, 0.6), st.floats(0, 0.6))
def test_duration_monotone(d1, d2):
    d1, d2 = sorted((d1, d2))
    assert plan_move(SPEC, d1).duration <= plan_move(SPEC, d2).duration + 1e-15


@given(
    st.floats(0.5, 20), st.floats(5, 200), st.floats(100, 5000), st.floats(-0.6, 0.6),
)
def test_caps_hold_for_any_limits(v_max, a_max, j_max, d):
    spec = RailSpec(v_max=v_max, a_max=a_max, j_max=j_max)
    p = plan_move(spec, d)
    t = np.linspace(0, p.duration, 4001)
    x, v, a, j = p.sample(t)
    assert np.abs(v).max() <= v_max * (1 + 1e-9)
    assert np.abs(a).max() <= a_max * (1 + 1e-9)
    assert np.abs(j).max() <= j_max * (1 + 1e-9)
    assert abs(x[-1] - d) < 1e-9


# table ------------------------------------------------------------------------


def test_table_entries():
    tab = build_table(SPEC, 0.1)
    np.testing.assert_allclose(tab.targets, [-0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3], atol=1e-15)
    assert tab.center_index == 3
    assert np.allclose(tab.targets, -tab.targets[::-1])
    for tgt, plan in zip(tab.targets, tab.plans):
        assert abs(plan.sample(plan.duration)[0] - tgt) < 1e-9


def test_table_wide_spacing_single_entry():
    tab = build_table(SPEC, 0.5)
    assert len(tab) == 1 and tab.targets[0] == 0.0


def test_table_csv():
    text = build_table(SPEC, 0.1).to_csv()
    rows = list(csv.DictReader(io.StringIO(text)))
    assert list(rows[0]) == ["index", "target_m", "duration_s"]
    assert len(rows) == 7 and float(rows[3]["duration_s"]) == 0.0


def test_select_command_examples():
    tab = build_table(SPEC, 0.1)
    assert tab.targets[select_command(tab, 0.14)] == pytest.approx(0.1)
    assert tab.targets[select_command(tab, 0.05)] == 0.0
    assert tab.targets[select_command(tab, -0.05)] == 0.0
    assert tab.targets[select_command(tab, 2.0)] == pytest.approx(0.3)
    assert tab.targets[select_command(tab, -2.0)] == pytest.approx(-0.3)


@given(st.floats(-1, 1))
def test_select_is_nearest(x):
    tab = build_table(SPEC, 0.1)
    i = select_command(tab, x)
    xc = min(max(x, -0.3), 0.3)
    assert abs(tab.targets[i] - xc) <= np.abs(tab.targets - xc).min() + 1e-12


# catch ------------------------------------------------------------------------


def test_catch_geometry():
    assert catch_outcome(0.1, 0.1, 0.0, SPEC) == CAUGHT
    assert catch_outcome(0.0, 0.121, 0.0, SPEC) == MISSED_X
    assert catch_outcome(0.0, 0.120, 0.0, SPEC) == CAUGHT
    assert catch_outcome(0.0, -0.120, 0.0, SPEC) == CAUGHT
    assert catch_outcome(0.0, 0.0, 0.2, SPEC) == CAUGHT
    assert catch_outcome(0.0, 0.0, -0.21, SPEC) == MISSED_Z


def test_rail_spec_invariants():
    with pytest.raises(ValueError):
        RailSpec(j_max=0)
    assert math.isclose(RailSpec().net_width, 0.24)
