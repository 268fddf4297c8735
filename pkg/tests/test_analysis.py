from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossbar_qec import analysis as an
from crossbar_qec.qec import CodeSpec, Cycle, Family, Mode, compile_cycle

P = an.ErrorParams()


def test_tau_total_is_affine():
    assert an.tau_total(0) == 6000
    for d in range(1, 40):
        assert an.tau_total(d) - an.tau_total(d - 1) == 2240
    assert an.tau_total(3) == 6000 + 3 * 2240


def test_p_dec_and_operation_constant():
    assert an.p_dec(1) == Fraction(8240, 10**9) / 2
    assert isinstance(an.p_tot(7), Fraction)
    assert an.p_operation() == Fraction(27, 1000)
    assert an.p_tot(5) == Fraction(27, 1000) + an.p_dec(5)


def test_verbatim_slope():
    assert an.p_tot(10, fixed_slope=True) == Fraction(27, 1000) + Fraction(28, 10**5)


def test_pairing_switch_keeps_constant_for_equal_rates():
    swapped = an.CountModel(swap_shuttle_zwait=False)
    assert swapped.operation_coefficients()["shuttle"] == 10
    assert an.DEFAULT_COUNTS.operation_coefficients()["shuttle"] == Fraction(7, 2)
    assert an.p_operation(P, swapped) == an.p_operation(P, an.DEFAULT_COUNTS)
    uneven = an.ErrorParams(p_sh=Fraction(2, 1000))
    assert an.p_operation(uneven, swapped) - an.p_operation(uneven, an.DEFAULT_COUNTS) == Fraction(65, 10**4)


def test_p_logical_at_threshold_ratio():
    for d in (3, 9, 41):
        params = an.ErrorParams(p_th=an.p_tot(d) / 8)
        assert an.p_logical(d, params) == Fraction(3, 100)


def test_p_logical_rejects_even_or_small_d():
    for d in (1, 4):
        with pytest.raises(an.AnalysisError):
            an.p_logical(d)


@pytest.mark.parametrize("fixed_slope", [False, True])
def test_p_logical_decreasing_below_threshold(fixed_slope):
    pts = an.sweep(fixed_slope=fixed_slope)
    assert all(p.p_tot < 8 * P.p_th for p in pts)
    assert all(b.p_logical < a.p_logical for a, b in zip(pts, pts[1:]))


def test_sweep_bounds_and_warnings():
    pts = an.sweep(d_min=2, d_max=11)
    assert [p.d for p in pts] == [3, 5, 7, 9, 11]
    assert an.warnings(pts) == []
    with pytest.raises(an.AnalysisError):
        an.sweep(d_min=9, d_max=3)
    hot = an.ErrorParams(p_sw=1, p_sh=1, p_z=1, p_gl=1, p_m=1)
    assert an.warnings(an.sweep(hot, d_max=5)) == [3, 5]


def test_optimum_and_crossing():
    assert an.optimal_distance() == 199
    assert an.optimal_distance(d_max=311, fixed_slope=True) <= 311
    d = an.crossing_distance()
    assert d is not None and an.p_logical(d) <= Fraction(1, 10**20) < an.p_logical(d - 2)
    assert an.crossing_distance(fixed_slope=True) is None


def test_params_parse_roundtrip_and_errors():
    text = "# inputs\np_sw = 0.002\ntau_gl_ns = 500  # slower\n"
    params = an.ErrorParams.parse(text)
    assert params.p_sw == Fraction(1, 500) and params.tau_gl == 500
    assert an.ErrorParams.parse(params.dumps()) == params
    for bad in ("p_sw 0.1\n", "nope = 1\n", "p_sw = abc\n", "p_sw = 2\n", "tau_sw_ns = 0\n"):
        with pytest.raises(an.AnalysisError):
            an.ErrorParams.parse(bad)


def test_csv_format():
    text = an.curve_csv(an.sweep(d_max=5))
    lines = text.splitlines()
    assert lines[0] == an.CSV_HEADER
    assert lines[1].startswith("3,12720,")
    assert len(lines) == 3 and text.endswith("\n")


def test_counts_from_compiled_plan():
    plan = compile_cycle(CodeSpec(Family.SURFACE, 3), Cycle.FULL, Mode.LINE_BY_LINE)
    counts = an.CountModel.from_plan(plan)
    assert counts.per_qubit == an.DEFAULT_COUNTS.per_qubit
    assert counts.steps["global"] == 6


@settings(max_examples=80, deadline=None)
@given(
    st.fractions(Fraction(0), Fraction(1, 100)),
    st.fractions(Fraction(0), Fraction(1, 100)),
    st.integers(1, 60).map(lambda k: 2 * k + 1),
)
def test_logical_error_monotone_in_rate(p1, p2, d):
    lo, hi = sorted((p1, p2))
    a = an.p_logical(d, an.ErrorParams(p_sw=lo))
    b = an.p_logical(d, an.ErrorParams(p_sw=hi))
    assert a <= b


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 2000), st.integers(1, 2000), st.integers(0, 300))
def test_tau_total_affine_property(tsw, tsh, d):
    params = an.ErrorParams(tau_sw=tsw, tau_sh=tsh)
    assert an.tau_total(d + 1, params) - an.tau_total(d, params) == an.tau_total(1, params) - an.tau_total(0, params)
