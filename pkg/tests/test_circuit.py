"""Closed-form phase solvers against independent fixed-step oracles."""

import math

import pytest
from hypothesis import given, settings, strategies as st

from simoled.circuit import (
    ConverterParams,
    DampingKind,
    LedStringModel,
    TransferSegment,
    capacitor_discharge,
    charge_segment,
    classify_damping,
    discharge_segment,
    freewheel_decay,
    freewheel_segment,
    inductor_charge,
    led_current,
    transfer_phase,
)

from oracles import rk4, charge_rhs, discharge_rhs, freewheel_rhs, transfer_rhs

P = ConverterParams()
S = LedStringModel()


class TestInductorCharge:
    def test_initial_condition(self):
        assert inductor_charge(P, P.i_dc, 0.0) == P.i_dc

    def test_asymptote(self):
        # r_charge = 0.1 ohm at defaults; equilibrium v_in / r_charge = 78 A
        assert inductor_charge(P, 1.0, 10.0) == pytest.approx(78.0, rel=1e-9)

    def test_against_oracle_frozen(self):
        # rk4(charge_rhs, i0=1, t=1us, 1000 steps) == 2.0335414242354632
        assert inductor_charge(P, 1.0, 1e-6) == pytest.approx(2.0335414242354632, rel=1e-12)

    def test_zero_resistance_ramp(self):
        p0 = ConverterParams(r_l=0.0, r_q1=0.0)
        assert inductor_charge(p0, 1.0, 1e-6) == pytest.approx(1.0 + 7.8e-6 / 7.4e-6, rel=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            inductor_charge(P, math.nan, 1e-6)
        with pytest.raises(ValueError):
            inductor_charge(P, 1.0, math.inf)
        with pytest.raises(ValueError):
            inductor_charge(P, 1.0, -1e-9)

    def test_monotone_toward_asymptote(self):
        ts = [k * 1e-6 for k in range(30)]
        below = [inductor_charge(P, 1.0, t) for t in ts]
        assert all(b < a <= 78.0 for b, a in zip(below, below[1:]))
        above = [inductor_charge(P, 100.0, t) for t in ts]
        assert all(a < b for a, b in zip(above[1:], above))


class TestCapacitorDischarge:
    def test_initial_condition(self):
        assert capacitor_discharge(S, 11.45, 0.0) == 11.45

    def test_asymptote(self):
        s = LedStringModel(v_f=11.3)
        assert capacitor_discharge(s, 11.45, 10.0) == pytest.approx(11.3, rel=1e-12)

    def test_against_oracle_frozen(self):
        # rk4(discharge_rhs, v0=11.45, t=100us, 10000 steps) == 11.416820117460631
        s = LedStringModel(v_f=11.3)
        assert capacitor_discharge(s, 11.45, 100e-6) == pytest.approx(11.416820117460631, rel=1e-12)

    def test_monotone_toward_v_f(self):
        vals = [capacitor_discharge(S, 12.0, k * 1e-4) for k in range(20)]
        assert all(b > a >= S.v_f for a, b in zip(vals[1:], vals))


class TestFreewheel:
    def test_ideal_loop_holds_current(self):
        p0 = ConverterParams(r_fw=0.0)
        assert freewheel_decay(p0, 1.0, 5e-3) == 1.0

    def test_initial_condition(self):
        assert freewheel_decay(P, 1.0, 0.0) == 1.0

    def test_against_oracle_frozen(self):
        # rk4(freewheel_rhs, i0=1, t=50us, 5000 steps) == 0.7133109505660115
        assert freewheel_decay(P, 1.0, 50e-6) == pytest.approx(0.7133109505660115, rel=1e-12)


class TestTransferPhase:
    def test_initial_conditions(self):
        v, i = transfer_phase(P, S, 10.0, 5.0, 0.0)
        assert v == 10.0
        assert i == pytest.approx(5.0, abs=1e-12)

    def test_equilibrium(self):
        v_inf = (S.r_led * P.v_in + P.r_transfer * S.v_f) / (S.r_led + P.r_transfer)
        i_inf = (P.v_in - S.v_f) / (P.r_transfer + S.r_led)
        v, i = transfer_phase(P, S, 10.0, 5.0, 1.0)
        assert v == pytest.approx(v_inf, rel=1e-9)
        assert i == pytest.approx(i_inf, rel=1e-9)

    def test_against_oracle_frozen(self):
        # rk4(transfer_rhs, (10, 5), t=2us, 2000 steps) == (10.010760685271867, 4.278584880338454)
        v, i = transfer_phase(P, S, 10.0, 5.0, 2e-6)
        assert v == pytest.approx(10.010760685271867, rel=1e-12)
        assert i == pytest.approx(4.278584880338454, rel=1e-10)

    def test_node_consistency_sampled(self):
        seg = TransferSegment(P, S, 10.0, 5.0, conducting=True)
        for k in range(1, 65):
            t = 2e-6 * k / 64
            i = seg.i_value(t)
            resid = i - S.c_out * seg.v.derivative(t) - (seg.v_value(t) - S.v_f) / S.r_led
            assert abs(resid) <= 1e-6 * max(1.0, abs(i))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            transfer_phase(P, S, math.inf, 5.0, 1e-6)


class TestLedCurrent:
    def test_off_is_zero(self):
        assert led_current(S, 12.0, False) == 0.0

    def test_linear_branch(self):
        s = LedStringModel(v_f=11.3)
        assert led_current(s, 11.37, True) == pytest.approx(0.35, rel=1e-12)

    def test_clamped_non_negative(self):
        s = LedStringModel(v_f=11.3)
        assert led_current(s, 11.0, True) == 0.0


class TestClassifyDamping:
    def test_overdamped_by_construction(self):
        p = ConverterParams(l=1.0, r_l=5.0, r_q2=5.0, f_c=1.0, dead_time=0.0)
        s = LedStringModel(c_out=1.0, r_led=1.0)
        assert classify_damping(p, s).kind is DampingKind.OVERDAMPED

    def test_default_parameters_underdamped(self):
        # disc = a1^2 - 4 a0 = -1.48e8 < 0 at the default parameter set
        dc = classify_damping(P, S)
        assert dc.kind is DampingKind.UNDERDAMPED
        assert dc.alpha == pytest.approx(8006.756756756757, rel=1e-12)
        assert dc.omega == pytest.approx(6102.720507239488, rel=1e-12)

    def test_exact_critical_boundary(self):
        # pick r_led, c, l then solve r_b for a1^2 == 4 a0
        l, c, r_led = 1e-6, 1e-6, 1.0
        # a1 = r_b/l + 1/(c r_led), a0 = (r_led + r_b)/(l c r_led)
        # scan r_b for sign change then bisect
        def disc(r_b):
            a1 = r_b / l + 1.0 / (c * r_led)
            a0 = (r_led + r_b) / (l * c * r_led)
            return a1 * a1 - 4.0 * a0
        lo, hi = 0.0, 10.0
        assert disc(lo) < 0 < disc(hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if disc(mid) < 0:
                lo = mid
            else:
                hi = mid
        r_b = 0.5 * (lo + hi)
        p = ConverterParams(l=l, r_l=0.0, r_q2=r_b, dead_time=0.0)
        s = LedStringModel(c_out=c, r_led=r_led)
        assert classify_damping(p, s).kind is DampingKind.CRITICALLY_DAMPED

    def test_roots_match_polynomial(self):
        dc = classify_damping(P, S)
        a1 = 2 * dc.alpha
        a0 = dc.alpha**2 + dc.omega**2
        for r in dc.roots:
            assert abs(r * r + a1 * r + a0) <= 1e-6 * a0


# Randomized closed-form vs oracle equivalence (the module-level property).

pos = st.floats(min_value=0.01, max_value=100.0, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(
    v_in=st.floats(min_value=1.0, max_value=50.0),
    l=st.floats(min_value=1e-6, max_value=1e-3),
    r=st.floats(min_value=0.0, max_value=5.0),
    i0=st.floats(min_value=0.0, max_value=20.0),
    frac=st.floats(min_value=0.01, max_value=1.0),
)
def test_charge_matches_oracle_randomized(v_in, l, r, i0, frac):
    p = ConverterParams(v_in=v_in, l=l, r_l=r, r_q1=0.0)
    t = frac * l / max(r, 1e-3)  # up to one time constant
    ora = rk4(charge_rhs(p), [i0], t, 400)[0]
    assert inductor_charge(p, i0, t) == pytest.approx(ora, rel=1e-6, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(
    v_f=st.floats(min_value=1.0, max_value=40.0),
    r_led=st.floats(min_value=0.05, max_value=5.0),
    c=st.floats(min_value=1e-5, max_value=1e-2),
    dv=st.floats(min_value=-5.0, max_value=5.0),
    frac=st.floats(min_value=0.01, max_value=2.0),
)
def test_discharge_matches_oracle_randomized(v_f, r_led, c, dv, frac):
    s = LedStringModel(v_f=v_f, r_led=r_led, c_out=c, r_sense=0.0)
    t = frac * c * r_led
    ora = rk4(discharge_rhs(s), [v_f + dv], t, 400)[0]
    assert capacitor_discharge(s, v_f + dv, t) == pytest.approx(ora, rel=1e-6, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(
    l=st.floats(min_value=1e-6, max_value=1e-4),
    c=st.floats(min_value=1e-5, max_value=1e-2),
    r_led=st.floats(min_value=0.05, max_value=2.0),
    r_b=st.floats(min_value=0.0, max_value=2.0),
    v0=st.floats(min_value=0.0, max_value=20.0),
    i0=st.floats(min_value=0.0, max_value=10.0),
)
def test_transfer_matches_oracle_randomized(l, c, r_led, r_b, v0, i0):
    p = ConverterParams(l=l, r_l=0.0, r_q2=r_b, dead_time=0.0)
    s = LedStringModel(c_out=c, r_led=r_led, r_sense=0.0)
    t = 0.5 * math.sqrt(l * c)  # a fraction of the natural period
    ora_v, ora_i = rk4(transfer_rhs(p, s), [v0, i0], t, 800)
    v, i = transfer_phase(p, s, v0, i0, t)
    assert v == pytest.approx(ora_v, rel=1e-6, abs=1e-8)
    assert i == pytest.approx(ora_i, rel=1e-6, abs=1e-8)


def test_damping_branch_continuity_near_critical():
    # within +/-0.1% of the critical discriminant the selected branch must
    # still match the oracle to 1e-5 relative
    l, c, r_led = 1e-6, 1e-6, 1.0
    def disc(r_b):
        a1 = r_b / l + 1.0 / (c * r_led)
        a0 = (r_led + r_b) / (l * c * r_led)
        return a1 * a1 - 4.0 * a0
    lo, hi = 0.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if disc(mid) < 0:
            lo = mid
        else:
            hi = mid
    r_crit = 0.5 * (lo + hi)
    t = 0.5 * math.sqrt(l * c)
    for scale in (0.999, 0.9999, 1.0, 1.0001, 1.001):
        p = ConverterParams(l=l, r_l=0.0, r_q2=r_crit * scale, dead_time=0.0)
        s = LedStringModel(c_out=c, r_led=r_led, r_sense=0.0)
        ora_v, ora_i = rk4(transfer_rhs(p, s), [2.0, 1.0], t, 2000)
        v, i = transfer_phase(p, s, 2.0, 1.0, t)
        assert v == pytest.approx(ora_v, rel=1e-5)
        assert i == pytest.approx(ora_i, rel=1e-5, abs=1e-8)


def test_segment_integrals_match_dense_quadrature():
    import numpy as np

    seg = TransferSegment(P, S, 10.0, 5.0, conducting=True)
    h = 2e-6
    iv, iv2, ii, ii2 = seg.integrals(h)
    ts = np.linspace(0.0, h, 20001)
    vv = np.array([seg.v_value(t) for t in ts])
    ia = np.array([seg.i_value(t) for t in ts])
    assert iv == pytest.approx(np.trapezoid(vv, ts), rel=1e-9)
    assert iv2 == pytest.approx(np.trapezoid(vv * vv, ts), rel=1e-9)
    assert ii == pytest.approx(np.trapezoid(ia, ts), rel=1e-9)
    assert ii2 == pytest.approx(np.trapezoid(ia * ia, ts), rel=1e-9)

    fo = charge_segment(P, 1.0)
    hi, hi2 = fo.integrals(h)
    iv = np.array([fo.value(t) for t in ts])
    assert hi == pytest.approx(np.trapezoid(iv, ts), rel=1e-9)
    assert hi2 == pytest.approx(np.trapezoid(iv * iv, ts), rel=1e-9)

    fw = freewheel_segment(P, 2.0)
    wi, wi2 = fw.integrals(100e-6)
    ts = np.linspace(0.0, 100e-6, 20001)
    iv = np.array([fw.value(t) for t in ts])
    assert wi == pytest.approx(np.trapezoid(iv, ts), rel=1e-9)
    assert wi2 == pytest.approx(np.trapezoid(iv * iv, ts), rel=1e-9)


def test_parameter_validation():
    with pytest.raises(ValueError):
        ConverterParams(v_in=-1.0)
    with pytest.raises(ValueError):
        ConverterParams(duty_min=0.5, duty_max=0.4)
    with pytest.raises(ValueError):
        LedStringModel(v_f=0.0)
    with pytest.raises(ValueError):
        LedStringModel(r_sense=0.5, r_led=0.2)


def test_headroom_warning():
    s = LedStringModel(v_f=5.0, i_ref=0.1, r_led=0.2)
    with pytest.warns(UserWarning, match="boost operation"):
        s.check_boost_headroom(P)
