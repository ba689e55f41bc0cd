"""Electrical model of the shared boost stage and the LED string loads.

The driver circuit is piecewise linear: depending on the switch states the
inductor current and each output capacitor voltage obey first or second order
linear ODEs with constant coefficients.  This module holds the parameter
types and the closed-form solution of every phase:

* inductor charge   (main switch on, source drives L through r_l + r_q1)
* capacitor discharge (an ON string fed only by its capacitor)
* transfer          (inductor discharges into the selected channel)
* freewheel         (inductor shorted, current decays through the loop)

All functions are pure; the simulation engine composes them segment by
segment.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

# Relative tolerance band around zero discriminant inside which the
# repeated-root (critically damped) solution is used.
CRITICAL_DAMPING_TOL = 1e-9

# 12-point Gauss-Legendre rule mapped to [0, 1]; effectively exact for the
# exponential/trigonometric integrands on the segment lengths the engine
# produces (|s|*h well below ~40).
_gl_x, _gl_w = np.polynomial.legendre.leggauss(12)
_GL_NODES = tuple((_gl_x + 1.0) / 2.0)
_GL_WEIGHTS = tuple(_gl_w / 2.0)
del _gl_x, _gl_w


class PhaseKind(Enum):
    """Inductor-side phase, plus the per-string capacitor discharge that runs
    concurrently on every ON string not being charged."""

    INDUCTOR_CHARGE = "charge"
    TRANSFER = "transfer"
    FREEWHEEL = "freewheel"
    CAPACITOR_DISCHARGE = "discharge"


class DampingKind(Enum):
    OVERDAMPED = "overdamped"
    CRITICALLY_DAMPED = "critically_damped"
    UNDERDAMPED = "underdamped"


@dataclass(frozen=True)
class DampingClass:
    """Damping classification of the transfer phase characteristic polynomial
    s^2 + a1*s + a0.

    ``alpha`` is the decay rate a1/2.  For an overdamped pair the real roots
    are -alpha +/- omega; critically damped has the repeated root -alpha
    (omega == 0); underdamped has the complex pair -alpha +/- j*omega.
    """

    kind: DampingKind
    alpha: float
    omega: float

    @property
    def roots(self) -> tuple[complex, complex]:
        if self.kind is DampingKind.UNDERDAMPED:
            return (complex(-self.alpha, self.omega), complex(-self.alpha, -self.omega))
        return (complex(-self.alpha + self.omega), complex(-self.alpha - self.omega))


@dataclass(frozen=True)
class ConverterParams:
    """Electrical constants of the shared boost stage.

    Resistances are lumped: r_l is the inductor ESR, r_q1 the main switch on
    resistance, r_q2 the channel path (selector switch plus diode branch),
    r_fw the freewheel loop.  i_dc is the pseudo-continuous conduction floor
    the freewheel switch maintains.  duty_min/duty_max clamp the boost duty
    command and dead_time separates consecutive charge slots.
    """

    v_in: float = 7.8
    l: float = 7.4e-6
    r_l: float = 0.05
    r_q1: float = 0.05
    r_q2: float = 0.05
    r_fw: float = 0.05
    f_c: float = 400e3
    i_dc: float = 1.0
    duty_min: float = 0.0
    duty_max: float = 0.95
    dead_time: float = 16e-6

    def __post_init__(self):
        problems = []
        for name in ("v_in", "l", "f_c"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        for name in ("r_l", "r_q1", "r_q2", "r_fw", "i_dc", "dead_time"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        if not (0 <= self.duty_min < self.duty_max <= 1):
            problems.append("duty clamp must satisfy 0 <= duty_min < duty_max <= 1")
        for name in self.__dataclass_fields__:
            if not math.isfinite(getattr(self, name)):
                problems.append(f"{name} must be finite")
        if problems:
            raise ValueError("invalid ConverterParams: " + "; ".join(problems))

    @property
    def r_charge(self) -> float:
        """Series resistance of the inductor charge loop (r_l + r_q1)."""
        return self.r_l + self.r_q1

    @property
    def r_transfer(self) -> float:
        """Series resistance of the transfer loop (r_l + r_q2)."""
        return self.r_l + self.r_q2

    @property
    def t_c(self) -> float:
        """Boost switching period."""
        return 1.0 / self.f_c


@dataclass(frozen=True)
class LedStringModel:
    """Per-channel load: forward voltage, total equivalent series resistance
    (sense resistor plus dimming switch, r_sense of it being the sense part),
    output capacitance and the reference LED current."""

    id: int = 1
    v_f: float = 11.23
    r_led: float = 0.2
    c_out: float = 2000e-6
    i_ref: float = 0.35
    r_sense: float = 0.1

    def __post_init__(self):
        problems = []
        for name in ("v_f", "r_led", "c_out", "i_ref"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        if self.id < 1:
            problems.append("id is 1-based")
        if not 0 <= self.r_sense <= self.r_led:
            problems.append("r_sense must lie in [0, r_led]")
        for name in ("v_f", "r_led", "c_out", "i_ref", "r_sense"):
            if not math.isfinite(getattr(self, name)):
                problems.append(f"{name} must be finite")
        if problems:
            raise ValueError(f"invalid LedStringModel {self.id}: " + "; ".join(problems))

    @property
    def tau(self) -> float:
        """Discharge time constant c_out * r_led."""
        return self.c_out * self.r_led

    def check_boost_headroom(self, params: ConverterParams) -> None:
        """Warn when the regulation target does not exceed the source voltage."""
        target = self.v_f + self.i_ref * self.r_led
        if target <= params.v_in:
            warnings.warn(
                f"string {self.id}: target voltage {target:.3f} V does not exceed "
                f"v_in = {params.v_in:.3f} V; boost operation is not meaningful",
                stacklevel=2,
            )


def _require_finite(**values: float) -> None:
    for name, value in values.items():
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value!r}")


def _require_time(t: float) -> None:
    _require_finite(t=t)
    if t < 0:
        raise ValueError(f"elapsed time must be >= 0, got {t!r}")


class FirstOrderSegment:
    """Solution x(t) = x0 + delta * (exp(-rate*t) - 1) of a first order phase
    (delta = x0 - asymptote), degrading to the ramp x0 + slope * t when the
    rate vanishes.  The expm1 form stays accurate when rate*t is tiny even if
    the asymptote is enormous."""

    __slots__ = ("x0", "delta", "rate", "slope", "_ramp")

    def __init__(self, x0: float, asymptote: float, rate: float):
        self.x0 = x0
        self.delta = x0 - asymptote
        self.rate = rate
        self.slope = -rate * self.delta
        self._ramp = False

    @classmethod
    def ramp(cls, x0: float, slope: float) -> "FirstOrderSegment":
        seg = cls.__new__(cls)
        seg.x0 = x0
        seg.delta = 0.0
        seg.rate = 0.0
        seg.slope = slope
        seg._ramp = True
        return seg

    @property
    def asymptote(self) -> float:
        return math.inf if self._ramp and self.slope else self.x0 - self.delta

    def value(self, t: float) -> float:
        if self._ramp:
            return self.x0 + self.slope * t
        return self.x0 + self.delta * math.expm1(-self.rate * t)

    def derivative(self, t: float) -> float:
        if self._ramp:
            return self.slope
        return -self.rate * self.delta * math.exp(-self.rate * t)

    def integrals(self, h: float) -> tuple[float, float]:
        """Exact (integral of x, integral of x^2) over [0, h]."""
        if self._ramp:
            x0, k = self.x0, self.slope
            return (x0 * h + 0.5 * k * h * h,
                    x0 * x0 * h + x0 * k * h * h + k * k * h * h * h / 3.0)
        x0, d, r = self.x0, self.delta, self.rate
        z = r * h
        if z < 1e-4:
            # series for u1 = int (e^-rt - 1) dt and u2 = int (e^-rt - 1)^2 dt
            u1 = -h * z * (0.5 - z / 6.0 + z * z / 24.0)
            u2 = h * z * z * (1.0 / 3.0 - z / 4.0 + 7.0 * z * z / 60.0)
        else:
            em = math.expm1(-z)
            em2 = math.expm1(-2.0 * z)
            u1 = -(em + z) / r
            u2 = h + (2.0 * em - 0.5 * em2) / r
        return (x0 * h + d * u1, x0 * x0 * h + 2.0 * x0 * d * u1 + d * d * u2)


class SecondOrderSegment:
    """Solution of x'' + a1 x' + a0 x = a0 * x_inf with the branch picked by
    the discriminant; all three damping branches are implemented."""

    __slots__ = ("kind", "x_inf", "alpha", "omega", "p", "q", "a1", "a0")

    def __init__(self, a1: float, a0: float, x_inf: float, x0: float, xdot0: float):
        self.a1 = a1
        self.a0 = a0
        self.x_inf = x_inf
        disc = a1 * a1 - 4.0 * a0
        scale = max(a1 * a1, abs(4.0 * a0))
        alpha = 0.5 * a1
        dx = x0 - x_inf
        if abs(disc) <= CRITICAL_DAMPING_TOL * scale:
            self.kind = DampingKind.CRITICALLY_DAMPED
            self.alpha = alpha
            self.omega = 0.0
            self.p = dx
            self.q = xdot0 + alpha * dx
        elif disc < 0.0:
            omega = 0.5 * math.sqrt(-disc)
            self.kind = DampingKind.UNDERDAMPED
            self.alpha = alpha
            self.omega = omega
            self.p = dx
            self.q = (xdot0 + alpha * dx) / omega
        else:
            omega = 0.5 * math.sqrt(disc)
            s1 = -alpha + omega
            s2 = -alpha - omega
            self.kind = DampingKind.OVERDAMPED
            self.alpha = alpha
            self.omega = omega
            a = (xdot0 - s2 * dx) / (s1 - s2)
            self.p = a
            self.q = dx - a

    def value(self, t: float) -> float:
        if self.kind is DampingKind.UNDERDAMPED:
            e = math.exp(-self.alpha * t)
            return self.x_inf + e * (self.p * math.cos(self.omega * t)
                                     + self.q * math.sin(self.omega * t))
        if self.kind is DampingKind.OVERDAMPED:
            return (self.x_inf
                    + self.p * math.exp((-self.alpha + self.omega) * t)
                    + self.q * math.exp((-self.alpha - self.omega) * t))
        return self.x_inf + (self.p + self.q * t) * math.exp(-self.alpha * t)

    def derivative(self, t: float) -> float:
        if self.kind is DampingKind.UNDERDAMPED:
            e = math.exp(-self.alpha * t)
            c = math.cos(self.omega * t)
            s = math.sin(self.omega * t)
            return e * ((-self.alpha * self.p + self.omega * self.q) * c
                        - (self.alpha * self.q + self.omega * self.p) * s)
        if self.kind is DampingKind.OVERDAMPED:
            s1 = -self.alpha + self.omega
            s2 = -self.alpha - self.omega
            return self.p * s1 * math.exp(s1 * t) + self.q * s2 * math.exp(s2 * t)
        e = math.exp(-self.alpha * t)
        return (self.q - self.alpha * (self.p + self.q * t)) * e

    def second_derivative(self, t: float) -> float:
        return self.a0 * (self.x_inf - self.value(t)) - self.a1 * self.derivative(t)


class TransferSegment:
    """Coupled (v_c, i_l) solution of the transfer phase.

    The capacitor voltage solves the second order equation directly; the
    inductor current is derived from it through the capacitor node equation,
    which keeps the pair exactly consistent.  ``conducting`` selects between
    the LED branch carrying current (v_c above the forward voltage) and the
    plain series loop when the LEDs are cut off.
    """

    __slots__ = ("v", "conducting", "c_out", "g_led", "v_f", "i_inf")

    def __init__(self, params: ConverterParams, string: LedStringModel,
                 v_c0: float, i_l0: float, conducting: bool = True):
        l = params.l
        c = string.c_out
        r_b = params.r_transfer
        r_led = string.r_led
        if conducting:
            a1 = r_b / l + 1.0 / (c * r_led)
            a0 = (r_led + r_b) / (l * c * r_led)
            v_inf = (r_led * params.v_in + r_b * string.v_f) / (r_led + r_b)
            vdot0 = (i_l0 + (string.v_f - v_c0) / r_led) / c
            self.g_led = 1.0 / r_led
            self.i_inf = (params.v_in - string.v_f) / (r_b + r_led)
        else:
            a1 = r_b / l
            a0 = 1.0 / (l * c)
            v_inf = params.v_in
            vdot0 = i_l0 / c
            self.g_led = 0.0
            self.i_inf = 0.0
        self.v = SecondOrderSegment(a1, a0, v_inf, v_c0, vdot0)
        self.conducting = conducting
        self.c_out = c
        self.v_f = string.v_f

    def v_value(self, t: float) -> float:
        return self.v.value(t)

    def i_value(self, t: float) -> float:
        return self.c_out * self.v.derivative(t) + self.g_led * (self.v.value(t) - self.v_f)

    def i_derivative(self, t: float) -> float:
        return self.c_out * self.v.second_derivative(t) + self.g_led * self.v.derivative(t)

    def integrals(self, h: float) -> tuple[float, float, float, float]:
        """Gauss-Legendre (int v, int v^2, int i, int i^2) over [0, h]."""
        sv = sv2 = si = si2 = 0.0
        vval = self.v.value
        vder = self.v.derivative
        c = self.c_out
        g = self.g_led
        v_f = self.v_f
        for node, w in zip(_GL_NODES, _GL_WEIGHTS):
            t = node * h
            vv = vval(t)
            ii = c * vder(t) + g * (vv - v_f)
            sv += w * vv
            sv2 += w * vv * vv
            si += w * ii
            si2 += w * ii * ii
        return (sv * h, sv2 * h, si * h, si2 * h)


def charge_segment(params: ConverterParams, i_l0: float) -> FirstOrderSegment:
    """Inductor current during the charge phase (main switch on)."""
    r = params.r_charge
    if r == 0.0:
        return FirstOrderSegment.ramp(i_l0, params.v_in / params.l)
    return FirstOrderSegment(i_l0, params.v_in / r, r / params.l)


def freewheel_segment(params: ConverterParams, i_l0: float) -> FirstOrderSegment:
    """Inductor current circulating in the freewheel loop."""
    if params.r_fw == 0.0:
        return FirstOrderSegment.ramp(i_l0, 0.0)
    return FirstOrderSegment(i_l0, 0.0, params.r_fw / params.l)


def discharge_segment(string: LedStringModel, v_c0: float) -> FirstOrderSegment:
    """Capacitor voltage of an ON string fed only by its capacitor."""
    return FirstOrderSegment(v_c0, string.v_f, 1.0 / string.tau)


def hold_segment(x0: float) -> FirstOrderSegment:
    """Constant state (OFF string capacitor, or a cut-off discharge)."""
    return FirstOrderSegment.ramp(x0, 0.0)


def inductor_charge(params: ConverterParams, i_l0: float, t: float) -> float:
    """Inductor current after charging for time t from i_l0.

    Monotone toward v_in / (r_l + r_q1); a zero-resistance loop degrades to
    the linear ramp i_l0 + (v_in / l) * t.
    """
    _require_finite(i_l0=i_l0)
    _require_time(t)
    return charge_segment(params, i_l0).value(t)


def capacitor_discharge(string: LedStringModel, v_c0: float, t: float) -> float:
    """Capacitor voltage after discharging into the LED branch for time t.

    Monotone toward the string forward voltage.
    """
    _require_finite(v_c0=v_c0)
    _require_time(t)
    return discharge_segment(string, v_c0).value(t)


def freewheel_decay(params: ConverterParams, i_l0: float, t: float) -> float:
    """Inductor current after freewheeling for time t; held constant when the
    loop resistance is zero (ideal floor)."""
    _require_finite(i_l0=i_l0)
    _require_time(t)
    return freewheel_segment(params, i_l0).value(t)


def transfer_phase(params: ConverterParams, string: LedStringModel,
                   v_c0: float, i_l0: float, t: float) -> tuple[float, float]:
    """Capacitor voltage and inductor current t seconds into a transfer phase.

    Solves the coupled second order system for a conducting string; the two
    returned trajectories satisfy i_l = c_out * dv_c/dt + (v_c - v_f) / r_led
    identically.
    """
    _require_finite(v_c0=v_c0, i_l0=i_l0)
    _require_time(t)
    seg = TransferSegment(params, string, v_c0, i_l0, conducting=True)
    return seg.v_value(t), seg.i_value(t)


def led_current(string: LedStringModel, v_c: float, on: bool) -> float:
    """LED branch current at bus voltage v_c: zero when gated off, clamped
    non-negative when on (the branch cannot conduct backward)."""
    if not on:
        return 0.0
    return max(0.0, (v_c - string.v_f) / string.r_led)


def classify_damping(params: ConverterParams, string: LedStringModel) -> DampingClass:
    """Damping class and characteristic roots of the conducting transfer phase."""
    l = params.l
    c = string.c_out
    r_b = params.r_transfer
    r_led = string.r_led
    a1 = (c * r_b * r_led + l) / (l * c * r_led)
    a0 = (r_led + r_b) / (l * c * r_led)
    disc = a1 * a1 - 4.0 * a0
    scale = max(a1 * a1, abs(4.0 * a0))
    alpha = 0.5 * a1
    if abs(disc) <= CRITICAL_DAMPING_TOL * scale:
        return DampingClass(DampingKind.CRITICALLY_DAMPED, alpha, 0.0)
    if disc < 0.0:
        return DampingClass(DampingKind.UNDERDAMPED, alpha, 0.5 * math.sqrt(-disc))
    return DampingClass(DampingKind.OVERDAMPED, alpha, 0.5 * math.sqrt(disc))
