"""Per-string synchronous integral control of the boost duty command.

Each string owns a duty command for the main switch and an error integrator
that only accumulates while the string's LEDs conduct (the dimming gate and
the integrator are switched together, hence "synchronous").  Once per boost
switching period, inside the string's own charge slot, the accumulated
integral of the bus-voltage error is folded into the duty command:

    duty <- clamp(duty - (k_gain / r_led) * integral(v_c - v_ref) dt)

Anti-windup is by conditional integration: the error integral is consumed at
every update, and any correction beyond the clamp is discarded rather than
carried.  The duty commands of all strings are multiplexed onto the single
main switch by the charge selectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .circuit import ConverterParams, LedStringModel
from .schedule import SwitchSchedule

DEFAULT_K_GAIN = 700.0
DEFAULT_DUTY_INIT = 0.5


@dataclass(frozen=True)
class StringControlState:
    """Duty command, pending error integral and gate mirror of one string."""

    duty: float
    acc: float = 0.0
    enabled: bool = False


@dataclass(frozen=True)
class ControllerState:
    """All per-string loops plus the shared gain and switching period."""

    strings: tuple[StringControlState, ...]
    k_gain: float = DEFAULT_K_GAIN
    t_c: float = 2.5e-6

    @classmethod
    def initial(cls, n_strings: int, params: ConverterParams,
                k_gain: float = DEFAULT_K_GAIN,
                duty_init: float = DEFAULT_DUTY_INIT) -> "ControllerState":
        duty = min(max(duty_init, params.duty_min), params.duty_max)
        return cls(strings=tuple(StringControlState(duty=duty) for _ in range(n_strings)),
                   k_gain=k_gain, t_c=params.t_c)


def reference_voltage(string: LedStringModel) -> float:
    """Steady-state bus voltage that yields the reference LED current."""
    return string.i_ref * string.r_led + string.v_f


def apply_duty_update(duty: float, acc: float, gain_over_rled: float,
                      duty_min: float, duty_max: float) -> float:
    """Clamped duty after consuming the pending error integral."""
    candidate = duty - gain_over_rled * acc
    if candidate < duty_min:
        return duty_min
    if candidate > duty_max:
        return duty_max
    return candidate


def integrator_update(state: ControllerState, string: LedStringModel,
                      error_integral: float, params: ConverterParams) -> ControllerState:
    """Fold one boost period's error integral into a string's duty command.

    ``error_integral`` is the integral of (v_c - reference_voltage) over the
    update interval, in volt seconds.  The string must be enabled; the
    pending accumulator is consumed entirely (conditional integration, so a
    binding clamp discards the excess instead of winding up).
    """
    idx = string.id - 1
    st = state.strings[idx]
    if not st.enabled:
        raise ValueError(f"string {string.id} is not enabled; the synchronous "
                         f"integrator only updates while the string conducts")
    if not math.isfinite(error_integral):
        raise ValueError(f"non-finite error integral: {error_integral!r}")
    duty = apply_duty_update(st.duty, st.acc + error_integral,
                             state.k_gain / string.r_led,
                             params.duty_min, params.duty_max)
    strings = list(state.strings)
    strings[idx] = replace(st, duty=duty, acc=0.0)
    return replace(state, strings=tuple(strings))


def set_enabled(state: ControllerState, string_id: int, enabled: bool) -> ControllerState:
    """Mirror the dimming gate; the accumulator holds while disabled."""
    idx = string_id - 1
    strings = list(state.strings)
    strings[idx] = replace(strings[idx], enabled=enabled)
    return replace(state, strings=tuple(strings))


def accumulate_error(state: ControllerState, string_id: int,
                     error_integral: float) -> ControllerState:
    """Add to a string's pending error integral (no-op when disabled)."""
    idx = string_id - 1
    st = state.strings[idx]
    if not st.enabled:
        return state
    strings = list(state.strings)
    strings[idx] = replace(st, acc=st.acc + error_integral)
    return replace(state, strings=tuple(strings))


def boost_gate(state: ControllerState, schedule: SwitchSchedule,
               params: ConverterParams, t: float) -> int:
    """Main-switch PWM level at absolute time t.

    Inside a charge window the switch runs PWM at the boost frequency with
    the selected string's duty, edges aligned to the window start; outside
    every window (dead time included) the switch is held off.
    """
    t_ns = round(t * 1e9)
    pos = t_ns % schedule.hyperperiod_ns
    t_c_ns = round(1e9 / params.f_c)
    for k in range(schedule.n_strings):
        for (cs, ce) in schedule.charge_windows[k]:
            if cs <= pos < ce:
                duty = state.strings[k].duty
                edge = round(duty * t_c_ns)
                return 1 if (pos - cs) % t_c_ns < edge else 0
    return 0
