"""Time-multiplexed gate schedule for the multi-string driver.

One main dimming period is divided into three charging sub-intervals (slots),
one per channel.  Each string is assigned a dimming frequency from its
dimming ratio (full, half or a third of the main frequency; the main
frequency must stay divisible by it), an LED on-window opening at its slot,
and a charging window at the start of the on-window.  Dead time separates the
charge selectors of different strings so output capacitors are never shorted
together.

All event times live on an integer nanosecond grid, which makes schedules
exactly periodic and comparisons exact.  On-window lengths use cumulative
rounding across the hyperperiod so the aggregate on-time of a string matches
ratio * hyperperiod to within one grid quantum.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

from .circuit import ConverterParams

NS = 1_000_000_000

# Dimming ratio below which a reduced-frequency string charges for exactly
# its on-time instead of a full slot.
ON_TIME_CHARGE_LIMIT = 0.11


class ScheduleError(ValueError):
    """Raised when a gate schedule cannot be constructed."""


@dataclass(frozen=True)
class DimmingCommand:
    """Per-string dimming ratios plus the global dimming clock.

    ``frequency_mode`` selects the variable-frequency law ("variable") or
    forces every string to the main frequency ("fixed").  An entry in
    ``frequency_overrides`` pins one string's dimming frequency explicitly;
    it must divide f_main.
    """

    ratios: tuple[float, ...] = (0.95, 0.95, 0.95)
    f_main: float = 1800.0
    frequency_mode: str = "variable"
    frequency_overrides: tuple[float | None, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "ratios", tuple(float(d) for d in self.ratios))
        problems = []
        if len(self.ratios) < 1:
            problems.append("need at least one string")
        for k, d in enumerate(self.ratios):
            if not (math.isfinite(d) and 0.0 <= d <= 1.0):
                problems.append(f"dimming ratio out of [0,1] for string {k + 1}: {d!r}")
        if not (math.isfinite(self.f_main) and self.f_main > 0):
            problems.append(f"f_main must be > 0, got {self.f_main!r}")
        if self.frequency_mode not in ("variable", "fixed"):
            problems.append(f"unknown frequency_mode {self.frequency_mode!r}")
        if self.frequency_overrides is not None:
            object.__setattr__(self, "frequency_overrides",
                               tuple(self.frequency_overrides))
            if len(self.frequency_overrides) != len(self.ratios):
                problems.append("frequency_overrides length must match ratios")
        if problems:
            raise ScheduleError("invalid DimmingCommand: " + "; ".join(problems))

    @property
    def n_strings(self) -> int:
        return len(self.ratios)


def dimming_frequency(d: float, f_main: float) -> float:
    """Dimming frequency assigned to a string with ratio d.

    Full frequency at d >= 0.3, half for 0.15 <= d < 0.3, a third below 0.15.
    """
    if not (math.isfinite(d) and 0.0 <= d <= 1.0):
        raise ValueError(f"dimming ratio out of [0,1]: {d!r}")
    if not (math.isfinite(f_main) and f_main > 0):
        raise ValueError(f"f_main must be > 0: {f_main!r}")
    return f_main / frequency_divisor(d)


def frequency_divisor(d: float) -> int:
    """Integer divisor m with assigned frequency f_main / m."""
    if d >= 0.3:
        return 1
    if d >= 0.15:
        return 2
    return 3


def charging_interval(d: float, f_main: float, dead_time: float) -> float:
    """Length of the charging window for ratio d under the variable-frequency
    law, in seconds.

    A full-frequency string charges for d/3 of its dimming period (one third
    of the main period per slot).  Reduced-frequency strings use the whole
    slot, capped by the dead time, except below 11% where the charge window
    simply equals the on-time.  Zero ratio disables the string.
    """
    if not (math.isfinite(d) and 0.0 <= d <= 1.0):
        raise ValueError(f"dimming ratio out of [0,1]: {d!r}")
    if d == 0.0:
        return 0.0
    slot = 1.0 / (3.0 * f_main)
    m = frequency_divisor(d)
    on_time = d * m / f_main
    if m == 1:
        base = d * slot
    elif d < ON_TIME_CHARGE_LIMIT:
        base = on_time
    else:
        base = slot
    return min(base, slot - dead_time, on_time)


@dataclass(frozen=True)
class StringSchedule:
    """Nominal per-string timing (first dimming cycle of the hyperperiod)."""

    string: int
    f_d: float
    divisor: int
    t_period: float
    slot_start: float
    charge_len: float
    on_start: float
    on_len: float


@dataclass(frozen=True, order=True)
class ScheduleEvent:
    t_ns: int
    priority: int
    switch: str = field(compare=False)
    level: int = field(compare=False)


@dataclass
class SwitchSchedule:
    """Gate events for one hyperperiod.

    ``charge_windows[k]`` / ``on_windows[k]`` are [start_ns, end_ns) pairs for
    string k (0-based); an on-window may extend past the hyperperiod into the
    next instance.  ``events`` is the exportable, time-sorted transition list
    over [0, hyperperiod).
    """

    n_strings: int
    f_main: float
    slot_ns: int
    t2_ns: int
    dead_ns: int
    hyperperiod_ns: int
    strings: list[StringSchedule]
    charge_windows: list[list[tuple[int, int]]]
    on_windows: list[list[tuple[int, int]]]
    cycle_starts: list[list[int]]
    period_ns: list[int]
    events: list[ScheduleEvent]


def _level_events(switch: str, windows: list[tuple[int, int]], hyper_ns: int) -> list[ScheduleEvent]:
    """Transitions of the union-of-windows level function over [0, hyper).

    Windows start inside [0, hyper) but may end past it (wrapping into the
    next hyperperiod instance).  The first event always declares the level at
    t=0 so a replay never needs out-of-band state.  Falling edges carry a
    lower priority so they sort before coincident rising ones.
    """
    edges: dict[int, int] = {}
    for s, e in windows:
        edges[s] = edges.get(s, 0) + 1           # covers [s, min(e, hyper))
        if e > hyper_ns:                         # wrapped tail covers [0, e - hyper)
            edges[0] = edges.get(0, 0) + 1
            edges[e - hyper_ns] = edges.get(e - hyper_ns, 0) - 1
        elif e < hyper_ns:
            edges[e] = edges.get(e, 0) - 1
    level = edges.get(0, 0)
    events = [ScheduleEvent(0, 1 if level > 0 else 0, switch, 1 if level > 0 else 0)]
    for t in sorted(edges):
        if t == 0:
            continue
        new = level + edges[t]
        if level == 0 and new > 0:
            events.append(ScheduleEvent(t, 1, switch, 1))
        elif level > 0 and new == 0:
            events.append(ScheduleEvent(t, 0, switch, 0))
        level = new
    return events


def build_schedule(cmd: DimmingCommand, params: ConverterParams) -> SwitchSchedule:
    """Construct the gate schedule for one hyperperiod.

    Fails when the dead time leaves no room for a charging window or when a
    frequency override violates the divisibility rule.
    """
    n = cmd.n_strings
    if n > 3:
        warnings.warn(f"{n} strings exceeds the three-slot topology; using "
                      f"slot length 1/({n}*f_main) (experimental)", stacklevel=2)
    slot_count = max(n, 3)
    slot_ns = round(NS / (slot_count * cmd.f_main))
    if slot_ns <= 0:
        raise ScheduleError(f"f_main {cmd.f_main} Hz is too fast for the ns grid")
    t2_ns = slot_count * slot_ns
    dead_ns = round(params.dead_time * NS)
    if dead_ns >= slot_ns:
        raise ScheduleError(
            f"dead time {params.dead_time:g} s leaves no charging room in a "
            f"{slot_ns} ns slot (need dead_time < 1/({slot_count}*f_main))")

    divisors = []
    for k, d in enumerate(cmd.ratios):
        override = None
        if cmd.frequency_overrides is not None:
            override = cmd.frequency_overrides[k]
        if override is not None:
            m_f = cmd.f_main / override
            m = round(m_f)
            if m < 1 or abs(m_f - m) > 1e-9 * m:
                raise ScheduleError(
                    f"string {k + 1}: dimming frequency {override:g} Hz does not "
                    f"divide f_main = {cmd.f_main:g} Hz")
        elif cmd.frequency_mode == "fixed":
            m = 1
        else:
            m = frequency_divisor(d)
        divisors.append(m)

    active = [k for k, d in enumerate(cmd.ratios) if d > 0.0]
    hyper_ns = t2_ns * math.lcm(*(divisors[k] for k in active)) if active else t2_ns

    strings: list[StringSchedule] = []
    charge_windows: list[list[tuple[int, int]]] = []
    on_windows: list[list[tuple[int, int]]] = []
    cycle_starts: list[list[int]] = []
    period_list: list[int] = []

    for k, d in enumerate(cmd.ratios):
        m = divisors[k]
        period_ns = m * t2_ns
        period_list.append(period_ns)
        offset = k * slot_ns
        starts = [j * period_ns + offset for j in range(hyper_ns // period_ns)]
        cycle_starts.append(starts)
        cw: list[tuple[int, int]] = []
        ow: list[tuple[int, int]] = []
        if d > 0.0:
            cum_prev = 0
            for j, start in enumerate(starts):
                cum = round((j + 1) * d * period_ns)
                on_len = cum - cum_prev
                cum_prev = cum
                if on_len <= 0:
                    continue
                if m == 1:
                    base = round(d * slot_ns)
                elif d < ON_TIME_CHARGE_LIMIT:
                    base = on_len
                else:
                    base = slot_ns
                charge_len = min(base, slot_ns - dead_ns, on_len)
                if charge_len <= 0:
                    raise ScheduleError(
                        f"string {k + 1}: charging interval of ratio {d:g} does "
                        f"not fit its slot after dead-time insertion")
                ow.append((start, start + on_len))
                cw.append((start, start + charge_len))
        charge_windows.append(cw)
        on_windows.append(ow)
        nominal_on = round(d * period_ns)
        strings.append(StringSchedule(
            string=k + 1,
            f_d=cmd.f_main / m,
            divisor=m,
            t_period=period_ns / NS,
            slot_start=offset / NS,
            charge_len=(cw[0][1] - cw[0][0]) / NS if cw else 0.0,
            on_start=offset / NS,
            on_len=nominal_on / NS,
        ))

    events: list[ScheduleEvent] = []
    all_charge: list[tuple[int, int]] = []
    for k in range(n):
        events += _level_events(f"charge{k + 1}", charge_windows[k], hyper_ns)
        events += _level_events(f"dim{k + 1}", on_windows[k], hyper_ns)
        all_charge += charge_windows[k]
    events += _level_events("boost", all_charge, hyper_ns)
    # freewheel is armed on the complement of the charge windows
    if all_charge:
        gaps = []
        ordered = sorted(all_charge)
        for (s1, e1), (s2, e2) in zip(ordered, ordered[1:]):
            if s2 > e1:
                gaps.append((e1, s2))
        wrap_start = ordered[-1][1]
        wrap_end = ordered[0][0] + hyper_ns
        if wrap_end > wrap_start:
            gaps.append((wrap_start, wrap_end))
        events += _level_events("freewheel", gaps, hyper_ns)
    else:
        events.append(ScheduleEvent(0, 1, "freewheel", 1))
    events.sort()

    return SwitchSchedule(
        n_strings=n,
        f_main=cmd.f_main,
        slot_ns=slot_ns,
        t2_ns=t2_ns,
        dead_ns=dead_ns,
        hyperperiod_ns=hyper_ns,
        strings=strings,
        charge_windows=charge_windows,
        on_windows=on_windows,
        cycle_starts=cycle_starts,
        period_ns=period_list,
        events=events,
    )


@dataclass(frozen=True)
class Violation:
    rule: str
    t_ns: int
    detail: str

    def __str__(self):
        return f"[{self.rule}] t={self.t_ns} ns: {self.detail}"


@dataclass
class ScheduleReport:
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            return "schedule OK (0 violations)"
        lines = [f"schedule has {len(self.violations)} violation(s):"]
        lines += [f"  {v}" for v in self.violations]
        return "\n".join(lines)


def validate_schedule(schedule: SwitchSchedule, cmd: DimmingCommand,
                      params: ConverterParams) -> ScheduleReport:
    """Check every schedule invariant; returns all violations found.

    Rules: charge selectors of distinct strings must not overlap and must be
    separated by the dead time (wrapping around the hyperperiod); every
    charge window must lie inside the same string's on-window; the event
    list must be strictly time-sorted per switch; every assigned dimming
    frequency must divide the main frequency.
    """
    v: list[Violation] = []
    hyper = schedule.hyperperiod_ns
    dead = round(params.dead_time * NS)

    tagged = []
    for k in range(schedule.n_strings):
        for w in schedule.charge_windows[k]:
            if w[1] <= w[0]:
                v.append(Violation("malformed-window", w[0],
                                   f"charge{k + 1} window {w} has no width"))
            tagged.append((w[0], w[1], k))
    tagged.sort()
    for (s1, e1, k1), (s2, e2, k2) in zip(tagged, tagged[1:]):
        if s2 < e1:
            v.append(Violation(
                "charge-overlap", s2,
                f"charge{k1 + 1} [{s1},{e1}) overlaps charge{k2 + 1} [{s2},{e2})"))
        elif k1 != k2 and s2 - e1 < dead:
            v.append(Violation(
                "dead-time", e1,
                f"gap {s2 - e1} ns between charge{k1 + 1} end and "
                f"charge{k2 + 1} start is below dead time {dead} ns"))
    if len(tagged) > 1:
        (s0, e0, k0) = tagged[0]
        (sl, el, kl) = tagged[-1]
        wrap_gap = s0 + hyper - el
        if wrap_gap < 0:
            v.append(Violation("charge-overlap", s0,
                               f"charge{kl + 1} wraps into charge{k0 + 1}"))
        elif kl != k0 and wrap_gap < dead:
            v.append(Violation("dead-time", el,
                               f"wraparound gap {wrap_gap} ns below dead time"))

    for k in range(schedule.n_strings):
        ons = sorted(schedule.on_windows[k])
        for (cs, ce) in schedule.charge_windows[k]:
            inside = any(s <= cs and ce <= e for s, e in ons)
            if not inside:
                v.append(Violation(
                    "charge-outside-on", cs,
                    f"charge{k + 1} [{cs},{ce}) not contained in any dim{k + 1} window"))

    seen: set[tuple[int, str]] = set()
    prev_t = -1
    for ev in schedule.events:
        if not 0 <= ev.t_ns < hyper:
            v.append(Violation("event-out-of-range", ev.t_ns,
                               f"{ev.switch} event outside [0, hyperperiod)"))
        key = (ev.t_ns, ev.switch)
        if key in seen:
            v.append(Violation("duplicate-event", ev.t_ns,
                               f"two {ev.switch} events share one instant"))
        seen.add(key)
        if ev.t_ns < prev_t:
            v.append(Violation("unsorted-events", ev.t_ns, f"{ev.switch} out of order"))
        prev_t = ev.t_ns

    for s in schedule.strings:
        ratio_f = schedule.f_main / s.f_d
        if abs(ratio_f - round(ratio_f)) > 1e-9 or round(ratio_f) < 1:
            v.append(Violation(
                "divisibility", 0,
                f"string {s.string} frequency {s.f_d:g} Hz does not divide "
                f"f_main = {schedule.f_main:g} Hz"))

    return ScheduleReport(v)


def schedule_to_csv(schedule: SwitchSchedule, path) -> None:
    """Write the event list as CSV with columns time_ns, switch, level."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_ns", "switch", "level"])
        for ev in schedule.events:
            writer.writerow([ev.t_ns, ev.switch, ev.level])
