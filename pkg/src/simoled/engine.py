"""Event-driven hybrid simulation of the multi-string boost LED driver.

The continuous state (inductor current, one bus voltage per string) evolves
piecewise linearly between discrete events: gate-schedule edges, boost PWM
edges, controller updates, the floor-current crossing that engages the
freewheel switch, and LED conduction boundaries.  The analytic engine
advances the state with the closed-form phase solutions and finds state
events by bracketing + bisection on those forms; ``oracle_integrate`` runs
the same event logic over a fixed-step RK4 integration of the raw ODEs and
serves as the independent cross-validation oracle.

All event times live on the integer nanosecond grid.  State-event times are
rounded down to the grid, which keeps the inductor current at or above the
floor when the freewheel engages.  Runs are deterministic: identical
scenarios produce bit-identical traces.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass

import numpy as np

from .circuit import (
    ConverterParams,
    LedStringModel,
    PhaseKind,
    TransferSegment,
    charge_segment,
    discharge_segment,
    freewheel_segment,
)
from .control import DEFAULT_DUTY_INIT, DEFAULT_K_GAIN, apply_duty_update, reference_voltage
from .schedule import NS, DimmingCommand, ScheduleError, SwitchSchedule, build_schedule, validate_schedule

PHASE_CODES = {PhaseKind.INDUCTOR_CHARGE: 0, PhaseKind.TRANSFER: 1, PhaseKind.FREEWHEEL: 2}
PHASE_NAMES = {0: "charge", 1: "transfer", 2: "freewheel"}
_CHARGE, _TRANSFER, _FREEWHEEL = 0, 1, 2

# schedule op codes, ordered by same-instant priority
_OP_TICK, _OP_CHG_END, _OP_DIM_OFF, _OP_CYCLE, _OP_DIM_ON, _OP_CHG_START = range(6)


class SimulationDiverged(RuntimeError):
    """Instability diagnostic; carries the partial trace for inspection."""

    def __init__(self, message: str, trace: "Trace | None" = None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class Probe:
    """Small sinusoid added to one string's duty command at actuation time,
    used by the loop frequency-response measurement."""

    string: int
    freq: float
    amplitude: float
    start: float = 0.0


@dataclass(frozen=True)
class EngineOptions:
    sample_rate: float = 4e6
    trace_start: float = 0.0
    record_events: bool = True
    initial_state: str = "precharged"  # or "steady_guess"
    duty_init: float | None = None
    event_tol: float = 1e-12
    guard_v_c: float = 40.0
    guard_rail_slams: int = 8
    guard_grace: float | None = None  # default: 30% of the horizon


@dataclass(frozen=True)
class Scenario:
    """Everything one simulation run needs."""

    params: ConverterParams = ConverterParams()
    strings: tuple[LedStringModel, ...] = (
        LedStringModel(id=1), LedStringModel(id=2), LedStringModel(id=3))
    cmd: DimmingCommand = DimmingCommand()
    duration: float = 1.5
    k_gain: float = DEFAULT_K_GAIN
    options: EngineOptions = EngineOptions()
    probe: Probe | None = None

    def __post_init__(self):
        problems = []
        if not self.duration >= 0:
            problems.append("duration must be >= 0")
        if len(self.strings) != self.cmd.n_strings:
            problems.append(f"{len(self.strings)} string models for "
                            f"{self.cmd.n_strings} dimming ratios")
        if [s.id for s in self.strings] != list(range(1, len(self.strings) + 1)):
            problems.append("string ids must be 1..N in order")
        if self.options.sample_rate > 10.0 * self.params.f_c:
            problems.append("trace sampling rate above 10 samples per boost period")
        if self.options.initial_state not in ("precharged", "steady_guess"):
            problems.append(f"unknown initial_state {self.options.initial_state!r}")
        if problems:
            raise ValueError("invalid Scenario: " + "; ".join(problems))

    @property
    def n_strings(self) -> int:
        return len(self.strings)


@dataclass(frozen=True)
class SimState:
    """Public snapshot of the continuous and gate state."""

    t: float
    i_l: float
    v_c: tuple[float, ...]
    phase: PhaseKind
    selected: int | None
    enabled: tuple[bool, ...]
    duty: tuple[float, ...]


@dataclass
class PeriodStats:
    """Per-string aggregates over one of its own dimming periods."""

    start_ns: int
    end_ns: int = 0
    on_s: float = 0.0
    q_led: float = 0.0      # integral of LED current
    q2_led: float = 0.0     # integral of LED current squared
    v_on: float = 0.0       # integral of bus voltage over the on-time
    v_min: float = math.inf
    v_max: float = -math.inf
    v_chg_min: float = math.inf
    v_chg_max: float = -math.inf

    @property
    def i_avg(self) -> float:
        return self.q_led / self.on_s if self.on_s > 0 else 0.0

    @property
    def v_avg(self) -> float:
        return self.v_on / self.on_s if self.on_s > 0 else math.nan

    @property
    def t_mid(self) -> float:
        return 0.5 * (self.start_ns + self.end_ns) / NS


@dataclass
class AuditSnapshot:
    """Cumulative energy bookkeeping at a main-dimming-period boundary."""

    t_ns: int
    e_source: float
    e_loss: float
    e_led: float
    e_l: float
    e_c: float
    q_in: float
    i_l_min: float                 # minimum since the previous snapshot
    int_i: tuple[float, ...]       # per string: integral of LED current
    int_i2: tuple[float, ...]
    int_v2_cond: tuple[float, ...]
    int_vi: tuple[float, ...]


class Trace:
    """Recorded run: sampled series, event log, per-period aggregates and the
    energy audit snapshots."""

    def __init__(self, n_strings: int, scenario: Scenario):
        self.n_strings = n_strings
        self.scenario = scenario
        self.t = np.empty(0)
        self.i_l = np.empty(0)
        self.duty = np.empty(0)
        self.phase = np.empty(0, dtype=np.int8)
        self.v_c = [np.empty(0) for _ in range(n_strings)]
        self.i_led = [np.empty(0) for _ in range(n_strings)]
        self.gates: dict[str, np.ndarray] = {}
        self.events: list[tuple[int, str]] = []
        self.period_stats: list[list[PeriodStats]] = [[] for _ in range(n_strings)]
        self.audit: list[AuditSnapshot] = []
        self.probe_log: list[tuple[float, float, float]] = []
        self.diverged = False
        self.divergence_reason: str | None = None
        self.final_state: SimState | None = None

    def settling_series(self, string: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-dimming-period times and on-time-averaged bus voltages."""
        stats = self.period_stats[string - 1]
        return (np.array([p.t_mid for p in stats]),
                np.array([p.v_avg for p in stats]))

    def current_series(self, string: int) -> tuple[np.ndarray, np.ndarray]:
        stats = self.period_stats[string - 1]
        return (np.array([p.t_mid for p in stats]),
                np.array([p.i_avg for p in stats]))


def trace_to_csv(trace: Trace, path, decimate: int = 1) -> None:
    """Write the sampled series as CSV.

    Columns: t_s, i_L_A, v_c1_V..v_cN_V, i_led1_A..i_ledN_A, duty, phase,
    gate_boost, gate_freewheel, gate_charge1..N, gate_dim1..N.  Full decimal
    precision; ``decimate`` keeps every k-th row.
    """
    n = trace.n_strings
    cols = (["t_s", "i_L_A"]
            + [f"v_c{k}_V" for k in range(1, n + 1)]
            + [f"i_led{k}_A" for k in range(1, n + 1)]
            + ["duty", "phase", "gate_boost", "gate_freewheel"]
            + [f"gate_charge{k}" for k in range(1, n + 1)]
            + [f"gate_dim{k}" for k in range(1, n + 1)])
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(0, len(trace.t), max(1, decimate)):
            phase = int(trace.phase[i])
            row = [repr(float(trace.t[i])), repr(float(trace.i_l[i]))]
            row += [repr(float(trace.v_c[k][i])) for k in range(n)]
            row += [repr(float(trace.i_led[k][i])) for k in range(n)]
            row.append(repr(float(trace.duty[i])))
            row.append(PHASE_NAMES[phase])
            row.append(str(int(trace.gates["boost"][i])))
            row.append(str(int(trace.gates["freewheel"][i])))
            row += [str(int(trace.gates[f"charge{k}"][i])) for k in range(1, n + 1)]
            row += [str(int(trace.gates[f"dim{k}"][i])) for k in range(1, n + 1)]
            fh.write(",".join(row) + "\n")


def _bisect_root(f, lo: float, hi: float, f_lo: float) -> float:
    """Earliest root of f in [lo, hi] given a sign change, to fp resolution."""
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if (f(mid) > 0.0) == (f_lo > 0.0):
            lo = mid
        else:
            hi = mid
    return hi


class _EngineBase:
    """Shared event machinery: schedule ops, PWM bookkeeping, controller
    updates, trace recording.  Subclasses provide the continuous advance."""

    collects_audit = False

    def __init__(self, scenario: Scenario, schedule: SwitchSchedule):
        self.scenario = scenario
        self.schedule = schedule
        p = scenario.params
        self.params = p
        self.strings = scenario.strings
        self.n = scenario.n_strings
        self.horizon_ns = round(scenario.duration * NS)
        self.t_c_ns = round(NS / p.f_c)
        self.gain = [scenario.k_gain / s.r_led for s in self.strings]
        self.v_ss = [reference_voltage(s) for s in self.strings]
        opts = scenario.options
        self.opts = opts
        self.sample_step_ns = max(1, round(NS / opts.sample_rate))
        self.trace_start_ns = round(opts.trace_start * NS)
        self.grace_ns = round((opts.guard_grace if opts.guard_grace is not None
                               else 0.3 * scenario.duration) * NS)

        # continuous state
        self.t_ns = 0
        self.i_l = p.i_dc
        if opts.initial_state == "steady_guess":
            self.v = [self.v_ss[k] for k in range(self.n)]
            self.duty = [min(max(1.0 - p.v_in / self.v_ss[k], p.duty_min), p.duty_max)
                         for k in range(self.n)]
        else:
            self.v = [p.v_in] * self.n
            d0 = opts.duty_init if opts.duty_init is not None else DEFAULT_DUTY_INIT
            self.duty = [min(max(d0, p.duty_min), p.duty_max)] * self.n
        self.duty = [round(d * self.t_c_ns) / self.t_c_ns for d in self.duty]
        self.acc = [0.0] * self.n
        self.enabled = [False] * self.n
        self.conducting = [False] * self.n
        self.phase = _FREEWHEEL
        self.sel = -1

        # PWM bookkeeping (valid while sel >= 0)
        self.window_end_abs = -1
        self.period_start_abs = -1
        self.fall_abs = -1
        self.edge_ns = 0

        # divergence guards
        self.rail_state = [0] * self.n  # 0 none, 1 at max, -1 at min
        self.rail_slams = 0

        # probe
        pr = scenario.probe
        self.probe = pr
        self.probe_k = pr.string - 1 if pr is not None else -1

        # schedule ops for one hyperperiod
        ops: list[tuple[int, int, int, int, int]] = []
        hyper = schedule.hyperperiod_ns
        for j in range(hyper // schedule.t2_ns):
            ops.append((j * schedule.t2_ns, _OP_TICK, _OP_TICK, 0, 0))
        for k in range(self.n):
            for (cs, ce) in schedule.charge_windows[k]:
                ops.append((cs, _OP_CHG_START, _OP_CHG_START, k, ce - cs))
                ops.append((ce, _OP_CHG_END, _OP_CHG_END, k, 0))
            for (s, e) in schedule.on_windows[k]:
                ops.append((s, _OP_DIM_ON, _OP_DIM_ON, k, 0))
                ops.append((e % hyper, _OP_DIM_OFF, _OP_DIM_OFF, k, 0))
            for cs in schedule.cycle_starts[k]:
                ops.append((cs, _OP_CYCLE, _OP_CYCLE, k, 0))
        ops.sort(key=lambda op: (op[0], op[1]))
        self.ops = ops
        self.op_idx = 0
        self.hyper_base = 0
        self.hyper_ns = hyper

        # accumulators
        self.e_source = 0.0
        self.e_loss = 0.0
        self.e_led = 0.0
        self.q_in = 0.0
        self.i_l_min_window = self.i_l
        self.int_i = [0.0] * self.n
        self.int_i2 = [0.0] * self.n
        self.int_v2_cond = [0.0] * self.n
        self.int_vi = [0.0] * self.n
        self.open_stats: list[PeriodStats | None] = [None] * self.n

        # trace buffers
        self.trace = Trace(self.n, scenario)
        self.buf_t = array("d")
        self.buf_i = array("d")
        self.buf_duty = array("d")
        self.buf_phase = array("b")
        self.buf_v = [array("d") for _ in range(self.n)]
        self.buf_iled = [array("d") for _ in range(self.n)]
        self.buf_gates = {name: array("b") for name in self._gate_names()}
        self.next_sample_ns = self.trace_start_ns
        self.last_row_ns = -1

    def _gate_names(self):
        names = ["boost", "freewheel"]
        names += [f"charge{k}" for k in range(1, self.n + 1)]
        names += [f"dim{k}" for k in range(1, self.n + 1)]
        return names

    # -- trace recording ---------------------------------------------------

    def _emit_row(self, t_ns: int, i_val: float, v_vals: list[float]) -> None:
        if t_ns < self.trace_start_ns:
            return
        if t_ns == self.last_row_ns:
            self._pop_row()
        self.last_row_ns = t_ns
        self.buf_t.append(t_ns / NS)
        self.buf_i.append(i_val)
        self.buf_duty.append(self.duty[self.sel] if self.sel >= 0 else 0.0)
        self.buf_phase.append(self.phase)
        chg = self.phase == _CHARGE
        fw = self.phase == _FREEWHEEL
        self.buf_gates["boost"].append(1 if chg else 0)
        self.buf_gates["freewheel"].append(1 if fw else 0)
        for k in range(self.n):
            vk = v_vals[k]
            self.buf_v[k].append(vk)
            iled = (vk - self.strings[k].v_f) / self.strings[k].r_led \
                if self.conducting[k] else 0.0
            self.buf_iled[k].append(max(0.0, iled))
            self.buf_gates[f"charge{k + 1}"].append(1 if self.sel == k else 0)
            self.buf_gates[f"dim{k + 1}"].append(1 if self.enabled[k] else 0)

    def _pop_row(self) -> None:
        self.buf_t.pop(); self.buf_i.pop(); self.buf_duty.pop(); self.buf_phase.pop()
        for k in range(self.n):
            self.buf_v[k].pop(); self.buf_iled[k].pop()
        for a in self.buf_gates.values():
            a.pop()

    def _log_event(self, t_ns: int, kind: str) -> None:
        if self.opts.record_events:
            self.trace.events.append((t_ns, kind))

    def _event_sample(self) -> None:
        if self.opts.record_events:
            self._emit_row(self.t_ns, self.i_l, self.v)

    # -- controller --------------------------------------------------------

    def _controller_update(self, k: int) -> None:
        p = self.params
        new = apply_duty_update(self.duty[k], self.acc[k], self.gain[k],
                                p.duty_min, p.duty_max)
        self.acc[k] = 0.0
        self._set_acc_state(k, 0.0)
        edge = round(new * self.t_c_ns)
        self.duty[k] = edge / self.t_c_ns
        # divergence guard: rail-to-rail relaxation oscillation
        rail = 1 if new >= p.duty_max - 1e-12 else (-1 if new <= p.duty_min + 1e-12 else 0)
        if rail:
            if self.rail_state[k] == -rail and self.t_ns > self.grace_ns:
                self.rail_slams += 1
                if self.rail_slams >= self.opts.guard_rail_slams:
                    raise SimulationDiverged(
                        f"duty command of string {k + 1} slammed rail-to-rail "
                        f"{self.rail_slams} times after t = {self.grace_ns / NS:.3f} s "
                        f"(t = {self.t_ns / NS:.4f} s): closed loop is unstable")
            self.rail_state[k] = rail
        if self.probe is not None and k == self.probe_k:
            t_s = self.t_ns / NS
            pval = 0.0
            if t_s >= self.probe.start:
                pval = self.probe.amplitude * math.sin(
                    2.0 * math.pi * self.probe.freq * (t_s - self.probe.start))
            self.trace.probe_log.append((t_s, self.duty[k], pval))
            applied = min(max(self.duty[k] + pval, p.duty_min), p.duty_max)
            edge = round(applied * self.t_c_ns)
        self.edge_ns = edge

    def _set_acc_state(self, k: int, value: float) -> None:
        """Hook for the oracle, whose accumulators live in the ODE state."""

    # -- schedule op processing ---------------------------------------------

    def _next_op_abs(self) -> int:
        return self.hyper_base + self.ops[self.op_idx][0]

    def _advance_op_ptr(self) -> None:
        self.op_idx += 1
        if self.op_idx >= len(self.ops):
            self.op_idx = 0
            self.hyper_base += self.hyper_ns

    def _process_due(self) -> bool:
        """Apply every action scheduled exactly at the current time."""
        t = self.t_ns
        acted = False
        while self._next_op_abs() == t:
            code, k, aux = self.ops[self.op_idx][2:5]
            self._advance_op_ptr()
            if code == _OP_TICK:
                self._snapshot_audit()
            elif code == _OP_CYCLE:
                self._roll_stats(k)
            elif code == _OP_DIM_ON:
                if not self.enabled[k]:
                    self.enabled[k] = True
                    self.conducting[k] = self.v[k] >= self.strings[k].v_f
                    self._log_event(t, f"dim{k + 1}_on")
                    acted = True
            elif code == _OP_DIM_OFF:
                if self.enabled[k]:
                    self.enabled[k] = False
                    self.conducting[k] = False
                    self._log_event(t, f"dim{k + 1}_off")
                    acted = True
            elif code == _OP_CHG_START:
                self.sel = k
                self.window_end_abs = t + aux  # aux carries the window length
                self.period_start_abs = t
                self._controller_update(k)
                self.fall_abs = t + self.edge_ns
                self._enter_period_phase()
                self._log_event(t, f"charge{k + 1}_on")
                acted = True
            elif code == _OP_CHG_END:
                self.sel = -1
                self.window_end_abs = -1
                self.fall_abs = -1
                self.phase = _FREEWHEEL
                self._log_event(t, f"charge{k + 1}_off")
                acted = True
        # PWM edges
        if self.sel >= 0:
            if self.phase == _CHARGE and t == self.fall_abs:
                self._enter_transfer_or_floor()
                self._log_event(t, "pwm_fall")
                acted = True
            elif t == self.period_start_abs + self.t_c_ns:
                self.period_start_abs = t
                self._controller_update(self.sel)
                self.fall_abs = t + self.edge_ns
                self._enter_period_phase()
                self._log_event(t, "pwm_rise")
                acted = True
        return acted

    def _enter_period_phase(self) -> None:
        if self.edge_ns > 0:
            self.phase = _CHARGE
        else:
            self._enter_transfer_or_floor()

    def _enter_transfer_or_floor(self) -> None:
        if self.i_l > self.params.i_dc:
            self.phase = _TRANSFER
        else:
            self.phase = _FREEWHEEL

    # -- stats / audit -------------------------------------------------------

    def _roll_stats(self, k: int) -> None:
        rec = self.open_stats[k]
        if rec is not None:
            rec.end_ns = self.t_ns
            self.trace.period_stats[k].append(rec)
        rec = PeriodStats(start_ns=self.t_ns)
        rec.v_min = rec.v_max = self.v[k]
        rec.v_chg_min = math.inf
        rec.v_chg_max = -math.inf
        self.open_stats[k] = rec

    def _snapshot_audit(self) -> None:
        if not self.collects_audit:
            return
        p = self.params
        e_c = sum(0.5 * s.c_out * vk * vk for s, vk in zip(self.strings, self.v))
        self.trace.audit.append(AuditSnapshot(
            t_ns=self.t_ns,
            e_source=self.e_source,
            e_loss=self.e_loss,
            e_led=self.e_led,
            e_l=0.5 * p.l * self.i_l * self.i_l,
            e_c=e_c,
            q_in=self.q_in,
            i_l_min=self.i_l_min_window,
            int_i=tuple(self.int_i),
            int_i2=tuple(self.int_i2),
            int_v2_cond=tuple(self.int_v2_cond),
            int_vi=tuple(self.int_vi),
        ))
        self.i_l_min_window = self.i_l

    # -- main loop -----------------------------------------------------------

    def _next_breakpoint(self) -> int:
        nb = min(self.horizon_ns, self._next_op_abs())
        if self.sel >= 0:
            if self.phase == _CHARGE:
                nb = min(nb, self.fall_abs)
            else:
                nb = min(nb, self.period_start_abs + self.t_c_ns)
        return nb

    def run(self) -> Trace:
        try:
            self._loop()
        except SimulationDiverged as exc:
            self.trace.diverged = True
            self.trace.divergence_reason = str(exc)
            self._finalize()
            exc.trace = self.trace
            raise
        self._finalize()
        return self.trace

    def _loop(self) -> None:
        self._process_due()
        self._emit_row(self.t_ns, self.i_l, self.v)
        if self.next_sample_ns == 0:
            self.next_sample_ns += self.sample_step_ns
        while self.t_ns < self.horizon_ns:
            t_next = self._next_breakpoint()
            if t_next > self.t_ns:
                self._advance(t_next)
                self.t_ns = t_next
                self._check_guards()
            acted = self._process_due()
            if acted:
                self._event_sample()
        self._emit_row(self.t_ns, self.i_l, self.v)

    def _check_guards(self) -> None:
        guard = self.opts.guard_v_c
        for k in range(self.n):
            if not math.isfinite(self.v[k]) or self.v[k] > guard:
                raise SimulationDiverged(
                    f"bus voltage of string {k + 1} reached {self.v[k]:.2f} V at "
                    f"t = {self.t_ns / NS:.4f} s (guard {guard:g} V)")
        if not math.isfinite(self.i_l):
            raise SimulationDiverged(f"inductor current non-finite at t = {self.t_ns / NS:.4f} s")

    def _finalize(self) -> None:
        tr = self.trace
        tr.t = np.frombuffer(self.buf_t, dtype=np.float64).copy()
        tr.i_l = np.frombuffer(self.buf_i, dtype=np.float64).copy()
        tr.duty = np.frombuffer(self.buf_duty, dtype=np.float64).copy()
        tr.phase = np.frombuffer(self.buf_phase, dtype=np.int8).copy()
        for k in range(self.n):
            tr.v_c[k] = np.frombuffer(self.buf_v[k], dtype=np.float64).copy()
            tr.i_led[k] = np.frombuffer(self.buf_iled[k], dtype=np.float64).copy()
        for name, buf in self.buf_gates.items():
            tr.gates[name] = np.frombuffer(buf, dtype=np.int8).copy()
        phase = {0: PhaseKind.INDUCTOR_CHARGE, 1: PhaseKind.TRANSFER,
                 2: PhaseKind.FREEWHEEL}[self.phase]
        tr.final_state = SimState(
            t=self.t_ns / NS, i_l=self.i_l, v_c=tuple(self.v), phase=phase,
            selected=self.sel + 1 if self.sel >= 0 else None,
            enabled=tuple(self.enabled), duty=tuple(self.duty))

    # -- single-step interface ----------------------------------------------

    def step(self) -> tuple[SimState, str]:
        """Advance to the next event, apply it, and report it.

        Returns the post-event state and a label for what happened.  The
        engine records trace rows exactly as in a full run.
        """
        if self.t_ns >= self.horizon_ns:
            raise StopIteration("horizon reached")
        before = len(self.trace.events)
        while True:
            t_next = self._next_breakpoint()
            if t_next > self.t_ns:
                self._advance(t_next)
                self.t_ns = t_next
                self._check_guards()
            acted = self._process_due()
            if acted or len(self.trace.events) > before or self.t_ns >= self.horizon_ns:
                break
        self._event_sample()
        kinds = [k for (t, k) in self.trace.events[before:]]
        label = ",".join(kinds) if kinds else "horizon"
        self._finalize()
        phase = {0: PhaseKind.INDUCTOR_CHARGE, 1: PhaseKind.TRANSFER,
                 2: PhaseKind.FREEWHEEL}[self.phase]
        state = SimState(t=self.t_ns / NS, i_l=self.i_l, v_c=tuple(self.v),
                         phase=phase, selected=self.sel + 1 if self.sel >= 0 else None,
                         enabled=tuple(self.enabled), duty=tuple(self.duty))
        return state, label

    def _advance(self, t_next: int) -> None:
        raise NotImplementedError


class AnalyticEngine(_EngineBase):
    """Closed-form segment advance with exact per-segment integrals."""

    collects_audit = True

    def _advance(self, t_next: int) -> None:
        t0 = self.t_ns
        while t0 < t_next:
            t_stop, crossing = self._plan_segment(t0, t_next)
            if t_stop > t0:
                self._integrate_segment(t0, t_stop)
                t0 = t_stop
            if crossing is not None:
                self._apply_crossing(t0, crossing)
        # t0 == t_next

    def _plan_segment(self, t0: int, t_next: int):
        """Earliest state event inside [t0, t_next], if any.

        The floor crossing is rounded down to the grid (the current stays at
        or above the floor when the freewheel engages); an LED conduction
        boundary is rounded up so the regime flip lands on the already-crossed
        side and cannot re-trigger.
        """
        if self.phase != _TRANSFER:
            return t_next, None
        h = (t_next - t0) / NS
        seg = TransferSegment(self.params, self.strings[self.sel],
                              self.v[self.sel], self.i_l, self.conducting[self.sel])
        self._transfer = seg
        i_dc = self.params.i_dc
        s = self.strings[self.sel]
        t_floor = _first_crossing(lambda t: seg.i_value(t) - i_dc, h)
        if seg.conducting:
            t_vf = _first_crossing(lambda t: seg.v_value(t) - s.v_f, h,
                                   zero_is_crossed=False)
        else:
            t_vf = _first_crossing(lambda t: s.v_f - seg.v_value(t), h,
                                   zero_is_crossed=False)
        cands = []
        if t_floor is not None:
            cands.append((t0 + int(t_floor * NS), "floor"))
        if t_vf is not None:
            cands.append((t0 + int(math.ceil(t_vf * NS)), "led"))
        if not cands:
            return t_next, None
        t_stop, kind = min(cands)
        if t_stop >= t_next:
            return t_next, None
        return t_stop, kind

    def _apply_crossing(self, t_ns: int, kind: str) -> None:
        if kind == "floor":
            self.phase = _FREEWHEEL
            self._log_event(t_ns, "pccm_floor")
        else:
            k = self.sel
            self.conducting[k] = not self.conducting[k]
            self._log_event(
                t_ns, f"led{k + 1}_{'conduct' if self.conducting[k] else 'cutoff'}")
        if self.opts.record_events:
            self._emit_row(t_ns, self.i_l, self.v)

    def _integrate_segment(self, t0: int, t1: int) -> None:
        p = self.params
        h = (t1 - t0) / NS
        phase = self.phase
        sel = self.sel
        transfer = None

        if phase == _TRANSFER:
            transfer = self._transfer
            iv, iv2, ii, ii2 = transfer.integrals(h)
            i_new = transfer.i_value(h)
            self.e_source += p.v_in * ii
            self.e_loss += p.r_transfer * ii2
            self.q_in += ii
        else:
            seg_i = charge_segment(p, self.i_l) if phase == _CHARGE \
                else freewheel_segment(p, self.i_l)
            ii, ii2 = seg_i.integrals(h)
            i_new = seg_i.value(h)
            if phase == _CHARGE:
                self.e_source += p.v_in * ii
                self.e_loss += p.r_charge * ii2
                self.q_in += ii
            else:
                self.e_loss += p.r_fw * ii2
            self._seg_i = seg_i

        segs_v: list = [None] * self.n
        for k in range(self.n):
            s = self.strings[k]
            if transfer is not None and k == sel:
                vk_int, vk2_int = iv, iv2
                v_new = transfer.v_value(h)
                cond = transfer.conducting
                segs_v[k] = transfer
            elif self.conducting[k]:
                seg = discharge_segment(s, self.v[k])
                vk_int, vk2_int = seg.integrals(h)
                v_new = seg.value(h)
                cond = True
                segs_v[k] = seg
            else:
                vk = self.v[k]
                vk_int, vk2_int = vk * h, vk * vk * h
                v_new = vk
                cond = False
            if cond:
                g = 1.0 / s.r_led
                q = (vk_int - s.v_f * h) * g
                q2 = (vk2_int - 2.0 * s.v_f * vk_int + s.v_f * s.v_f * h) * g * g
                vi = (vk2_int - s.v_f * vk_int) * g
                self.int_i[k] += q
                self.int_i2[k] += q2
                self.int_vi[k] += vi
                self.int_v2_cond[k] += vk2_int
                self.e_led += s.v_f * q
                self.e_loss += s.r_led * q2
            else:
                q = q2 = 0.0
            if self.enabled[k]:
                self.acc[k] += vk_int - self.v_ss[k] * h
                rec = self.open_stats[k]
                if rec is not None:
                    rec.on_s += h
                    rec.q_led += q
                    rec.q2_led += q2
                    rec.v_on += vk_int
            rec = self.open_stats[k]
            if rec is not None:
                if v_new < rec.v_min:
                    rec.v_min = v_new
                if v_new > rec.v_max:
                    rec.v_max = v_new
                if k == sel:
                    if v_new < rec.v_chg_min:
                        rec.v_chg_min = v_new
                    if v_new > rec.v_chg_max:
                        rec.v_chg_max = v_new
            self.v[k] = v_new

        # samples on the grid inside (t0, t1]
        ns = self.next_sample_ns
        if ns <= t1:
            while ns <= t1:
                if ns > t0:
                    trel = (ns - t0) / NS
                    if transfer is not None:
                        i_s = transfer.i_value(trel)
                    else:
                        i_s = self._seg_i.value(trel)
                    v_s = []
                    for k in range(self.n):
                        seg = segs_v[k]
                        if seg is None:
                            v_s.append(self.v[k])
                        elif seg is transfer:
                            v_s.append(transfer.v_value(trel))
                        else:
                            v_s.append(seg.value(trel))
                    self._emit_row(ns, i_s, v_s)
                ns += self.sample_step_ns
            self.next_sample_ns = ns

        self.i_l = i_new
        if i_new < self.i_l_min_window:
            self.i_l_min_window = i_new


def _first_crossing(f, h: float, zero_is_crossed: bool = True):
    """Earliest t in [0, h] where f turns negative, assuming f starts >= 0.

    Scans a handful of subdivisions for a sign change, then bisects to fp
    resolution.  Engine segments are short against the dynamics' curvature,
    so the coarse scan cannot straddle a genuine crossing.  With
    ``zero_is_crossed`` False an exact zero start counts as "on the boundary,
    not yet crossed" (used for the LED conduction boundary, where the two
    regimes agree at the boundary itself).
    """
    f0 = f(0.0)
    if f0 < 0.0 or (zero_is_crossed and f0 == 0.0):
        return 0.0
    n_scan = 8
    t_prev, f_prev = 0.0, f0
    for i in range(1, n_scan + 1):
        t = h * i / n_scan
        ft = f(t)
        if ft < 0.0:
            return _bisect_root(f, t_prev, t, max(f_prev, 1e-300))
        t_prev, f_prev = t, ft
    return None


def simulate(scenario: Scenario) -> Trace:
    """Run the analytic engine over the scenario horizon.

    Deterministic: identical scenarios produce bit-identical traces.  Raises
    ``ScheduleError`` when the gate schedule is invalid and
    ``SimulationDiverged`` (with the partial trace attached) when the
    instability diagnostic trips.
    """
    schedule = build_schedule(scenario.cmd, scenario.params)
    report = validate_schedule(schedule, scenario.cmd, scenario.params)
    if not report.ok:
        raise ScheduleError(str(report))
    return AnalyticEngine(scenario, schedule).run()


def detect_pccm_crossing(params: ConverterParams, string: LedStringModel,
                         v_c0: float, i_l0: float, window: float,
                         conducting: bool = True) -> float | None:
    """Earliest time in (0, window] at which a transfer phase started from
    (v_c0, i_l0) decays to the floor current, or None when it never does.

    Found by a bracketing scan (256 subdivisions) plus bisection; a start at
    or below the floor returns 0.
    """
    if i_l0 <= params.i_dc:
        return 0.0
    seg = TransferSegment(params, string, v_c0, i_l0, conducting)
    f = lambda t: seg.i_value(t) - params.i_dc
    t_prev, f_prev = 0.0, f(0.0)
    n = 256
    for i in range(1, n + 1):
        t = window * i / n
        ft = f(t)
        if ft <= 0.0:
            return _bisect_root(f, t_prev, t, f_prev)
        t_prev, f_prev = t, ft
    return None
