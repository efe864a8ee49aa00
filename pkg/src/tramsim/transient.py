"""
Time-domain simulation of pulse-driven memory operation.

Backward Euler in time, coupled Newton at every step, step-doubling error
control and forced landing on every waveform breakpoint.  Terminal currents
include the displacement term ``eps dE/dt``.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernel import ConvergenceError
from .steady import (BiasPoint, SolverConfig, _raw_of, _system, _wrap_state,
                     terminal_current)
from .physics import ThermalEnv

log = logging.getLogger(__name__)

__all__ = [
    "Waveform", "PulseOp", "TransientSpec", "TransientRecord", "build_pulse_train",
    "transient_step", "run_transient", "flat_intervals", "OP_KINDS",
]

OP_KINDS = ("program", "hold", "read", "erase")
# pulse ops return to the resting level; level ops set a new one
PULSE_KINDS = ("program", "read")


@dataclass(frozen=True)
class Waveform:
    """
    Piecewise-linear voltage against time.

    Times start at 0 and never decrease.  A time listed twice marks a step:
    the waveform takes the first value at that instant and the second value
    just after it.  Past the last breakpoint the value is held.
    """

    times: tuple
    values: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.size == 0 or t.shape != v.shape:
            raise ValueError("times and values must be equal-length non-empty sequences")
        if t[0] != 0.0:
            raise ValueError(f"waveform must start at t = 0, got {t[0]!r}")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValueError("waveform breakpoints must be finite")
        dt = np.diff(t)
        if np.any(dt < 0):
            raise ValueError("waveform times must not decrease")
        if np.any((dt[1:] == 0) & (dt[:-1] == 0)):
            raise ValueError("at most two breakpoints may share a time")
        object.__setattr__(self, "times", tuple(float(x) for x in t))
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    @classmethod
    def constant(cls, value):
        return cls((0.0,), (float(value),))

    @property
    def breakpoints(self):
        """Distinct breakpoint times."""
        return tuple(sorted(set(self.times)))

    def __call__(self, t):
        t = float(t)
        times, values = self.times, self.values
        # left-continuous at steps: take the first of two equal times
        k = np.searchsorted(times, t, side="left")
        if k < len(times) and times[k] == t:
            return values[k]
        if k == 0:
            return values[0]
        if k == len(times):
            return values[-1]
        t0, t1 = times[k - 1], times[k]
        v0, v1 = values[k - 1], values[k]
        return v0 + (v1 - v0) * (t - t0) / (t1 - t0)


@dataclass(frozen=True)
class PulseOp:
    """One memory operation of a pulse sequence (seconds and volts)."""

    kind: str
    v_anode: float
    v_gate: float = 0.0
    t_rise: float = 0.0
    t_flat: float = 0.0
    t_fall: float = 0.0

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise ValueError(f"op kind must be one of {OP_KINDS}, got {self.kind!r}")
        for name in ("t_rise", "t_flat", "t_fall"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{self.kind}.{name} must be >= 0, got {value!r}")
        if self.kind not in PULSE_KINDS and self.t_fall != 0:
            raise ValueError(f"{self.kind} sets a resting level and takes no t_fall "
                             f"(got {self.t_fall!r})")

    @property
    def duration(self):
        return self.t_rise + self.t_flat + self.t_fall


def build_pulse_train(ops):
    """
    Concatenate memory operations into anode and gate waveforms.

    ``program`` and ``read`` are trapezoids that start from and return to the
    resting anode level.  ``hold`` and ``erase`` ramp the resting level to
    their `v_anode` over `t_rise` and keep it for `t_flat`.  The gate follows
    each pulse's trapezoid and returns to 0 with it; a level op keeps its
    gate value for the op and releases it at the start of the next op.

    Parameters
    ----------
    ops : sequence of PulseOp or dict
        Dicts may use either ``PulseOp`` field names or the sequence-file
        names (``v_anode_V``, ``t_rise_s`` ...).

    Returns
    -------
    dict
        ``{"anode": Waveform, "gate": Waveform}``.
    """
    ops = [op if isinstance(op, PulseOp) else _op_from_mapping(op) for op in ops]
    if not ops:
        raise ValueError("a pulse sequence needs at least one op")
    t = 0.0
    rest = 0.0
    gate_rest = 0.0
    ta, va = [0.0], [0.0]
    tg, vg = [0.0], [0.0]

    def add(tlist, vlist, time, value):
        # merge zero-length repeats; a zero-length change becomes a step
        if tlist[-1] == time and vlist[-1] == value:
            return
        if len(tlist) >= 2 and tlist[-1] == time and tlist[-2] == time:
            vlist[-1] = value
            return
        tlist.append(time)
        vlist.append(value)

    for op in ops:
        if gate_rest != 0.0 and op.kind in PULSE_KINDS:
            # release the previous level op's gate during this op's rise
            add(tg, vg, t, gate_rest)
            add(tg, vg, t + op.t_rise, 0.0)
            gate_rest = 0.0
        add(ta, va, t, rest)
        add(tg, vg, t, vg[-1])
        t_top = t + op.t_rise
        add(ta, va, t_top, op.v_anode)
        add(tg, vg, t_top, op.v_gate)
        t_end_flat = t_top + op.t_flat
        add(ta, va, t_end_flat, op.v_anode)
        add(tg, vg, t_end_flat, op.v_gate)
        if op.kind in PULSE_KINDS:
            t_done = t_end_flat + op.t_fall
            add(ta, va, t_done, rest)
            add(tg, vg, t_done, 0.0)
        else:
            t_done = t_end_flat
            rest = op.v_anode
            gate_rest = op.v_gate
        t = t_done
    if gate_rest != 0.0:
        add(tg, vg, t, 0.0)
    return {"anode": Waveform(tuple(ta), tuple(va)), "gate": Waveform(tuple(tg), tuple(vg))}


def flat_intervals(ops, kind="read"):
    """
    ``(t_start, t_end)`` of the flat top of every op of `kind`, in the timing
    that :func:`build_pulse_train` gives the sequence.
    """
    ops = [op if isinstance(op, PulseOp) else _op_from_mapping(op) for op in ops]
    out = []
    t = 0.0
    for op in ops:
        # same summation order as build_pulse_train, so the ends are breakpoints
        t_top = t + op.t_rise
        t_end_flat = t_top + op.t_flat
        if op.kind == kind:
            out.append((t_top, t_end_flat))
        t = t_end_flat + op.t_fall if op.kind in PULSE_KINDS else t_end_flat
    return out


def _op_from_mapping(m):
    aliases = {"v_anode_V": "v_anode", "v_gate_V": "v_gate", "t_rise_s": "t_rise",
               "t_flat_s": "t_flat", "t_fall_s": "t_fall"}
    kwargs = {}
    for key, value in m.items():
        name = aliases.get(key, key)
        if name not in PulseOp.__dataclass_fields__:
            raise ValueError(f"unknown pulse-op key {key!r}")
        kwargs[name] = value if name == "kind" else float(value)
    if "kind" not in kwargs or "v_anode" not in kwargs:
        raise ValueError("pulse op needs 'kind' and 'v_anode_V'")
    return PulseOp(**kwargs)


@dataclass(frozen=True)
class TransientSpec:
    """
    Run parameters of a transient simulation.

    `waveforms` maps ``"anode"`` and optionally ``"gate"`` to Waveforms.
    `lte_tol` bounds the step-doubling error estimate: potential change in
    units of V_T and carrier change relative to ``density + density_floor``.
    """

    waveforms: dict
    t_end: float
    dt_init: float = 1e-12
    dt_min: float = 1e-18
    dt_max: float = None
    lte_tol: float = 1e-3
    output_stride: int = 1
    density_floor: float = 1e8  # 1/cm^3
    keep_states: bool = False

    def __post_init__(self):
        if "anode" not in self.waveforms:
            raise ValueError("waveforms must include 'anode'")
        unknown = set(self.waveforms) - {"anode", "gate"}
        if unknown:
            raise ValueError(f"unknown terminals {sorted(unknown)}")
        if not self.t_end > 0:
            raise ValueError(f"t_end must be positive, got {self.t_end!r}")
        dt_max = self.t_end if self.dt_max is None else self.dt_max
        object.__setattr__(self, "dt_max", float(dt_max))
        if not (0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if not self.lte_tol > 0:
            raise ValueError(f"lte_tol must be positive, got {self.lte_tol!r}")
        if self.output_stride < 1:
            raise ValueError("output_stride must be >= 1")

    def bias_at(self, t):
        gate = self.waveforms.get("gate")
        return BiasPoint(v_anode=self.waveforms["anode"](t),
                         v_gate=gate(t) if gate is not None else 0.0)

    def breakpoints(self):
        times = set()
        for w in self.waveforms.values():
            times.update(w.breakpoints)
        times.add(self.t_end)
        return sorted(x for x in times if 0.0 < x <= self.t_end)

    def with_tolerance(self, lte_tol):
        from dataclasses import replace
        return replace(self, lte_tol=lte_tol)


@dataclass
class TransientRecord:
    """Samples of a transient run; currents in amperes, conventional into the device."""

    t: np.ndarray
    v_anode: np.ndarray
    v_gate: np.ndarray
    i_anode: np.ndarray
    i_anode_disp: np.ndarray
    i_cathode: np.ndarray
    i_cathode_disp: np.ndarray
    i_gate: np.ndarray
    dt: np.ndarray
    states: list = field(default=None, repr=False)
    completed: bool = True
    failure_time: float = None
    steps_accepted: int = 0
    steps_rejected: int = 0

    @property
    def i_anode_conduction(self):
        return self.i_anode - self.i_anode_disp

    @property
    def i_cathode_conduction(self):
        return self.i_cathode - self.i_cathode_disp

    def window(self, t0, t1):
        """Boolean mask of samples with ``t0 <= t <= t1``."""
        return (self.t >= t0) & (self.t <= t1)

    def sample_at(self, t):
        """Index of the sample at time `t` (exact match required)."""
        hits = np.flatnonzero(self.t == t)
        if hits.size == 0:
            raise KeyError(f"no sample at t = {t!r}")
        return int(hits[0])


class _Recorder:
    def __init__(self, keep_states):
        self.rows = []
        self.states = [] if keep_states else None

    def add(self, t, bias, cur, dt, state):
        self.rows.append((t, bias.v_anode, bias.v_gate, cur.anode, cur.anode_displacement,
                          cur.cathode, cur.cathode_displacement, cur.gate, dt))
        if self.states is not None:
            self.states.append(state)

    def result(self, **kw):
        cols = np.array(self.rows, dtype=float).reshape(-1, 9).T
        return TransientRecord(*cols, states=self.states, **kw)


def transient_step(state_prev, t_prev, dt, bias_at, mesh, params, env=None,
                   cfg=SolverConfig()):
    """
    One backward-Euler step of length `dt` (s) from `state_prev`.

    `bias_at(t)` returns the BiasPoint at time `t`; contacts follow its
    value at ``t_prev + dt``.  Raises ConvergenceError when Newton fails
    (callers usually retry with a smaller step).
    """
    env = env or ThermalEnv()
    sys = _system(mesh, params, env)
    bias = bias_at(t_prev + dt)
    raw = _step_raw(sys, _raw_of(sys, state_prev), dt, bias, cfg)
    return _wrap_state(sys, raw, bias)


def _step_raw(sys, raw_prev, dt, bias, cfg):
    old = sys.carriers(raw_prev)
    guess = sys.apply_bias(raw_prev, bias.v_anode / sys.vt)
    new, _, _ = sys.newton(guess, bias.v_gate / sys.vt, cfg, dt=dt / sys.t0, old=old)
    return new


def _lte(sys, a, b, floor):
    """Error measure between the one-step and two-half-step solutions."""
    na, pa = sys.carriers(a)
    nb, pb = sys.carriers(b)
    e_psi = np.max(np.abs(a.psi - b.psi))
    e_n = np.max(np.abs(na - nb) / (np.maximum(na, nb) + floor))
    e_p = np.max(np.abs(pa - pb) / (np.maximum(pa, pb) + floor))
    return float(max(e_psi, e_n, e_p))


def run_transient(mesh, params, env, spec, init, cfg=SolverConfig()):
    """
    Adaptive backward-Euler run over ``[0, spec.t_end]``.

    Each step is taken once with `dt` and once as two halves; their
    difference estimates the local error.  The half-step result is kept
    when the estimate is within ``spec.lte_tol``.  Steps are shortened to
    land exactly on every waveform breakpoint, where a sample is always
    recorded, and restart from ``spec.dt_init`` after it.

    Parameters
    ----------
    init : StateVector
        Converged state at the t = 0 bias of `spec`.

    Returns
    -------
    TransientRecord
        ``completed`` is False and ``failure_time`` set when the step size
        fell below ``spec.dt_min``.
    """
    env = env or ThermalEnv()
    sys = _system(mesh, params, env)
    b0 = spec.bias_at(0.0)
    if (abs(init.bias.v_anode - b0.v_anode) > 1e-12
            or abs(init.bias.v_gate - b0.v_gate) > 1e-12):
        raise ValueError(f"init is at {init.bias}, waveform starts at {b0}")
    floor = spec.density_floor / sys.ni
    tol = spec.lte_tol
    raw = _raw_of(sys, init)
    state = _wrap_state(sys, raw, b0)
    rec = _Recorder(spec.keep_states)
    rec.add(0.0, b0, terminal_current(mesh, state), 0.0, state)
    stops = spec.breakpoints()
    k_stop = 0
    t = 0.0
    dt = spec.dt_init
    accepted = rejected = 0
    since_output = 0
    while k_stop < len(stops):
        target = stops[k_stop]
        step = min(dt, spec.dt_max, target - t)
        # do not leave a sliver before the breakpoint
        if target - (t + step) < 0.01 * step:
            step = target - t
        lands = t + step >= target
        t_new = target if lands else t + step
        step = t_new - t
        bias_new = spec.bias_at(t_new)
        try:
            full = _step_raw(sys, raw, step, bias_new, cfg)
            mid = _step_raw(sys, raw, 0.5 * step, spec.bias_at(t + 0.5 * step), cfg)
            half = _step_raw(sys, mid, 0.5 * step, bias_new, cfg)
            err = _lte(sys, full, half, floor) / tol
        except ConvergenceError:
            err = math.inf
        if err <= 1.0:
            new_state = _wrap_state(sys, half, bias_new)
            accepted += 1
            since_output += 1
            if lands or since_output >= spec.output_stride:
                cur = _step_current(mesh, sys, new_state, state, step,
                                    _wrap_state(sys, mid, spec.bias_at(t + 0.5 * step)))
                rec.add(t_new, bias_new, cur, step, new_state)
                since_output = 0
            raw, state, t = half, new_state, t_new
            grow = 2.0 if err == 0 else min(2.0, 0.9 / math.sqrt(err))
            dt = max(step * max(grow, 0.5), spec.dt_min)
            if lands:
                k_stop += 1
                dt = min(dt, spec.dt_init) if _slope_changes(spec, t) else dt
            continue
        rejected += 1
        shrink = 0.25 if not math.isfinite(err) else max(0.2, 0.9 / math.sqrt(err))
        dt = step * shrink
        if dt < spec.dt_min:
            log.warning("transient step underflow at t = %.6g s", t)
            return rec.result(completed=False, failure_time=t, steps_accepted=accepted,
                              steps_rejected=rejected)
    return rec.result(steps_accepted=accepted, steps_rejected=rejected)


def _step_current(mesh, sys, state, state_prev, dt, state_mid):
    """
    Terminal currents over an accepted step made of two half steps.

    The conduction part is the mean of the two half-step values, so that
    charge change over the step equals current times `dt` exactly.
    """
    end = terminal_current(mesh, state, state_prev, dt)
    mid = terminal_current(mesh, state_mid)
    return replace(end,
                   anode=0.5 * (end.anode - end.anode_displacement + mid.anode)
                   + end.anode_displacement,
                   cathode=0.5 * (end.cathode - end.cathode_displacement + mid.cathode)
                   + end.cathode_displacement)


def _slope_changes(spec, t):
    """True when some waveform changes slope (or steps) at breakpoint `t`."""
    eps = 1e-9 * max(t, 1e-30)
    for w in spec.waveforms.values():
        if t in w.times:
            before = (w(t) - w(t - eps)) / eps
            after = (w(t + eps) - w(t)) / eps
            if abs(after - before) > 1e-9 * (abs(after) + abs(before)) or \
                    w.times.count(t) > 1:
                return True
    return False
