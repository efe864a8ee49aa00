"""
Figures and memory metrics derived from solver output.

Band diagrams and field profiles from states, transition snapshots on a
log-current scale, the memory metrics of a hysteresis pair, read
classification of transient traces, the programming speed-limit search and
side-by-side structure comparison.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .device import scale_doping
from .steady import ConvergenceError, Simulation, SolverConfig, SweepResult, solve_bias
from .transient import (PulseOp, TransientRecord, TransientSpec, build_pulse_train,
                        flat_intervals, run_transient)

log = logging.getLogger(__name__)

__all__ = [
    "BandDiagram", "FieldProfile", "Snapshot", "MemoryMetrics", "NoJumpError", "BracketError",
    "StructureError", "band_diagram", "field_profile", "junction_barriers",
    "transition_snapshots", "memory_metrics", "breakover_voltage", "classify_read",
    "SpeedTemplate", "speed_limit_search", "SweepProtocol", "StructureComparison",
    "compare_structures", "hysteresis_metrics", "latched_state", "on_current",
    "doping_continuation", "read_current", "run_sequence",
]

DEFAULT_FLOOR = 1e-16  # A, floor for log-current jump detection
MIN_JUMP_DECADES = 1.0


class NoJumpError(ValueError):
    """The swept device never latched (no current jump in the up-sweep)."""


class BracketError(ValueError):
    """Both ends of a speed-limit bracket give the same read result."""


class StructureError(RuntimeError):
    def __init__(self, structure, cause):
        super().__init__(f"{structure}: {cause}")
        self.structure = structure
        self.cause = cause


# ------------------------------------------------------------- band / field

@dataclass(frozen=True)
class BandDiagram:
    """Energies in eV against position in metres."""

    x: np.ndarray
    Ec: np.ndarray
    Ev: np.ndarray
    Efn: np.ndarray
    Efp: np.ndarray


@dataclass(frozen=True)
class FieldProfile:
    """Field on edge midpoints: x in metres, E in V/cm."""

    x: np.ndarray
    E: np.ndarray


def band_diagram(mesh, state, params=None):
    """
    Conduction/valence band edges and quasi-Fermi levels of `state`.

    The intrinsic level is ``-psi`` (eV per V) and the band edges sit half a
    gap above and below it.  Energies are shifted so that the electron
    quasi-Fermi level is 0 at the cathode contact.
    """
    if params is None:
        params = state._system.params if state._system is not None else None
    gap = params.bandgap if params is not None else 1.12
    psi = np.asarray(state.psi)
    phin, phip = state.phi_n, state.phi_p
    offset = phin[-1]
    ei = -psi + offset
    return BandDiagram(x=np.asarray(mesh.node_positions), Ec=ei + gap / 2, Ev=ei - gap / 2,
                       Efn=-phin + offset, Efp=-phip + offset)


def field_profile(mesh, state):
    """``E = -dpsi/dx`` in V/cm on every edge."""
    x = np.asarray(mesh.node_positions)
    E = -np.diff(state.psi) / (np.diff(x) * 100.0)
    return FieldProfile(x=0.5 * (x[1:] + x[:-1]), E=E)


def junction_barriers(mesh, state):
    """
    Potential step (V) across each metallurgical junction.

    Measured between the centres of the two adjacent regions; equals the
    junction's barrier height for majority carriers in the lower-potential
    side when both centres are neutral.
    """
    regions = np.asarray(mesh.region_index)
    psi = np.asarray(state.psi)
    out = []
    for r in range(regions.max()):
        left = np.flatnonzero(regions == r)
        right = np.flatnonzero(regions == r + 1)
        out.append(abs(psi[right[right.size // 2]] - psi[left[left.size // 2]]))
    return np.array(out)


# --------------------------------------------------------------- snapshots

@dataclass(frozen=True)
class Snapshot:
    fraction: float
    coordinate: float  # bias (V) for sweeps, time (s) for transients
    current: float
    state: object = field(repr=False)
    bands: BandDiagram = field(repr=False)
    field: FieldProfile = field(repr=False)


def _log_current(i, floor=DEFAULT_FLOOR):
    return np.log10(np.maximum(np.abs(np.asarray(i, dtype=float)), floor))


def transition_snapshots(record, phase, fractions, mesh=None, sweeps=None):
    """
    States at given completion fractions of a switching transition.

    The fraction of a sample is how far its ``log10|I|`` has moved from the
    phase's first sample towards its last one; the snapshot for fraction
    ``f`` (percent) is the first sample whose progress reaches ``f``.  So
    0 % is the phase start and 100 % the first sample at the end level.

    Parameters
    ----------
    record : SweepResult, TransientRecord or (up, down) pair of SweepResults
        Sweeps must keep their states; transients need ``keep_states=True``.
    phase : {'rising', 'falling'}
        For sweeps, the up or down direction.  For a transient, the first
        monotone rising or falling segment of the anode voltage.
    fractions : sequence of float
        Percent values in [0, 100].

    Returns
    -------
    list of Snapshot
    """
    if phase not in ("rising", "falling"):
        raise ValueError(f"phase must be 'rising' or 'falling', got {phase!r}")
    if isinstance(record, tuple):
        up, down = record
        record = up if phase == "rising" else down
    if isinstance(record, SweepResult):
        want = "up" if phase == "rising" else "down"
        if record.direction != want:
            raise ValueError(f"{phase} phase needs an {want}-sweep, got {record.direction}")
        states = record.states()
        coords = record.voltages
        currents = record.currents
    elif isinstance(record, TransientRecord):
        if record.states is None:
            raise ValueError("transient record has no states; run with keep_states=True")
        lo, hi = _monotone_segment(record.v_anode, rising=(phase == "rising"))
        states = record.states[lo:hi + 1]
        coords = record.t[lo:hi + 1]
        currents = record.i_anode_conduction[lo:hi + 1]
    else:
        raise TypeError(f"unsupported record type {type(record).__name__}")
    if any(s is None for s in states):
        raise ValueError("record has no stored states")
    if len(states) < 2:
        raise ValueError(f"{phase} phase not found in record")
    mesh = mesh or states[0]._system.mesh
    logi = _log_current(currents)
    span = logi[-1] - logi[0]
    progress = np.zeros_like(logi) if span == 0 else (logi - logi[0]) / span
    out = []
    for f in fractions:
        if not 0 <= f <= 100:
            raise ValueError(f"fractions are percentages in [0, 100], got {f!r}")
        if f == 0:
            k = 0
        else:
            hits = np.flatnonzero(progress >= f / 100.0 - 1e-12)
            k = int(hits[0]) if hits.size else len(states) - 1
        st = states[k]
        out.append(Snapshot(fraction=float(f), coordinate=float(coords[k]),
                            current=float(currents[k]), state=st,
                            bands=band_diagram(mesh, st), field=field_profile(mesh, st)))
    return out


def _monotone_segment(v, rising):
    d = np.diff(v)
    moving = d > 0 if rising else d < 0
    idx = np.flatnonzero(moving)
    if idx.size == 0:
        raise ValueError(f"{'rising' if rising else 'falling'} phase not found in record")
    start = idx[0]
    end = start
    while end + 1 < d.size and moving[end + 1]:
        end += 1
    return int(start), int(end + 1)


# ------------------------------------------------------------------ metrics

@dataclass(frozen=True)
class MemoryMetrics:
    v_breakover: float
    v_hold_knee: float
    memory_window: float
    on_off_ratio: float
    i_hold: float
    read_threshold: float
    v_read: float
    v_hold: float
    i_on_read: float
    i_off_read: float

    def as_row(self, structure):
        return {"structure": structure, "v_bo_V": self.v_breakover,
                "v_hold_knee_V": self.v_hold_knee, "window_V": self.memory_window,
                "on_off_ratio": self.on_off_ratio, "i_hold_A": self.i_hold}


def _sorted_curve(sweep):
    v = np.asarray(sweep.voltages, dtype=float)
    i = np.asarray(sweep.currents, dtype=float)
    order = np.argsort(v, kind="stable")
    return v[order], i[order]


def _current_at(sweep, v, floor):
    """Log-linear interpolation of |I| at bias `v`."""
    vv, ii = _sorted_curve(sweep)
    if not vv[0] - 1e-12 <= v <= vv[-1] + 1e-12:
        raise ValueError(f"bias {v} V outside the swept range [{vv[0]}, {vv[-1]}]")
    return float(10 ** np.interp(v, vv, _log_current(ii, floor)))


def _largest_step(sweep, floor, rising):
    # in sweep order; rising looks for the largest increase
    v = np.asarray(sweep.voltages, dtype=float)
    logi = _log_current(sweep.currents, floor)
    d = np.diff(logi)
    k = int(np.argmax(d) if rising else np.argmin(d))
    return k, float(d[k]), 0.5 * (v[k] + v[k + 1])


def _hysteresis_decades(up, down, floor):
    """Largest ``log10(I_down / I_up)`` over the common bias range."""
    vu, iu = _sorted_curve(up)
    vd, idn = _sorted_curve(down)
    grid = vd[(vd >= vu[0]) & (vd <= vu[-1])]
    if grid.size == 0:
        raise ValueError("up and down sweeps share no bias range")
    gap = np.interp(grid, vd, _log_current(idn, floor)) - np.interp(grid, vu, _log_current(iu, floor))
    return float(gap.max())


def breakover_voltage(up, floor=DEFAULT_FLOOR, min_jump_decades=MIN_JUMP_DECADES,
                      on_branch=None, on_fraction=0.1):
    """
    Breakover voltage of an up-sweep.

    The midpoint of the largest one-step rise of ``log10|I|``.  If no step
    rises by `min_jump_decades` the device does not block.  Then, given a
    latched down-sweep `on_branch` of a reference bias condition, the
    result is the lowest up-sweep bias inside that reference's bistable
    window whose current is within `on_fraction` of the reference ON
    current, i.e. where the device already conducts like a latched one.
    Without `on_branch`, NoJumpError is raised.
    """
    if up.direction != "up":
        raise ValueError("breakover needs an up-sweep")
    k, jump, v_mid = _largest_step(up, floor, rising=True)
    if jump >= min_jump_decades:
        return v_mid
    if on_branch is None:
        raise NoJumpError(f"no current jump detected (largest step {jump:.2f} decades)")
    _, _, knee = _largest_step(on_branch, floor, rising=False)
    vd, _ = _sorted_curve(on_branch)
    for v, i in zip(up.voltages, up.currents):
        if v <= knee or v > vd[-1]:
            continue
        if abs(i) >= on_fraction * _current_at(on_branch, v, floor):
            return float(v)
    raise NoJumpError("device neither jumps nor reaches the latched current")


def memory_metrics(up, down, v_read=None, v_hold=None, on_off_floor=DEFAULT_FLOOR,
                   min_jump_decades=MIN_JUMP_DECADES):
    """
    Memory metrics of an up/down anode-sweep pair.

    Parameters
    ----------
    up, down : SweepResult
    v_read : float, optional
        Read bias for the ON/OFF ratio and the read threshold; defaults to
        the middle of the memory window.
    v_hold : float, optional
        Hold bias for ``i_hold``; defaults to the lowest down-sweep bias
        still above the knee (the holding point).
    on_off_floor : float
        Floor (A) under OFF currents in ratios and jump detection.

    Raises
    ------
    NoJumpError
        If the up-sweep has no latch jump or the two sweeps coincide to
        within `min_jump_decades` everywhere (no bistability).
    """
    if up.direction != "up" or down.direction != "down":
        raise ValueError("memory_metrics needs an up-sweep and a down-sweep")
    v_bo = breakover_voltage(up, on_off_floor, min_jump_decades)
    separation = _hysteresis_decades(up, down, on_off_floor)
    if separation < min_jump_decades:
        raise NoJumpError(f"up and down sweeps coincide (largest gap {separation:.2f} decades)")
    k, _, knee = _largest_step(down, on_off_floor, rising=False)
    window = max(v_bo - knee, 0.0)
    if v_read is None:
        v_read = 0.5 * (v_bo + knee)
    if v_hold is None:
        v_hold = float(down.voltages[k])
    i_on = _current_at(down, v_read, on_off_floor)
    i_off = max(_current_at(up, v_read, on_off_floor), on_off_floor)
    ratio = max(i_on / i_off, 1.0)
    return MemoryMetrics(v_breakover=v_bo, v_hold_knee=knee, memory_window=window,
                         on_off_ratio=ratio, i_hold=_current_at(down, v_hold, on_off_floor),
                         read_threshold=math.sqrt(i_on * i_off), v_read=float(v_read),
                         v_hold=float(v_hold), i_on_read=i_on, i_off_read=i_off)


# ------------------------------------------------------------------- reads

def classify_read(record, read_interval, threshold, samples=257):
    """
    ``"one"`` if the median anode conduction current over the read interval
    reaches `threshold`, else ``"zero"``.

    The trace is resampled uniformly in time over the interval before the
    median is taken, so densely stepped stretches (switching edges) do not
    outweigh long flat ones.
    """
    t0, t1 = read_interval
    if not t1 > t0:
        raise ValueError(f"empty read interval {read_interval!r}")
    t = np.asarray(record.t)
    if t0 < t[0] or t1 > t[-1]:
        raise ValueError(f"read interval {read_interval!r} outside the record")
    grid = np.linspace(t0, t1, samples)
    current = np.interp(grid, t, record.i_anode_conduction)
    return "one" if float(np.median(current)) >= threshold else "zero"


def read_current(record, read_interval, samples=257):
    """Time-uniform median anode conduction current over an interval, in A."""
    t0, t1 = read_interval
    grid = np.linspace(t0, t1, samples)
    return float(np.median(np.interp(grid, record.t, record.i_anode_conduction)))


# ----------------------------------------------------------- speed limit

@dataclass(frozen=True)
class SpeedTemplate:
    """
    Program-hold-read sequence scaled by the program pulse width.

    Edges last ``edge_fraction * T`` and the hold ``hold_multiple * T``;
    the read pulse keeps a fixed width `t_read` so that sensing is the same
    for every probe.
    """

    v_program: float
    v_gate: float
    v_hold: float = 0.6
    v_read: float = 1.0
    edge_fraction: float = 0.1
    hold_multiple: float = 10.0
    t_read: float = 1e-6
    t_read_edge: float = 1e-7

    def ops(self, t_pulse):
        e = self.edge_fraction * t_pulse
        return [
            PulseOp("program", self.v_program, self.v_gate, e, t_pulse, e),
            PulseOp("hold", self.v_hold, 0.0, e, self.hold_multiple * t_pulse),
            PulseOp("read", self.v_read, 0.0, self.t_read_edge, self.t_read, self.t_read_edge),
        ]

    def read_interval(self, t_pulse):
        """The flat top of the read pulse."""
        return flat_intervals(self.ops(t_pulse), "read")[0]


def run_sequence(sim, ops, lte_tol=1e-3, keep_states=False, init=None, **spec_kw):
    """Run a pulse sequence from equilibrium (or `init`) on a Simulation."""
    waves = build_pulse_train(ops)
    t_end = waves["anode"].times[-1]
    spec = TransientSpec(waves, t_end=t_end, lte_tol=lte_tol, keep_states=keep_states,
                         **spec_kw)
    start = init if init is not None else sim.equilibrium()
    return run_transient(sim.mesh, sim.params, sim.env, spec, start, sim.solver)


def speed_limit_search(sim, template, t_lo, t_hi, threshold, lte_tol=1e-3, rel_width=0.1,
                       probes=None):
    """
    Shortest program pulse width that still stores a one.

    Bisects geometrically between `t_lo` (must read zero) and `t_hi` (must
    read one) until ``t_hi / t_lo <= 1 + rel_width``, and returns the
    geometric mean of the final bracket.

    Parameters
    ----------
    sim : Simulation
    template : SpeedTemplate
    threshold : float
        Read classification threshold (A).
    probes : list, optional
        Receives ``(t_pulse, verdict, read_current, record)`` for every probe.

    Raises
    ------
    BracketError
        If both ends classify the same.
    """
    if t_lo <= 0 or t_hi <= 0:
        raise ValueError("pulse widths must be positive")
    if t_lo > t_hi:
        raise ValueError(f"t_lo ({t_lo}) must not exceed t_hi ({t_hi})")

    def probe(t_pulse):
        rec = run_sequence(sim, template.ops(t_pulse), lte_tol=lte_tol)
        if not rec.completed:
            raise ConvergenceError(f"transient failed at t = {rec.failure_time} s "
                                   f"for T_pulse = {t_pulse} s")
        interval = template.read_interval(t_pulse)
        verdict = classify_read(rec, interval, threshold)
        if probes is not None:
            probes.append((t_pulse, verdict, read_current(rec, interval), rec))
        return verdict

    hi_class = probe(t_hi)
    if t_lo == t_hi:
        if hi_class == "one":
            return t_lo
        raise BracketError("degenerate bracket does not program")
    lo_class = probe(t_lo)
    if hi_class != "one" or lo_class != "zero":
        raise BracketError(f"bracket invalid: T={t_lo:g} s reads {lo_class}, "
                           f"T={t_hi:g} s reads {hi_class}")
    while t_hi / t_lo > 1.0 + rel_width:
        mid = math.sqrt(t_lo * t_hi)
        if probe(mid) == "one":
            t_hi = mid
        else:
            t_lo = mid
    return math.sqrt(t_lo * t_hi)


# ------------------------------------------------------ structure comparison

@dataclass(frozen=True)
class SweepProtocol:
    """Canonical up/down anode sweep used for metrics."""

    v_max: float = 3.0
    v_gate: float = 0.0
    v_read: float = None
    v_hold: float = None
    on_off_floor: float = DEFAULT_FLOOR


def hysteresis_metrics(sim, protocol=SweepProtocol()):
    """Run the protocol's up/down sweep on `sim`; returns ``(metrics, up, down)``."""
    up, down = sim.hysteresis(protocol.v_max, v_gate=protocol.v_gate)
    if not (up.completed and down.completed):
        raise ConvergenceError("hysteresis sweep did not complete")
    m = memory_metrics(up, down, protocol.v_read, protocol.v_hold, protocol.on_off_floor)
    return m, up, down


@dataclass(frozen=True)
class StructureComparison:
    name_a: str
    name_b: str
    metrics_a: MemoryMetrics
    metrics_b: MemoryMetrics
    verdicts: dict  # quantity -> "up" | "down" | "equal" (a relative to b)


def _verdict(a, b, rel_tol):
    if abs(a - b) <= rel_tol * max(abs(a), abs(b), 1e-300):
        return "equal"
    return "up" if a > b else "down"


def compare_structures(cfg_a, cfg_b, protocol=SweepProtocol(), names=("a", "b"),
                       solver=SolverConfig(), rel_tol=1e-6):
    """
    Run one sweep protocol on two device configs and compare their metrics.

    Verdicts read as "structure a relative to b" for the memory window,
    ON/OFF ratio and holding current.  Solver failures are re-raised as
    StructureError naming the structure.
    """
    results = []
    for name, cfg in zip(names, (cfg_a, cfg_b)):
        try:
            sim = cfg if isinstance(cfg, Simulation) else Simulation(cfg, solver)
            results.append(hysteresis_metrics(sim, protocol)[0])
        except (ConvergenceError, NoJumpError) as exc:
            raise StructureError(name, exc) from exc
    a, b = results
    verdicts = {"window": _verdict(a.memory_window, b.memory_window, rel_tol),
                "ratio": _verdict(a.on_off_ratio, b.on_off_ratio, rel_tol),
                "i_hold": _verdict(a.i_hold, b.i_hold, rel_tol)}
    return StructureComparison(names[0], names[1], a, b, verdicts)


# ------------------------------------------------------- doping sensitivity

def latched_state(sim, v_on, v_max=3.0, v_gate=0.0):
    """Down-sweep (ON branch) state of `sim` at anode bias `v_on`."""
    up, down = sim.hysteresis(v_max, v_gate=v_gate)
    for rec in down.records:
        if rec.converged and abs(rec.bias.v_anode - v_on) < 1e-9:
            return rec.state
    raise ValueError(f"down-sweep has no point at {v_on} V")


def doping_continuation(cfg, factors, state, steps_per_decade=4, solver=SolverConfig()):
    """
    Follow a steady state while region dopings are scaled.

    Each factor in `factors` (region index -> factor) is applied in equal
    logarithmic steps, re-solving at the state's bias after each one, so a
    latched state stays on its branch if that branch persists.

    Returns
    -------
    (Simulation, StateVector)
        The perturbed device and its state.
    """
    decades = max((abs(math.log10(f)) for f in factors.values()), default=0.0)
    nsteps = max(1, math.ceil(decades * steps_per_decade))
    sim = None
    for k in range(1, nsteps + 1):
        partial = {i: f ** (k / nsteps) for i, f in factors.items()}
        sim = Simulation(scale_doping(cfg, partial), solver)
        state = solve_bias(sim.mesh, sim.params, sim.env, state.bias, state, solver)
    if sim is None:
        sim = Simulation(cfg, solver)
    return sim, state


def on_current(cfg, factors=None, v_on=2.0, v_max=3.0, solver=SolverConfig()):
    """
    Latched anode current at `v_on` of `cfg` with dopings scaled by `factors`.

    The ON state of the unperturbed device is carried to the perturbed one
    by doping continuation, so the result is defined even when the
    perturbed device would not latch within ``v_max``.
    """
    sim = Simulation(cfg, solver)
    state = latched_state(sim, v_on, v_max)
    if factors:
        sim, state = doping_continuation(cfg, factors, state, solver=solver)
    return sim.current(state).anode
