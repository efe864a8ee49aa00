"""
Steady-state solves, bias sweeps with natural continuation, and the
series-resistor load-line solve.
"""

from collections import namedtuple
import functools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernel import ConvergenceError, System
from .device import DeviceSpec, SimulationConfig, build_mesh
from .physics import EPS0, Q, MaterialParams, ThermalEnv, equilibrium_guess

log = logging.getLogger(__name__)

__all__ = [
    "BiasPoint", "SolverConfig", "StateVector", "SweepRecord", "SweepResult",
    "ContactCurrents", "ConvergenceError", "Simulation", "solve_equilibrium",
    "gate_charge_term", "solve_bias", "terminal_current", "sweep_iv",
    "load_line_solve", "relax_to_steady", "current_profile", "GaussBalance", "gauss_balance", "probe_charge",
]


@dataclass(frozen=True)
class BiasPoint:
    v_anode: float = 0.0
    v_gate: float = 0.0
    v_cathode: float = 0.0

    def __post_init__(self):
        if self.v_cathode != 0.0:
            raise ValueError(f"cathode is the 0 V reference, got v_cathode={self.v_cathode!r}")


@dataclass(frozen=True)
class SolverConfig:
    max_gummel_iters: int = 200
    max_newton_iters: int = 50
    psi_update_tol: float = 1e-6 * 0.025852  # V, 1e-6 V_T at 300 K
    residual_tol: float = 1e-8
    max_step_VT: float = 2.0
    continuation_dv_init: float = 0.01
    continuation_dv_min: float = 1e-4

    def __post_init__(self):
        for name in ("psi_update_tol", "residual_tol", "max_step_VT",
                     "continuation_dv_init", "continuation_dv_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.continuation_dv_min > self.continuation_dv_init:
            raise ValueError("continuation_dv_min must not exceed continuation_dv_init")
        if self.max_newton_iters < 1 or self.max_gummel_iters < 1:
            raise ValueError("iteration limits must be >= 1")

    def scaled(self, factor):
        """Copy with both convergence tolerances multiplied by `factor`."""
        return replace(self, psi_update_tol=self.psi_update_tol * factor,
                       residual_tol=self.residual_tol * factor)


@functools.lru_cache(maxsize=64)
def _system(mesh, params, env):
    dev = mesh.device
    gate = dev.gate if dev is not None else None
    area = dev.cross_section_area if dev is not None else 1.0
    return System(mesh, params, env, gate=gate, area=area)


@dataclass(frozen=True, eq=False)
class StateVector:
    """
    Solution on a mesh: potential (V) and carrier densities (1/cm^3).

    States produced by the solvers also carry their scaled internal unknowns,
    which keep quasi-Fermi differences at full precision.
    """

    psi: np.ndarray
    n: np.ndarray
    p: np.ndarray
    bias: BiasPoint = BiasPoint()
    _raw: object = field(default=None, repr=False)
    _system: object = field(default=None, repr=False)

    def __post_init__(self):
        for arr in (self.psi, self.n, self.p):
            arr.setflags(write=False)
        if not (self.psi.shape == self.n.shape == self.p.shape):
            raise ValueError("psi, n, p must have equal length")
        if np.any(self.n <= 0) or np.any(self.p <= 0):
            raise ValueError("carrier densities must be positive")

    @property
    def phi_n(self):
        vt = self._vt()
        return self.psi - vt * np.log(self.n / self._ni())

    @property
    def phi_p(self):
        vt = self._vt()
        return self.psi + vt * np.log(self.p / self._ni())

    def _vt(self):
        return self._system.vt if self._system is not None else ThermalEnv().thermal_voltage

    def _ni(self):
        return self._system.ni if self._system is not None else MaterialParams().intrinsic_density_ni


def _wrap_state(sys, raw, bias):
    n, p = sys.carriers(raw)
    return StateVector(psi=raw.psi * sys.vt, n=n * sys.ni, p=p * sys.ni, bias=bias,
                       _raw=raw, _system=sys)


def _raw_of(sys, state):
    if state._raw is not None and state._system is sys:
        return state._raw
    if state.psi.size != sys.N:
        raise ValueError(f"state has {state.psi.size} nodes, mesh has {sys.N}")
    return sys.state_from_densities(state.psi / sys.vt, state.n / sys.ni, state.p / sys.ni,
                                    state.bias.v_anode / sys.vt)


def gate_charge_term(psi_node, v_gate, gate, body_thickness=None):
    """
    Gate charge smeared over the body thickness, in C/cm^3.

    ``rho_g = (eps_ox / t_ox) (V_g - V_FB - psi) / t_body``; zero without a gate.
    """
    if gate is None:
        return np.zeros_like(np.asarray(psi_node, dtype=float))
    t_body = gate.body_thickness if body_thickness is None else body_thickness
    cox = gate.oxide_relative_permittivity * EPS0 / (gate.oxide_thickness * 100.0)
    return cox * (v_gate - gate.flatband_voltage - np.asarray(psi_node, float)) / (t_body * 100.0)


def solve_equilibrium(mesh, params=MaterialParams(), env=None, cfg=SolverConfig()):
    """
    Zero-bias solution of the nonlinear Poisson equation.

    Starts from the local charge-neutral potential and iterates damped Newton
    until the potential update falls below ``cfg.psi_update_tol``.
    """
    env = env or ThermalEnv(mesh.device.temperature if mesh.device else 300.0)
    sys = _system(mesh, params, env)
    psi0 = equilibrium_guess(mesh.net_doping, params, env) / sys.vt
    try:
        psi, _, _ = sys.poisson_equilibrium(psi0, cfg)
    except ConvergenceError as exc:
        raise ConvergenceError(f"equilibrium: {exc}", exc.iterations, exc.residual) from None
    return _wrap_state(sys, sys.equilibrium_state(psi), BiasPoint())


def _solve_raw(sys, raw, bias, cfg):
    """Bias change + Newton, Gummel fallback."""
    va = bias.v_anode / sys.vt
    vg = bias.v_gate / sys.vt
    start = sys.apply_bias(raw, va)
    try:
        return sys.newton(start, vg, cfg)
    except ConvergenceError as first:
        err = first
    try:
        g, gi, _ = sys.gummel(start, vg, cfg, max_iter=min(cfg.max_gummel_iters, 60), tol=1e-3)
        st, it, res = sys.newton(g, vg, cfg)
        return st, it + gi, res
    except (ConvergenceError, np.linalg.LinAlgError, FloatingPointError, ValueError):
        raise err from None


def solve_bias(mesh, params, env, bias, init, cfg=SolverConfig()):
    """
    Steady state at `bias`, warm-started from `init`.

    The contact values are moved to the new bias, the interior is kept, and
    the coupled system is solved by damped Newton; if that fails a short
    Gummel pass provides a new start for a second Newton attempt.

    Raises
    ------
    ConvergenceError
    """
    sys = _system(mesh, params, env)
    raw = _raw_of(sys, init)
    st, it, res = _solve_raw(sys, raw, bias, cfg)
    out = _wrap_state(sys, st, bias)
    object.__setattr__(out, "iterations", it)
    return out


def _state_change(sys, new, old):
    """Largest change of psi, ln n, ln p between two raw states (scaled)."""
    n1, p1 = sys.carriers(new)
    n0, p0 = sys.carriers(old)
    return float(max(np.max(np.abs(new.psi - old.psi)),
                     np.max(np.abs(np.log(n1 / n0))),
                     np.max(np.abs(np.log(p1 / p0)))))


def relax_to_steady(mesh, params, env, bias, init, cfg=SolverConfig(), dt0=1e-12,
                    max_steps=5000):
    """
    Pseudo-transient continuation at fixed `bias`.

    Backward-Euler steps of adaptive size follow the device as it switches;
    once a step barely changes the state, a steady Newton solve polishes the
    result. Used to cross a fold of the steady branch (latch or turn-off).

    Raises
    ------
    ConvergenceError
        If the step size collapses or `max_steps` is exhausted.
    """
    env = env or ThermalEnv()
    sys = _system(mesh, params, env)
    raw = sys.apply_bias(_raw_of(sys, init), bias.v_anode / sys.vt)
    vg = bias.v_gate / sys.vt
    dt = dt0 / sys.t0
    dt_floor = 1e-20 / sys.t0
    for step in range(1, max_steps + 1):
        old = sys.carriers(raw)
        try:
            new, it, _ = sys.newton(raw, vg, cfg, dt=dt, old=old)
        except ConvergenceError:
            dt /= 4.0
            if dt < dt_floor:
                raise ConvergenceError("pseudo-transient relaxation stalled", step) from None
            continue
        change = _state_change(sys, new, raw)
        raw = new
        if it <= 5 and change < 0.5:
            dt *= 2.0
        if change < 1e-2:
            try:
                st, it2, _ = sys.newton(raw, vg, cfg)
            except ConvergenceError:
                continue
            out = _wrap_state(sys, st, bias)
            object.__setattr__(out, "iterations", step + it2)
            return out
    raise ConvergenceError("pseudo-transient relaxation did not settle", max_steps)


@dataclass(frozen=True)
class ContactCurrents:
    """Currents into the device at each terminal (A); displacement included."""

    anode: float
    cathode: float
    gate: float = 0.0
    anode_displacement: float = 0.0
    cathode_displacement: float = 0.0


GaussBalance = namedtuple("GaussBalance", "flux charge gross")


def terminal_current(mesh, state, state_prev=None, dt=None):
    """
    Terminal currents of `state`.

    Each contact's current is read on the junction edge nearest to it with no
    gate charge in between (``System.anode_probe`` / ``cathode_probe``); the
    total current there is the contact current.  With `state_prev` and `dt`
    (s) the displacement term ``eps dE/dt`` is added and the gate current is
    the rate of change of the gate charge.
    """
    sys = state._system
    if sys is None or sys.mesh is not mesh:
        raise ValueError("state was not produced on this mesh")
    raw = _raw_of(sys, state)
    jn, jp = sys.edge_currents(raw)
    jtot = jn + jp
    area = sys.area
    ka, kk = sys.anode_probe, sys.cathode_probe
    ia = area * jtot[ka]
    ik = -area * jtot[kk]
    ida = idk = ig = 0.0
    if state_prev is not None and dt is not None:
        e_now = sys.efield(raw.psi)
        e_old = sys.efield(_raw_of(sys, state_prev).psi)
        disp = sys.eps * (e_now - e_old) / dt
        ida = area * disp[ka]
        idk = -area * disp[kk]
        if sys.kappa:
            vg_now = state.bias.v_gate / sys.vt
            vg_old = state_prev.bias.v_gate / sys.vt
            qg_now = np.sum(sys.cv * sys.gate_charge(raw.psi, vg_now))
            qg_old = np.sum(sys.cv * sys.gate_charge(_raw_of(sys, state_prev).psi, vg_old))
            # the smeared term is the gate electrode charge itself
            ig = area * (qg_now - qg_old) * Q * sys.ni * sys.ld / dt
    return ContactCurrents(anode=ia + ida, cathode=ik + idk, gate=ig,
                           anode_displacement=ida, cathode_displacement=idk)


def current_profile(mesh, state):
    """Total conduction current density (A/cm^2) on every edge."""
    sys = state._system
    jn, jp = sys.edge_currents(_raw_of(sys, state))
    return jn + jp


def gauss_balance(mesh, state):
    """
    Both sides of the integral form of Gauss's law over the interior nodes.

    Returns
    -------
    GaussBalance
        ``flux`` is ``eps * (E_last - E_first)`` from the two contact edges,
        ``charge`` the enclosed space charge (gate term included) and
        ``gross`` the same sum taken over ``|rho|``, the scale against which
        the residual ``flux - charge`` is judged.  All in C/cm^2.
    """
    sys = state._system
    raw = _raw_of(sys, state)
    e = sys.efield(raw.psi)
    n, p = sys.carriers(raw)
    rho = (p - n + sys.C + sys.gate_charge(raw.psi, state.bias.v_gate / sys.vt))[1:-1]
    cv = sys.cv[1:-1] * sys.ld
    scale = Q * sys.ni
    return GaussBalance(float(sys.eps * (e[-1] - e[0])), scale * float(np.sum(cv * rho)),
                        scale * float(np.sum(cv * np.abs(rho))))


def probe_charge(mesh, state):
    """
    Semiconductor charge (C) on the nodes between the two current probes.

    Its rate of change equals the anode minus the cathode-side conduction
    current at the probes.
    """
    sys = state._system
    raw = _raw_of(sys, state)
    n, p = sys.carriers(raw)
    inside = slice(sys.anode_probe + 1, sys.cathode_probe + 1)
    rho = (p - n + sys.C)[inside]
    return sys.area * Q * sys.ni * sys.ld * float(np.sum(sys.cv[inside] * rho))


# ------------------------------------------------------------------ sweeps

@dataclass(frozen=True)
class SweepSpec:
    terminal: str = "anode"
    v_start: float = 0.0
    v_stop: float = 3.0
    fixed_other_bias: float = 0.0

    def __post_init__(self):
        if self.terminal not in ("anode", "gate"):
            raise ValueError(f"terminal must be 'anode' or 'gate', got {self.terminal!r}")
        if self.v_start == self.v_stop:
            raise ValueError("v_start must differ from v_stop")

    def bias(self, v):
        if self.terminal == "anode":
            return BiasPoint(v_anode=v, v_gate=self.fixed_other_bias)
        return BiasPoint(v_anode=self.fixed_other_bias, v_gate=v)


@dataclass(frozen=True)
class SweepRecord:
    bias: BiasPoint
    current: float
    converged: bool
    iterations: int
    snap: bool = False
    state: StateVector = field(default=None, repr=False, compare=False)


@dataclass
class SweepResult:
    """Ordered records of one sweep direction."""

    records: list
    direction: str
    terminal: str = "anode"
    snaps: list = field(default_factory=list)
    completed: bool = True
    failure_at: float = None

    @property
    def voltages(self):
        attr = "v_anode" if self.terminal == "anode" else "v_gate"
        return np.array([getattr(r.bias, attr) for r in self.records if r.converged])

    @property
    def currents(self):
        return np.array([r.current for r in self.records if r.converged])

    @property
    def final_state(self):
        for r in reversed(self.records):
            if r.converged and r.state is not None:
                return r.state
        return None

    def states(self):
        return [r.state for r in self.records if r.converged]


BRANCH_JUMP_FLOOR = 1e-16  # A; currents below this are treated as equal


def _branch_jump(i_prev, i_next):
    """True when two neighbouring sweep currents differ by more than a decade."""
    a = max(abs(i_prev), BRANCH_JUMP_FLOOR)
    b = max(abs(i_next), BRANCH_JUMP_FLOOR)
    return abs(math.log10(b / a)) > 1.0


def sweep_iv(mesh, params, env, sweep, cfg=SolverConfig(), init=None, keep_states=True):
    """
    Natural-continuation sweep of one terminal.

    Each point starts from the previous converged state, so an up-sweep
    stays on the blocking branch until it ceases to exist and a down-sweep
    stays latched down to the holding point.  On failure the step is halved
    down to ``cfg.continuation_dv_min``; at that size the fold is crossed by
    pseudo-transient relaxation and the point is recorded as a snap.  A
    converged step whose current changes by more than a decade is treated
    the same way: Newton may land on the other branch before the fold, so
    the step is halved and the jump is accepted only at the minimum step.

    Parameters
    ----------
    sweep : SweepSpec or dict
    init : StateVector, optional
        Start state; defaults to equilibrium followed by a solve at `v_start`.
    """
    if isinstance(sweep, dict):
        sweep = SweepSpec(**sweep)
    env = env or ThermalEnv()
    if init is None:
        init = solve_equilibrium(mesh, params, env, cfg)
    init = _continue_to(mesh, params, env, init, init.bias, sweep.bias(sweep.v_start), cfg)
    direction = "up" if sweep.v_stop > sweep.v_start else "down"
    sign = 1.0 if direction == "up" else -1.0
    records = []
    snaps = []

    def record(state, v, it, snap=False):
        cur = terminal_current(mesh, state).anode
        records.append(SweepRecord(bias=sweep.bias(v), current=cur, converged=True,
                                   iterations=int(it), snap=snap,
                                   state=state if keep_states else None))

    record(init, sweep.v_start, getattr(init, "iterations", 0))
    state = init
    v = sweep.v_start
    dv = cfg.continuation_dv_init
    total = abs(sweep.v_stop - sweep.v_start)
    while sign * (sweep.v_stop - v) > 1e-12:
        v_next = v + sign * dv
        if sign * (v_next - sweep.v_stop) > 0 or abs(sweep.v_stop - v_next) < 1e-9 * max(1.0, total):
            v_next = sweep.v_stop
        can_halve = dv / 2.0 >= cfg.continuation_dv_min * (1 - 1e-9)
        try:
            new = solve_bias(mesh, params, env, sweep.bias(v_next), state, cfg)
        except ConvergenceError:
            new = None
        if new is not None:
            jumped = _branch_jump(records[-1].current, terminal_current(mesh, new).anode)
            if not (jumped and can_halve):
                record(new, v_next, new.iterations, snap=jumped)
                if jumped:
                    snaps.append(0.5 * (v + v_next))
                state, v = new, v_next
                dv = cfg.continuation_dv_init if jumped else min(dv * 2.0, cfg.continuation_dv_init)
                continue
        if can_halve:
            dv /= 2.0
            continue
        # fold: let the device switch
        try:
            new = relax_to_steady(mesh, params, env, sweep.bias(v_next), state, cfg)
        except ConvergenceError as exc:
            log.warning("sweep stopped at %.6g V: %s", v_next, exc)
            records.append(SweepRecord(bias=sweep.bias(v_next), current=math.nan,
                                       converged=False, iterations=0))
            return SweepResult(records, direction, sweep.terminal, snaps,
                               completed=False, failure_at=v_next)
        record(new, v_next, new.iterations, snap=True)
        snaps.append(0.5 * (v + v_next))
        state, v = new, v_next
        dv = cfg.continuation_dv_init
    return SweepResult(records, direction, sweep.terminal, snaps)


def _continue_to(mesh, params, env, state, bias_from, bias_to, cfg):
    """Walk both terminals linearly from one bias to another."""
    dist = max(abs(bias_to.v_anode - bias_from.v_anode), abs(bias_to.v_gate - bias_from.v_gate))
    if dist == 0:
        return solve_bias(mesh, params, env, bias_to, state, cfg)
    nsteps = max(1, math.ceil(dist / cfg.continuation_dv_init))
    for k in range(1, nsteps + 1):
        f = k / nsteps
        b = BiasPoint(v_anode=bias_from.v_anode + f * (bias_to.v_anode - bias_from.v_anode),
                      v_gate=bias_from.v_gate + f * (bias_to.v_gate - bias_from.v_gate))
        try:
            state = solve_bias(mesh, params, env, b, state, cfg)
        except ConvergenceError:
            state = relax_to_steady(mesh, params, env, b, state, cfg)
    return state


def bias_ramp(mesh, params, env, state, bias, cfg=SolverConfig()):
    """Public wrapper of the linear two-terminal continuation from ``state.bias``."""
    return _continue_to(mesh, params, env, state, state.bias, bias, cfg)


# --------------------------------------------------------------- load line

LOAD_LINE_MAX_SUPPLY_STEP = 0.5  # V

def load_line_solve(mesh, params, env, v_supply, r_series, init, cfg=SolverConfig(), v_gate=0.0):
    """
    Device in series with a resistor driven by `v_supply`.

    The anode voltage is an extra unknown with the equation
    ``(v_supply - v) / r_series = I_anode``, solved together with the device
    by a bordered Newton iteration (two band solves per iteration).  The
    supply is ramped from the operating point of `init` so every Newton
    solve starts close to its solution; this is what lets a large resistor
    hold the device on the negative-resistance branch.
    ``r_series == 0`` is a plain :func:`solve_bias` at `v_supply`.

    `init` must already include the gate bias `v_gate`.
    """
    if r_series < 0:
        raise ValueError(f"r_series must be >= 0, got {r_series!r}")
    if r_series == 0:
        return solve_bias(mesh, params, env, BiasPoint(v_supply, v_gate), init, cfg)
    env = env or ThermalEnv()
    sys = _system(mesh, params, env)
    st = sys.apply_bias(_raw_of(sys, init), _raw_of(sys, init).va)
    i0 = terminal_current(mesh, _wrap_state(sys, st, init.bias)).anode
    vs = st.va * sys.vt + r_series * i0
    step = cfg.continuation_dv_init
    total_it = 0
    while True:
        target = v_supply if abs(v_supply - vs) <= step else vs + math.copysign(step, v_supply - vs)
        try:
            st, it = _load_line_newton(sys, st, target, r_series, v_gate / sys.vt, cfg)
        except ConvergenceError as exc:
            log.debug("load line failed at v_supply %.6g (step %.3g): %s", target, step, exc)
            if step / 2 < cfg.continuation_dv_min:
                raise ConvergenceError(
                    f"load line lost at v_supply = {target:.6g} V; the operating point jumps "
                    f"here (r_series flatter than the negative-resistance branch)",
                    exc.iterations, exc.residual) from None
            step /= 2
            continue
        total_it += it
        vs = target
        if vs == v_supply:
            break
        # the device takes only part of a supply step, so the step may grow past dv_init
        step = min(2 * step, LOAD_LINE_MAX_SUPPLY_STEP)
    out = _wrap_state(sys, st, BiasPoint(st.va * sys.vt, v_gate))
    object.__setattr__(out, "iterations", total_it)
    return out


def _load_line_newton(sys, st, v_supply, r_series, vg, cfg):
    vt = sys.vt
    scale_i = sys.area * sys.j0
    shift = _bias_direction(sys)
    res = np.inf
    for it in range(1, cfg.max_newton_iters + 1):
        F, scale, jac = sys.assemble(st, vg)
        # residual change per unit anode step with the interior held
        g_v = jac.apply(shift)
        g_v[:3] = 0.0
        g_v[-5:] = 0.0
        # the loop current is the same on every edge; take it where the edge
        # conductance is smallest so its linearization does not cancel
        edge = int(np.argmin(np.abs(jac.dJn_phiR) + np.abs(jac.dJp_phiR)))
        i_dev = (jac.jn[edge] + jac.jp[edge]) * scale_i
        va = st.va
        h = (v_supply / vt - va) * vt / r_series - i_dev
        grad = _edge_current_gradient(jac, edge) * scale_i
        a = jac.solve(-F)
        b = _solve_extended(jac, -g_v)
        # the anode step moves the state by b*dv plus the rigid shift*dv
        dv = (h - grad @ a) / (vt / r_series + grad @ (b + shift))
        step = a + b * dv
        if not (np.all(np.isfinite(step)) and np.isfinite(dv)):
            raise ConvergenceError("singular bordered system", it, res)
        big = max(sys.step_size(step), abs(dv))
        if big > cfg.max_step_VT:
            step *= cfg.max_step_VT / big
            dv *= cfg.max_step_VT / big
        # the rigid shift keeps the increment chain closed, so no re-closure noise
        st = sys.update(st, step + dv * shift)
        st.va = va + dv
        st.psi[0] = sys.psi_contact[0] + st.va
        res = float(np.max(np.abs(F) / scale))
        ires = abs(h) / max(abs(i_dev), abs(v_supply / r_series), 1e-30)
        if (res < cfg.residual_tol and ires < cfg.residual_tol
                and max(np.max(np.abs(step[0::5])), abs(dv)) < cfg.psi_update_tol / vt):
            return st, it
    raise ConvergenceError("load-line Newton did not converge", cfg.max_newton_iters, res)


def _bias_direction(sys):
    """Extended-basis image of a unit rigid anode step (see ``System.apply_bias``)."""
    edge = sys.first_junction_edge
    e = np.zeros(5 * sys.N)
    for k in range(3):
        e[k:5 * (edge + 1):5] = 1.0
    e[5 * edge + 3] = e[5 * edge + 4] = -1.0
    return e


def _solve_extended(jac, rhs):
    """Solve with an extended right-hand side (the factorization is reused)."""
    if jac._lu is None:
        jac._factor()
    return jac._lu_solve(rhs)


def _edge_current_gradient(jac, k):
    """Gradient of the scaled current on edge `k` with respect to the extended unknowns."""
    g = np.zeros(5 * jac.N)
    jn, jp = jac.jn[k], jac.jp[k]
    g[5 * k] = jn - jac.dJn_psiR[k] - jp - jac.dJp_psiR[k]
    g[5 * k + 5] = jac.dJn_psiR[k] + jac.dJp_psiR[k]
    g[5 * k + 1] = -jn
    g[5 * k + 2] = jp
    g[5 * k + 3] = jac.dJn_phiR[k]
    g[5 * k + 4] = jac.dJp_phiR[k]
    return g


class Simulation:
    """
    Convenience bundle of a parsed config, its mesh and default solver settings.

    >>> sim = Simulation.from_reference("pnpnn6")          # doctest: +SKIP
    >>> up = sim.sweep(0.0, 3.0)                            # doctest: +SKIP
    """

    def __init__(self, config, solver=SolverConfig(), mesh=None):
        if isinstance(config, DeviceSpec):
            config = SimulationConfig(device=config)
        self.config = config
        self.device = config.device
        self.params = config.material
        self.env = ThermalEnv(config.device.temperature)
        self.mesh = mesh if mesh is not None else build_mesh(config.device, config.mesh)
        self.solver = solver

    @classmethod
    def from_reference(cls, name, solver=SolverConfig(), **mesh_overrides):
        from .device import reference_config
        return cls(reference_config(name, **mesh_overrides), solver)

    @property
    def system(self):
        return _system(self.mesh, self.params, self.env)

    def equilibrium(self):
        return solve_equilibrium(self.mesh, self.params, self.env, self.solver)

    def solve(self, v_anode, v_gate=0.0, init=None):
        init = init if init is not None else self.equilibrium()
        return bias_ramp(self.mesh, self.params, self.env, init,
                         BiasPoint(v_anode, v_gate), self.solver)

    def sweep(self, v_start, v_stop, terminal="anode", fixed=0.0, init=None, keep_states=True):
        spec = SweepSpec(terminal, v_start, v_stop, fixed)
        return sweep_iv(self.mesh, self.params, self.env, spec, self.solver, init=init,
                        keep_states=keep_states)

    def hysteresis(self, v_max=3.0, v_gate=0.0, v_min=0.0):
        """Up-sweep then down-sweep starting from the up-sweep's last state."""
        up = self.sweep(v_min, v_max, fixed=v_gate)
        down = self.sweep(v_max, v_min, fixed=v_gate, init=up.final_state)
        return up, down

    def current(self, state, state_prev=None, dt=None):
        return terminal_current(self.mesh, state, state_prev, dt)
