"""
``tramsim`` command-line front end.

Commands: ``equilibrium``, ``sweep``, ``transient``, ``metrics`` and
``speedscan``.  Every run writes CSV files and a ``manifest.json`` into its
output directory.  Exit codes: 0 ok, 1 usage or config error, 2 solver
failure, 3 partial results written.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import (BracketError, NoJumpError, SpeedTemplate, StructureError, SweepProtocol,
                       band_diagram, classify_read, compare_structures, field_profile,
                       hysteresis_metrics, read_current, speed_limit_search,
                       transition_snapshots)
from .device import ConfigError, MeshError, load_config
from .steady import ConvergenceError, Simulation, SolverConfig
from .transient import TransientSpec, build_pulse_train, flat_intervals, run_transient

log = logging.getLogger("tramsim")

OUT_DIR_ENV = "TRAMSIM_OUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_PARTIAL = 0, 1, 2, 3

SWEEP_COLUMNS = ("direction", "v_anode_V", "v_gate_V", "i_anode_A", "converged", "iterations")
SNAPSHOT_COLUMNS = ("x_m", "psi_V", "n_cm3", "p_cm3", "Efield_Vcm", "Ec_eV", "Ev_eV",
                    "Efn_eV", "Efp_eV")
BAND_COLUMNS = ("x_m", "Ec_eV", "Ev_eV", "Efn_eV", "Efp_eV")
TRANSIENT_COLUMNS = ("t_s", "v_anode_V", "v_gate_V", "i_anode_A", "i_anode_disp_A", "dt_s")
METRICS_COLUMNS = ("structure", "v_bo_V", "v_hold_knee_V", "window_V", "on_off_ratio", "i_hold_A")
SEQUENCE_KEYS = {"sequence", "read_threshold_A", "lte_tol", "dt_max_s", "settle_s"}


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ output

def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return f"{float(value) + 0.0:.8e}"  # + 0.0 drops the sign of -0.0


def write_csv(path, columns, rows):
    """Scientific notation with 9 significant digits, LF line endings."""
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


class Run:
    """Output directory plus the manifest describing what was written there."""

    def __init__(self, out_dir, command, params, inputs):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.params = params
        self.inputs = inputs
        self.files = []
        self.started = datetime.now(timezone.utc).isoformat()

    def csv(self, name, columns, rows):
        self.files.append(name)
        return write_csv(self.out / name, columns, rows)

    def text(self, name, content):
        self.files.append(name)
        (self.out / name).write_text(content, encoding="utf-8", newline="\n")

    def close(self, exit_code):
        manifest = {
            "tool": "tramsim", "version": __version__, "command": self.command,
            "parameters": self.params,
            "inputs": {str(p): hashlib.sha256(Path(p).read_bytes()).hexdigest()
                       for p in self.inputs},
            "started": self.started, "finished": datetime.now(timezone.utc).isoformat(),
            "exit_code": exit_code, "outputs": sorted(set(self.files)),
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n",
                                                encoding="utf-8")


def _snapshot_rows(mesh, state):
    bands = band_diagram(mesh, state)
    e_edge = field_profile(mesh, state).E
    e_node = np.empty(mesh.n_nodes)
    e_node[1:-1] = 0.5 * (e_edge[1:] + e_edge[:-1])
    e_node[0], e_node[-1] = e_edge[0], e_edge[-1]
    return zip(mesh.node_positions, state.psi, state.n, state.p, e_node, bands.Ec, bands.Ev,
               bands.Efn, bands.Efp)


def _band_rows(mesh, state):
    b = band_diagram(mesh, state)
    return zip(b.x, b.Ec, b.Ev, b.Efn, b.Efp)


def _sweep_rows(result):
    for r in result.records:
        yield (result.direction, r.bias.v_anode, r.bias.v_gate, r.current, r.converged,
               r.iterations)


# ----------------------------------------------------------------- loading

def _simulation(path, args):
    cfg = load_config(path)
    if args.mesh_points is not None:
        cfg = replace(cfg, mesh=replace(cfg.mesh, points_per_region=args.mesh_points))
    solver = SolverConfig()
    if args.tol_scale is not None:
        if not args.tol_scale > 0:
            raise UsageError("--tol-scale must be positive")
        solver = solver.scaled(args.tol_scale)
    return Simulation(cfg, solver)


def _lte(args, default=1e-3):
    return default * (args.tol_scale if args.tol_scale is not None else 1.0)


def load_sequence(path):
    """Parse a pulse-sequence file; returns ``(ops, options)``."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read sequence {str(path)!r}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"sequence {str(path)!r}: {exc}") from None
    if not isinstance(data, dict) or "sequence" not in data:
        raise ConfigError("sequence file needs a top-level 'sequence' list")
    unknown = set(data) - SEQUENCE_KEYS
    if unknown:
        raise ConfigError(f"sequence file: unknown keys {sorted(unknown)}")
    ops = data["sequence"]
    if not isinstance(ops, list) or not ops:
        raise UsageError("sequence is empty")
    try:
        build_pulse_train(ops)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sequence: {exc}") from None
    return ops, {k: v for k, v in data.items() if k != "sequence"}


def _threshold_at(sim, v_read, v_max=3.0):
    """Read threshold at `v_read` from the device's own hysteresis sweep."""
    m, _, _ = hysteresis_metrics(sim, SweepProtocol(v_max=v_max, v_read=v_read))
    return m.read_threshold


# ---------------------------------------------------------------- commands

def cmd_equilibrium(args, run):
    sim = _simulation(args.config, args)
    eq = sim.equilibrium()
    run.csv("snapshot.csv", SNAPSHOT_COLUMNS, _snapshot_rows(sim.mesh, eq))
    run.csv("bands.csv", BAND_COLUMNS, _band_rows(sim.mesh, eq))
    print(f"equilibrium: {sim.mesh.n_nodes} nodes, "
          f"potential span {eq.psi.max() - eq.psi.min():.6f} V")
    return EXIT_OK


def cmd_sweep(args, run):
    if args.v_from == args.v_to:
        raise UsageError("--from and --to must differ")
    sim = _simulation(args.config, args)
    fixed = args.vg if args.terminal == "anode" else args.va
    start = sim.equilibrium()
    if args.terminal == "gate" and args.va != 0.0:
        start = sim.solve(args.va, 0.0, start)
    first = sim.sweep(args.v_from, args.v_to, terminal=args.terminal, fixed=fixed, init=start)
    results = [first]
    if args.updown and first.completed:
        results.append(sim.sweep(args.v_to, args.v_from, terminal=args.terminal, fixed=fixed,
                                 init=first.final_state))
    run.csv("sweep.csv", SWEEP_COLUMNS, (row for r in results for row in _sweep_rows(r)))
    if args.snapshots:
        fractions = [float(f) for f in args.snapshots.split(",")]
        for res, phase in zip(results, ("rising", "falling")):
            if args.v_from > args.v_to:
                phase = "falling" if phase == "rising" else "rising"
            for snap in transition_snapshots(res, phase, fractions):
                run.csv(f"snapshot_{phase}_{snap.fraction:g}.csv", SNAPSHOT_COLUMNS,
                        _snapshot_rows(sim.mesh, snap.state))
    for r in results:
        if not r.completed:
            print(f"sweep {r.direction} stopped at {r.failure_at} V", file=sys.stderr)
            return EXIT_PARTIAL
    print(f"sweep: {sum(len(r.records) for r in results)} points")
    return EXIT_OK


def cmd_transient(args, run):
    ops, opts = load_sequence(args.sequence)
    sim = _simulation(args.config, args)
    waves = build_pulse_train(ops)
    t_end = waves["anode"].times[-1] + float(opts.get("settle_s", 0.0))
    spec = TransientSpec(waves, t_end=t_end, lte_tol=float(opts.get("lte_tol", _lte(args))),
                         dt_max=opts.get("dt_max_s"))
    rec = run_transient(sim.mesh, sim.params, sim.env, spec, sim.equilibrium(), sim.solver)
    run.csv("transient.csv", TRANSIENT_COLUMNS,
            zip(rec.t, rec.v_anode, rec.v_gate, rec.i_anode, rec.i_anode_disp, rec.dt))
    if not rec.completed:
        print(f"transient stopped at t = {rec.failure_time} s (time step underflow)",
              file=sys.stderr)
        return EXIT_PARTIAL
    reads = flat_intervals(ops, "read")
    if reads:
        read_ops = [op for op in ops if op["kind"] == "read"]
        threshold = opts.get("read_threshold_A")
        report = []
        for op, interval in zip(read_ops, reads):
            v_read = float(op.get("v_anode_V", op.get("v_anode")))
            thr = float(threshold) if threshold is not None else _threshold_at(sim, v_read)
            verdict = classify_read(rec, interval, thr)
            report.append({"t_start_s": interval[0], "t_end_s": interval[1],
                           "v_read_V": v_read, "threshold_A": thr,
                           "median_current_A": read_current(rec, interval),
                           "result": "Read1" if verdict == "one" else "Read0"})
            print(f"read at {interval[0]:.4g} s: {report[-1]['result']}")
        run.text("reads.yaml", yaml.safe_dump({"reads": report}, sort_keys=False))
    print(f"transient: {rec.steps_accepted} steps accepted, {rec.steps_rejected} rejected")
    return EXIT_OK


def cmd_metrics(args, run):
    protocol = SweepProtocol(v_max=args.v_max, v_gate=args.vg, v_read=args.v_read,
                             v_hold=args.v_hold)
    sims = [_simulation(path, args) for path in args.configs]
    names = [Path(p).stem for p in args.configs]
    report = {}
    if len(sims) == 1:
        try:
            m, _, _ = hysteresis_metrics(sims[0], protocol)
        except NoJumpError as exc:
            raise ConvergenceError(f"no jump detected: {exc}") from exc
        metrics = [m]
    else:
        if names[0] == names[1]:
            names = [f"{n}_{k}" for k, n in enumerate(names, 1)]
        cmp = compare_structures(sims[0], sims[1], protocol, names=tuple(names))
        metrics = [cmp.metrics_a, cmp.metrics_b]
        report["verdicts"] = {f"{names[0]} vs {names[1]}": dict(cmp.verdicts)}
    run.csv("metrics.csv", METRICS_COLUMNS,
            (tuple(m.as_row(n).values()) for n, m in zip(names, metrics)))
    report["structures"] = {n: {k: float(v) for k, v in vars(m).items()}
                            for n, m in zip(names, metrics)}
    run.text("metrics.yaml", yaml.safe_dump(report, sort_keys=False))
    for n, m in zip(names, metrics):
        print(f"{n}: V_bo {m.v_breakover:.4f} V, knee {m.v_hold_knee:.4f} V, "
              f"window {m.memory_window:.4f} V, ON/OFF {m.on_off_ratio:.3e}, "
              f"I_hold {m.i_hold:.3e} A")
    if "verdicts" in report:
        for k, v in next(iter(report["verdicts"].values())).items():
            print(f"{k}: {v}")
    return EXIT_OK


def cmd_speedscan(args, run):
    if not 0 < args.tlo <= args.thi:
        raise UsageError("need 0 < --tlo <= --thi")
    sim = _simulation(args.config, args)
    template = SpeedTemplate(v_program=args.vpg, v_gate=args.vg, v_hold=args.v_hold,
                             v_read=args.v_read)
    threshold = args.threshold if args.threshold is not None else _threshold_at(sim, args.v_read)
    probes = []
    try:
        found = speed_limit_search(sim, template, args.tlo, args.thi, threshold,
                                   lte_tol=_lte(args), probes=probes)
    finally:
        for k, (t_pulse, verdict, current, rec) in enumerate(probes):
            run.csv(f"probe_{k:02d}.csv", TRANSIENT_COLUMNS,
                    zip(rec.t, rec.v_anode, rec.v_gate, rec.i_anode, rec.i_anode_disp, rec.dt))
        summary = {"threshold_A": threshold,
                   "probes": [{"t_pulse_s": t, "result": v, "read_current_A": c}
                              for t, v, c, _ in probes]}
    summary["speed_limit_s"] = found
    run.text("speedscan.yaml", yaml.safe_dump(summary, sort_keys=False))
    print(f"speed limit: {found:.4e} s")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser():
    p = argparse.ArgumentParser(prog="tramsim", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"tramsim {__version__}")
    p.add_argument("--mesh-points", type=int, help="override points per region")
    p.add_argument("--tol-scale", type=float,
                   help="multiply Newton and time-step tolerances by this factor")
    p.add_argument("--seedless", action="store_true",
                   help="reserved; the simulator uses no random numbers")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def out_arg(sp):
        sp.add_argument("out_dir", nargs="?", default=None,
                        help=f"output directory (default ${OUT_DIR_ENV} or ./out)")

    sp = sub.add_parser("equilibrium", help="zero-bias solution and band diagram")
    sp.add_argument("config")
    out_arg(sp)

    sp = sub.add_parser("sweep", help="anode or gate bias sweep")
    sp.add_argument("config")
    out_arg(sp)
    sp.add_argument("--terminal", choices=("anode", "gate"), default="anode")
    sp.add_argument("--from", dest="v_from", type=float, default=0.0)
    sp.add_argument("--to", dest="v_to", type=float, default=3.0)
    sp.add_argument("--vg", type=float, default=0.0, help="gate bias for anode sweeps")
    sp.add_argument("--va", type=float, default=0.0, help="anode bias for gate sweeps")
    sp.add_argument("--updown", action="store_true", help="also sweep back")
    sp.add_argument("--snapshots", help="comma-separated transition percentages")

    sp = sub.add_parser("transient", help="pulse-sequence simulation")
    sp.add_argument("config")
    sp.add_argument("sequence")
    out_arg(sp)

    sp = sub.add_parser("metrics", help="memory metrics of one or two structures")
    sp.add_argument("configs", nargs="+")
    sp.add_argument("--out", dest="out_dir", default=None)
    sp.add_argument("--v-max", type=float, default=3.0)
    sp.add_argument("--vg", type=float, default=0.0)
    sp.add_argument("--v-read", type=float, default=None)
    sp.add_argument("--v-hold", type=float, default=None)

    sp = sub.add_parser("speedscan", help="shortest program pulse that still stores a one")
    sp.add_argument("config")
    out_arg(sp)
    sp.add_argument("--tlo", type=float, required=True)
    sp.add_argument("--thi", type=float, required=True)
    sp.add_argument("--vpg", type=float, default=1.0)
    sp.add_argument("--vg", type=float, default=0.5)
    sp.add_argument("--v-hold", type=float, default=0.6)
    sp.add_argument("--v-read", type=float, default=1.0)
    sp.add_argument("--threshold", type=float, default=None,
                    help="read threshold in A (default: from the hysteresis sweep)")
    return p


COMMANDS = {"equilibrium": cmd_equilibrium, "sweep": cmd_sweep, "transient": cmd_transient,
            "metrics": cmd_metrics, "speedscan": cmd_speedscan}


def _inputs(args):
    if args.command == "metrics":
        return list(args.configs)
    paths = [args.config]
    if args.command == "transient":
        paths.append(args.sequence)
    return paths


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.seedless:
        print("error: --seedless is reserved and not accepted (the simulator is deterministic)",
              file=sys.stderr)
        return EXIT_USAGE
    inputs = _inputs(args)
    for path in inputs:
        if not Path(path).is_file():
            print(f"error: cannot read {path!r}", file=sys.stderr)
            return EXIT_USAGE
    out_dir = args.out_dir or os.environ.get(OUT_DIR_ENV) or "out"
    params = {k: v for k, v in vars(args).items() if k not in ("verbose",)}
    run = Run(out_dir, args.command, params, inputs)
    code = EXIT_SOLVER
    try:
        code = COMMANDS[args.command](args, run)
    except (UsageError, ConfigError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except (ConvergenceError, NoJumpError, StructureError, BracketError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        code = EXIT_SOLVER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    finally:
        run.close(code)
    return code


if __name__ == "__main__":
    sys.exit(main())
