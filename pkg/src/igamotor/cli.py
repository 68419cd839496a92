"""Command line entry point.

One JSON configuration file drives everything; flags only pick the
subcommand and the config path, so runs are reproducible from a single
artifact.  Outputs are CSV/JSON files with the config hash embedded as a
comment line; identical configs produce byte-identical non-timing outputs.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from .assembly import (
    assemble_coupling,
    assemble_rhs,
    assemble_stiffness,
    assemble_winding_vector,
    build_reluctivity_map,
    eval_field,
)
from .coupling import (
    CouplingBlocks,
    assemble_full_saddle,
    harmonic_orders,
    precompute_from_blocks,
    rotation_sweep,
    solve_at_angle,
    sweep_angles,
)
from .errors import ConfigError, IgaError
from .fourier import attach_spectrum
from .geometry import (
    MachineConfig,
    build_demo_machine,
    build_dof_map,
    dump_geometry,
    locate_polar,
)
from .optim import OptimizerConfig, run_optimization

DEFAULT_SOLVE = {"alpha": 0.0, "grid_r": 24, "grid_theta": 90}
DEFAULT_BENCH = {"levels": [1, 2, 3], "harmonics": [6, 20, 36, 50],
                 "n_angles": 8, "repetitions": 10, "full_angles": 4}
DEFAULT_OPTIMIZE = {"snapshots": False}


def _from_dict(cls, data: dict, path: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError("unknown key(s) %s under '%s'" % (sorted(unknown), path))
    coerced = dict(data)
    if "index_set" in coerced and coerced["index_set"] is not None:
        coerced["index_set"] = tuple(coerced["index_set"])
    try:
        return cls(**coerced)
    except TypeError as exc:
        raise ConfigError("bad value under '%s': %s" % (path, exc)) from exc


class RunConfig:
    """Validated run configuration (machine + optimizer + command options)."""

    TOP_KEYS = {"machine", "optimizer", "output_dir", "workers", "seed",
                "solve", "bench", "optimize"}

    def __init__(self, doc: dict):
        unknown = set(doc) - self.TOP_KEYS
        if unknown:
            raise ConfigError("unknown top-level key(s) %s" % sorted(unknown))
        self.machine = _from_dict(MachineConfig, doc.get("machine", {}), "machine")
        self.optimizer = _from_dict(OptimizerConfig, doc.get("optimizer", {}), "optimizer")
        self.output_dir = Path(doc.get("output_dir", "out"))
        self.workers = int(doc.get("workers", 1))
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.seed = int(doc.get("seed", 0))
        self.solve = dict(DEFAULT_SOLVE)
        solve_doc = doc.get("solve", {})
        if set(solve_doc) - set(DEFAULT_SOLVE):
            raise ConfigError("unknown key(s) %s under 'solve'"
                              % sorted(set(solve_doc) - set(DEFAULT_SOLVE)))
        self.solve.update(solve_doc)
        self.bench = dict(DEFAULT_BENCH)
        bench_doc = doc.get("bench", {})
        if set(bench_doc) - set(DEFAULT_BENCH):
            raise ConfigError("unknown key(s) %s under 'bench'"
                              % sorted(set(bench_doc) - set(DEFAULT_BENCH)))
        self.bench.update(bench_doc)
        self.optimize = dict(DEFAULT_OPTIMIZE)
        optimize_doc = doc.get("optimize", {})
        if set(optimize_doc) - set(DEFAULT_OPTIMIZE):
            raise ConfigError("unknown key(s) %s under 'optimize'"
                              % sorted(set(optimize_doc) - set(DEFAULT_OPTIMIZE)))
        self.optimize.update(optimize_doc)
        self.hash = hashlib.sha256(
            json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def load_config(path: str) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError("config file not found: %s" % path) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config is not valid JSON: %s" % exc) from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return RunConfig(doc)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # shortest round-trip decimal
    return str(v)


def _write_csv(path: Path, cfg_hash: str, header: str, rows) -> None:
    lines = ["# config %s" % cfg_hash, header]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _machine_state(mc: MachineConfig):
    stator, rotor = build_demo_machine(mc)
    dm_st, dm_rt = build_dof_map(stator), build_dof_map(rotor)
    orders = harmonic_orders(mc.n_harmonics,
                             mc.pole_pairs if mc.harmonics_multiple_of_poles else 1)
    blocks = CouplingBlocks(
        assemble_stiffness(stator, dm_st, build_reluctivity_map(stator, mc)),
        assemble_stiffness(rotor, dm_rt, build_reluctivity_map(rotor, mc)),
        assemble_coupling(stator, dm_st, orders),
        assemble_coupling(rotor, dm_rt, orders),
        assemble_rhs(stator, dm_st, mc, t=0.0),
        assemble_rhs(rotor, dm_rt, mc),
        orders)
    return stator, rotor, dm_st, dm_rt, blocks


def cmd_solve(cfg: RunConfig) -> None:
    mc = cfg.machine
    stator, rotor, dm_st, dm_rt, blocks = _machine_state(mc)
    pre = precompute_from_blocks(blocks)
    alpha = float(cfg.solve["alpha"])
    sol = solve_at_angle(pre, alpha)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)

    coeff_rows = [("stator", i, v) for i, v in enumerate(dm_st.expand(sol.u_st))]
    coeff_rows += [("rotor", i, v) for i, v in enumerate(dm_rt.expand(sol.u_rt))]
    _write_csv(out / "u_coeffs.csv", cfg.hash, "side,index,value", coeff_rows)

    # polar sample grid at cell centers; rotor samples are taken in the rotor
    # frame and reported at their laboratory position
    n_r, n_t = int(cfg.solve["grid_r"]), int(cfg.solve["grid_theta"])
    u_st_g, u_rt_g = dm_st.expand(sol.u_st), dm_rt.expand(sol.u_rt)
    rows = []
    for i in range(n_r):
        r = mc.r_shaft + (i + 0.5) * (mc.r_outer - mc.r_shaft) / n_r
        rotor_side = r < mc.r_interface
        for j in range(n_t):
            th = (j + 0.5) * 2.0 * np.pi / n_t
            if rotor_side:
                pid, xi, eta = locate_polar(rotor, r, (th - alpha) % (2 * np.pi))
                point, u, grad = eval_field(rotor, dm_rt, u_rt_g, pid, xi, eta)
                c, s = np.cos(alpha), np.sin(alpha)
                point = np.array([c * point[0] - s * point[1],
                                  s * point[0] + c * point[1]])
                grad = np.array([c * grad[0] - s * grad[1],
                                 s * grad[0] + c * grad[1]])
            else:
                pid, xi, eta = locate_polar(stator, r, th)
                point, u, grad = eval_field(stator, dm_st, u_st_g, pid, xi, eta)
            rows.append((point[0], point[1], u, grad[1], -grad[0]))
    _write_csv(out / "field.csv", cfg.hash, "x,y,u,Bx,By", rows)


def cmd_sweep(cfg: RunConfig) -> None:
    mc = cfg.machine
    stator, rotor, dm_st, dm_rt, blocks = _machine_state(mc)
    pre = precompute_from_blocks(blocks)
    winding = assemble_winding_vector(stator, dm_st, mc, phase=1)
    angles = sweep_angles(mc.pole_pairs, mc.n_angles)
    sweep = rotation_sweep(pre, angles, winding, mc.pole_pairs * mc.length_z,
                           workers=cfg.workers)
    attach_spectrum(sweep, mc.index_set)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "psi.csv", cfg.hash, "angle,psi",
               [(float(a), float(p)) for a, p in zip(sweep.angles, sweep.psi)])
    _write_csv(out / "spectrum.csv", cfg.hash, "harmonic,A,B,magnitude",
               [(n, float(sweep.emf_a[n]), float(sweep.emf_b[n]),
                 float(np.hypot(sweep.emf_a[n], sweep.emf_b[n])))
                for n in range(sweep.emf_a.size)])
    (out / "thd.txt").write_text("# config %s\n%r\n" % (cfg.hash, sweep.thd))


def cmd_optimize(cfg: RunConfig) -> None:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    callback = None
    if cfg.optimize["snapshots"]:
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)

        def callback(state):
            (snap_dir / ("rotor_iter_%03d.json" % state.iteration)).write_text(
                dump_geometry(state.rotor))

    state = run_optimization(cfg.machine, cfg.optimizer, workers=cfg.workers,
                             callback=callback)
    _write_csv(out / "history.csv", cfg.hash, "iteration,thd,step,min_detj",
               [(it, float(thd), float(step), float(mind))
                for it, thd, step, mind in state.history])
    (out / "rotor_optimized.json").write_text(dump_geometry(state.rotor))
    (out / "summary.txt").write_text(
        "# config %s\nreason %s\niterations %d\nthd_initial %r\nthd_final %r\n"
        % (cfg.hash, state.reason, state.iteration, state.history[0][1],
           state.objective))


def cmd_bench(cfg: RunConfig) -> None:
    rows = []
    b = cfg.bench
    for level in b["levels"]:
        for n_h in b["harmonics"]:
            try:
                mc = dataclasses.replace(cfg.machine, refinement=int(level),
                                         n_harmonics=int(n_h))
            except ConfigError as exc:
                print("bench: skipping level=%s n_harmonics=%s (%s)"
                      % (level, n_h, exc), file=sys.stderr)
                continue
            stator, rotor, dm_st, dm_rt, blocks = _machine_state(mc)
            dofs = dm_st.n_free + dm_rt.n_free
            angles = sweep_angles(mc.pole_pairs, int(b["n_angles"]))
            t0 = time.perf_counter()
            pre = precompute_from_blocks(blocks)
            time_pre = time.perf_counter() - t0
            solve_at_angle(pre, 0.0)  # warmup
            t_int, t_post = [], []
            for _ in range(int(b["repetitions"])):
                sweep = rotation_sweep(pre, angles)
                t_int.extend(sweep.time_interface.tolist())
                t_post.extend(sweep.time_post.tolist())
            t_full = []
            for alpha in angles[:int(b["full_angles"])]:
                for _ in range(int(b["repetitions"])):
                    t0 = time.perf_counter()
                    assemble_full_saddle(blocks, float(alpha))
                    t_full.append(time.perf_counter() - t0)
            rows.append((dofs, int(n_h), statistics.median(t_full),
                         statistics.median(t_int), time_pre,
                         statistics.median(t_post)))
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "bench.csv", cfg.hash,
               "dofs,n_harmonics,time_full_s,time_interface_s,time_pre_s,time_post_s",
               rows)


def cmd_export(cfg: RunConfig) -> None:
    stator, rotor = build_demo_machine(cfg.machine)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "stator.json").write_text(dump_geometry(stator))
    (out / "rotor.json").write_text(dump_geometry(rotor))


COMMANDS = {
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "optimize": cmd_optimize,
    "bench": cmd_bench,
    "export": cmd_export,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="igamotor",
        description="2D magnetostatic machine solver with harmonic rotor "
                    "coupling and THD shape optimization")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to the JSON run config")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except IgaError as exc:
        print("numerical failure: %s" % exc, file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
