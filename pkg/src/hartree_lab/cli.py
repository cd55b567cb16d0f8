"""Command-line drivers: one subcommand per experiment, each writing its data
files and then a manifest with their checksums.

Exit status: 0 on success, 1 when the acceptance suite has failures,
2 for an invalid configuration, 3 for a numerical failure reported by a
module.
"""

import argparse
import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import RunConfig, load, serialize
from .errors import HartreeError
from .fieldio import OutputDir, csv_text, field_bytes, json_text, read_field
from .radial_core import (RadialField, apply_laplacian, assemble_kernel, build_grid, config_hash,
                          delta, h1_inner)

# keys that change where or how fast a run goes but not what it computes
UNHASHED = ("output.dir", "run.threads")

SUBCOMMANDS = ("ground-state", "spectrum", "modulate", "evolve", "construct-wpm", "virial",
               "kelvin-check", "acceptance")


class Run:
    """Shared state of one invocation: config, lazily built numerical objects, output."""

    def __init__(self, name: str, cfg: RunConfig):
        self.name = name
        self.cfg = cfg
        self.started = time.perf_counter()
        self.out = OutputDir(cfg["output.dir"])
        self.derived = {}
        self._ground = self._system = self._pair = None

    @property
    def ground(self):
        if self._ground is None:
            from .ground_state import calibrate_ground_state
            c = self.cfg
            grid = build_grid(c["grid.d"], c["grid.r_min"], c["grid.r_max"], c["grid.n"], c["grid.grading"])
            self._ground = calibrate_ground_state(grid, assemble_kernel(grid, 4))
        return self._ground

    @property
    def system(self):
        if self._system is None:
            from .linearized import assemble_linearized
            self._system = assemble_linearized(self.ground)
        return self._system

    def pair(self, oracles=("pencil", "sqrt")):
        if self._pair is None:
            from .linearized import compute_eigenpair
            self._pair = compute_eigenpair(self.system, oracles=oracles)
        return self._pair

    def initial_state(self) -> RadialField:
        c = self.cfg
        kind = c["initial.kind"]
        if kind == "file":
            return read_field(c["initial.file"], self.ground.grid)
        if kind == "wpm":
            from .special_solutions import approximate_solution
            pair = self.pair()
            return approximate_solution(c["physics.a"], self.system, pair, self.cfg.t0(pair.e0), c["physics.k"])[1]
        from .modulation import ground_state_scaled
        return RadialField(self.ground.grid, c["initial.amplitude"]
                           * ground_state_scaled(self.ground, c["initial.theta"], c["initial.mu"]).values)

    def finish(self) -> None:
        manifest = {
            "artifact": "hartree-lab",
            "version": __version__,
            "subcommand": self.name,
            "config": serialize(self.cfg).splitlines(),
            "config_hash": config_hash({k: v for k, v in self.cfg.values.items() if k not in UNHASHED}),
            "derived": self.derived,
            "wall_clock_seconds": round(time.perf_counter() - self.started, 3),
        }
        if self._ground is not None:
            manifest["grid"] = self._ground.grid.describe()
        self.out.write_manifest(manifest)


# ---------------------------------------------------------------------------
# subcommands

def cmd_ground_state(run: Run) -> int:
    gs = run.ground
    grid = gs.grid
    w = gs.W.values.real
    res = -apply_laplacian(gs.W).values.real - gs.kernel.apply(w * w).real * w
    run.out.write("ground_state.csv", csv_text(("r", "W", "Wtilde", "residual"),
                                               zip(grid.nodes, w, gs.Wtilde.values.real, res)))
    run.out.write("W.field", field_bytes(gs.W))
    run.derived.update(d=grid.d, N=grid.n, c0=gs.c0, grad_norm_sq=gs.grad_norm_sq, energy=gs.energy,
                       quartic=gs.quartic, I_d=gs.I_d, elliptic_residual=gs.residual,
                       energy_identity=abs(gs.energy / (gs.grad_norm_sq / 4.0) - 1.0),
                       quartic_identity=abs(gs.quartic / gs.grad_norm_sq - 1.0))
    return 0


def cmd_spectrum(run: Run) -> int:
    from .linearized import coercivity_constant
    oracles = tuple(run.cfg["spectrum.oracles"].split(","))
    pair = run.pair(oracles)
    sy = run.system
    coer = {s: coercivity_constant(sy, s, pair) for s in ("H-perp", "G-perp", "unconstrained")}
    nulls = sy.null_residuals()
    body = {**pair.summary(), "coercivity": coer,
            "null_residuals": {"L_minus_W": nulls[0], "L_plus_Wtilde": nulls[1]}}
    run.out.write("spectrum.json", json_text(body))
    run.out.write("eigenfunctions.csv", csv_text(("r", "Y1", "Y2"),
                                                 zip(sy.grid.nodes, pair.Y1.values.real, pair.Y2.values.real)))
    run.out.write("Yplus.field", field_bytes(pair.Y_plus))
    run.derived.update(e0=pair.e0, coercivity=coer, c0=run.ground.c0, grad_norm_sq=run.ground.grad_norm_sq,
                       energy=run.ground.energy)
    return 0


def cmd_modulate(run: Run) -> int:
    from .modulation import fit_modulation
    if not run.cfg["initial.file"]:
        raise HartreeError("cli-io", "config-invalid", "modulate needs an input field (--input or initial.file)")
    u = read_field(run.cfg["initial.file"], run.ground.grid)
    fit = fit_modulation(u, run.ground)
    run.out.write("modulation.json", json_text(fit.summary()))
    run.derived.update(fit.summary())
    return 0


def cmd_evolve(run: Run, u0: RadialField | None = None, prefix: str = "") -> int:
    from .evolution import EvolutionConfig, classify_trajectory, evolve
    c = run.cfg
    u0 = run.initial_state() if u0 is None else u0
    ecfg = EvolutionConfig(dt=c["integrator.dt"], T=c["integrator.T"], cadence=c["integrator.cadence"],
                           virial_radii=c["physics.virial_radii"], direction=c["integrator.direction"],
                           modulate=c["evolve.modulate"])
    pair = system = None
    if c["evolve.decompose"]:
        pair, system = run.pair(), run.system
    rec = evolve(u0, run.ground, ecfg, pair=pair, system=system)
    run.out.write(prefix + "trajectory.csv", rec.to_csv())
    run.out.write(prefix + "final.field", field_bytes(rec.final))
    run.derived.update({prefix + "status": classify_trajectory(rec), prefix + "terminal": rec.terminal,
                        prefix + "energy_drift": rec.energy_drift, prefix + "mass_drift": rec.mass_drift,
                        prefix + "samples": len(rec.rows)})
    return 0


def cmd_construct_wpm(run: Run) -> int:
    from .radial_core import energy
    from .special_solutions import approximate_solution, build_expansion
    c = run.cfg
    pair = run.pair()
    gs = run.ground
    t0 = c.t0(pair.e0)
    series, u = approximate_solution(c["physics.a"], run.system, pair, t0, c["physics.k"])
    ladder = [build_expansion(c["physics.a"], k, run.system, pair).time_defect(1.0 / pair.e0)
              for k in range(1, c["physics.k"] + 1)]
    report = {"a": series.a, "k": series.k, "e0": pair.e0, "t0": t0,
              "order_residuals": series.order_residuals,
              "defect_ladder_at_1_over_e0": ladder,
              "defect_at_t0": series.time_defect(t0),
              "energy_gap": (energy(u, gs.kernel) - gs.energy) / gs.energy,
              "gradient_gap": h1_inner(u, u) - gs.grad_norm_sq}
    run.out.write("wpm.field", field_bytes(u))
    run.out.write("wpm_report.json", json_text(report))
    run.derived.update(report)
    if c["construct.evolve"]:
        cmd_evolve(run, u0=u, prefix="evolve_")
    return 0


def cmd_virial(run: Run) -> int:
    from .evolution import VirialProfile, virial_first, virial_second, virial_value
    u = run.initial_state()
    gs = run.ground
    rows = []
    dl = delta(u, gs)
    for R in run.cfg["physics.virial_radii"]:
        prof = VirialProfile.build(gs.grid, R)
        second, a_r = virial_second(u, prof, gs.kernel)
        rows.append((R, virial_value(u, prof), virial_first(u, prof), second, a_r, dl,
                     "true" if second <= -4.0 * dl else "false"))
    run.out.write("virial.csv", csv_text(("R", "V_R", "dtV_R", "d2tV_R", "A_R", "delta", "bound_holds"), rows))
    run.derived.update(delta=dl, radii=list(run.cfg["physics.virial_radii"]))
    return 0


def cmd_kelvin_check(run: Run) -> int:
    from .ground_state import elliptic_residual, integral_system_residual, kelvin_transform, tail_asymptotics
    from .modulation import ground_state_scaled
    gs = run.ground
    grid = gs.grid
    r = grid.nodes
    test = RadialField(grid, r ** 2 * np.exp(-r ** 2))
    back = kelvin_transform(kelvin_transform(test))
    # interior window: away from the ends, where 1/r leaves the grid on asymmetric meshes
    lo, hi = max(grid.r_min, 1.0 / grid.r_max) * 10.0, min(grid.r_max, 1.0 / grid.r_min) / 10.0
    sel = (r >= lo) & (r <= hi)
    kk = float(np.max(np.abs(back.values - test.values)[sel]) / np.max(np.abs(test.values)))
    kw = float(np.max(np.abs(kelvin_transform(gs.W).values - gs.W.values)[sel]) / gs.c0)
    moved = kelvin_transform(ground_state_scaled(gs, 0.0, 2.0))
    pair = integral_system_residual(gs.W, RadialField(grid, gs.kernel.apply(gs.W.values.real ** 2)),
                                    gs.kernel, assemble_kernel(grid, grid.d - 2))
    tail = tail_asymptotics(gs.W)
    body = {"kelvin_involution": kk, "kelvin_W": kw, "window": [lo, hi],
            "elliptic_residual_K_W_mu2": elliptic_residual(moved, gs.kernel),
            "elliptic_residual_W": gs.residual,
            "integral_residual_first": pair.residual_first, "integral_residual_second": pair.residual_second,
            "integral_constant": pair.constant, "tail_constant": tail.value,
            "tail_relative_error": abs(tail.value / gs.c0 - 1.0), "c0": gs.c0}
    run.out.write("kelvin.json", json_text(body))
    run.derived.update(body)
    return 0


def cmd_acceptance(run: Run) -> int:
    from .acceptance import AcceptanceLab, run_all
    lines = []

    def report(line):
        print(line, flush=True)
        lines.append(line)

    results = run_all(AcceptanceLab(seed=run.cfg["run.seed"]), report=report)
    run.out.write("acceptance.txt", "".join(line + "\n" for line in lines))
    run.out.write("acceptance.json", json_text(
        {str(r.number): {"title": r.title, "passed": r.passed, "parts": r.parts, "detail": r.detail}
         for r in results}))
    failed = [r.number for r in results if not r.passed]
    run.derived.update(passed=len(results) - len(failed), failed=failed)
    return 0 if not failed else 1


HANDLERS = {"ground-state": cmd_ground_state, "spectrum": cmd_spectrum, "modulate": cmd_modulate,
            "evolve": cmd_evolve, "construct-wpm": cmd_construct_wpm, "virial": cmd_virial,
            "kelvin-check": cmd_kelvin_check, "acceptance": cmd_acceptance}


# ---------------------------------------------------------------------------
# entry point

def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="dotted-key configuration file")
    common.add_argument("--out", metavar="DIR", help="output directory (output.dir)")
    common.add_argument("--seed", type=_u64, metavar="U64", help="random seed (run.seed)")
    common.add_argument("--threads", type=int, metavar="N", help="BLAS thread limit (run.threads, 0 = default)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    parser = argparse.ArgumentParser(prog="hartree-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "modulate":
            p.add_argument("--input", metavar="FIELD", help="field file to fit (initial.file)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    for item in args.set:
        if "=" not in item:
            print(f"error: cli-io/config-invalid: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return 2
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for flag, key in (("out", "output.dir"), ("seed", "run.seed"), ("threads", "run.threads")):
        if getattr(args, flag) is not None:
            overrides[key] = getattr(args, flag)
    if getattr(args, "input", None):
        overrides["initial.file"] = args.input
    try:
        cfg = load(args.config, overrides=overrides)
    except HartreeError as exc:
        print(f"error: {exc.qualified}: {exc.message}", file=sys.stderr)
        return 2
    threads = cfg["run.threads"] or None
    try:
        with threadpool_limits(limits=threads):
            run = Run(args.command, cfg)
            status = HANDLERS[args.command](run)
            run.finish()
    except HartreeError as exc:
        print(f"error: {exc.qualified}: {exc.message}", file=sys.stderr)
        return 2 if exc.code == "config-invalid" else 3
    return status


if __name__ == "__main__":
    sys.exit(main())
