"""Command-line front end: runs the solvers, verifies identities, evolves.

Commands: solve-limiting, solve-pair, verify, evolve, rearrange, report.
Configuration is a flat key=value text file plus flag overrides (flags win).
Exit codes: 0 ok, 1 usage/validation, 2 non-convergence, 3 verification
failure.  Every run directory receives a manifest listing the files written.
"""

import argparse
import json
import os
import sys
import time

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOCONV = 2
EXIT_VERIFY = 3

_CONFIG_KEYS = {
    "s": float, "p": float, "kappa": float, "W": float, "L": float,
    "eps": str, "n": int, "nr": int, "n_angles": int,
    "tol": float, "max_iter": int, "damping": float, "sym_every": int,
    "window_factor": float, "allow_active": int,
    "dt": float, "T": float, "cfl": float, "interp": str,
    "diag_every": int, "snapshot_every": int, "perturb": str,
    "shift_cells": int,
    "seed": int, "threads": int, "out": str, "run": str,
    "tol_location": float, "tol_multiplier": float, "tol_weak_form": float,
    "tol_steiner": float, "tol_fixed_point": float, "tol_bracket": float,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(EXIT_USAGE)


def _build_parser():
    ap = _Parser(prog="gsqg", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, model=True):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--run", help="existing run directory to read")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        if model:
            p.add_argument("--s", type=float)
            p.add_argument("--p", type=float)
            p.add_argument("--kappa", type=float)
            p.add_argument("--W", type=float)
            p.add_argument("--L", type=float)
            p.add_argument("--eps", help="comma-separated list")
            p.add_argument("--n", type=int)
            p.add_argument("--nr", type=int)
            p.add_argument("--n-angles", dest="n_angles", type=int)
            p.add_argument("--tol", type=float)
            p.add_argument("--max-iter", dest="max_iter", type=int)
            p.add_argument("--damping", type=float)
            p.add_argument("--sym-every", dest="sym_every", type=int)
            p.add_argument("--window-factor", dest="window_factor", type=float)
            p.add_argument("--allow-active", dest="allow_active",
                           action="store_const", const=1)

    p = sub.add_parser("solve-limiting", help="whole-plane ground state")
    common(p)
    p = sub.add_parser("solve-pair", help="half-plane traveling pair")
    common(p)
    p = sub.add_parser("verify", help="identity battery on a solved run")
    common(p)
    for k in ("tol_location", "tol_multiplier", "tol_weak_form",
              "tol_steiner", "tol_fixed_point", "tol_bracket"):
        p.add_argument("--" + k.replace("_", "-"), dest=k, type=float)
    p = sub.add_parser("evolve", help="transport evolution of a solved pair")
    common(p)
    p.add_argument("--dt", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--cfl", type=float)
    p.add_argument("--interp", choices=("bicubic", "bilinear"))
    p.add_argument("--diag-every", dest="diag_every", type=int)
    p.add_argument("--snapshot-every", dest="snapshot_every", type=int)
    p.add_argument("--perturb", action="append",
                   help="kind[:amplitude[:seed]]; repeatable")
    p = sub.add_parser("rearrange", help="rearrangement-class ascent")
    common(p)
    p.add_argument("--shift-cells", dest="shift_cells", type=int)
    p = sub.add_parser("report", help="aggregate a run directory")
    common(p, model=False)
    return ap


def _load_config(path):
    cfg = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected key=value, got {raw!r}")
            key, val = (t.strip() for t in line.split("=", 1))
            if key not in _CONFIG_KEYS:
                raise ValueError(f"{path}:{ln}: unknown config key {key!r}")
            cfg[key] = _CONFIG_KEYS[key](val)
    return cfg


def _merge(args):
    """Config file values overridden by explicit flags."""
    cfg = {}
    if getattr(args, "config", None):
        cfg.update(_load_config(args.config))
    for key in _CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _eps_list(cfg):
    raw = cfg.get("eps", "0.2,0.1,0.05")
    if isinstance(raw, (int, float)):
        return [float(raw)]
    return [float(t) for t in str(raw).split(",") if t.strip()]


class RunDir:
    """Output directory with a manifest written atomically at the end."""

    def __init__(self, path, config):
        self.path = path
        self.config = dict(config)
        self.files = []
        self.stages = {}
        self.t0 = time.time()
        os.makedirs(path, exist_ok=True)

    def write_json(self, name, obj):
        full = os.path.join(self.path, name)
        with open(full + ".tmp", "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(full + ".tmp", full)
        self.files.append(name)
        return full

    def write_text(self, name, text):
        full = os.path.join(self.path, name)
        with open(full + ".tmp", "w") as fh:
            fh.write(text)
        os.replace(full + ".tmp", full)
        self.files.append(name)
        return full

    def add_file(self, name):
        self.files.append(name)

    def finish(self):
        from . import __version__
        manifest = {
            "config": {k: self.config[k] for k in sorted(self.config)},
            "version": __version__,
            "wall_time_s": time.time() - self.t0,
            "stages": self.stages,
            "files": sorted(self.files),
        }
        full = os.path.join(self.path, "manifest.json")
        with open(full + ".tmp", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(full + ".tmp", full)


def _require(cfg, keys):
    missing = [k for k in keys if k not in cfg]
    if missing:
        raise ValueError(f"missing required parameter(s): {', '.join(missing)}")


def _validate_profile(cfg):
    s, p = cfg["s"], cfg["p"]
    if not 0 < s < 1:
        raise ValueError(f"s={s} must lie in (0, 1)")
    if p <= 0:
        raise ValueError(f"p={p} must be positive")
    if p >= 1.0 / (1.0 - s):
        raise ValueError(
            f"p={p} violates the profile growth bound p < 1/(1-s) = "
            f"{1.0 / (1.0 - s):.6g}")


# ---------------------------------------------------------------------------
# commands


def cmd_solve_limiting(cfg):
    from .limiting import solve_limiting
    _require(cfg, ["s", "p", "kappa", "out"])
    _validate_profile(cfg)
    run = RunDir(cfg["out"], cfg)
    sol = solve_limiting(
        cfg["s"], cfg["p"], kappa=cfg["kappa"], L=cfg.get("L"),
        nr=cfg.get("nr", 256), n_angles=cfg.get("n_angles", 64),
        tol=cfg.get("tol", 1e-6), max_iter=cfg.get("max_iter", 2000),
        damping=cfg.get("damping", 0.5))
    run.write_json("limiting.json", sol.report())
    r = sol.omega0.radii()
    rows = "\n".join("%.17g,%.17g" % (ri, vi)
                     for ri, vi in zip(r, sol.omega0.values))
    run.write_text("omega0_radial.csv", "r,omega\n" + rows + "\n")
    run.stages["limiting"] = "limiting.json"
    run.finish()
    return EXIT_OK if sol.converged else EXIT_NOCONV


def cmd_solve_pair(cfg):
    from .fields import write_field
    from .limiting import solve_limiting
    from .pair import ConstraintActiveError, PairProblem, solve_pair
    _require(cfg, ["s", "p", "kappa", "W", "out"])
    _validate_profile(cfg)
    run = RunDir(cfg["out"], cfg)
    lim = solve_limiting(
        cfg["s"], cfg["p"], kappa=cfg["kappa"], L=cfg.get("L"),
        nr=cfg.get("nr", 256), n_angles=cfg.get("n_angles", 64),
        tol=cfg.get("tol", 1e-6), max_iter=cfg.get("max_iter", 2000))
    run.write_json("limiting.json", lim.report())
    run.stages["limiting"] = "limiting.json"
    status = EXIT_OK
    for eps in _eps_list(cfg):
        problem = PairProblem(s=cfg["s"], p=cfg["p"], kappa=cfg["kappa"],
                              W=cfg["W"], eps=eps, L=cfg.get("L"))
        tag = ("%g" % eps).replace(".", "p")
        try:
            sol = solve_pair(
                problem, n=cfg.get("n", 192), limiting=lim,
                tol=cfg.get("tol", 1e-6), max_iter=cfg.get("max_iter", 2000),
                damping=cfg.get("damping", 0.5),
                sym_every=cfg.get("sym_every", 5),
                window_factor=cfg.get("window_factor", 6.0),
                allow_active=bool(cfg.get("allow_active", 0)))
        except ConstraintActiveError as exc:
            sys.stderr.write(f"eps={eps}: {exc}\n")
            if exc.solution is not None:
                rep = exc.solution.report()
                rep["constraint_active"] = True
                run.write_json(f"pair_eps{tag}.json", rep)
            status = EXIT_NOCONV
            continue
        from .pair import s_eps_norm, weak_form_residual
        sol.residuals["weak_form_max"] = max(weak_form_residual(sol).values())
        sol.residuals["s_eps_sup"] = s_eps_norm(sol)[0]
        rep = sol.report()
        rep["constraint_active"] = sol.ball_clearance <= 2 * sol.omega.grid.h1
        rep["warnings"] = sol.warnings
        run.write_json(f"pair_eps{tag}.json", rep)
        name = f"omega_eps{tag}.field"
        write_field(sol.omega, os.path.join(run.path, name))
        run.add_file(name)
        run.stages[f"pair_eps{tag}"] = f"pair_eps{tag}.json"
    run.finish()
    return status


def _load_pair_runs(run_dir):
    """Load every solved pair (problem, field) recorded in a run directory."""
    from .fields import read_field
    from .pair import PairProblem
    with open(os.path.join(run_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    cfg = manifest["config"]
    out = []
    for name in manifest["files"]:
        if name.startswith("pair_eps") and name.endswith(".json"):
            with open(os.path.join(run_dir, name)) as fh:
                rep = json.load(fh)
            tag = name[len("pair_eps"):-len(".json")]
            field_name = f"omega_eps{tag}.field"
            if field_name not in manifest["files"]:
                continue
            field = read_field(os.path.join(run_dir, field_name))
            field.nonneg = True
            problem = PairProblem(s=rep["s"], p=rep["p"], kappa=rep["kappa"],
                                  W=rep["W"], eps=rep["eps"], L=cfg.get("L"))
            out.append((problem, field, rep))
    return manifest, out


def cmd_verify(cfg):
    from .pair import (
        rebuild_solution, location_residual, multiplier_pair_residual,
        s_eps_norm, steiner_asymmetry, weak_form_residual,
    )
    _require(cfg, ["run"])
    run_dir = cfg["run"]
    manifest, pairs = _load_pair_runs(run_dir)
    if not pairs:
        sys.stderr.write(f"no solved pair fields found in {run_dir}\n")
        return EXIT_USAGE
    with open(os.path.join(run_dir, "limiting.json")) as fh:
        lim_rep = json.load(fh)
    tols = {
        "fixed_point": cfg.get("tol_fixed_point", 1e-6),
        "location": cfg.get("tol_location", 0.05),
        "multiplier": cfg.get("tol_multiplier", 0.05),
        "weak_form": cfg.get("tol_weak_form", 0.02),
        "steiner": cfg.get("tol_steiner", 1e-10),
        "bracket": cfg.get("tol_bracket", 1e-3),
    }
    run = RunDir(cfg.get("out", run_dir), cfg)
    table = []
    worst_fail = None
    for problem, field, rep in pairs:
        sol = rebuild_solution(problem, field)
        rows = {
            "fixed_point": sol.residuals["fixed_point"],
            "location": location_residual(sol)[2],
            "multiplier": multiplier_pair_residual(sol)["identity_mu"],
            "weak_form": max(weak_form_residual(sol).values()),
            "steiner": steiner_asymmetry(sol),
            "bracket": sol.E_eps - lim_rep["E0"],
        }
        for key, val in rows.items():
            ok = val <= tols[key]
            table.append({"eps": problem.eps, "identity": key,
                          "value": val, "tolerance": tols[key],
                          "pass": bool(ok)})
            if not ok and worst_fail is None:
                worst_fail = (problem.eps, key, val)
        rep_extra = {"s_eps_sup": s_eps_norm(sol)[0]}
        table.append({"eps": problem.eps, "identity": "s_eps_sup",
                      "value": rep_extra["s_eps_sup"], "tolerance": None,
                      "pass": True})
    run.write_json("verify.json", {"tolerances": tols, "table": table})
    lines = ["eps,identity,value,tolerance,pass"]
    for row in table:
        lines.append("%g,%s,%.17g,%s,%s" % (
            row["eps"], row["identity"], row["value"],
            "" if row["tolerance"] is None else "%.17g" % row["tolerance"],
            "pass" if row["pass"] else "fail"))
    run.write_text("verify.csv", "\n".join(lines) + "\n")
    run.stages["verify"] = "verify.json"
    run.finish()
    if worst_fail is not None:
        sys.stderr.write(
            "verification failed at eps=%g: identity %r = %.3g exceeds "
            "tolerance\n" % worst_fail)
        return EXIT_VERIFY
    return EXIT_OK


def _parse_perturb(specs, seed):
    out = []
    if not specs:
        specs = ["none"]
    if isinstance(specs, str):
        specs = [t for t in specs.split(";") if t]
    for k, spec in enumerate(specs):
        parts = spec.split(":")
        kind = parts[0]
        amp = float(parts[1]) if len(parts) > 1 else 0.0
        sd = int(parts[2]) if len(parts) > 2 else seed + k
        out.append((kind, amp, sd))
    return out


def cmd_evolve(cfg):
    from .evolution import EvolutionConfig, evolve, stability_experiment
    from .fields import write_field
    _require(cfg, ["run"])
    manifest, pairs = _load_pair_runs(cfg["run"])
    if not pairs:
        sys.stderr.write(f"no solved pair fields found in {cfg['run']}\n")
        return EXIT_USAGE
    problem, field, rep = pairs[0]
    run = RunDir(cfg.get("out", cfg["run"]), cfg)
    supp_diam = 2.0 * rep["support_radius"]
    T = cfg.get("T", supp_diam / problem.speed)
    config = EvolutionConfig(
        dt=cfg.get("dt"), T=T, cfl=cfg.get("cfl", 0.4),
        interp=cfg.get("interp", "bicubic"),
        diag_every=cfg.get("diag_every", 10),
        snapshot_every=cfg.get("snapshot_every", 0))
    perturbs = _parse_perturb(cfg.get("perturb"), cfg.get("seed", 0))
    if perturbs == [("none", 0.0, cfg.get("seed", 0))]:
        trajectory = evolve(field, problem.params, config, reference=field,
                            speed_hint=problem.speed)
        lines = ["t,mass,impulse,energy,l1,l2,linf,orbital_distance,shift_c"]
        for row in trajectory.rows():
            lines.append(",".join("%.17g" % row[k] for k in (
                "t", "mass", "impulse", "energy", "l1", "l2", "linf",
                "orbital_distance", "shift_c")))
        run.write_text("trajectory.csv", "\n".join(lines) + "\n")
        for step, snap in trajectory.snapshots.items():
            name = f"snapshot_{step:06d}.field"
            write_field(snap, os.path.join(run.path, name))
            run.add_file(name)
        summary = {
            "T": T, "dt": trajectory.dt_used, "steps": trajectory.steps,
            "mass_drift": trajectory.drift("mass"),
            "impulse_drift": trajectory.drift("impulse"),
            "energy_drift": trajectory.drift("energy"),
            "sup_orbital_distance": max(trajectory.orbital_distance),
            "flags": trajectory.flags,
        }
        run.write_json("evolve.json", summary)
    else:
        rows = stability_experiment(field, problem.params, perturbs, config,
                                    speed_hint=problem.speed,
                                    seed=cfg.get("seed", 0))
        run.write_json("evolve.json", {"T": T, "experiments": rows})
        lines = ["kind,amplitude,seed,delta_meas,sup_distance,final_distance"]
        for r in rows:
            lines.append("%s,%g,%d,%.17g,%.17g,%.17g" % (
                r["kind"], r["amplitude"], r["seed"], r["delta_meas"],
                r["sup_distance"], r["final_distance"]))
        run.write_text("stability.csv", "\n".join(lines) + "\n")
    run.stages["evolve"] = "evolve.json"
    run.finish()
    return EXIT_OK


def cmd_rearrange(cfg):
    from .pair import rearrangement_shift_experiment
    _require(cfg, ["run"])
    manifest, pairs = _load_pair_runs(cfg["run"])
    if not pairs:
        sys.stderr.write(f"no solved pair fields found in {cfg['run']}\n")
        return EXIT_USAGE
    problem, field, rep = pairs[0]
    run = RunDir(cfg.get("out", cfg["run"]), cfg)
    result = rearrangement_shift_experiment(
        field, problem, cells=cfg.get("shift_cells", 5))
    result.pop("energy_trace")
    run.write_json("rearrange.json", result)
    run.stages["rearrange"] = "rearrange.json"
    run.finish()
    return EXIT_OK


def cmd_report(cfg):
    _require(cfg, ["run"])
    run_dir = cfg["run"]
    with open(os.path.join(run_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    summary = {"config": manifest["config"], "version": manifest["version"],
               "stages": {}}
    for stage, name in manifest.get("stages", {}).items():
        path = os.path.join(run_dir, name)
        if os.path.exists(path):
            with open(path) as fh:
                summary["stages"][stage] = json.load(fh)
    run = RunDir(cfg.get("out", run_dir), cfg)
    run.write_json("summary.json", summary)
    rows = ["stage,key,value"]
    for stage, rep in summary["stages"].items():
        if isinstance(rep, dict):
            for key, val in sorted(rep.items()):
                if isinstance(val, (int, float, bool, str)):
                    rows.append(f"{stage},{key},{val}")
    run.write_text("summary.csv", "\n".join(rows) + "\n")
    run.finish()
    return EXIT_OK


_COMMANDS = {
    "solve-limiting": cmd_solve_limiting,
    "solve-pair": cmd_solve_pair,
    "verify": cmd_verify,
    "evolve": cmd_evolve,
    "rearrange": cmd_rearrange,
    "report": cmd_report,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        cfg = _merge(args)
    except (ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    threads = str(int(cfg.get("threads", 1)))
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, threads)
    try:
        return _COMMANDS[args.command](cfg)
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except Exception as exc:
        from .errors import ConvergenceError, DomainTooSmallError, GsqgError
        if isinstance(exc, (ConvergenceError, DomainTooSmallError)):
            sys.stderr.write(f"error: {exc}\n")
            return EXIT_NOCONV
        if isinstance(exc, GsqgError):
            sys.stderr.write(f"error: {exc}\n")
            return EXIT_USAGE
        raise


if __name__ == "__main__":
    sys.exit(main())
