"""Command-line front end: configuration, experiment runs and report files.

Every run writes into ``<out>/<subcommand>-<hash>``, where the hash is taken
over the fully resolved configuration, and always leaves a ``summary.json``
with one pass/fail entry per check.

Exit codes: 0 all checks passed, 1 a check failed, 2 invalid configuration,
3 a numerical routine raised.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

__all__ = ["DEFAULTS", "ConfigError", "load_config", "resolve_config", "config_hash", "main"]

log = logging.getLogger("capfoil")

DEFAULTS: dict = {
    "model": {"n": 3, "sigma": 0.1, "h_amplitude": 0.1, "h_profile": "power"},
    "discretization": {"L": None, "points": 400, "r_max": 50.0, "order": 8},
    "solver": {
        "tol": None,
        "max_iter": 30,
        "damping": 0.5,
        "fd_step": 1e-3,
        "inner_tol": 1e-13,
        "inner_max_iter": 50,
    },
    "experiment": {
        "rho": 20.0,
        "rhos": {"start": 10.0, "stop": 80.0, "count": 12},
        "warm_start": True,
        "capacity": {"axes": None, "L": 12, "variation_step": 1e-3},
        "checks": list(range(1, 11)),
    },
    "seed": 0,
}

DEFAULT_NOTES = {
    "model.n": "dimension, at least 3 (required in a config file)",
    "model.sigma": "mass parameter",
    "model.h_amplitude": "size of the |y|^-n anisotropic term of the conformal factor",
    "model.h_profile": "'none' or 'power'",
    "discretization.L": "harmonic degree cutoff; null picks 8 for n = 3 and 4 otherwise",
    "discretization.points": "radial samples, uniform in log r",
    "discretization.r_max": "outer radius of the radial grid (>= 10)",
    "discretization.order": "finite-difference stencil order (even)",
    "solver.tol": "sup-norm target for the reduced residual; null means 1e-9 (n - 2)",
    "solver.damping": "step shrink factor when a Newton step increases the residual",
    "solver.fd_step": "finite-difference step of the translation Jacobian",
    "experiment.rho": "radius for 'solve'",
    "experiment.rhos": "increasing radius grid for 'sweep' and 'foliate': a list or {start, stop, count}",
    "experiment.capacity.axes": "ellipsoid semi-axes for 'capacity' (n entries); null means (1.5, 1, ..., 1)",
    "experiment.checks": "criterion numbers run by 'verify-all'",
    "seed": "seed for randomised test fields",
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown field '{where}'")
        if isinstance(base[key], dict) and key != "rhos":
            if not isinstance(val, dict):
                raise ConfigError(f"field '{where}' must be an object")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def _num(cfg, dotted, positive=False, integer=False, minimum=None, allow_none=False):
    node = cfg
    for part in dotted.split("."):
        node = node[part]
    if node is None and allow_none:
        return
    kind = int if integer else (int, float)
    if isinstance(node, bool) or not isinstance(node, kind):
        raise ConfigError(f"field '{dotted}' must be {'an integer' if integer else 'a number'}, got {node!r}")
    if not math.isfinite(node):
        raise ConfigError(f"field '{dotted}' must be finite")
    if positive and node <= 0:
        raise ConfigError(f"field '{dotted}' must be > 0, got {node!r}")
    if minimum is not None and node < minimum:
        raise ConfigError(f"field '{dotted}' must be >= {minimum}, got {node!r}")


def resolve_config(user: dict | None) -> dict:
    """Merge a user document over the defaults and validate it."""
    if user is None:
        cfg = copy.deepcopy(DEFAULTS)
    else:
        if not isinstance(user, dict):
            raise ConfigError("configuration must be a JSON object")
        if not isinstance(user.get("model"), dict) or "n" not in user["model"]:
            raise ConfigError("missing required field 'model.n'")
        cfg = _merge(DEFAULTS, user)
    _num(cfg, "model.n", integer=True, minimum=3)
    _num(cfg, "model.sigma")
    _num(cfg, "model.h_amplitude")
    if cfg["model"]["h_profile"] not in ("none", "power"):
        raise ConfigError("field 'model.h_profile' must be 'none' or 'power'")
    _num(cfg, "discretization.L", integer=True, minimum=2, allow_none=True)
    _num(cfg, "discretization.order", integer=True, minimum=2)
    if cfg["discretization"]["order"] % 2:
        raise ConfigError("field 'discretization.order' must be even")
    _num(cfg, "discretization.points", integer=True, minimum=cfg["discretization"]["order"] + 2)
    _num(cfg, "discretization.r_max", minimum=10.0)
    _num(cfg, "solver.tol", positive=True, allow_none=True)
    for key in ("inner_tol", "fd_step"):
        _num(cfg, f"solver.{key}", positive=True)
    for key in ("max_iter", "inner_max_iter"):
        _num(cfg, f"solver.{key}", integer=True, minimum=1)
    _num(cfg, "solver.damping", positive=True)
    if cfg["solver"]["damping"] >= 1:
        raise ConfigError("field 'solver.damping' must be < 1")
    _num(cfg, "experiment.rho", positive=True)
    rhos_grid(cfg)
    if not isinstance(cfg["experiment"]["warm_start"], bool):
        raise ConfigError("field 'experiment.warm_start' must be true or false")
    cap = cfg["experiment"]["capacity"]
    if cap["axes"] is None:
        cap["axes"] = [1.5] + [1.0] * (cfg["model"]["n"] - 1)
    if (not isinstance(cap["axes"], list) or len(cap["axes"]) != cfg["model"]["n"]
            or not all(isinstance(a, (int, float)) and not isinstance(a, bool) and a > 0 for a in cap["axes"])):
        raise ConfigError("field 'experiment.capacity.axes' must list n positive numbers")
    _num(cfg, "experiment.capacity.L", integer=True, minimum=2)
    _num(cfg, "experiment.capacity.variation_step", positive=True)
    checks = cfg["experiment"]["checks"]
    if not isinstance(checks, list) or not all(isinstance(c, int) and 1 <= c <= 10 for c in checks):
        raise ConfigError("field 'experiment.checks' must list criterion numbers 1..10")
    _num(cfg, "seed", integer=True)
    return cfg


def rhos_grid(cfg: dict) -> list[float]:
    spec = cfg["experiment"]["rhos"]
    if isinstance(spec, dict):
        if set(spec) != {"start", "stop", "count"}:
            raise ConfigError("field 'experiment.rhos' needs exactly start, stop and count")
        for key in ("start", "stop"):
            _num(cfg, f"experiment.rhos.{key}", positive=True)
        _num(cfg, "experiment.rhos.count", integer=True, minimum=3)
        vals = np.linspace(spec["start"], spec["stop"], spec["count"]).tolist()
    elif isinstance(spec, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in spec):
        vals = [float(v) for v in spec]
        if len(vals) < 3:
            raise ConfigError("field 'experiment.rhos' needs at least 3 radii")
    else:
        raise ConfigError("field 'experiment.rhos' must be a list of numbers or {start, stop, count}")
    if any(v <= 0 for v in vals) or any(b <= a for a, b in zip(vals, vals[1:])):
        raise ConfigError("field 'experiment.rhos' must be positive and strictly increasing")
    return vals


def load_config(path: str | None) -> dict:
    """Read and validate a JSON configuration file (defaults when path is None)."""
    if path is None:
        return resolve_config(None)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return resolve_config(doc)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:12]


# --- output helpers ---------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # shortest round-trip form
    return str(v)


def write_csv(path: Path, rows: list[dict], title: str) -> None:
    """CSV with one timestamped comment line followed by a deterministic body."""
    stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    with open(path, "w", newline="") as fh:
        fh.write(f"# capfoil {title} generated {stamp}\n")
        if not rows:
            return
        writer = csv.writer(fh, lineterminator="\n")
        keys = list(rows[0])
        writer.writerow(keys)
        for row in rows:
            writer.writerow([_cell(row[k]) for k in keys])


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


# --- runs -------------------------------------------------------------------


class Run:
    """Run directory, produced files and the per-criterion check table."""

    def __init__(self, subcommand: str, cfg: dict, out: str):
        self.subcommand = subcommand
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.dir = Path(out) / f"{subcommand}-{self.hash}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.checks: dict = {}
        self.files: list[str] = []
        self.info: dict = {}
        self.started = time.perf_counter()

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.dir / name

    def check(self, criterion: int, name: str, passed: bool, **details) -> None:
        self.checks[f"criterion_{criterion}_{name}"] = {"status": "pass" if passed else "fail", **details}

    @property
    def passed(self) -> bool:
        return all(c["status"] == "pass" for c in self.checks.values())

    def finish(self, error: dict | None = None) -> dict:
        summary = {
            "subcommand": self.subcommand,
            "config_hash": self.hash,
            "run_dir": str(self.dir),
            "passed": self.passed and error is None,
            "checks": self.checks,
            "files": sorted(set(self.files)),
            "info": self.info,
            "seconds": time.perf_counter() - self.started,
        }
        if error is not None:
            summary["error"] = error
        write_json(self.dir / "summary.json", summary)
        write_json(self.dir / "config.json", self.cfg)
        return summary


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CAPFOIL_THREADS", "1")))
    except ValueError:
        return 1


def _model(cfg):
    from .metric import MetricModel

    m = cfg["model"]
    return MetricModel(m["n"], float(m["sigma"]), float(m["h_amplitude"]), m["h_profile"])


def _opts(cfg):
    from .critical_solver import SolverOptions

    d, s = cfg["discretization"], cfg["solver"]
    return SolverOptions(L=d["L"], points=d["points"], r_max=float(d["r_max"]), order=d["order"], tol=s["tol"],
                         max_iter=s["max_iter"], damping=s["damping"], fd_step=s["fd_step"],
                         inner_tol=s["inner_tol"], inner_max_iter=s["inner_max_iter"])


def _rigidity_ok(rep, n) -> tuple[bool, float]:
    rel = abs(rep.neumann_constant * rep.rho / (n - 2) - 1.0)
    return rep.converged and rep.tau_norm < 1e-9 and rep.w_norm < 1e-9 and rel < 1e-8, rel


def cmd_solve(run: Run) -> None:
    from .critical_solver import solve_at

    cfg = run.cfg
    model = _model(cfg)
    rep = solve_at(model, float(cfg["experiment"]["rho"]), _opts(cfg))
    write_csv(run.path("solve.csv"), [rep.row()], "solve")
    write_json(run.path("shape.json"), {"shape": rep.shape.to_dict(), "wG": rep.wG.coeffs,
                                        "certificates": rep.certificates, "trace": rep.trace,
                                        "jacobian_tau": rep.jacobian_tau, "message": rep.message})
    if model.is_flat:
        ok, rel = _rigidity_ok(rep, model.n)
        run.check(2, "euclidean_rigidity", ok, tau=rep.tau_norm, w=rep.w_norm, neumann_rel_error=rel)
    else:
        run.check(3, "perturbed_solve", rep.converged and rep.constancy_residual < 1e-8,
                  constancy=rep.constancy_residual, residual=rep.residual_norm, iterations=rep.iterations)
    run.info["neumann_constant"] = rep.neumann_constant


def _sweep(run: Run):
    from .critical_solver import CriticalSolver, sweep

    cfg = run.cfg
    solver = CriticalSolver(_model(cfg), _opts(cfg))
    return sweep(solver.model, rhos_grid(cfg), warm_start=cfg["experiment"]["warm_start"], solver=solver)


def _foliation_outputs(run: Run, reports) -> None:
    from .foliation import build_table, monotonicity_check

    good = [r for r in reports if r.converged]
    if len(good) < 3:
        run.check(9, "foliation", False, reason="fewer than three converged leaves")
        return
    table = build_table([r.shape for r in good], threads=_threads())
    mono = monotonicity_check(table)
    write_csv(run.path("foliation.csv"), table.rows(), "foliation")
    run.path("leaves.json").write_text(table.leaves_json() + "\n")
    ok = mono["foliates"] and mono["deviation_decreasing"] and len(good) == len(reports)
    run.check(9, "foliation", ok, min_margin=mono["min_margin"], deviation_order=mono["deviation_order"],
              deviation_decreasing=mono["deviation_decreasing"])


def _order(rhos, vals) -> float:
    vals = np.asarray(vals, dtype=float)
    if np.any(vals <= 0):
        return float("nan")
    return float(-np.polyfit(np.log(rhos), np.log(vals), 1)[0])


def cmd_sweep(run: Run) -> None:
    reports = _sweep(run)
    model = _model(run.cfg)
    write_csv(run.path("sweep.csv"), [r.row() for r in reports], "sweep")
    conv = all(r.converged for r in reports)
    if model.is_flat:
        fails = [r.rho for r in reports if not _rigidity_ok(r, model.n)[0]]
        run.check(2, "euclidean_rigidity", not fails, failing_radii=fails)
    else:
        rhos = np.array([r.rho for r in reports])
        const = max((r.constancy_residual for r in reports), default=float("nan"))
        to = _order(rhos, [r.tau_norm for r in reports])
        wo = _order(rhos, [r.wG_norm for r in reports])
        ok = conv and const < 1e-8 and abs(to - 1) <= 0.25 and abs(wo - 1) <= 0.25
        run.check(3, "perturbed_sweep", ok, converged=conv, constancy=const, tau_order=to, wG_order=wo)
    _foliation_outputs(run, reports)
    run.info["failures"] = [{"rho": r.rho, "message": r.message} for r in reports if not r.converged]


def cmd_foliate(run: Run) -> None:
    _foliation_outputs(run, _sweep(run))


def cmd_verify_dtn(run: Run) -> None:
    from .dtn import DtnOperator
    from .exterior_field import RadialGrid
    from .sphere_basis import get_basis

    cfg = run.cfg
    d = cfg["discretization"]
    n = cfg["model"]["n"]
    t0 = time.perf_counter()
    op = DtnOperator(get_basis(n, d["L"] or 8), RadialGrid(d["points"], float(d["r_max"]), d["order"]))
    spec = op.spectrum()
    elapsed = time.perf_counter() - t0
    rows = [{"degree": k, "measured": m, "analytic": a, "abs_error": e} for k, (m, a, e) in sorted(spec.items())]
    write_csv(run.path("dtn.csv"), rows, "verify-dtn")
    worst = max(r["abs_error"] for r in rows)
    run.check(1, "dtn_spectrum", worst < 1e-6 and elapsed < 10.0, max_error=worst, runtime_s=elapsed)


def cmd_capacity(run: Run) -> None:
    from .capacity import (StarDomain, capacity, ellipsoid_capacity_exact, first_variation_E0,
                           first_variation_E1, normal_flow, realised_speed)

    cfg = run.cfg
    n = cfg["model"]["n"]
    c = cfg["experiment"]["capacity"]
    t = float(c["variation_step"])
    K = StarDomain.ellipsoid(c["axes"], L=c["L"])
    rep = capacity(K)
    X = realised_speed(K, 1.0)
    a0, a1 = first_variation_E0(K, X, rep), first_variation_E1(K, X, rep)
    p, m = capacity(normal_flow(K, 1.0, t)), capacity(normal_flow(K, 1.0, -t))
    d0, d1 = (p.E0 - m.E0) / (2 * t), (p.E1 - m.E1) / (2 * t)
    row = {k: v for k, v in rep.to_dict().items() if k in ("cap", "cap_energy", "volume", "area", "E0", "E1", "Lambda")}
    row.update(dE0=a0, dE0_fd=d0, dE1=a1, dE1_fd=d1)
    balls = {R: abs(capacity(StarDomain.ball(n, R)).cap / R ** (n - 2) - 1.0) for R in (1.0, 2.0)}
    exact = ellipsoid_capacity_exact(c["axes"]) if n == 3 else None
    if exact is not None:
        row["cap_exact"] = exact
    write_csv(run.path("capacity.csv"), [row], "capacity")
    oracle = abs(rep.cap / exact - 1.0) if exact else None
    ok6 = max(balls.values()) < 1e-7 and (oracle is None or oracle < 5e-3)
    run.check(6, "capacity_laws", ok6, ball_rel_error=max(balls.values()), ellipsoid_rel_error=oracle)
    e0, e1 = abs(a0 / d0 - 1.0), abs(a1 / d1 - 1.0)
    run.check(7, "first_variations", max(e0, e1) < 1e-3, E0_rel_error=e0, E1_rel_error=e1, fd_step=t)


def cmd_verify_all(run: Run) -> None:
    from .acceptance import CHECKS, run_all

    names = {k: fn.__name__ for k, fn in CHECKS.items()}
    results = run_all(seed=run.cfg["seed"], only=run.cfg["experiment"]["checks"])
    keys = [k for k in CHECKS if k in run.cfg["experiment"]["checks"]]
    rows = []
    for k, res in zip(keys, results):
        run.checks[f"criterion_{k}_{names[k]}"] = res.to_dict()
        rows.append({"criterion": k, "name": res.name, "status": "pass" if res.passed else "fail",
                     "value": float(res.value), "threshold": float(res.threshold)})
        print(res.line(), flush=True)
    write_csv(run.path("acceptance.csv"), rows, "verify-all")


COMMANDS = {
    "solve": (cmd_solve, "solve for the critical shape at experiment.rho"),
    "sweep": (cmd_sweep, "solve over experiment.rhos and check the foliation"),
    "verify-dtn": (cmd_verify_dtn, "measure the DtN eigenvalue table"),
    "capacity": (cmd_capacity, "capacity, energies and variations of an ellipsoid"),
    "foliate": (cmd_foliate, "leaf graphs and monotonicity over experiment.rhos"),
    "verify-all": (cmd_verify_all, "run the acceptance criteria"),
}


def _parser() -> argparse.ArgumentParser:
    epilog = "\n".join(f"  {k}: {v}" for k, v in DEFAULT_NOTES.items())
    p = argparse.ArgumentParser(prog="capfoil", description=__doc__.splitlines()[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog="configuration fields:\n" + epilog)
    p.add_argument("--print-defaults", action="store_true", help="print the default configuration and exit")
    sub = p.add_subparsers(dest="command")
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="JSON configuration file (defaults when omitted)")
        sp.add_argument("--out", default="runs", help="parent directory for run directories")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    from .capacitor import ConvergenceError
    from .dtn import KernelObstruction
    from .foliation import FoldError

    parser = _parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        print(json.dumps(DEFAULTS, indent=2))
        for key, note in DEFAULT_NOTES.items():
            print(f"{key}: {note}", file=sys.stderr)
        return 0
    if not args.command:
        parser.print_help(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    run = Run(args.command, cfg, args.out)
    fn = COMMANDS[args.command][0]
    try:
        fn(run)
    except (ConvergenceError, KernelObstruction, FoldError, np.linalg.LinAlgError, ValueError) as exc:
        error = {"module": type(exc).__module__, "type": type(exc).__name__, "message": str(exc)}
        summary = run.finish(error)
        print(f"numerical failure in {error['module']}: {error['message']}", file=sys.stderr)
        print(f"summary: {summary['run_dir']}/summary.json", file=sys.stderr)
        return 3
    summary = run.finish()
    status = "PASS" if summary["passed"] else "FAIL"
    print(f"{status} {args.command}: {summary['run_dir']}")
    for key, val in summary["checks"].items():
        print(f"  {key}: {val['status']}")
    return 0 if summary["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
