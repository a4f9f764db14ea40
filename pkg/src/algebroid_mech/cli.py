"""Command line: ``check``, ``simulate`` and ``variation-test`` on JSON run specs.

Exit codes: 0 success, 1 an expectation or check failed, 2 bad input,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .algebroid import AlgebroidChart, check_axioms, is_admissible
from .constraints import (AffineConstraint, GeometricConstraint, consistency_project, dalembert_residual,
                          is_holonomic, lift_admissibility_residual)
from .dynamics import (IntegratorConfig, SystemState, _as_geometric, integrate,
                       variation_tangency_residual)
from .errors import InputError, NumericFailure
from .lagrangian import ForceField, Lagrangian, first_variations
from .scenarios import SCENARIOS, scenario_spec

log = logging.getLogger("algebroid_mech")

EXIT_OK, EXIT_EXPECTATION, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3

MODES = ("free", "nonholonomic", "vakonomic", "affine_reduced")
CLASSES = ("lie", "quasi_lie", "general")

_FIELDS = ("name", "algebroid", "lagrangian", "force", "constraint", "mode", "initial",
           "integrator", "output", "expect", "seed", "check")


@dataclass
class SystemSpec:
    """Validated run file; ``to_dict(from_dict(d)) == d`` for valid ``d``."""

    algebroid: dict
    lagrangian: dict | None = None
    force: list | None = None
    constraint: dict | None = None
    mode: str | None = None
    initial: dict | None = None
    integrator: dict | None = None
    output: dict | None = None
    expect: str | None = None
    seed: int | None = None
    check: dict | None = None
    name: str | None = None
    _built: dict = field(default=None, repr=False, compare=False)

    @classmethod
    def from_dict(cls, d) -> "SystemSpec":
        if not isinstance(d, dict):
            raise InputError("run file must be a JSON object")
        unknown = sorted(set(d) - set(_FIELDS))
        if unknown:
            raise InputError(f"unknown fields in run file: {unknown}")
        if "algebroid" not in d:
            raise InputError("run file needs an 'algebroid'")
        spec = cls(**{k: copy.deepcopy(d[k]) for k in _FIELDS if k in d})
        spec._validate()
        return spec

    def to_dict(self):
        return {k: copy.deepcopy(getattr(self, k)) for k in _FIELDS if getattr(self, k) is not None}

    # validation and construction --------------------------------------

    def _validate(self):
        built = {}
        with _at("algebroid"):
            if not isinstance(self.algebroid, dict):
                raise InputError("must be an object")
            built["chart"] = AlgebroidChart.from_dict(self.algebroid)
        n, m = built["chart"].n, built["chart"].m
        if self.expect is not None and self.expect not in CLASSES:
            raise InputError(f"expect must be one of {CLASSES}")
        mode = self.mode or "free"
        if mode not in MODES:
            raise InputError(f"mode must be one of {MODES}")
        if self.lagrangian is not None:
            lag = self.lagrangian
            with _at("lagrangian"):
                if not isinstance(lag, dict) or "expr" not in lag:
                    raise InputError("needs 'expr'")
                built["lagrangian"] = Lagrangian(lag["expr"], n, m, lag.get("params", {}))
            params = built["lagrangian"].params
        else:
            params = {}
        if self.force is not None:
            with _at("force"):
                built["force"] = ForceField(tuple(self.force), n, m, params)
        if self.constraint is not None:
            with _at("constraint"):
                if not isinstance(self.constraint, dict):
                    raise InputError("must be an object")
                built["constraint"] = _build_constraint(self.constraint, n, m, params)
        if mode == "free" and self.constraint is not None:
            raise InputError("free mode does not take a constraint")
        if mode != "free" and self.constraint is None:
            raise InputError(f"{mode} mode needs a constraint")
        if mode == "affine_reduced" and self.constraint.get("type") != "affine":
            raise InputError("affine_reduced mode needs an affine constraint")
        if self.initial is not None:
            if not isinstance(self.initial, dict):
                raise InputError("initial must be an object")
            mu = self.initial.get("mu")
            if mode == "vakonomic" and mu is None:
                raise InputError("vakonomic mode needs initial.mu")
            if mode != "vakonomic" and mu is not None:
                raise InputError("initial.mu is only allowed in vakonomic mode")
            for key in ("x", "y"):
                if key not in self.initial:
                    raise InputError(f"initial needs {key!r}")
        if self.integrator is not None:
            if "h" not in self.integrator or "t1" not in self.integrator:
                raise InputError("integrator needs 'h' and 't1'")
            if not isinstance(self.integrator, dict):
                raise InputError("integrator must be an object")
            known = {"h", "t1", "cond_max", "drift_tol", "project_every", "scheme"}
            extra = sorted(set(self.integrator) - known)
            if extra:
                raise InputError(f"unknown integrator fields {extra}")
        self._built = built

    @property
    def chart(self):
        return self._built["chart"]

    def require_run(self):
        for key in ("lagrangian", "initial", "integrator"):
            if getattr(self, key) is None:
                raise InputError(f"simulation needs '{key}'")

    def run_objects(self):
        self.require_run()
        b = self._built
        ini = self.initial
        y = ini["y"]
        C = b.get("constraint")
        if ini.get("project") and C is not None:
            x = np.asarray(ini["x"], dtype=float)
            if (self.mode or "free") == "affine_reduced":
                y = C.coordinates(x, y) if len(y) == C.m else y
            else:
                y = consistency_project(_as_geometric(C), x, y)
        s0 = SystemState(ini.get("t0", 0.0), ini["x"], y, ini.get("mu", []))
        it = self.integrator
        cfg = IntegratorConfig(float(it["h"]), it.get("scheme", "rk4"), float(it.get("cond_max", 1e8)),
                               float(it.get("drift_tol", 1e-6)), int(it.get("project_every", 0)))
        return b["chart"], b["lagrangian"], b.get("force"), b.get("constraint"), s0, cfg, float(it["t1"])


class _at:
    """Prefix input errors raised inside the block with a field path."""

    def __init__(self, path):
        self.path = path

    def __enter__(self):
        return self

    def __exit__(self, kind, exc, tb):
        if exc is not None and isinstance(exc, InputError) and not getattr(exc, "path", None):
            exc.path = self.path
            exc.args = (f"{self.path}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        return False


def _build_constraint(d, n, m, params):
    kind = d.get("type")
    if kind == "nonlinear":
        if "phi" not in d:
            raise InputError("nonlinear constraint needs 'phi'")
        return GeometricConstraint(tuple(d["phi"]), n, m, params)
    if kind == "affine":
        if "e0" not in d or "basis" not in d:
            raise InputError("affine constraint needs 'e0' and 'basis'")
        return AffineConstraint(tuple(d["e0"]), tuple(tuple(r) for r in d["basis"]), n, m, params)
    raise InputError("constraint type must be 'nonlinear' or 'affine'")


# ------------------------------------------------------------- commands

def _sample_points(spec, n):
    chk = spec.check or {}
    rng = np.random.default_rng(spec.seed if spec.seed is not None else 0)
    box = float(chk.get("box", 1.0))
    return rng.uniform(-box, box, size=(int(chk.get("samples", 100)), n))


def _axiom_report(spec):
    chk = spec.check or {}
    pts = _sample_points(spec, spec.chart.n)
    return check_axioms(spec.chart, pts, probe_count=int(chk.get("probes", 3)),
                        seed=spec.seed if spec.seed is not None else 0)


def cmd_check(spec, **_):
    report = _axiom_report(spec)
    out = {"command": "check", "axioms": report.to_dict(), "classification": report.classification()}
    ok = spec.expect is None or spec.expect == report.classification()
    if spec.expect is not None:
        out["expect"] = spec.expect
    out["passed"] = ok
    return out, ok, None


def _run(spec):
    A, L, F, C, s0, cfg, t1 = spec.run_objects()
    mode = spec.mode or "free"
    start = time.perf_counter()
    traj = integrate(A, L, s0, cfg, t1, mode=mode, force=F, constraint=C)
    wall = time.perf_counter() - start
    return traj, wall


def _summary(spec, traj, axioms):
    out = {f"max_{k}": float(np.max(v)) if len(v) else 0.0 for k, v in sorted(traj.diagnostics.items())}
    if (spec.mode or "free") == "affine_reduced":
        if axioms.is_quasi_lie:
            hol = is_holonomic(spec.chart, spec._built["constraint"], _sample_points(spec, spec.chart.n))
            out["holonomic"] = hol.is_holonomic
            out["holonomicity_residual"] = hol.max_offspan_residual
        else:
            out["holonomic"] = None
    return out


def cmd_simulate(spec, **_):
    traj, wall = _run(spec)
    log.info("integrated %d steps in %.3f s", len(traj.t) - 1, wall)
    axioms = _axiom_report(spec)
    out = {"command": "simulate", "mode": spec.mode or "free", "steps": len(traj.t) - 1,
           "axioms": axioms.to_dict(), "diagnostics": _summary(spec, traj, axioms),
           "final_state": {"t": float(traj.t[-1]), "x": traj.x[-1].tolist(), "y": traj.y[-1].tolist(),
                           "mu": traj.mu[-1].tolist()},
           "wall_time": wall}
    return out, True, traj


def _scale(traj):
    ymax = float(np.max(np.abs(traj.y), initial=0.0))
    mumax = float(np.max(np.abs(traj.mu), initial=0.0))
    return (1.0 + ymax) * (1.0 + ymax + mumax)


def _probes(t, m, count, rng):
    """Generators vanishing at both endpoints: random sine series."""
    T = t[-1] - t[0]
    s = (t - t[0]) / T
    out = []
    for _ in range(count):
        coef = rng.normal(size=(4, m))
        out.append(sum(np.sin((k + 1) * np.pi * s)[:, None] * coef[k] for k in range(4)))
    return out


def cmd_variation_test(spec, probes=20, **_):
    A, L, F, C, s0, cfg, t1 = spec.run_objects()
    traj, wall = _run(spec)
    mode = spec.mode or "free"
    h = traj.h
    scale = _scale(traj)
    rng = np.random.default_rng(spec.seed if spec.seed is not None else 0)
    checks = {}

    def add(name, value, limit, enforce=True):
        checks[name] = {"value": float(value), "threshold": float(limit),
                        "passed": bool(value <= limit) if enforce else None}

    axioms = _axiom_report(spec)
    if mode == "free":
        gens = _probes(traj.t, A.m, probes, rng)
        # admissibility is reported as a check rather than refused up front
        add("admissibility", is_admissible(A, traj, np.inf)[1], max(1e-6, 50 * h * h) * scale)
        pair, direct = zip(*first_variations(A, L, traj, gens, tol=None))
        force_free = F is None
        add("action_variation", max(abs(p.total) for p in pair), 1e-5 * scale, force_free)
        add("route_difference", max(abs(p.total - d) for p, d in zip(pair, direct)), 1e-5 * scale)
        tang = max(variation_tangency_residual(A, traj, f) for f in gens)
        add("variation_tangency", tang, 1e-8 + 50 * h * h * scale, axioms.is_lie)
        add("delta_L_residual", float(np.max(traj.diagnostics["delta_L_residual"])),
            max(1e-6, 50 * h * h) * scale)
    elif mode == "nonholonomic":
        add("dalembert_residual", dalembert_residual(A, L, C, traj) if F is None
            else float(np.max(traj.diagnostics["dalembert_residual"])), max(1e-8, 50 * h * h) * scale)
        add("multiplier_identity", float(np.max(traj.diagnostics["identity_residual"])), 1e-8 * scale)
    elif mode == "vakonomic":
        add("vakonomic_identity", float(np.max(traj.diagnostics["identity_residual"])), 1e-10 * scale)
        add("lift_admissibility", lift_admissibility_residual(A, L, C, traj), 50 * h * h * scale)
        add("algebraic_residual", float(np.max(traj.diagnostics["algebraic_residual"])), 1e-8 * scale)
    else:
        add("reduced_delta_L", float(np.max(traj.diagnostics["delta_L_residual"])),
            max(1e-8, 50 * h * h) * scale)
    ok = all(c["passed"] is not False for c in checks.values())
    out = {"command": "variation-test", "mode": mode, "steps": len(traj.t) - 1, "scale": scale,
           "axioms": axioms.to_dict(), "diagnostics": _summary(spec, traj, axioms), "checks": checks,
           "passed": ok, "wall_time": wall}
    return out, ok, traj


COMMANDS = {"check": cmd_check, "simulate": cmd_simulate, "variation-test": cmd_variation_test}


# ----------------------------------------------------------------- output

def gnuplot_script(traj, csv_name):
    cols = traj.header()
    lines = ["set datafile separator ','", "set key autotitle columnhead", "set xlabel 't'",
             "plot " + ", \\\n     ".join(f"'{csv_name}' using 1:{i + 1} with lines"
                                          for i in range(1, len(cols)))]
    return "\n".join(lines) + "\n"


def _write_outputs(spec, report, traj, out_dir):
    output = dict(spec.output or {})
    csv_path = output.get("trajectory_csv")
    report_path = output.get("report_json")
    plot = output.get("plot_script")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, os.path.basename(csv_path or "trajectory.csv"))
        report_path = os.path.join(out_dir, os.path.basename(report_path or "report.json"))
        if plot:
            plot = os.path.join(out_dir, os.path.basename(plot if isinstance(plot, str) else "plot.gp"))
    elif plot is True:
        plot = "plot.gp"
    if traj is not None and csv_path:
        traj.to_csv(csv_path)
        if plot:
            with open(plot, "w") as fh:
                fh.write(gnuplot_script(traj, os.path.basename(csv_path)))
    if report_path:
        with open(report_path, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _parse_param(text):
    if "=" not in text:
        raise InputError(f"--param expects key=value, got {text!r}")
    key, value = text.split("=", 1)
    try:
        return key, int(value)
    except ValueError:
        pass
    try:
        return key, float(value)
    except ValueError:
        return key, value


def load_spec(path=None, scenario=None, params=(), seed=None) -> SystemSpec:
    data = {}
    if scenario is not None:
        data = scenario_spec(scenario, **dict(_parse_param(p) for p in params))
    elif params:
        raise InputError("--param needs --scenario")
    if path is not None:
        try:
            with open(path) as fh:
                file_data = json.load(fh)
        except OSError as exc:
            raise InputError(f"cannot read {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{path} is not valid JSON: {exc}") from None
        if not isinstance(file_data, dict):
            raise InputError("run file must be a JSON object")
        data.update(file_data)
    if not data:
        raise InputError("give a spec file or --scenario")
    if seed is not None:
        data["seed"] = seed
    return SystemSpec.from_dict(data)


def build_parser():
    p = argparse.ArgumentParser(prog="algebroid-mech",
                                description="Check, simulate and test mechanics on general algebroids.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("spec", nargs="?", help="JSON run file")
    p.add_argument("--scenario", choices=sorted(SCENARIOS), help="start from a built-in scenario")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="scenario parameter (repeatable)")
    p.add_argument("--seed", type=int, help="seed for sample points and probes")
    p.add_argument("--out", help="directory for trajectory.csv and report.json")
    p.add_argument("--probes", type=int, default=20, help="variation probes for variation-test (default 20)")
    return p


def main(argv=None) -> int:
    level = getattr(logging, os.environ.get("ALGEBROID_MECH_LOG", "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        if args.probes < 1:
            raise InputError("--probes must be at least 1")
        spec = load_spec(args.spec, args.scenario, args.param, args.seed)
        report, ok, traj = COMMANDS[args.command](spec, probes=args.probes)
        _write_outputs(spec, report, traj, args.out)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericFailure as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    printable = {k: v for k, v in report.items() if k != "wall_time"}
    print(json.dumps(printable, indent=2, sort_keys=True))
    return EXIT_OK if ok else EXIT_EXPECTATION


if __name__ == "__main__":
    sys.exit(main())
