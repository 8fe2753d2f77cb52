"""Command-line front end: solve, verify, diagnose, demo and study pipelines.

A run is described by a JSON file::

    {
      "problem": {"case": "one_d_optimal", "n": 201},
      "solver": {"eps_stages": 8},
      "output": {"dir": "out", "diagnostics": ["second_diff", "contact_eigen"]},
      "seed": 0
    }

Instead of ``case`` a problem may spell out ``dim``, ``shape``, ``n``,
``operator`` (``{"F": "PucciMax", "lam": 1, "Lam": 2}``) and the data ``f``,
``g``, ``u0``, ``v0``. Each datum is a number or a catalog entry (see
``EXPRESSIONS``). Exit codes: 0 success, 1 configuration error, 2 numerical
failure or failed certification.
"""

import argparse
import datetime
import json
import logging
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .core import OperatorSpec, PucciParams
from .diagnostics import (contact_eigen_check, nondegeneracy_curve, refinement_study,
                          regularity_report)
from .errors import ConfigurationError, StageFailure, TwoMembranesError
from .grid import Field
from .io import dump_json, read_pair, write_pair
from .solver import ProblemDef, SolutionPair, SolveReport, SolverConfig, solve_two_membranes
from .verify import get_case, nonuniqueness_demo, residual_report

log = logging.getLogger("twomembranes")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2

DIAGNOSTICS = ("second_diff", "holder", "contact_eigen", "nondegeneracy")


# --------------------------------------------------------------------------- expression catalog

def _poly(terms):
    """sum c * x^a * y^b over terms [c, a] (1D) or [c, a, b] (2D)."""
    terms = [tuple(t) for t in terms]

    def fn(x):
        out = np.zeros(len(x))
        for t in terms:
            c, powers = float(t[0]), t[1:]
            if len(powers) > x.shape[1]:
                raise ConfigurationError("polynomial term has more exponents than dimensions")
            term = np.full(len(x), c)
            for k, p in enumerate(powers):
                term = term * x[:, k] ** int(p)
            out += term
        return out
    return fn


def _xplus_power(coef=1.0, power=2):
    return lambda x: float(coef) * np.maximum(x[:, 0], 0.0) ** float(power)


def _radial_plus_power(coef=1.0, rho=0.5, power=2):
    return lambda x: float(coef) * np.maximum(np.linalg.norm(x, axis=1) - float(rho), 0.0) ** float(power)


def _case_expr(case, field, lam, Lam, C=1.0):
    c = get_case(case, lam=lam, Lam=Lam, C=C)
    if field not in ("f", "g", "u", "v"):
        raise ConfigurationError(f"case field must be one of f, g, u, v; got {field!r}")
    return getattr(c, field)


EXPRESSIONS = {
    "constant": ("value",),
    "poly": ("terms",),
    "xplus_power": ("coef", "power"),
    "radial_plus_power": ("coef", "rho", "power"),
    "case": ("case", "field", "C"),
    "sum": ("terms",),
}


class ConfigError(ConfigurationError):
    """A configuration error tied to a key path (and, when found, a line of the file)."""

    def __init__(self, path, message, line=None, source="config"):
        loc = f"{source}:{line}" if line is not None else source
        where = ".".join(str(p) for p in path)
        super().__init__(f"{loc}: {where + ': ' if where else ''}{message}")
        self.path = tuple(path)
        self.line = line


class _Locator:
    """Best-effort line numbers for key paths in the raw JSON text."""

    def __init__(self, text, source):
        self.text = text
        self.source = source

    def line(self, path):
        pos = 0
        found = False
        for key in path:
            if isinstance(key, int):
                continue
            k = self.text.find(json.dumps(key), pos)
            if k < 0:
                break
            pos, found = k, True
        return self.text.count("\n", 0, pos) + 1 if found else None

    def error(self, path, message):
        return ConfigError(path, message, self.line(path), self.source)


def _expression(spec, path, loc, lam, Lam):
    if isinstance(spec, bool):
        raise loc.error(path, "expected a number or an expression object")
    if isinstance(spec, (int, float)):
        return float(spec)
    if not isinstance(spec, dict) or "expr" not in spec:
        raise loc.error(path, f"expected a number or an object with 'expr' (one of "
                              f"{', '.join(EXPRESSIONS)})")
    name = spec["expr"]
    if name not in EXPRESSIONS:
        raise loc.error(path + ("expr",),
                        f"unknown expression {name!r} (available: {', '.join(EXPRESSIONS)})")
    args = {k: v for k, v in spec.items() if k != "expr"}
    unknown = set(args) - set(EXPRESSIONS[name])
    if unknown:
        raise loc.error(path + (sorted(unknown)[0],),
                        f"unexpected parameter for {name}: {', '.join(sorted(unknown))}")
    try:
        if name == "constant":
            return float(args["value"])
        if name == "poly":
            return _poly(args["terms"])
        if name == "xplus_power":
            return _xplus_power(**args)
        if name == "radial_plus_power":
            return _radial_plus_power(**args)
        if name == "case":
            return _case_expr(args["case"], args.get("field", "f"), lam, Lam, args.get("C", 1.0))
        parts = [_expression(t, path + ("terms", i), loc, lam, Lam)
                 for i, t in enumerate(args["terms"])]
        return lambda x: sum(p(x) if callable(p) else np.full(len(x), p) for p in parts)
    except ConfigError:
        raise
    except KeyError as exc:
        raise loc.error(path, f"{name} needs parameter {exc}") from None
    except (TypeError, ValueError) as exc:
        raise loc.error(path, str(exc)) from None


# --------------------------------------------------------------------------- run config

_TOP_KEYS = {"problem", "solver", "output", "seed", "study", "verify", "nondegeneracy"}
_PROBLEM_KEYS = {"case", "dim", "shape", "n", "width", "operator", "f", "g", "u0", "v0",
                 "allow_degenerate", "C", "name"}
_OUTPUT_KEYS = {"dir", "formats", "diagnostics"}


class RunConfig:
    """Parsed and validated run configuration."""

    def __init__(self, raw, source="config", text=None):
        self.raw = raw
        self.source = source
        loc = _Locator(text if text is not None else json.dumps(raw, indent=2), source)
        self._loc = loc
        if not isinstance(raw, dict):
            raise loc.error((), "top level must be a JSON object")
        self._keys(raw, _TOP_KEYS, ())
        self.seed = raw.get("seed", 0)
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise loc.error(("seed",), "seed must be a non-negative integer")
        self.problem_def, self.n, self.K = self._problem(raw.get("problem"))
        self.solver = self._solver(raw.get("solver", {}))
        self.output = self._output(raw.get("output", {}))
        self.study = self._study(raw.get("study", {}))
        self.verify_K = self._positive(raw.get("verify", {}), ("verify",), "K", self.K)
        nd = raw.get("nondegeneracy", {})
        self._keys(nd, {"center", "radii"}, ("nondegeneracy",))
        self.nd_center = nd.get("center")
        self.nd_radii = nd.get("radii")
        # validate the discretized problem before any solve
        self.problem()

    # ---- helpers
    def _keys(self, block, allowed, path):
        if not isinstance(block, dict):
            raise self._loc.error(path, "expected an object")
        unknown = sorted(set(block) - allowed)
        if unknown:
            raise self._loc.error(path + (unknown[0],),
                                  f"unknown key(s) {', '.join(unknown)}; allowed: {', '.join(sorted(allowed))}")

    def _positive(self, block, path, key, default):
        self._keys(block, {key}, path)
        val = block.get(key, default)
        if isinstance(val, bool) or not isinstance(val, (int, float)) or not val > 0:
            raise self._loc.error(path + (key,), f"{key} must be a positive number")
        return float(val)

    def _problem(self, block):
        loc = self._loc
        if block is None:
            raise loc.error(("problem",), "missing problem block")
        self._keys(block, _PROBLEM_KEYS, ("problem",))
        n = block.get("n")
        if isinstance(n, bool) or not isinstance(n, int):
            raise loc.error(("problem", "n"), "n must be an odd integer >= 5")
        if "case" in block:
            extra = sorted(set(block) & {"dim", "shape", "f", "g", "u0", "v0", "operator"})
            if extra:
                raise loc.error(("problem", extra[0]),
                                "a 'case' problem takes its domain, operator and data from the case")
            try:
                case = get_case(block["case"], C=float(block.get("C", 1.0)))
            except ConfigurationError as exc:
                raise loc.error(("problem", "case"), str(exc)) from None
            return case.problem_def(), n, case.K
        for key in ("dim", "shape", "operator", "f", "g", "u0", "v0"):
            if key not in block:
                raise loc.error(("problem",), f"missing key {key!r}")
        op = block["operator"]
        self._keys(op, {"F", "G", "lam", "Lam", "family"}, ("problem", "operator"))
        try:
            params = PucciParams(float(op.get("lam", 1.0)), float(op.get("Lam", 2.0)))
            F = OperatorSpec(op.get("F", "PucciMax"), params, tuple(op.get("family", ())))
            G = OperatorSpec(op["G"], params, tuple(op.get("family", ()))) if "G" in op else F.partner()
        except (ConfigurationError, ValueError, TypeError) as exc:
            raise loc.error(("problem", "operator"), str(exc)) from None
        data = {k: _expression(block[k], ("problem", k), loc, params.lam, params.Lam)
                for k in ("f", "g", "u0", "v0")}
        allow = bool(block.get("allow_degenerate", False))
        pdef = ProblemDef(int(block["dim"]), str(block["shape"]), F, G, data["f"], data["g"],
                          data["u0"], data["v0"], width=int(block.get("width", 1)),
                          allow_degenerate=allow, name=str(block.get("name", "custom")))
        return pdef, n, 1.0

    def _solver(self, block):
        allowed = {f.name for f in fields(SolverConfig)}
        self._keys(block, allowed, ("solver",))
        try:
            return SolverConfig(**block)
        except (ConfigurationError, TypeError) as exc:
            key = next(iter(block), None)
            raise self._loc.error(("solver",) + ((key,) if key else ()), str(exc)) from None

    def _output(self, block):
        self._keys(block, _OUTPUT_KEYS, ("output",))
        diags = block.get("diagnostics", list(DIAGNOSTICS))
        if not isinstance(diags, list) or any(d not in DIAGNOSTICS for d in diags):
            raise self._loc.error(("output", "diagnostics"),
                                  f"diagnostics must be a list drawn from {', '.join(DIAGNOSTICS)}")
        formats = block.get("formats", ["csv", "json"])
        if not isinstance(formats, list) or any(f not in ("csv", "json") for f in formats):
            raise self._loc.error(("output", "formats"), "formats must be a list drawn from csv, json")
        return {"dir": block.get("dir"), "diagnostics": diags, "formats": formats}

    def _study(self, block):
        self._keys(block, {"resolutions"}, ("study",))
        res = block.get("resolutions", [51, 101, 201])
        if not isinstance(res, list) or not res or any(
                isinstance(r, bool) or not isinstance(r, int) for r in res):
            raise self._loc.error(("study", "resolutions"), "resolutions must be a list of integers")
        return {"resolutions": res}

    # ---- products
    def problem(self, n=None):
        try:
            return self.problem_def.discretize(self.n if n is None else n)
        except ConfigurationError as exc:
            msg = str(exc)
            key = ("u0",) if "u0 > v0" in msg else ("f",) if "f - g" in msg else \
                ("n",) if "n must" in msg else ("shape",) if "shape" in msg else \
                ("dim",) if "dimension" in msg else ()
            raise self._loc.error(("problem",) + key, msg) from None

    def out_dir(self, override=None, default="out"):
        return Path(override or self.output["dir"] or default)

    def summary(self):
        p = self.problem_def
        return {"name": p.name, "dim": p.dim, "shape": p.shape, "n": self.n, "width": p.width,
                "F": p.F.kind.value, "G": p.G.kind.value, "lam": p.F.params.lam,
                "Lam": p.F.params.Lam, "K": self.verify_K, "seed": self.seed}


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError((), f"cannot read config: {exc.strerror}", source=str(path)) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError((), f"invalid JSON: {exc.msg} (column {exc.colno})", exc.lineno,
                          str(path)) from None
    return RunConfig(raw, str(path), text)


# --------------------------------------------------------------------------- outputs

def _write_metadata(out, command, t0, **extra):
    meta = {"command": command, "version": __version__,
            "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "wall_time": time.perf_counter() - t0}
    meta.update(extra)
    dump_json(meta, Path(out) / "metadata.json")


def _solver_block(cfg, domain):
    return asdict(cfg.resolve(domain))


def _emit(quiet, msg):
    if not quiet:
        print(msg)


def _fail_config(exc, quiet):
    print(f"error: {exc}", file=sys.stderr)
    return EXIT_CONFIG


# --------------------------------------------------------------------------- commands

def cmd_solve(config_path, out_dir=None, seed=None, quiet=False):
    t0 = time.perf_counter()
    try:
        cfg = load_config(config_path)
        problem = cfg.problem()
    except ConfigurationError as exc:
        return _fail_config(exc, quiet)
    if seed is not None:
        cfg.seed = seed
    out = cfg.out_dir(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = {"problem": cfg.summary(), "solver": _solver_block(cfg.solver, problem.domain)}
    try:
        pair = solve_two_membranes(problem, cfg.solver)
    except StageFailure as exc:
        report = getattr(exc, "report", SolveReport(message=str(exc)))
        base.update(failed=True, solve=report.to_dict(), error=str(exc))
        partial = getattr(exc, "partial", None)
        if partial and partial[0] is not None and partial[0].domain is problem.domain:
            pair = SolutionPair.from_fields(*partial, contact_tol=report.contact_tol, report=report)
            write_pair(pair, out)
            base["partial_fields"] = True
        else:
            base["partial_fields"] = False
        dump_json(base, out / "report.json")
        _write_metadata(out, "solve", t0)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except TwoMembranesError as exc:
        base.update(failed=True, error=str(exc), partial_fields=False)
        dump_json(base, out / "report.json")
        _write_metadata(out, "solve", t0)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    base.update(failed=False, solve=pair.report.to_dict())
    write_pair(pair, out, base)
    _write_metadata(out, "solve", t0, solve_wall_time=pair.report.wall_time)
    _emit(quiet, f"solved {cfg.problem_def.name or 'problem'} n={cfg.n}: "
                 f"{pair.report.contact_nodes} contact nodes -> {out}")
    return EXIT_OK


def _load_pair(fields_dir, problem):
    u, v, mask = read_pair(fields_dir)
    if u.domain.metadata() != problem.domain.metadata():
        raise ConfigurationError(
            f"{fields_dir}: fields were written on a different grid than the config describes")
    report_path = Path(fields_dir) / "report.json"
    ctol = None
    if report_path.exists():
        ctol = json.loads(report_path.read_text()).get("solve", {}).get("contact_tol")
    dom = problem.domain
    pair = SolutionPair.from_fields(Field(dom, u.values), Field(dom, v.values), ctol)
    pair.contact_mask = mask
    return pair


def cmd_verify(fields_dir, config_path, out_dir=None, seed=None, quiet=False):
    t0 = time.perf_counter()
    try:
        cfg = load_config(config_path)
        problem = cfg.problem()
        pair = _load_pair(fields_dir, problem)
    except ConfigurationError as exc:
        return _fail_config(exc, quiet)
    out = Path(out_dir or fields_dir)
    out.mkdir(parents=True, exist_ok=True)
    tol = cfg.verify_K * problem.domain.h
    rep = residual_report(pair, problem, tol, contact_tol=pair.report.contact_tol)
    dump_json({"problem": cfg.summary(), "residual": rep.to_dict()}, out / "verify.json")
    _write_metadata(out, "verify", t0)
    _emit(quiet, f"verify: {'passed' if rep.passed else 'FAILED'} (tol {tol:.3g})")
    return EXIT_OK if rep.passed else EXIT_NUMERICAL


def _diagnostics(pair, problem, cfg, which, seed, tol):
    """(json-able dict, {csv name: text}, passed)."""
    out, curves, ok = {}, {}, True
    u, v = pair.u, pair.v
    if "second_diff" in which or "holder" in which:
        etas = (0.25, 0.5, 1.0) if "holder" in which else ()
        out["regularity"] = {"u": regularity_report(u, etas=etas, seed=seed).to_dict(),
                             "v": regularity_report(v, etas=etas, seed=seed).to_dict()}
    if "contact_eigen" in which:
        ce = contact_eigen_check(pair, problem, tol)
        out["contact_eigen"] = ce.to_dict()
        ok &= ce.passed
    if "nondegeneracy" in which:
        try:
            curve = nondegeneracy_curve(pair.gap, cfg.nd_center if cfg else None,
                                        cfg.nd_radii if cfg else None)
        except ConfigurationError as exc:
            out["nondegeneracy"] = {"skipped": str(exc)}
        else:
            out["nondegeneracy"] = curve.to_dict()
            curves["nondegeneracy.csv"] = curve.to_csv()
    return out, curves, bool(ok)


def cmd_diagnose(fields_dir, config_path, out_dir=None, seed=None, quiet=False):
    t0 = time.perf_counter()
    try:
        cfg = load_config(config_path)
        problem = cfg.problem()
        pair = _load_pair(fields_dir, problem)
    except ConfigurationError as exc:
        return _fail_config(exc, quiet)
    seed = cfg.seed if seed is None else seed
    out = Path(out_dir or fields_dir)
    out.mkdir(parents=True, exist_ok=True)
    tol = cfg.verify_K * problem.domain.h
    res, curves, ok = _diagnostics(pair, problem, cfg, cfg.output["diagnostics"], seed, tol)
    res["problem"] = dict(cfg.summary(), seed=seed)
    dump_json(res, out / "diagnostics.json")
    for name, text in curves.items():
        (out / name).write_text(text)
    _write_metadata(out, "diagnose", t0)
    _emit(quiet, f"diagnose: {', '.join(cfg.output['diagnostics'])} -> {out}")
    return EXIT_OK if ok else EXIT_NUMERICAL


DEMO_CASES = ("one_d_optimal", "radial_2d", "fb_counterexample", "nonuniqueness")


def cmd_demo(case_name, n=101, out_dir=None, seed=0, quiet=False):
    t0 = time.perf_counter()
    out = Path(out_dir or f"demo_{case_name}")
    try:
        if case_name == "nonuniqueness":
            case = get_case("one_d_optimal")
            problem = case.problem(n)
        elif case_name in DEMO_CASES:
            case = get_case(case_name)
            problem = case.problem(n)
        else:
            raise ConfigurationError(f"unknown demo case {case_name!r} "
                                     f"(available: {', '.join(DEMO_CASES)})")
    except ConfigurationError as exc:
        return _fail_config(exc, quiet)
    dom = problem.domain
    tol = case.K * dom.h
    summary = {"case": case_name, "n": n, "h": dom.h, "K": case.K, "tol": tol, "seed": seed,
               "contact": case.contact_description}
    out.mkdir(parents=True, exist_ok=True)
    if case_name == "nonuniqueness":
        p1, p2, (r1, r2) = nonuniqueness_demo(dom)
        write_pair(p1, out / "pair1")
        write_pair(p2, out / "pair2")
        diff = float(max(np.abs(p1.u.flat[dom.active] - p2.u.flat[dom.active]).max(),
                         np.abs(p1.v.flat[dom.active] - p2.v.flat[dom.active]).max()))
        summary.update(sup_difference=diff, pair1=r1.to_dict(), pair2=r2.to_dict())
        ok = r1.passed and r2.passed
    else:
        pair = case.pair(dom)
        write_pair(pair, out)
        rep = residual_report(pair, problem, tol)
        diag, curves, dok = _diagnostics(pair, problem, None, DIAGNOSTICS, seed, tol)
        for name, text in curves.items():
            (out / name).write_text(text)
        summary.update(residual=rep.to_dict(), diagnostics=diag)
        ok = rep.passed and dok
    summary["passed"] = bool(ok)
    dump_json(summary, out / "demo.json")
    _write_metadata(out, "demo", t0)
    _emit(quiet, f"demo {case_name} n={n}: {'passed' if ok else 'FAILED'} -> {out}")
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_study(config_path, out_dir=None, seed=None, quiet=False):
    t0 = time.perf_counter()
    try:
        cfg = load_config(config_path)
        for n in cfg.study["resolutions"]:
            cfg.problem(n)
    except ConfigurationError as exc:
        return _fail_config(exc, quiet)
    out = cfg.out_dir(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        table = refinement_study(cfg.problem_def, cfg.study["resolutions"], cfg.solver)
    except ConfigurationError as exc:
        return _fail_config(exc, quiet)
    except TwoMembranesError as exc:
        dump_json({"failed": True, "error": str(exc), "problem": cfg.summary()}, out / "study.json")
        _write_metadata(out, "study", t0)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    (out / "study.csv").write_text(table.to_csv())
    dump_json(dict(table.to_dict(), failed=False, problem=cfg.summary()), out / "study.json")
    _write_metadata(out, "study", t0, runtimes=[r["runtime"] for r in table.rows])
    _emit(quiet, f"study over n={cfg.study['resolutions']} -> {out}")
    return EXIT_OK


# --------------------------------------------------------------------------- entry point

def build_parser():
    ap = argparse.ArgumentParser(prog="twomembranes",
                                 description="Two-membranes solver, certification and diagnostics.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out-dir", help="output directory (default: config output.dir, else ./out)")
        p.add_argument("--seed", type=int, help="seed for sampled diagnostics (overrides config)")
        p.add_argument("--quiet", action="store_true", help="suppress progress messages")
        p.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    p = sub.add_parser("solve", help="solve a configured problem")
    p.add_argument("config")
    common(p)
    for name, hlp in (("verify", "certify stored fields"), ("diagnose", "regularity diagnostics")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("fields_dir")
        p.add_argument("config")
        common(p)
    p = sub.add_parser("demo", help="closed-form examples without solving")
    p.add_argument("case", choices=DEMO_CASES)
    p.add_argument("--n", type=int, default=101)
    common(p)
    p = sub.add_parser("study", help="refinement study")
    p.add_argument("config")
    common(p)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    kw = {"out_dir": args.out_dir, "seed": args.seed, "quiet": args.quiet}
    if args.command == "solve":
        return cmd_solve(args.config, **kw)
    if args.command == "verify":
        return cmd_verify(args.fields_dir, args.config, **kw)
    if args.command == "diagnose":
        return cmd_diagnose(args.fields_dir, args.config, **kw)
    if args.command == "demo":
        return cmd_demo(args.case, args.n, args.out_dir, args.seed or 0, args.quiet)
    return cmd_study(args.config, **kw)


if __name__ == "__main__":
    sys.exit(main())
