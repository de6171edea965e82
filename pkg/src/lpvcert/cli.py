"""Command-line interface.

Exit codes: 0 property certified or command succeeded, 1 property violated,
2 inconclusive, 3 usage, parse or validation error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .delay import DEFAULT_FLOOR, DelaySystem, delay_dependent_test, delay_independent_test
from .errors import LpvCertError, NominalAlreadyViolated, NominalPropertyFails, NotExpressible, ParseError
from .io import (
    delta_to_dict,
    domain_report_to_dict,
    domain_to_dict,
    dumps_report,
    load_delta,
    load_document,
    parse_domain,
    point_to_dict,
    render_text,
)
from .linalg import DEFAULT_TOL
from .model import BoxDomain, default_domain, validate
from .pbh import Verdict, sweep_domain
from .robustness import construct_violation, preservation_radius, verify_radius

EXIT_OK, EXIT_VIOLATED, EXIT_INCONCLUSIVE, EXIT_USAGE = 0, 1, 2, 3
_VERDICT_EXIT = {Verdict.CERTIFIED: EXIT_OK, Verdict.VIOLATED: EXIT_VIOLATED, Verdict.INCONCLUSIVE: EXIT_INCONCLUSIVE}


class UsageError(LpvCertError):
    pass


class Parser(argparse.ArgumentParser):
    """Argument parser that exits with code 3 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _interval(text):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}")
    return lo, hi


def _delays(text):
    """``"h1,h2;h'1"``: internal delays, then external after a semicolon."""
    parts = text.split(";")
    if len(parts) > 2:
        raise argparse.ArgumentTypeError("expected at most one ';' between internal and external delays")
    try:
        out = [tuple(float(v) for v in p.split(",") if v.strip()) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse delays {text!r}")
    return out[0], (out[1] if len(out) > 1 else ())


def build_parser() -> Parser:
    common = Parser(add_help=False)
    common.add_argument("-o", "--output", help="write the report here instead of standard output")
    common.add_argument("--tol", type=float, default=DEFAULT_TOL, help="relative rank tolerance (default 1e-8)")
    common.add_argument("--seed", type=int, default=0, help="seed for randomized checks (default 0)")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker count (default: all cores)")
    common.add_argument("--timing", action="store_true", help="include wall-clock time in the report")

    p = Parser(prog="lpvcert", description="Certify structural properties of parameter-varying systems.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", parents=[common], help="check a system file")
    v.add_argument("system")

    a = sub.add_parser("analyze", parents=[common], help="test a property over a parameter domain")
    a.add_argument("system")
    a.add_argument("--property", default="controllability")
    a.add_argument("--domain", help="domain JSON (inline or a file path); defaults to the file's domain")
    a.add_argument("--grid", type=int, default=9)
    a.add_argument("--budget", type=int, default=100_000, help="grid point budget")
    a.add_argument("--refine", type=int, default=2)
    a.add_argument("--certify", action="store_true", help="also cover-certify the rank margin")
    a.add_argument("--delta-file", help="perturbation blocks to apply")
    a.add_argument("--s-grid", help="extra test points 're,im;re,im;...' for output controllability")

    r = sub.add_parser("radius", parents=[common], help="perturbation radius preserving a property")
    r.add_argument("system")
    r.add_argument("--property", default="controllability")
    r.add_argument("--domain")
    r.add_argument("--grid", type=int, default=9)
    r.add_argument("--omega-samples", type=int, default=200)
    r.add_argument("--verify", type=int, default=0, metavar="N", help="sample N admissible perturbations")

    k = sub.add_parser("attack", parents=[common], help="construct a property-destroying perturbation")
    k.add_argument("system")
    k.add_argument("--property", default="controllability")
    k.add_argument("--domain")
    k.add_argument("--grid", type=int, default=5)

    d = sub.add_parser("delay-analyze", parents=[common], help="delay-independent or delay-dependent test")
    d.add_argument("system")
    d.add_argument("--property", default="controllability")
    d.add_argument("--mode", choices=("independent", "dependent"), default="independent")
    d.add_argument("--delays", type=_delays, help="'h1,h2;h1p' internal then external delays (dependent mode)")
    d.add_argument("--sigma-box", type=_interval)
    d.add_argument("--omega-box", type=_interval)
    d.add_argument("--floor", type=float, default=DEFAULT_FLOOR)
    d.add_argument("--budget", type=int, default=100_000, help="cell budget")
    d.add_argument("--domain")
    d.add_argument("--delta-file")
    d.add_argument("--grid", type=int, default=9)

    t = sub.add_parser("report", parents=[common], help="re-render a saved report")
    t.add_argument("report")
    t.add_argument("--format", choices=("json", "text"), default="text")
    return p


def _domain(args, doc):
    if getattr(args, "domain", None):
        text = args.domain
        if os.path.exists(text):
            with open(text) as fh:
                text = fh.read()
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid domain JSON: {exc.msg}", "--domain") from exc
        return parse_domain(obj, "--domain")
    if doc.domain is not None:
        return doc.domain
    if isinstance(doc.system, DelaySystem):
        return BoxDomain.singleton(doc.system.origin())
    return default_domain(doc.system)


def _s_grid(text):
    if not text:
        return None
    out = []
    for item in text.split(";"):
        try:
            re_, im_ = (float(v) for v in item.split(","))
        except ValueError:
            raise UsageError(f"cannot parse s-grid entry {item!r}")
        out.append(complex(re_, im_))
    return out


def _no_delays(doc, command):
    if isinstance(doc.system, DelaySystem):
        raise UsageError(f"the system has delays; use delay-analyze instead of {command}")
    return doc.system


def cmd_validate(args):
    doc = load_document(args.system)
    base = doc.base
    diags = validate(base)
    for dg in diags:
        print(str(dg), file=sys.stderr)
    result = {
        "valid": True,
        "n": base.n, "m": base.m, "p": base.p,
        "parameters": doc.system.qs(),
        "delays": isinstance(doc.system, DelaySystem),
        "diagnostics": [str(dg) for dg in diags],
    }
    return EXIT_OK, result


def cmd_analyze(args):
    doc = load_document(args.system)
    system = _no_delays(doc, "analyze")
    domain = _domain(args, doc)
    delta = load_delta(args.delta_file) if args.delta_file else None
    rep = sweep_domain(system, args.property, domain, grid=args.grid, tol=args.tol, delta=delta,
                       budget=args.budget, refine=args.refine, certify=args.certify,
                       s_grid=_s_grid(args.s_grid), jobs=args.jobs)
    result = domain_report_to_dict(rep)
    result["domain"] = domain_to_dict(domain)
    return _VERDICT_EXIT[rep.verdict], result


def cmd_radius(args):
    doc = load_document(args.system)
    system = _no_delays(doc, "radius")
    domain = _domain(args, doc)
    try:
        rad = preservation_radius(system, domain, args.property, grid=args.grid,
                                  omega_samples=args.omega_samples, tol=args.tol)
    except NominalPropertyFails as exc:
        return EXIT_VIOLATED, {"error": "nominal_property_fails", "message": str(exc)}
    result = {"radius": rad.to_dict(), "domain": domain_to_dict(domain)}
    code = EXIT_OK
    if args.verify:
        rng = np.random.default_rng(args.seed)
        rep = verify_radius(system, domain, rad, rng, trials=args.verify, tol=args.tol)
        result["soundness"] = {
            "trials": rep.trials, "checks": rep.checks, "min_ratio": rep.min_ratio,
            "counterexamples": len(rep.counterexamples),
        }
        if not rep.sound:
            code = EXIT_VIOLATED
    return code, result


def cmd_attack(args):
    doc = load_document(args.system)
    system = _no_delays(doc, "attack")
    domain = _domain(args, doc)
    try:
        w = construct_violation(system, domain, args.property, grid=args.grid, tol=args.tol)
    except NotExpressible as exc:
        return EXIT_INCONCLUSIVE, {"error": "not_expressible", "message": str(exc)}
    except NominalAlreadyViolated as exc:
        return EXIT_VIOLATED, {"error": "nominal_already_violated", "message": str(exc)}
    return EXIT_OK, {
        "witness": {
            "s0": [w.s0.real, w.s0.imag], "sigma_min": w.sigma_min, "norm": w.norm, "method": w.method,
            "point": point_to_dict(w.point), "delta": delta_to_dict(w.delta),
        }
    }


def cmd_delay(args):
    doc = load_document(args.system)
    system = doc.system if isinstance(doc.system, DelaySystem) else DelaySystem(doc.system)
    domain = _domain(args, doc)
    delta = load_delta(args.delta_file) if args.delta_file else None
    box = {"sigma": args.sigma_box, "omega": args.omega_box}
    common = dict(prop=args.property, search_box=box, floor=args.floor, budget=args.budget, delta=delta,
                  tol=args.tol, grid=args.grid, jobs=args.jobs)
    if args.mode == "independent":
        rep = delay_independent_test(system, domain, **common)
    else:
        if args.delays is None:
            raise UsageError("--delays is required in dependent mode")
        h, h_ext = args.delays
        rep = delay_dependent_test(system, domain, h, h_ext, **common)
    return _VERDICT_EXIT[rep.verdict], domain_report_to_dict(rep)


def cmd_report(args):
    try:
        with open(args.report) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read report: {exc}", args.report) from exc
    return EXIT_OK, obj


COMMANDS = {
    "validate": cmd_validate,
    "analyze": cmd_analyze,
    "radius": cmd_radius,
    "attack": cmd_attack,
    "delay-analyze": cmd_delay,
    "report": cmd_report,
}


def _settings(args):
    skip = {"command", "output", "timing", "jobs"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def run_command(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    try:
        code, result = COMMANDS[args.command](args)
    except (LpvCertError, ValueError) as exc:
        print(f"lpvcert {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "report":
        text = render_text(result) + "\n" if args.format == "text" else dumps_report(result)
    else:
        report = {
            "tool": "lpvcert",
            "version": __version__,
            "command": args.command,
            "settings": _settings(args),
            "exit_code": code,
            "result": result,
        }
        if args.timing:
            report["wall_clock_s"] = time.perf_counter() - start
        text = dumps_report(report)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


def main(argv=None):
    sys.exit(run_command(argv))
