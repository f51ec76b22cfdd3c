"""Command-line driver: ``nashpde {check,equilibrium,certify,perturb} CONFIG``.

Exit status is 0 on success, 1 when the analysis fails (checks out of
tolerance, no convergence, equilibrium not certified, Lipschitz pass rate
below one) and 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from importlib.metadata import PackageNotFoundError, version

import numpy as np

from .calculus import gradient
from .config import ConfigError, HarnessSettings, Problem, load_config, validate_harness
from .diagnostics import run_checks
from .equilibrium import METHODS, EquilibriumResult, check_variational_equilibrium, solve_equilibrium
from .perturb import HarnessError, export_report, run_harness
from .stability import FULLY_STABLE, certify

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def tool_version() -> str:
    try:
        return version("nashpde")
    except PackageNotFoundError:
        return "unknown"


def _g(x: float) -> str:
    return format(float(x), ".6e")


def _solve(problem: Problem, settings=None) -> EquilibriumResult:
    return solve_equilibrium(problem.spec, problem.perturbation, problem.tilt, settings or problem.solver)


def _print_equilibrium(problem: Problem, result: EquilibriumResult) -> None:
    spec = problem.spec
    print(f"config_hash: {problem.config_hash}")
    print(f"converged: {str(result.converged).lower()}")
    print(f"residual: {_g(result.residual)}")
    print(f"iterations: {result.iterations}")
    for k in range(spec.m):
        g = gradient(spec, result.point, k).values - problem.tilt.values[k]
        norm = np.sqrt(np.sum(g**2) * spec.grid.cell_volume)
        print(f"player {k + 1}: tilted gradient norm {_g(norm)}")
    if spec.m > 1:
        diff = max(
            np.sqrt(np.sum((result.u_bar.values[a] - result.u_bar.values[b]) ** 2) * spec.grid.cell_volume)
            for a in range(spec.m) for b in range(a + 1, spec.m)
        )
        print(f"max pairwise control difference: {_g(diff)}")


def _normal_cone_line(result: EquilibriumResult) -> bool:
    check = check_variational_equilibrium(result)
    verdict = "pass" if check.passed else "fail"
    print(f"normal-cone check: {verdict} (worst violation {_g(check.worst_violation)})")
    return check.passed


def _write_controls(problem: Problem, result: EquilibriumResult, path) -> None:
    grid = problem.spec.grid
    coords = grid.coordinates()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(grid.dim)] + [f"u{k + 1}" for k in range(problem.spec.m)])
        for i in range(grid.size):
            row = [c[i] for c in coords] + list(result.u_bar.values[:, i])
            w.writerow([format(float(v), ".17g") for v in row])


def cmd_check(args) -> int:
    problem = load_config(args.config)
    print(f"config_hash: {problem.config_hash}")
    ok = True
    for check in run_checks(problem.spec, problem.perturbation, problem.tilt):
        print(f"{check.name}: relative error {_g(check.error)} (tolerance {check.tolerance:g}) "
              f"{'ok' if check.passed else 'FAILED'}")
        ok &= check.passed
    return EXIT_OK if ok else EXIT_FAIL


def cmd_equilibrium(args) -> int:
    problem = load_config(args.config)
    settings = problem.solver
    overrides = {k: v for k, v in (("method", args.method), ("residual_tolerance", args.tol),
                                   ("max_outer_iters", args.max_iters)) if v is not None}
    try:
        settings = replace(settings, **overrides)
    except ValueError as exc:
        raise ConfigError("flags", str(exc)) from None

    callback = None
    if args.trace:
        trace = csv.writer(sys.stdout, lineterminator="\n")
        trace.writerow(["iter", "residual"])

        def callback(it, r):
            trace.writerow([it, format(r, ".17g")])

    result = solve_equilibrium(problem.spec, problem.perturbation, problem.tilt, settings, callback=callback)
    _print_equilibrium(problem, result)
    cone_ok = _normal_cone_line(result) if result.converged else False
    if args.out:
        _write_controls(problem, result, args.out)
    if not result.converged:
        print(f"error: no convergence; best residual {_g(result.residual)} after {result.iterations} iterations",
              file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK if cone_ok else EXIT_FAIL


def cmd_certify(args) -> int:
    problem = load_config(args.config)
    delta = problem.certify.delta if args.delta is None else args.delta
    eps_act = problem.certify.eps_act if args.eps_act is None else args.eps_act
    if not delta > 0:
        raise ConfigError("--delta", "must be positive")
    if eps_act is not None and not eps_act > 0:
        raise ConfigError("--eps-act", "must be positive")
    result = _solve(problem)
    _print_equilibrium(problem, result)
    if not result.converged:
        print(f"error: no convergence; best residual {_g(result.residual)}", file=sys.stderr)
        return EXIT_FAIL
    cert = certify(problem.spec, result, delta=delta, eps_act=eps_act, method=problem.certify.eigensolver)
    free = (~cert.mask.fixed).sum(axis=1)
    for k, (n_fixed, n_free) in enumerate(zip(cert.mask.fixed_counts(), free)):
        print(f"player {k + 1}: active (fixed) nodes {n_fixed}, free nodes {int(n_free)}")
    if cert.mask.free_count == 0:
        print("free set is empty: the second-order condition holds vacuously")
    print(f"eps_act: {_g(cert.eps_act)}")
    print(f"lambda_min: {_g(cert.lambda_min)}")
    print(f"delta: {_g(cert.delta)}")
    print(f"verdict: {cert.verdict}")
    if cert.mask.free_count:
        print(f"witness norm: {cert.eigvector.norm():.1f}")
    if cert.message:
        print(f"note: {cert.message}")
    if args.out:
        report = {
            "config_hash": problem.config_hash,
            "tool_version": tool_version(),
            "equilibrium": {"residual": result.residual, "iterations": result.iterations,
                            "converged": result.converged},
            "certificate": cert.as_dict(),
        }
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True, allow_nan=True)
            fh.write("\n")
    return EXIT_OK if cert.verdict == FULLY_STABLE else EXIT_FAIL


def cmd_perturb(args) -> int:
    problem = load_config(args.config)
    h = problem.harness
    h = HarnessSettings(
        samples=h.samples if args.samples is None else args.samples,
        radius_tilt=h.radius_tilt if args.radius_tilt is None else args.radius_tilt,
        radius_param=h.radius_param if args.radius_param is None else args.radius_param,
        seed=h.seed if args.seed is None else args.seed,
    )
    validate_harness(h)
    result = _solve(problem)
    if not result.converged:
        print(f"error: base equilibrium did not converge (residual {_g(result.residual)})", file=sys.stderr)
        return EXIT_FAIL
    try:
        report = run_harness(problem.spec, problem.perturbation, problem.tilt, h.samples, h.radius_tilt,
                             h.radius_param, h.seed, problem.solver, base=result)
    except HarnessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(f"config_hash: {problem.config_hash}")
    print(f"seed: {h.seed}")
    print(f"samples: {len(report.samples)} (dropped {report.dropped})")
    print(f"kappa_hat: {_g(report.kappa_hat)}")
    print(f"ell_hat: {_g(report.ell_hat)}")
    print(f"lip_pass_rate: {report.lip_pass_rate:.4f}")
    print(f"holder_pass_rate: {report.holder_pass_rate:.4f}")
    print(f"max Lipschitz ratio: {_g(report.max_lip_ratio)}")
    print(f"max Hölder ratio: {_g(report.max_holder_ratio)}")
    if args.out:
        export_report(report, args.out)
    return EXIT_OK if report.lip_pass_rate == 1.0 else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nashpde", description="Nash equilibria of elliptic control games.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {tool_version()}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="finite-difference checks of gradients, Hessians and adjoints")
    p.add_argument("config")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("equilibrium", help="solve for a variational Nash equilibrium")
    p.add_argument("config")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--out", help="write controls as CSV")
    p.add_argument("--trace", action="store_true", help="stream iter,residual rows to stdout")
    p.set_defaults(func=cmd_equilibrium)

    p = sub.add_parser("certify", help="second-order full-stability certificate")
    p.add_argument("config")
    p.add_argument("--delta", type=float)
    p.add_argument("--eps-act", type=float)
    p.add_argument("--out", help="write the certificate as JSON")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("perturb", help="empirical Lipschitz/Hölder stability harness")
    p.add_argument("config")
    p.add_argument("--samples", type=int)
    p.add_argument("--radius-tilt", type=float)
    p.add_argument("--radius-param", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="write per-sample CSV")
    p.set_defaults(func=cmd_perturb)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
