"""Command-line entry point.

    strictlyap pe        [--config FILE | --example NAME] [--out DIR] ...
    strictlyap strictify [--config FILE | --example NAME] [--out DIR] ...
    strictlyap verify CHECK [--config FILE | --example NAME] ...
    strictlyap simulate  [--config FILE | --example NAME] ...
    strictlyap example NAME [--reference "w1r; w2r; w3r"] [--out DIR]

Exit codes: 0 = all requested checks passed, 1 = a validation failed,
2 = configuration or usage error.  All file output is deterministic for a
fixed config and seed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import decay as decay_mod
from . import verify as verify_mod
from .config import ConfigError, Problem, load_problem, strictify_problem
from .decay import NotPersistentlyExcitingError, estimate_pe
from .dynsys import BlowUpError, Signal, integrate, write_trajectory_csv
from .exprparse import ExpressionError
from .fixtures import FIXTURES, check_reference_admissibility, get_fixture
from .strictify import (SlopeBoundViolatedError, UnboundedSupError,
                        ValidationFailedError, construct_omega)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2

VERIFY_CHECKS = ("uppd", "issp", "disp-state", "disp-value", "strict-iss",
                 "iss-estimate")


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.entry(args)
    except (ConfigError, ExpressionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NotPersistentlyExcitingError, ValidationFailedError,
            SlopeBoundViolatedError, UnboundedSupError, BlowUpError) as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_FAIL


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="strictlyap", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--config", type=Path, help="problem config (INI)")
        g.add_argument("--example", choices=sorted(FIXTURES), help="built-in fixture")
        sp.add_argument("--out", type=Path, default=None, help="directory for CSV output")
        sp.add_argument("--seed", type=int, default=None, help="override the sampling seed")
        sp.add_argument("--samples", type=int, default=None, help="override the sample count")

    sp = sub.add_parser("pe", help="estimate the excitation constants of p")
    common(sp)
    sp.set_defaults(entry=cmd_pe)

    sp = sub.add_parser("strictify", help="build and validate the strict certificate")
    common(sp)
    sp.set_defaults(entry=cmd_strictify)

    sp = sub.add_parser("verify", help="run one named inequality check")
    sp.add_argument("check", help=f"one of {', '.join(VERIFY_CHECKS)}")
    common(sp)
    sp.set_defaults(entry=cmd_verify)

    sp = sub.add_parser("simulate", help="integrate the configured runs")
    common(sp)
    sp.set_defaults(entry=cmd_simulate)

    sp = sub.add_parser("example", help="run a built-in fixture end to end")
    sp.add_argument("name", choices=sorted(FIXTURES))
    sp.add_argument("--reference", default=None,
                    help="rigid-body only: 'w1r; w2r; w3r' reference expressions")
    sp.add_argument("--out", type=Path, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--samples", type=int, default=None)
    sp.set_defaults(entry=cmd_example)

    return p


def _load(args) -> Problem:
    if getattr(args, "example", None):
        problem = get_fixture(args.example)
    elif getattr(args, "config", None):
        problem = load_problem(args.config)
    else:
        raise ConfigError("supply --config FILE or --example NAME")
    if args.seed is not None:
        problem.seed = args.seed
    if args.samples is not None:
        problem.samples = args.samples
    return problem


def _outdir(args) -> Path | None:
    if args.out is None:
        return None
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


def _ensure_pe(problem: Problem) -> None:
    """Attach a certified triple estimated from the configured tau."""
    if problem.rate.pe is None:
        est = estimate_pe(problem.rate, problem.tau)
        problem.rate = problem.rate.with_pe(est.triple(certified=True))


# ---------------------------------------------------------------------------
# Subcommands

def cmd_pe(args) -> int:
    problem = _load(args)
    out = _outdir(args)
    est = estimate_pe(problem.rate, problem.tau)
    print(f"decay rate: {problem.rate.label or '(callable)'}")
    print(f"tau: {est.tau:.17g}")
    print(f"epsilon (raw): {est.epsilon:.17g}")
    print(f"pbar (raw): {est.pbar:.17g}")
    print(f"epsilon (certified, 1% margin): {est.epsilon_certified:.17g}")
    print(f"pbar (certified, 1% margin): {est.pbar_certified:.17g}")
    print(f"horizon: {est.horizon:.17g}")
    print(f"horizon-limited: {'yes' if est.horizon_limited else 'no'}")
    if out is not None:
        ts = np.linspace(0.0, est.horizon, 513)
        ws = decay_mod.window_integral_vec(problem.rate, est.tau, ts)
        _write_csv(out / "pe_window.csv", ["t", "window_integral"],
                   zip(ts.tolist(), ws.tolist()))
    return EXIT_OK


def cmd_strictify(args) -> int:
    problem = _load(args)
    out = _outdir(args)
    _ensure_pe(problem)
    try:
        cert = strictify_problem(problem)
    except ValidationFailedError as exc:
        print("strictification failed:")
        print(f"  {exc}")
        _diagnose_omega(problem)
        return EXIT_FAIL
    except (SlopeBoundViolatedError, UnboundedSupError) as exc:
        print(f"strictification failed: {exc}")
        return EXIT_FAIL

    for line in cert.report_lines():
        print(line)
    if problem.xi_closed_form is not None:
        ts = np.linspace(0.0, 4.0 * np.pi, 101)
        dev = float(np.abs(cert.xi_fn(ts) - problem.xi_closed_form(ts)).max())
        print(f"vsharp coefficient: {problem.vsharp_coefficient_text}")
        print(f"xi closed-form max deviation: {dev:.3e}")
        if dev > 1.0e-6:
            print("xi closed-form validation: FAIL")
            return EXIT_FAIL
        print("xi closed-form validation: PASS")
    if out is not None:
        t1 = problem.domain.t_range[1]
        ts = np.linspace(0.0, t1, 513)
        xi_vals = np.asarray(cert.xi_fn(ts), dtype=float)
        # for linear w the last column is the multiplicative V# coefficient
        coeff = 1.0 + xi_vals * float(cert.w(1.0))
        _write_csv(out / "xi.csv",
                   ["t", "xi", "window_integral", "one_plus_xi_w_at_1"],
                   zip(ts.tolist(), xi_vals.tolist(),
                       np.asarray(cert.window_fn(ts), dtype=float).tolist(),
                       coeff.tolist()))
        _write_csv(out / "checks.csv",
                   ["name", "n_samples", "worst_margin", "passed"],
                   [(r.name, r.n_samples, float(r.worst_margin), int(r.passed))
                    for r in cert.validation.reports])
    return EXIT_OK if cert.passed else EXIT_FAIL


def _diagnose_omega(problem: Problem) -> None:
    """After a dissipation failure, test whether any envelope could work."""
    if problem.mu is None or problem.chi is None:
        return
    try:
        construct_omega(problem.system, problem.candidate, problem.mu,
                        problem.chi, seed=problem.seed)
    except UnboundedSupError as exc:
        print(f"  diagnosis: unbounded-sup - {exc}")
        print("  the uniform local boundedness premise fails; no envelope exists")
    else:
        print("  diagnosis: a dominating envelope exists; the configured gain "
              "pair is too tight")


def cmd_verify(args) -> int:
    problem = _load(args)
    out = _outdir(args)
    name = args.check
    if name not in VERIFY_CHECKS:
        print(f"unknown check {name!r}; available: {', '.join(VERIFY_CHECKS)}",
              file=sys.stderr)
        return EXIT_CONFIG
    reports = _run_named_check(problem, name)
    for rep in reports:
        print(f"{rep.name}: margin={rep.worst_margin:.6e} n={rep.n_samples} "
              f"{'PASS' if rep.passed else 'FAIL'}")
        t, x, u = rep.worst_point
        print(f"  worst point: t={t:.17g} x={np.asarray(x).tolist()} "
              f"u={np.asarray(u).tolist()}")
        if rep.notes:
            print(f"  notes: {rep.notes}")
    if out is not None:
        _write_csv(out / "verify.csv",
                   ["name", "n_samples", "worst_margin", "passed", "t", "x", "u"],
                   [(r.name, r.n_samples, float(r.worst_margin), int(r.passed),
                     float(r.worst_point[0]),
                     " ".join(f"{v:.17g}" for v in np.atleast_1d(r.worst_point[1])),
                     " ".join(f"{v:.17g}" for v in np.atleast_1d(r.worst_point[2])))
                    for r in reports])
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def _run_named_check(problem: Problem, name: str):
    c, s, d = problem.candidate, problem.system, problem.domain
    n, seed = problem.samples, problem.seed
    if name == "uppd":
        return [verify_mod.check_uppd(c, d, n, seed)]
    if name == "issp":
        _need(problem, "mu", "chi")
        return [verify_mod.check_issp_lyap(c, s, problem.rate, problem.mu,
                                           problem.chi, d, n, seed)]
    if name == "disp-state":
        _need(problem, "mu", "omega")
        return [verify_mod.check_disp_lyap(c, s, problem.rate, problem.mu,
                                           problem.omega, "state", d, n, seed)]
    if name == "disp-value":
        _need(problem, "mu_tilde", "omega")
        return [verify_mod.check_disp_lyap(c, s, problem.rate, problem.mu_tilde,
                                           problem.omega, "value", d, n, seed)]
    if name == "strict-iss":
        _need(problem, "mu", "chi")
        return [verify_mod.check_strict_iss_lyap(c, s, problem.mu, problem.chi,
                                                 d, n, seed)]
    # iss-estimate: fit an envelope on generated runs, check on the holdout
    return [_iss_estimate_report(problem)]


def _need(problem: Problem, *names) -> None:
    missing = [g for g in names if getattr(problem, g) is None]
    if missing:
        raise ConfigError(f"check needs gains: {', '.join(missing)}")


def _iss_estimate_report(problem: Problem):
    sim = problem.sim
    m = problem.system.m
    rng = np.random.default_rng(problem.seed)
    fit_batch, hold_batch = [], []
    for k, scale in enumerate((1.0, 0.6, 0.3)):
        x0 = rng.normal(size=problem.system.n)
        x0 *= scale * 0.5 * problem.domain.x_radius / max(np.linalg.norm(x0), 1e-12)
        tr = integrate(problem.system, x0, sim.t0, sim.t0 + min(20.0, sim.tf),
                       Signal.zero(m), sim.step)
        (fit_batch if k < 2 else hold_batch).append(tr)
    for k, amp in enumerate((0.2, 0.5, 1.0)):
        x0 = rng.normal(size=problem.system.n)
        x0 *= 0.3 * problem.domain.x_radius / max(np.linalg.norm(x0), 1e-12)
        u = Signal.constant([amp] + [0.0] * (m - 1)) if m else Signal.zero(0)
        tr = integrate(problem.system, x0, sim.t0, sim.t0 + min(20.0, sim.tf),
                       u, sim.step)
        (fit_batch if k < 2 else hold_batch).append(tr)
    beta, gamma = verify_mod.fit_iss_envelope(fit_batch, problem.rate,
                                              holdout=hold_batch)
    rep = verify_mod.check_iss_estimate(hold_batch, problem.rate, beta, gamma)
    print(f"fitted beta: {beta.label}")
    print(f"fitted gamma: {gamma.label}")
    return rep


def cmd_simulate(args) -> int:
    return _simulate_problem(_load(args), _outdir(args))


def _simulate_problem(problem: Problem, out) -> int:
    cert = None
    try:
        _ensure_pe(problem)
        cert = strictify_problem(problem)
    except (ValidationFailedError, SlopeBoundViolatedError, UnboundedSupError,
            NotPersistentlyExcitingError, ConfigError):
        cert = None  # simulate still runs; only V is reported
    sim = problem.sim
    code = EXIT_OK
    for k, run in enumerate(sim.runs, start=1):
        try:
            traj = integrate(problem.system, run.x0, sim.t0, sim.tf, run.signal,
                             sim.step)
        except BlowUpError as exc:
            print(f"run {k}: blow-up at t = {exc.time:.6g} (|x| = {exc.norm:.3e})")
            code = EXIT_FAIL
            continue
        v = np.asarray(problem.candidate.V(traj.times, traj.states), dtype=float)
        extra = {"V": v}
        if cert is not None:
            extra["Vsharp"] = np.asarray(cert.v_sharp(traj.times, traj.states),
                                         dtype=float)
        print(f"run {k}: x0={run.x0.tolist()} final |x| = "
              f"{float(np.linalg.norm(traj.states[-1])):.6e} "
              f"V(tf) = {float(v[-1]):.6e}")
        if out is not None:
            write_trajectory_csv(out / f"sim_{k}.csv", traj, extra)
    return code


def cmd_example(args) -> int:
    problem = get_fixture(args.name)
    if args.seed is not None:
        problem.seed = args.seed
    if args.samples is not None:
        problem.samples = args.samples
    out = args.out
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    print(f"fixture: {problem.name}")
    if args.name == "rigid-body":
        ref = args.reference or "sin(t); 0; 0"
        parts = [p.strip() for p in ref.split(";")]
        if len(parts) != 3:
            print("reference must be three ';'-separated expressions", file=sys.stderr)
            return EXIT_CONFIG
        res = check_reference_admissibility(parts[0], parts[1])
        print(f"reference: ({parts[0]}, {parts[1]}, {parts[2]})")
        if not res.admissible:
            print(f"admissibility-failed: {res.reason}")
            return EXIT_FAIL
        print(f"admissible: tau = {res.tau:.17g}, epsilon = {res.epsilon:.17g}")
        if args.reference is not None and args.reference.replace(" ", "") != "sin(t);0;0":
            print("constructions below use the default reference; rerun without "
                  "--reference for the built-in closed loop")
            return EXIT_OK
    elif args.reference is not None:
        print("--reference only applies to rigid-body", file=sys.stderr)
        return EXIT_CONFIG

    if args.name == "counterexample-elw":
        return _example_counterexample(problem)

    ns = argparse.Namespace(config=None, example=None, out=out,
                            seed=args.seed, samples=args.samples)
    ns.example = args.name
    code = cmd_pe(ns)
    if code != EXIT_OK:
        return code
    code = cmd_strictify(ns)
    if code != EXIT_OK:
        return code
    problem2 = get_fixture(args.name)
    if args.seed is not None:
        problem2.seed = args.seed
    if args.samples is not None:
        problem2.samples = args.samples
    problem2.sim.tf = min(problem2.sim.tf, 10.0)
    return _simulate_problem(problem2, out)


def _example_counterexample(problem: Problem) -> int:
    """Expected story: the strict implication check passes, the dissipation
    margin diverges with the horizon, and no envelope can exist."""
    rep = verify_mod.check_strict_iss_lyap(problem.candidate, problem.system,
                                           problem.mu, problem.chi,
                                           problem.domain, problem.samples,
                                           problem.seed)
    print(f"strict-iss check: margin={rep.worst_margin:.6e} "
          f"{'PASS' if rep.passed else 'FAIL'}")
    ok = rep.passed
    margins = {}
    for t_max in (10.0, 100.0):
        dom = dataclasses.replace(problem.domain, t_range=(0.0, t_max))
        dis = verify_mod.check_disp_lyap(problem.candidate, problem.system,
                                         problem.rate, problem.mu, problem.omega,
                                         "state", dom, problem.samples, problem.seed)
        margins[t_max] = dis.worst_margin
        print(f"dissipation margin on t in [0, {t_max:g}]: {dis.worst_margin:.6e}")
    diverges = margins[100.0] <= margins[10.0] - 100.0
    print(f"margin divergence (>= 100 lower on the long horizon): "
          f"{'yes' if diverges else 'no'}")
    ok = ok and diverges
    try:
        construct_omega(problem.system, problem.candidate, problem.mu,
                        problem.chi, seed=problem.seed)
        print("envelope construction unexpectedly succeeded")
        ok = False
    except UnboundedSupError as exc:
        print(f"unbounded-sup (expected): {exc}")
    print(f"counterexample behaves as documented: {'yes' if ok else 'no'}")
    return EXIT_OK if ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
