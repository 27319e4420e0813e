"""Command-line front end.

    python cli.py simulate|verify|compare-oracle|estimate-certificate|fit-envelope \
        CONFIG.json [CONFIG.json ...] [--out DIR] [--jobs N] [-v]

Exit codes: 0 ok, 1 tolerance fail, 2 config error, 3 solver error,
4 hypothesis unmet, 5 bound violated. With several configs the worst code wins.
"""
import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from analysis import (StabilityEnvelope, extends_horizon, decay_bound_curve, fit_envelope, history_max,
                      verify_decay, verify_energy_decay, verify_energy_inequality, window_bound)
from errors import (CertificateError, ConfigError, DelayEquationError, HypothesisViolation, NumericError,
                    SolverError, StabilityError)
from experiment import Experiment
from models import EnergyLayout, compute_energy
from oracle import oracle_solve
from settings import configure_logging
from solver import MIN_WINDOW_STEPS, solve

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_HYPOTHESIS = 4
EXIT_BOUND = 5

ORACLE_MAX_DIMENSION = 64
WINDOW_SAMPLES = 200


# Output helpers
def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialise {type(value).__name__}")


def write_json(data: Dict, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, default=_jsonable)
        fh.write("\n")


def write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, float_format="%.17g")


def _needs_certificate(exp: Experiment, dt: float) -> bool:
    method = exp.method
    return method == "picard" or (method == "auto" and exp.problem.delay.lower_bound < MIN_WINDOW_STEPS * dt)


def _confirmed(certificate):
    if not certificate.check():
        raise CertificateError(f"{certificate.provenance} certificate M={certificate.M:g}, "
                               f"omega={certificate.omega:g} is contradicted by the sampled norms")
    return certificate


# Commands
def cmd_simulate(config: Path, out: Path) -> int:
    exp = Experiment.from_file(config)
    problem, cfg, T = exp.problem, exp.solver_config(), exp.horizon
    certificate, note = None, None
    try:
        certificate = _confirmed(exp.certificate())
    except (StabilityError, CertificateError) as exc:
        if _needs_certificate(exp, cfg.dt):
            raise
        certificate, note = None, str(exc)
    trajectory, diagnostics = solve(problem, T, cfg, exp.method, certificate)

    out.mkdir(parents=True, exist_ok=True)
    write_csv(trajectory.to_frame(), out / "trajectory.csv")
    if isinstance(problem.layout, EnergyLayout):
        write_csv(compute_energy(trajectory).to_frame(), out / "energy.csv")
    write_json({
        "name": exp.name,
        "config": exp.document,
        "resolved": exp.resolved(),
        "certificate": certificate.to_dict() if certificate is not None else None,
        "certificate_note": note,
        "diagnostics": diagnostics.to_dict(),
    }, out / "run.json")
    print(f"✅ {exp.name}: {len(trajectory.grid)} nodes on [0, {T:g}] by {diagnostics.method} "
          f"({len(diagnostics.windows)} windows), output in {out}")
    return EXIT_OK


def _envelope_for(exp: Experiment, certificate, b_norm: float, T: float, K: float):
    """User-supplied envelope, or the best fitted one (extending when the gain declares structure)"""
    problem = exp.problem
    gain, tau_bar = problem.gain, problem.tau_bar
    analysis = exp.analysis
    coefficient = certificate.M * b_norm * np.exp(certificate.omega * tau_bar)
    supplied = analysis.get("envelope")
    if supplied is not None:
        try:
            gamma, omega_prime = float(supplied["gamma"]), float(supplied["omega_prime"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError("envelope needs numeric gamma and omega_prime", "analysis.envelope") from None
        return StabilityEnvelope(gamma, omega_prime, T, K, coefficient, "user-supplied",
                                 extends_horizon(gain, coefficient, omega_prime, T))
    fit = fit_envelope(gain, certificate, b_norm, tau_bar, T, exp.omega_primes(certificate.omega),
                       float(analysis["target_time"]), problem.lipschitz, int(analysis["window_subdivisions"]))
    structured = gain.structure is not None
    best = fit.choose(structured)
    if best is None and problem.lipschitz > 0:
        # an envelope that only fails the nonlinear rate leaves the Lipschitz check to report it
        best = fit.choose(structured, lipschitz_term=0.0)
    return best


def cmd_verify(config: Path, out: Path) -> int:
    exp = Experiment.from_file(config)
    problem, cfg, T = exp.problem, exp.solver_config(), exp.horizon
    analysis = exp.analysis
    slack = float(analysis["slack"])
    tau_bar = problem.tau_bar
    b_norm = problem.feedback.operator_norm
    L = problem.lipschitz
    out.mkdir(parents=True, exist_ok=True)

    certificate = exp.certificate()
    K = window_bound(problem.gain, tau_bar, max(T, tau_bar), int(analysis["window_subdivisions"]))
    samples = np.linspace(0.0, T, WINDOW_SAMPLES + 1)
    hypotheses = {
        "certificate": {"holds": certificate.check(), "provenance": certificate.provenance,
                        "tail_factor": certificate.tail_factor},
        "window_bound": {"K": K, "holds": problem.gain.with_window_bound(K).check_window_bound(tau_bar, samples)},
    }
    envelope = _envelope_for(exp, certificate, b_norm, T, K)
    envelope_ok = envelope is not None and envelope.omega_prime < certificate.omega and envelope.check(
        problem.gain, tau_bar=tau_bar)
    if envelope is not None and problem.gain.structure is not None and not envelope.extends:
        envelope_ok = False
    hypotheses["envelope"] = {"holds": envelope_ok, **(envelope.to_dict() if envelope is not None else {})}
    limit = (certificate.omega - envelope.omega_prime) / certificate.M if envelope is not None else None
    lipschitz_ok = L == 0 or (limit is not None and L < limit)
    if problem.nonlinearity is not None:
        lipschitz_ok = lipschitz_ok and problem.nonlinearity.check_lipschitz(problem.generator)
    hypotheses["lipschitz"] = {"holds": lipschitz_ok, "L": L, "limit": limit}

    result = {"name": exp.name, "certificate": certificate.to_dict(), "hypotheses": hypotheses,
              "bound_pass": None, "worst_margin": None, "empirical_rate": None, "theoretical_rate": None,
              "resolved": exp.resolved()}
    failed = [name for name, entry in hypotheses.items() if not entry["holds"]]
    if failed:
        write_json(result, out / "verify.json")
        print(f"❌ {exp.name}: hypotheses not met: {', '.join(failed)} (bounds not asserted)")
        return EXIT_HYPOTHESIS

    trajectory, _ = solve(problem, T, cfg, exp.method, certificate)
    bound = decay_bound_curve(envelope, certificate, b_norm, problem.history, trajectory.grid, L,
                              problem.generator, int(analysis["history_refinement"]))
    report = verify_decay(trajectory, bound, slack)
    result.update(report.to_dict())
    result["m_tilde"] = bound.m_tilde
    passed = report.passed
    write_csv(trajectory.to_frame(), out / "trajectory.csv")
    write_csv(report.to_frame(), out / "decay.csv")

    if isinstance(problem.layout, EnergyLayout):
        energy = compute_energy(trajectory)
        h_norm = history_max(problem.history, 0.0, problem.generator, int(analysis["history_refinement"]))
        energy_report = verify_energy_decay(energy, bound, K, h_norm, tau_bar, slack)
        inequality = verify_energy_inequality(energy, trajectory, slack)
        result["energy"] = {**energy_report.to_dict(), "identity_pass": inequality.passed,
                            "identity_worst_margin": inequality.worst_margin}
        passed = passed and energy_report.passed and inequality.passed
        write_csv(energy.to_frame(), out / "energy.csv")

    result["bound_pass"] = passed
    write_json(result, out / "verify.json")
    if not passed:
        print(f"❌ {exp.name}: decay bound violated (worst margin {report.worst_margin:.3e})")
        return EXIT_BOUND
    print(f"✅ {exp.name}: decay bound holds, rate {report.theoretical_rate:.4g} "
          f"(observed {report.empirical_rate if report.empirical_rate is not None else float('nan'):.4g})")
    return EXIT_OK


def cmd_compare_oracle(config: Path, out: Optional[Path] = None) -> int:
    exp = Experiment.from_file(config)
    problem = exp.problem
    if problem.dimension > ORACLE_MAX_DIMENSION:
        print(f"❌ {exp.name}: dimension {problem.dimension} exceeds the oracle limit {ORACLE_MAX_DIMENSION}")
        return EXIT_CONFIG
    cfg, T = exp.solver_config(), exp.horizon
    analysis = exp.analysis
    certificate = _confirmed(exp.certificate()) if _needs_certificate(exp, cfg.dt) else None
    trajectory, _ = solve(problem, T, cfg, exp.method, certificate)
    reference = oracle_solve(problem, T, cfg.dt / float(analysis["oracle_refinement"]))

    g = problem.generator
    errors = g.norms(trajectory.states - reference(trajectory.grid))
    scale = max(float(np.max(reference.norms())), np.finfo(float).tiny)
    deviation = float(np.max(errors)) / scale
    tolerance = float(analysis["oracle_tolerance"])
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_json({"name": exp.name, "max_relative_deviation": deviation, "tolerance": tolerance,
                    "resolved": exp.resolved()}, out / "compare.json")
    if deviation <= tolerance:
        print(f"✅ {exp.name}: max relative deviation {deviation:.3e} (tolerance {tolerance:.1e})")
        return EXIT_OK
    print(f"❌ {exp.name}: max relative deviation {deviation:.3e} exceeds tolerance {tolerance:.1e}")
    return EXIT_TOLERANCE


def cmd_estimate_certificate(config: Path, out: Path) -> int:
    exp = Experiment.from_file(config)
    certificate = exp.certificate()
    out.mkdir(parents=True, exist_ok=True)
    holds = certificate.check()
    write_json({**certificate.to_dict(), "evidence_times": certificate.evidence_times,
                "evidence_norms": certificate.evidence_norms, "check": holds},
               out / "certificate.json")
    if not holds:
        print(f"❌ {exp.name}: M = {certificate.M:.6g}, omega = {certificate.omega:.6g} ({certificate.provenance}) "
              f"does not bound the sampled semigroup norms")
        return EXIT_HYPOTHESIS
    print(f"✅ {exp.name}: M = {certificate.M:.6g}, omega = {certificate.omega:.6g} ({certificate.provenance})")
    return EXIT_OK


def cmd_fit_envelope(config: Path, out: Path) -> int:
    exp = Experiment.from_file(config)
    problem, T = exp.problem, exp.horizon
    analysis = exp.analysis
    certificate = exp.certificate()
    b_norm = problem.feedback.operator_norm
    K = window_bound(problem.gain, problem.tau_bar, max(T, problem.tau_bar), int(analysis["window_subdivisions"]))
    fit = fit_envelope(problem.gain, certificate, b_norm, problem.tau_bar, T, exp.omega_primes(certificate.omega),
                       float(analysis["target_time"]), problem.lipschitz, int(analysis["window_subdivisions"]))
    out.mkdir(parents=True, exist_ok=True)
    write_csv(fit.to_frame(), out / "envelopes.csv")
    best = fit.best_extending if problem.gain.structure is not None else fit.best
    write_json({"name": exp.name, "K": K, "certificate": certificate.to_dict(),
                "best": best.to_dict() if best is not None else None,
                "best_fitted": fit.best.to_dict() if fit.best is not None else None},
               out / "envelope.json")
    if best is None:
        print(f"❌ {exp.name}: no admissible envelope with omega' < omega")
        return EXIT_HYPOTHESIS
    print(f"✅ {exp.name}: gamma = {best.gamma:.6g}, omega' = {best.omega_prime:.6g}, K = {K:.6g}")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[Path, Path], int]] = {
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "compare-oracle": cmd_compare_oracle,
    "estimate-certificate": cmd_estimate_certificate,
    "fit-envelope": cmd_fit_envelope,
}


def run_command(name: str, config: Path, out: Path) -> int:
    """Run one command on one config, mapping failures to exit codes"""
    try:
        return COMMANDS[name](Path(config), Path(out))
    except ConfigError as exc:
        print(f"❌ Config error in {config}: {exc}")
        return EXIT_CONFIG
    except HypothesisViolation as exc:
        print(f"❌ Hypothesis not met ({exc.hypothesis}): {exc}")
        return EXIT_HYPOTHESIS
    except (StabilityError, CertificateError) as exc:
        print(f"❌ Semigroup certificate unavailable: {exc}")
        return EXIT_HYPOTHESIS
    except (SolverError, NumericError) as exc:
        print(f"❌ Solver error: {exc}")
        return EXIT_SOLVER
    except DelayEquationError as exc:
        print(f"❌ Error: {exc}")
        return EXIT_SOLVER


def run_names(configs: List[Path]) -> List[str]:
    """Output directory names: the file stem, suffixed with the position when stems repeat"""
    stems = [Path(config).stem for config in configs]
    return [stem if stems.count(stem) == 1 else f"{stem}-{i}" for i, stem in enumerate(stems, start=1)]


def _run_job(job) -> int:
    return run_command(*job)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Solve and verify evolution equations with delayed feedback")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG logging")
    commands = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = commands.add_parser(name)
        sub.add_argument("configs", nargs="+", type=Path, help="experiment JSON document(s)")
        sub.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
        sub.add_argument("--jobs", type=int, default=1, help="configs to run in parallel")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging({0: None, 1: "INFO"}.get(args.verbose, "DEBUG"))
    if len(args.configs) == 1:
        return run_command(args.command, args.configs[0], args.out)

    jobs = [(args.command, config, args.out / name) for config, name in zip(args.configs, run_names(args.configs))]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            codes = list(pool.map(_run_job, jobs))
    else:
        codes = [_run_job(job) for job in jobs]
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
