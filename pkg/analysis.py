"""Decay hypotheses and conclusions as checkable certificates.

Given the semigroup certificate (M, omega), the feedback norm ||B|| and the
gain k, the stability analysis works with

    Phi(t) = int_0^t |k|,    c = M ||B|| e^{omega tau_bar}

and an envelope (gamma, omega') with c Phi(t) <= gamma + omega' t. The decay
estimate is then

    ||U(t)|| <= M e^gamma (||U0|| + e^{omega tau_bar} K ||B|| max_s e^{omega s}||f(s)||)
               * e^{-(omega - omega' - M L) t}

where K bounds the |k|-mass of every window of length tau_bar. Failed checks
are reported in result objects; only unmet hypotheses raise.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from core_types import GainFunction, GeneratorOperator, HistorySegment, Trajectory
from errors import DomainError, HypothesisViolation
from models import EnergyReport, window_quadrature
from semigroup import SemigroupCertificate

logger = logging.getLogger(__name__)

SLACK = 1e-9
WINDOW_SUBDIVISIONS = 64
HISTORY_REFINEMENT = 8


def _window_ends(k: GainFunction, tau_bar: float, horizon: float, subdivisions: int) -> np.ndarray:
    step = tau_bar / subdivisions
    ends = step * np.arange(int(math.floor(horizon / step)) + 1)
    bps = k.breakpoints
    aligned = np.concatenate((bps, bps + tau_bar))
    ends = np.concatenate((ends, [horizon], aligned[(aligned >= 0) & (aligned <= horizon)]))
    return np.unique(ends)


def window_bound(k: GainFunction, tau_bar: float, horizon: float,
                 subdivisions: int = WINDOW_SUBDIVISIONS) -> float:
    """K = max over sliding windows of int_{t - tau_bar}^t |k|, exact between breakpoints"""
    if horizon < tau_bar:
        raise DomainError(f"horizon {horizon} shorter than tau_bar {tau_bar}")
    ends = _window_ends(k, tau_bar, horizon, subdivisions)
    points, where = np.unique(np.concatenate((ends - tau_bar, ends)), return_inverse=True)
    phi = k.cumulative_abs(points)
    masses = phi[where[len(ends):]] - phi[where[:len(ends)]]
    K = float(max(np.max(masses), 0.0))
    logger.debug("window bound K=%.6g over %d windows", K, len(ends))
    return K


# Envelopes
@dataclass
class StabilityEnvelope:
    gamma: float
    omega_prime: float
    horizon: float
    K: float
    coefficient: float
    provenance: str = "fitted"
    extends: bool = False

    def majorant(self, t) -> np.ndarray:
        return self.gamma + self.omega_prime * np.asarray(t, dtype=float)

    def check(self, k: GainFunction, refinement: int = HISTORY_REFINEMENT,
              subdivisions: int = WINDOW_SUBDIVISIONS, tau_bar: Optional[float] = None) -> bool:
        """c Phi(t) <= gamma + omega' t on a refined grid over [0, horizon]"""
        step = (tau_bar or self.horizon) / (subdivisions * refinement)
        times = np.unique(np.concatenate((step * np.arange(int(self.horizon / step) + 1), [self.horizon],
                                          k.breakpoints_between(0.0, self.horizon))))
        lhs = self.coefficient * k.cumulative_abs(times)
        rhs = self.majorant(times)
        return bool(np.all(lhs <= rhs + SLACK * (1.0 + np.abs(rhs))))

    def to_dict(self) -> Dict:
        return {
            "gamma": self.gamma,
            "omega_prime": self.omega_prime,
            "horizon": self.horizon,
            "K": self.K,
            "coefficient": self.coefficient,
            "provenance": self.provenance,
            "extends": self.extends,
        }


@dataclass
class EnvelopeFit:
    envelopes: List[StabilityEnvelope]
    best: Optional[StabilityEnvelope]
    omega: float
    lipschitz_term: float = 0.0
    target: float = 0.0

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([e.to_dict() for e in self.envelopes])
        frame["rate"] = self.omega - frame["omega_prime"] - self.lipschitz_term
        return frame

    @property
    def extending(self) -> List[StabilityEnvelope]:
        return [e for e in self.envelopes if e.extends]

    @property
    def best_extending(self) -> Optional[StabilityEnvelope]:
        return _select(self.extending, self.omega, self.lipschitz_term, self.target)

    def choose(self, extending_only: bool, lipschitz_term: Optional[float] = None) -> Optional[StabilityEnvelope]:
        candidates = self.extending if extending_only else self.envelopes
        term = self.lipschitz_term if lipschitz_term is None else lipschitz_term
        return _select(candidates, self.omega, term, self.target)


def _select(envelopes, omega: float, lipschitz_term: float, target: float) -> Optional[StabilityEnvelope]:
    """Envelope minimising the log of the bound value at ``target``"""
    admissible = [e for e in envelopes if omega - e.omega_prime - lipschitz_term > 0]
    return min(admissible, key=lambda e: e.gamma - (omega - e.omega_prime - lipschitz_term) * target,
               default=None)


def extends_horizon(k: GainFunction, coefficient: float, omega_prime: float, horizon: float) -> bool:
    structure = k.structure
    if structure == "constant":
        return omega_prime >= coefficient * abs(k.value)
    if structure == "compact":
        return k.support_end <= horizon
    if structure == "periodic":
        period = k.period
        return horizon >= period and omega_prime * period >= coefficient * k.abs_integral(0.0, period)
    return False


def default_omega_primes(omega: float, count: int = 100) -> np.ndarray:
    return np.linspace(0.0, omega, count, endpoint=False)


def fit_envelope(k: GainFunction, cert: SemigroupCertificate, b_norm: float, tau_bar: float,
                 horizon: float, omega_primes=None, t_target: Optional[float] = None,
                 lipschitz: float = 0.0, subdivisions: int = WINDOW_SUBDIVISIONS) -> EnvelopeFit:
    """gamma(omega') = max_t (c Phi(t) - omega' t)^+ for each omega' on the grid"""
    M, omega = cert.M, cert.omega
    if omega_primes is None:
        omega_primes = default_omega_primes(omega)
    omega_primes = np.atleast_1d(np.asarray(omega_primes, dtype=float))
    if omega_primes.size == 0:
        raise DomainError("omega' grid is empty")
    if np.any(omega_primes < 0) or np.any(omega_primes >= omega):
        raise DomainError(f"omega' grid must lie in [0, {omega})")

    coefficient = M * b_norm * math.exp(omega * tau_bar)
    step = tau_bar / subdivisions
    times = np.unique(np.concatenate((step * np.arange(int(horizon / step) + 1), [horizon],
                                      k.breakpoints_between(0.0, horizon))))
    phi = coefficient * k.cumulative_abs(times)
    exact_at_nodes = k.kind in ("constant", "piecewise-constant")
    K = window_bound(k, tau_bar, max(horizon, tau_bar), subdivisions)

    envelopes = []
    for wp in np.sort(omega_primes):
        gamma = float(np.max(phi - wp * times))
        if not exact_at_nodes:
            # Phi is nondecreasing, so each panel is covered by its right end
            gamma = max(gamma, float(np.max(phi[1:] - wp * times[:-1])))
        envelopes.append(StabilityEnvelope(max(gamma, 0.0), float(wp), float(horizon), K, coefficient,
                                           extends=extends_horizon(k, coefficient, wp, horizon)))

    target = horizon if t_target is None else float(t_target)
    lipschitz_term = M * lipschitz
    best = _select(envelopes, omega, lipschitz_term, target)
    if best is not None:
        logger.info("best envelope gamma=%.6g omega'=%.6g (c=%.6g, K=%.6g)",
                    best.gamma, best.omega_prime, coefficient, K)
    return EnvelopeFit(envelopes, best, omega, lipschitz_term, target)


# Decay bounds
def history_max(history: HistorySegment, omega: float, generator: Optional[GeneratorOperator] = None,
                refinement: int = HISTORY_REFINEMENT) -> float:
    """max_s e^{omega s} ||f(s)|| over the history grid refined by ``refinement``"""
    grid = history.grid
    fine = np.unique(np.concatenate([np.linspace(a, b, refinement + 1) for a, b in zip(grid[:-1], grid[1:])]))
    values = history(fine)
    norms = generator.norms(values) if generator is not None else np.linalg.norm(values, axis=1)
    return float(np.max(np.exp(omega * fine) * norms))


@dataclass
class DecayBound:
    m_tilde: float
    rate: float
    prefactor: float
    history_max: float
    times: np.ndarray
    values: np.ndarray
    envelope: Optional[StabilityEnvelope] = None

    def at(self, t) -> np.ndarray:
        return self.m_tilde * self.prefactor * np.exp(-self.rate * np.asarray(t, dtype=float))


def decay_bound_curve(env: StabilityEnvelope, cert: SemigroupCertificate, b_norm: float,
                      history: HistorySegment, times, lipschitz: Optional[float] = None,
                      generator: Optional[GeneratorOperator] = None,
                      refinement: int = HISTORY_REFINEMENT) -> DecayBound:
    M, omega = cert.M, cert.omega
    L = 0.0 if lipschitz is None else float(lipschitz)
    if not env.omega_prime < omega:
        raise HypothesisViolation(f"envelope rate omega'={env.omega_prime} is not below omega={omega}",
                                  "envelope")
    if L > 0 and L >= (omega - env.omega_prime) / M:
        raise HypothesisViolation(
            f"Lipschitz constant {L} is not below (omega - omega')/M = {(omega - env.omega_prime) / M:.6g}",
            "lipschitz")
    tau_bar = history.tau_bar
    u0 = history.initial_state
    u0_norm = generator.norm(u0) if generator is not None else float(np.linalg.norm(u0))
    h_max = history_max(history, omega, generator, refinement)
    m_tilde = M * (u0_norm + math.exp(omega * tau_bar) * env.K * b_norm * h_max)
    rate = omega - env.omega_prime - M * L
    times = np.asarray(times, dtype=float)
    bound = DecayBound(m_tilde, rate, math.exp(env.gamma), h_max, times, np.zeros(0), env)
    bound.values = bound.at(times)
    return bound


@dataclass
class DecayReport:
    times: np.ndarray
    values: np.ndarray
    bounds: np.ndarray
    worst_margin: float
    passed: bool
    empirical_rate: Optional[float]
    theoretical_rate: float
    quantity: str = "norm"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "t": self.times,
            self.quantity: self.values,
            "bound": self.bounds,
            "margin": self.bounds - self.values,
        })

    def to_dict(self) -> Dict:
        return {
            "quantity": self.quantity,
            "bound_pass": self.passed,
            "worst_margin": self.worst_margin,
            "empirical_rate": self.empirical_rate,
            "theoretical_rate": self.theoretical_rate,
        }


def empirical_rate(times: np.ndarray, values: np.ndarray) -> Optional[float]:
    """-slope of a least-squares fit of log(values) over the last half of the horizon"""
    late = (times >= 0.5 * times[-1]) & (values > 1e-300)
    if np.count_nonzero(late) < 2:
        return None
    slope = np.polyfit(times[late], np.log(values[late]), 1)[0]
    return float(-slope)


def _compare(times, values, bounds, theoretical_rate, quantity, slack) -> DecayReport:
    margins = bounds - values
    passed = bool(np.all(margins >= -slack * (1.0 + bounds)))
    report = DecayReport(np.asarray(times, dtype=float), values, bounds, float(np.min(margins)), passed,
                         empirical_rate(np.asarray(times, dtype=float), values), theoretical_rate, quantity)
    logger.info("%s decay check: %s (worst margin %.3g)", quantity, "pass" if passed else "FAIL",
                report.worst_margin)
    return report


def verify_decay(tr: Trajectory, bound: DecayBound, slack: float = SLACK) -> DecayReport:
    return _compare(tr.grid, tr.norms(), bound.at(tr.grid), bound.rate, "norm", slack)


# Gronwall internals
def windowed_max(tr: Trajectory, omega: float, tau_bar: float) -> np.ndarray:
    """u~(t_i) = max of e^{omega s}||U(s)|| over grid nodes s in [t_i - tau_bar, t_i] and s >= 0"""
    weighted = np.exp(omega * tr.grid) * tr.norms()
    out = np.empty_like(weighted)
    window = deque()
    left = 0
    for i, t in enumerate(tr.grid):
        while window and weighted[window[-1]] <= weighted[i]:
            window.pop()
        window.append(i)
        while tr.grid[left] < t - tau_bar:
            left += 1
        while window[0] < left:
            window.popleft()
        out[i] = weighted[window[0]]
    return out


@dataclass
class GronwallReport:
    times: np.ndarray
    weighted: np.ndarray
    windowed: np.ndarray
    bound: np.ndarray
    worst_margin: float
    passed: bool


def verify_gronwall(tr: Trajectory, cert: SemigroupCertificate, b_norm: float, K: float,
                    slack: float = SLACK) -> GronwallReport:
    """u~(t) <= M~ exp(c Phi(t) + M L t), the explicit Gronwall conclusion, at every node"""
    p = tr.problem
    M, omega = cert.M, cert.omega
    tau_bar = p.tau_bar
    g = p.generator
    h_max = history_max(p.history, omega, g)
    m_tilde = M * (g.norm(p.initial_state) + math.exp(omega * tau_bar) * K * b_norm * h_max)
    coefficient = M * b_norm * math.exp(omega * tau_bar)
    exponent = coefficient * p.gain.cumulative_abs(tr.grid) + M * p.lipschitz * tr.grid
    bound = m_tilde * np.exp(exponent)
    weighted = np.exp(omega * tr.grid) * tr.norms()
    windowed = windowed_max(tr, omega, tau_bar)
    margins = bound - windowed
    passed = bool(np.all(margins >= -slack * (1.0 + bound)))
    return GronwallReport(tr.grid, weighted, windowed, bound, float(np.min(margins)), passed)


# A priori bound on a short window
def budget_window(gain: GainFunction, cert: SemigroupCertificate, b_norm: float, grid) -> float:
    """Largest grid time b with M ||B|| int_0^b |k| < 1"""
    grid = np.asarray(grid, dtype=float)
    budget = cert.M * b_norm * gain.cumulative_abs(grid)
    inside = np.flatnonzero(budget < 1.0)
    return float(grid[inside[-1]])


@dataclass
class AprioriReport:
    window_end: float
    budget: float
    bound: float
    max_norm: float
    worst_margin: float
    passed: bool


def verify_apriori(tr: Trajectory, cert: SemigroupCertificate, b_norm: float, window_end: float,
                   slack: float = SLACK) -> AprioriReport:
    """||U(t)|| <= e (M ||U0|| + max ||f||) on [0, window_end] when M ||B|| int |k| < 1 there"""
    p = tr.problem
    if window_end > tr.end or not window_end > 0:
        raise DomainError(f"window end {window_end} outside (0, {tr.end}]")
    if p.lipschitz > 0:
        raise HypothesisViolation("a priori bound is stated for the linear problem", "lipschitz")
    budget = cert.M * b_norm * p.gain.abs_integral(0.0, window_end)
    if budget >= 1.0:
        raise HypothesisViolation(f"M ||B|| int |k| = {budget:.6g} >= 1 on [0, {window_end}]", "apriori")
    g = p.generator
    bound = math.e * (cert.M * g.norm(p.initial_state) + history_max(p.history, 0.0, g))
    norms = tr.norms()[tr.grid <= window_end]
    margin = float(np.min(bound - norms))
    passed = margin >= -slack * (1.0 + bound)
    logger.info("a priori bound on [0, %.6g]: budget %.4g, %s", window_end, budget, "pass" if passed else "FAIL")
    return AprioriReport(float(window_end), float(budget), float(bound), float(np.max(norms)), margin, passed)


# Energy
def energy_constant(bound: DecayBound, K: float, history_max_norm: float, tau_bar: float) -> float:
    """C* with E(t) <= C* e^{-beta t}, beta the norm decay rate.

    Kinetic plus potential energy is half the squared norm; the window term is
    at most K/2 times the largest squared norm in the window, taken from the
    decay bound for s >= 0 and from the history for s < 0.
    """
    c0 = bound.m_tilde * bound.prefactor
    beta = bound.rate
    window = max(c0 ** 2 * math.exp(2 * beta * tau_bar), history_max_norm ** 2 * math.exp(beta * tau_bar))
    return 0.5 * c0 ** 2 + 0.5 * K * window


def verify_energy_decay(report: EnergyReport, bound: DecayBound, K: float, history_max_norm: float,
                        tau_bar: float, slack: float = SLACK) -> DecayReport:
    c_star = energy_constant(bound, K, history_max_norm, tau_bar)
    bounds = c_star * np.exp(-bound.rate * report.times)
    return _compare(report.times, report.total, bounds, bound.rate, "energy", slack)


@dataclass
class InequalityReport:
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    worst_margin: float
    passed: bool


def verify_energy_inequality(report: EnergyReport, tr: Trajectory, slack: float = SLACK) -> InequalityReport:
    """E(t) <= 1/2 ||U(t)||^2 + 1/2 int_{t-tau_bar}^t |k(s)| ||U(s)||^2 ds at every reported time"""
    g = tr.problem.generator
    norms = g.norms(tr(report.times))
    integral = window_quadrature(tr, lambda states: g.norms(states) ** 2, report.times)
    rhs = 0.5 * norms ** 2 + 0.5 * integral
    margins = rhs - report.total
    passed = bool(np.all(margins >= -slack * (1.0 + rhs)))
    return InequalityReport(report.times, report.total, rhs, float(np.min(margins)), passed)
