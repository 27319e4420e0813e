"""Integrators for delayed evolution problems.

Two constructions produce the trajectory on [0, T]:

* method of steps: consecutive windows no longer than the delay lower bound
  tau_0, so the delayed term only reads territory that is already solved;
* windowed Picard iteration: windows short enough that the delayed-feedback
  map contracts, iterating U -> Gamma U with the delayed state read from the
  previous iterate (works for vanishing delays).

Both step on one shared grid (uniform dt plus gain breakpoints) with the
classical fourth-order scheme for U' = AU + G(U) + F(t), so when both apply
their discrete solutions coincide.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from core_types import DelayProblem, GeneratorOperator, HistorySegment, Nonlinearity, Trajectory, interp_linear
from errors import (ConvergenceError, DomainError, InvariantViolation, NumericError,
                    PreconditionError, WindowError)
from semigroup import SemigroupCertificate, estimate_certificate, propagator

logger = logging.getLogger(__name__)

# forcing(times, side) -> rows of states; side selects one-sided gain limits
Forcing = Callable[[np.ndarray, str], np.ndarray]

MIN_WINDOW_STEPS = 4


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    scheme: str = "rk4-forced"
    picard_tolerance: float = 1e-12
    picard_max_iterations: int = 200
    window_safety: float = 0.5

    def __post_init__(self):
        if isinstance(self.picard_max_iterations, bool) or not isinstance(self.picard_max_iterations, int):
            raise DomainError("picard_max_iterations must be an integer")
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if self.scheme != "rk4-forced":
            raise DomainError(f"unknown scheme {self.scheme!r}")
        if not self.picard_tolerance > 0:
            raise DomainError("picard_tolerance must be positive")
        if self.picard_max_iterations < 1:
            raise DomainError("picard_max_iterations must be at least 1")
        if not 0 < self.window_safety < 1:
            raise DomainError("window_safety must lie in (0, 1)")

    @classmethod
    def from_mapping(cls, mapping: Dict) -> "SolverConfig":
        names = cls.__dataclass_fields__.keys()
        return cls(**{k: v for k, v in mapping.items() if k in names})


@dataclass
class WindowRecord:
    start: float
    end: float
    iterations: int = 1
    errors: List[float] = field(default_factory=list)
    empirical_factor: Optional[float] = None
    theoretical_factor: Optional[float] = None


@dataclass
class PicardDiagnostics:
    """Per-window record of a solve; ``method`` tells which construction ran"""

    method: str = "picard"
    windows: List[WindowRecord] = field(default_factory=list)
    joint_kinks: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def total_iterations(self) -> int:
        return sum(w.iterations for w in self.windows)

    def to_dict(self) -> Dict:
        return {
            "method": self.method,
            "windows": [asdict(w) for w in self.windows],
            "joint_kinks": [{"t": t, "jump": j} for t, j in self.joint_kinks],
        }

    def to_frame(self) -> pd.DataFrame:
        rows = [{k: v for k, v in asdict(w).items() if k != "errors"} for w in self.windows]
        return pd.DataFrame(rows)


def contraction_estimate(errors: List[float]) -> float:
    """Geometric mean of successive error ratios after the second iterate"""
    ratios = [errors[j + 1] / errors[j] for j in range(1, len(errors) - 1) if errors[j] > 0]
    if not ratios and len(errors) >= 2 and errors[0] > 0:
        ratios = [errors[1] / errors[0]]
    if not ratios:
        return 0.0
    if min(ratios) == 0.0:
        return 0.0
    return float(np.exp(np.mean(np.log(ratios))))


# Grids
def step_grid(t0: float, t1: float, dt: float, breakpoints=()) -> np.ndarray:
    """Uniform nodes t0 + i*dt, closed at t1, with breakpoints inserted"""
    if not t1 > t0:
        raise DomainError("integration interval must have t1 > t0")
    count = max(1, math.ceil((t1 - t0) / dt - 1e-9))
    nodes = t0 + dt * np.arange(count)
    nodes = np.concatenate((nodes, [t1], np.asarray(breakpoints, dtype=float)))
    nodes = np.unique(nodes[(nodes >= t0) & (nodes <= t1)])
    keep = np.concatenate(([True], np.diff(nodes) > 1e-9 * dt))
    nodes = nodes[keep]
    nodes[-1] = t1
    return nodes


def solution_grid(p: DelayProblem, T: float, cfg: SolverConfig) -> np.ndarray:
    return step_grid(0.0, T, cfg.dt, p.gain.breakpoints_between(0.0, T))


# Forced stepping
def integrate_forced(g: GeneratorOperator, forcing: Forcing, t0: float, t1: float, u0,
                     cfg: SolverConfig, nonlinearity: Optional[Nonlinearity] = None,
                     grid: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Classical RK4 for U' = AU + G(U) + F(t) on [t0, t1]; returns (times, states)"""
    times = step_grid(t0, t1, cfg.dt) if grid is None else np.asarray(grid, dtype=float)
    h = np.diff(times)
    f_start = np.asarray(forcing(times[:-1], "right"), dtype=float)
    f_mid = np.asarray(forcing(times[:-1] + 0.5 * h, "right"), dtype=float)
    f_end = np.asarray(forcing(times[1:], "left"), dtype=float)
    for values in (f_start, f_mid, f_end):
        if not np.all(np.isfinite(values)):
            raise NumericError(f"forcing is not finite on [{t0}, {t1}]")
    states = _rk4(g.matrix, np.asarray(u0, dtype=float), h, f_start, f_mid, f_end, nonlinearity)
    if not np.all(np.isfinite(states)):
        bad = int(np.argmax(~np.all(np.isfinite(states), axis=1)))
        raise NumericError(f"state became non-finite at t={times[bad]:.6g}")
    return times, states


def _rk4(A, u0, h, f_start, f_mid, f_end, nonlinearity) -> np.ndarray:
    out = np.empty((len(h) + 1, len(u0)))
    out[0] = u0
    y = out[0]
    G = nonlinearity
    for i, hi in enumerate(h):
        k1 = A @ y + f_start[i]
        if G is not None:
            k1 = k1 + G(y)
        y2 = y + (0.5 * hi) * k1
        k2 = A @ y2 + f_mid[i]
        if G is not None:
            k2 = k2 + G(y2)
        y3 = y + (0.5 * hi) * k2
        k3 = A @ y3 + f_mid[i]
        if G is not None:
            k3 = k3 + G(y3)
        y4 = y + hi * k3
        k4 = A @ y4 + f_end[i]
        if G is not None:
            k4 = k4 + G(y4)
        y = y + (hi / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i + 1] = y
    return out


class _PastStates:
    """History plus the solved prefix grid[:filled+1]; never looks beyond it"""

    def __init__(self, history: HistorySegment, grid: np.ndarray, states: np.ndarray):
        self.history = history
        self.grid = grid
        self.states = states
        self.filled = 0

    def __call__(self, s: np.ndarray) -> np.ndarray:
        out = np.empty(s.shape + (self.states.shape[1],))
        past = s <= 0.0
        if np.any(past):
            out[past] = self.history(s[past])
        if np.any(~past):
            reach = self.grid[self.filled]
            later = s[~past]
            if np.max(later) > reach + 1e-12 * (1.0 + abs(reach)):
                raise InvariantViolation(
                    f"delayed argument {np.max(later):.12g} reaches unsolved territory beyond {reach:.12g}")
            later = np.minimum(later, reach)
            if self.filled == 0:
                out[~past] = self.states[0]
            else:
                n = self.filled + 1
                out[~past] = interp_linear(self.grid[:n], self.states[:n], later)
        return out


def _delay_forcing(p: DelayProblem, past: _PastStates) -> Forcing:
    B = p.feedback.matrix

    def forcing(t: np.ndarray, side: str) -> np.ndarray:
        k = p.gain(t, side=side)
        if not np.any(k):
            return np.zeros((len(t), p.dimension))
        delayed = past(t - p.delay(t))
        return k[:, None] * (delayed @ B.T)

    return forcing


def _joint_kinks(grid, states, joints, generator) -> List[Tuple[float, float]]:
    kinks = []
    for j in joints:
        if 0 < j < len(grid) - 1:
            back = (states[j] - states[j - 1]) / (grid[j] - grid[j - 1])
            ahead = (states[j + 1] - states[j]) / (grid[j + 1] - grid[j])
            kinks.append((float(grid[j]), generator.norm(ahead - back)))
    return kinks


# Method of steps
def solve_method_of_steps(p: DelayProblem, T: float, cfg: SolverConfig) -> Trajectory:
    return _method_of_steps(p, T, cfg)[0]


def _method_of_steps(p: DelayProblem, T: float, cfg: SolverConfig):
    tau0 = p.delay.lower_bound
    if not tau0 > 0:
        raise PreconditionError("method of steps needs a declared delay lower bound tau_0 > 0")
    if not T > 0:
        raise PreconditionError("horizon T must be positive")
    if tau0 < MIN_WINDOW_STEPS * cfg.dt:
        raise PreconditionError(f"dt={cfg.dt} leaves fewer than {MIN_WINDOW_STEPS} steps per window")

    grid = solution_grid(p, T, cfg)
    states = np.empty((len(grid), p.dimension))
    states[0] = p.initial_state
    past = _PastStates(p.history, grid, states)
    forcing = _delay_forcing(p, past)
    diagnostics = PicardDiagnostics(method="steps")

    i0, last = 0, len(grid) - 1
    while i0 < last:
        a = grid[i0]
        i1 = max(i0 + 1, int(np.searchsorted(grid, a + tau0, side="right")) - 1)
        _, window_states = integrate_forced(p.generator, forcing, a, grid[i1], states[i0], cfg,
                                            p.nonlinearity, grid=grid[i0:i1 + 1])
        states[i0 + 1:i1 + 1] = window_states[1:]
        past.filled = i1
        diagnostics.windows.append(WindowRecord(float(a), float(grid[i1])))
        logger.debug("steps window [%.6g, %.6g] done", a, grid[i1])
        i0 = i1

    joints = [int(np.searchsorted(grid, w.start)) for w in diagnostics.windows[1:]]
    diagnostics.joint_kinks = _joint_kinks(grid, states, joints, p.generator)
    logger.info("method of steps: %d windows on [0, %.6g]", len(diagnostics.windows), T)
    return Trajectory(p, grid, states, label="steps"), diagnostics


# Picard
def solve_picard(p: DelayProblem, T: float, cfg: SolverConfig,
                 certificate: Optional[SemigroupCertificate] = None) -> Tuple[Trajectory, PicardDiagnostics]:
    """Windowed fixed-point construction with contraction budget window_safety"""
    if not T > 0:
        raise PreconditionError("horizon T must be positive")
    cert = certificate or p.certificate or estimate_certificate(p.generator)
    M, b_norm, L = cert.M, p.feedback.operator_norm, p.lipschitz

    grid = solution_grid(p, T, cfg)
    phi = p.gain.cumulative_abs(grid)
    states = np.empty((len(grid), p.dimension))
    states[0] = p.initial_state
    past = _PastStates(p.history, grid, states)
    forcing = _delay_forcing(p, past)
    diagnostics = PicardDiagnostics(method="picard")
    theta = cfg.window_safety

    i0, last = 0, len(grid) - 1
    while i0 < last:
        a = grid[i0]
        budget = M * (b_norm * (phi[i0:] - phi[i0]) + L * (grid[i0:] - a))
        i1 = i0 + int(np.searchsorted(budget, theta, side="right")) - 1
        too_short = grid[i1] - a < MIN_WINDOW_STEPS * cfg.dt * (1 - 1e-9) and i1 < last
        if i1 <= i0 or too_short:
            raise WindowError(
                f"window starting at t={a:.6g} cannot meet the contraction budget {theta} "
                f"within {MIN_WINDOW_STEPS} steps", (float(a), float(grid[min(i0 + MIN_WINDOW_STEPS, last)])))
        factor = float(budget[i1 - i0])
        record = WindowRecord(float(a), float(grid[i1]), 0, [], None, factor)
        diagnostics.windows.append(record)

        # first iterate: constant extension of the left endpoint state
        states[i0 + 1:i1 + 1] = states[i0]
        past.filled = i1
        window_grid = grid[i0:i1 + 1]
        for iteration in range(1, cfg.picard_max_iterations + 1):
            _, update = integrate_forced(p.generator, forcing, a, grid[i1], states[i0], cfg,
                                         p.nonlinearity, grid=window_grid)
            change = float(np.max(p.generator.norms(update[1:] - states[i0 + 1:i1 + 1])))
            states[i0 + 1:i1 + 1] = update[1:]
            record.errors.append(change)
            record.iterations = iteration
            scale = max(1.0, float(np.max(p.generator.norms(update))))
            if factor == 0.0 or change < cfg.picard_tolerance * scale:
                break
        else:
            record.empirical_factor = contraction_estimate(record.errors)
            raise ConvergenceError(
                f"Picard iteration on [{a:.6g}, {grid[i1]:.6g}] did not converge in "
                f"{cfg.picard_max_iterations} iterations", diagnostics)
        record.empirical_factor = contraction_estimate(record.errors)
        logger.debug("picard window [%.6g, %.6g]: %d iterations, factor %.3g (bound %.3g)",
                     a, grid[i1], record.iterations, record.empirical_factor, factor)
        i0 = i1

    joints = [int(np.searchsorted(grid, w.start)) for w in diagnostics.windows[1:]]
    diagnostics.joint_kinks = _joint_kinks(grid, states, joints, p.generator)
    logger.info("picard: %d windows, %d iterations on [0, %.6g]",
                len(diagnostics.windows), diagnostics.total_iterations, T)
    return Trajectory(p, grid, states, label="picard"), diagnostics


def solve(p: DelayProblem, T: float, cfg: SolverConfig, method: str = "auto",
          certificate: Optional[SemigroupCertificate] = None) -> Tuple[Trajectory, PicardDiagnostics]:
    """Method of steps when tau_0 holds at least MIN_WINDOW_STEPS steps, Picard otherwise (or as requested)"""
    if method == "auto":
        method = "steps" if p.delay.lower_bound >= MIN_WINDOW_STEPS * cfg.dt else "picard"
    if method == "steps":
        return _method_of_steps(p, T, cfg)
    if method == "picard":
        return solve_picard(p, T, cfg, certificate)
    raise DomainError(f"unknown method {method!r}")


# Duhamel residual
def _rounded(delta: float) -> float:
    return float(f"{delta:.13e}")


def duhamel_residual(tr: Trajectory, sample_times) -> float:
    """max_t || U(t) - S(t)U0 - int_0^t S(t-s)[G(U(s)) + k(s)BU(s-tau(s))] ds ||_H

    Composite Simpson on the trajectory nodes (split at gain breakpoints) with
    the convolution accumulated Horner-style: acc <- S(ds) acc + w F(s).
    """
    p = tr.problem
    g = p.generator
    B = p.feedback.matrix
    u0 = p.initial_state
    worst = 0.0
    for t in np.atleast_1d(np.asarray(sample_times, dtype=float)):
        if t < 0 or t > tr.end:
            raise DomainError(f"sample time {t} outside the trajectory")
        if t == 0:
            worst = max(worst, g.norm(tr(0.0) - u0))
            continue
        knots = np.unique(np.concatenate((tr.grid[tr.grid < t], [t], p.gain.breakpoints_between(0.0, t))))
        a, b = knots[:-1], knots[1:]
        h = b - a
        points = np.stack((a, 0.5 * (a + b), b), axis=1).ravel()
        weights = np.stack((h / 6.0, 4.0 * h / 6.0, h / 6.0), axis=1).ravel()
        sides = np.tile(np.array(["right", "right", "left"]), len(h))

        values = np.empty((len(points), p.dimension))
        for side in ("right", "left"):
            mask = sides == side
            s = points[mask]
            k = p.gain(s, side=side)
            F = k[:, None] * (tr(s - p.delay(s)) @ B.T)
            if p.nonlinearity is not None:
                F = F + np.array([p.nonlinearity(x) for x in tr(s)])
            values[mask] = F

        acc = weights[0] * values[0]
        for j in range(1, len(points)):
            step = points[j] - points[j - 1]
            if step > 0:
                acc = propagator(g, _rounded(step)) @ acc
            acc = acc + weights[j] * values[j]
        residual = g.norm(tr(t) - propagator(g, float(t)) @ u0 - acc)
        worst = max(worst, residual)
    return worst
