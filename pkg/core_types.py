"""Problem-description and trajectory types for delayed evolution equations.

    U'(t) = A U(t) + k(t) B U(t - tau(t)) + G(U(t)),   U = f on [-tau_bar, 0]

All types are immutable after construction (arrays are flagged read-only) and
every evaluation is a pure function, so instances can be shared freely.
Norms are always the metric norm sqrt(x^T M_H x) of the generator.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any, Callable, Dict, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import integrate, linalg
from scipy.interpolate import CubicHermiteSpline

from errors import DimensionError, DomainError, MetricError
from expressions import Expression

if TYPE_CHECKING:
    from semigroup import SemigroupCertificate

logger = logging.getLogger(__name__)

INTERPOLATIONS = ("linear", "cubic-hermite")
DELAY_KINDS = ("constant", "grid", "expression")
GAIN_KINDS = ("constant", "piecewise-constant", "piecewise-linear", "expression")

# relative rounding allowance for bound checks on evaluated delays
_BOUND_TOL = 1e-12


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=float)
    out.setflags(write=False)
    return out


def interp_linear(grid: np.ndarray, values: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation of row-stacked states, exact at nodes"""
    t = np.asarray(t, dtype=float)
    idx = np.clip(np.searchsorted(grid, t, side="right") - 1, 0, len(grid) - 2)
    left = grid[idx]
    w = (t - left) / (grid[idx + 1] - left)
    return values[idx] * (1.0 - w)[..., None] + values[idx + 1] * w[..., None]


def interp_hermite(grid, values, derivatives, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    spline = CubicHermiteSpline(grid, values, derivatives, axis=0)
    out = spline(t)
    # snap to stored values at nodes
    idx = np.clip(np.searchsorted(grid, t), 0, len(grid) - 1)
    on_node = grid[idx] == t
    out[on_node] = values[idx[on_node]]
    return out


# Delay
@dataclass(frozen=True, eq=False)
class DelayFunction:
    """Time-dependent delay with 0 <= tau(t) <= tau_bar (and >= tau_0 when declared)"""

    kind: str
    upper_bound: float
    lower_bound: float = 0.0
    value: Optional[float] = None
    times: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    expression: Optional[Expression] = None

    def __post_init__(self):
        if self.kind not in DELAY_KINDS:
            raise DomainError(f"unknown delay kind {self.kind!r}")
        if not self.upper_bound > 0:
            raise DomainError("delay upper bound tau_bar must be positive")
        if not 0 <= self.lower_bound <= self.upper_bound:
            raise DomainError("delay lower bound must lie in [0, tau_bar]")
        if self.kind == "constant" and self.value is None:
            raise DomainError("constant delay needs a value")
        if self.kind == "grid":
            if self.times is None or self.values is None or len(self.times) != len(self.values):
                raise DomainError("grid delay needs matching times and values")
            object.__setattr__(self, "times", _frozen(self.times))
            object.__setattr__(self, "values", _frozen(self.values))
            if np.any(np.diff(self.times) <= 0):
                raise DomainError("delay grid times must be strictly increasing")
        if self.kind == "expression" and self.expression is None:
            raise DomainError("expression delay needs an expression")

    @classmethod
    def constant(cls, value: float, upper_bound: Optional[float] = None,
                 lower_bound: Optional[float] = None) -> "DelayFunction":
        upper = float(value) if upper_bound is None else float(upper_bound)
        lower = float(value) if lower_bound is None else float(lower_bound)
        return cls("constant", upper, lower, value=float(value))

    @classmethod
    def on_grid(cls, times, values, upper_bound: float, lower_bound: float = 0.0) -> "DelayFunction":
        return cls("grid", float(upper_bound), float(lower_bound), times=times, values=values)

    @classmethod
    def from_expression(cls, text: str, upper_bound: float, lower_bound: float = 0.0) -> "DelayFunction":
        return cls("expression", float(upper_bound), float(lower_bound),
                   expression=Expression.parse(text, ("t",)))

    @property
    def tau_bar(self) -> float:
        return self.upper_bound

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        if self.kind == "constant":
            tau = np.full(t_arr.shape, self.value)
        elif self.kind == "grid":
            tau = np.interp(t_arr, self.times, self.values)
        else:
            tau = self.expression(t=t_arr)
        slack = _BOUND_TOL * self.upper_bound
        if not np.all(np.isfinite(tau)):
            raise DomainError("delay evaluated to a non-finite value")
        outside = np.atleast_1d((tau < -slack) | (tau > self.upper_bound + slack))
        if np.any(outside):
            bad = np.atleast_1d(t_arr)[np.argmax(outside)]
            raise DomainError(f"delay leaves [0, {self.upper_bound}] at t={float(bad)}")
        if self.lower_bound > 0 and np.any(tau < self.lower_bound - slack):
            raise DomainError(f"delay drops below the declared lower bound {self.lower_bound}")
        tau = np.clip(tau, 0.0, self.upper_bound)
        return tau if t_arr.ndim else float(tau)


# Gain
@dataclass(frozen=True, eq=False)
class GainFunction:
    """Delay feedback coefficient k(t) on [-tau_bar, oo), piecewise continuous.

    Piecewise-constant gains hold ``values[j]`` on [breakpoints[j-1], breakpoints[j])
    (right-continuous); piecewise-linear gains interpolate ``values`` over the
    ``breakpoints`` nodes and hold the end values outside them.
    """

    kind: str
    value: float = 0.0
    breakpoints: np.ndarray = field(default_factory=lambda: _frozen([]))
    values: Optional[np.ndarray] = None
    expression: Optional[Expression] = None
    period: Optional[float] = None
    window_bound: Optional[float] = None

    def __post_init__(self):
        if self.kind not in GAIN_KINDS:
            raise DomainError(f"unknown gain kind {self.kind!r}")
        bps = _frozen(np.atleast_1d(self.breakpoints))
        if np.any(np.diff(bps) <= 0):
            raise DomainError("gain breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", bps)
        if self.values is not None:
            object.__setattr__(self, "values", _frozen(self.values))
        if self.kind == "piecewise-constant":
            if self.values is None or len(self.values) != len(bps) + 1:
                raise DomainError("piecewise-constant gain needs len(breakpoints)+1 values")
        if self.kind == "piecewise-linear":
            if self.values is None or len(self.values) != len(bps) or len(bps) < 2:
                raise DomainError("piecewise-linear gain needs matching nodes and values (>= 2)")
        if self.kind == "expression" and self.expression is None:
            raise DomainError("expression gain needs an expression")
        if self.period is not None and not self.period > 0:
            raise DomainError("gain period must be positive")
        if self.window_bound is not None and self.window_bound < 0:
            raise DomainError("window bound K must be nonnegative")

    @classmethod
    def constant(cls, value: float) -> "GainFunction":
        return cls("constant", value=float(value))

    @classmethod
    def piecewise_constant(cls, breakpoints, values) -> "GainFunction":
        return cls("piecewise-constant", breakpoints=breakpoints, values=values)

    @classmethod
    def piecewise_linear(cls, nodes, values) -> "GainFunction":
        return cls("piecewise-linear", breakpoints=nodes, values=values)

    @classmethod
    def from_expression(cls, text: str, breakpoints: Sequence[float] = (),
                        period: Optional[float] = None) -> "GainFunction":
        return cls("expression", breakpoints=list(breakpoints),
                   expression=Expression.parse(text, ("t",)), period=period)

    def __call__(self, t, side: str = "right"):
        """Evaluate k; ``side='left'`` returns left limits at jump points"""
        t_arr = np.asarray(t, dtype=float)
        if self.kind == "constant":
            k = np.full(t_arr.shape, self.value)
        elif self.kind == "piecewise-constant":
            k = self.values[np.searchsorted(self.breakpoints, t_arr, side=side)]
        elif self.kind == "piecewise-linear":
            k = np.interp(t_arr, self.breakpoints, self.values)
        else:
            k = self.expression(t=t_arr)
        if not np.all(np.isfinite(k)):
            raise DomainError("gain evaluated to a non-finite value")
        return k if t_arr.ndim else float(k)

    @property
    def structure(self) -> Optional[str]:
        """Declared structure that makes extensions past a finite horizon exact"""
        if self.kind == "constant":
            return "constant"
        if self.kind in ("piecewise-constant", "piecewise-linear") and self.values[-1] == 0.0:
            return "compact"
        if self.period is not None:
            return "periodic"
        return None

    @property
    def support_end(self) -> Optional[float]:
        if self.structure == "compact":
            return float(self.breakpoints[-1])
        return None

    def breakpoints_between(self, a: float, b: float) -> np.ndarray:
        bps = self.breakpoints
        return bps[(bps > a) & (bps < b)]

    def abs_integrals(self, points) -> np.ndarray:
        """Exact integrals of |k| over consecutive intervals [points[i], points[i+1]]"""
        points = np.asarray(points, dtype=float)
        if len(points) < 2:
            return np.zeros(0)
        if self.kind == "expression":
            out = np.empty(len(points) - 1)
            for i, (a, b) in enumerate(zip(points[:-1], points[1:])):
                knots = np.concatenate(([a], self.breakpoints_between(a, b), [b]))
                out[i] = sum(
                    integrate.quad(lambda s: abs(float(self.expression(t=s))), lo, hi,
                                   limit=200, epsabs=1e-14, epsrel=1e-12)[0]
                    for lo, hi in zip(knots[:-1], knots[1:]) if hi > lo
                )
            return out
        return np.diff(self._abs_antiderivative(points))

    def abs_integral(self, a: float, b: float) -> float:
        return float(self.abs_integrals([a, b])[0])

    def cumulative_abs(self, times) -> np.ndarray:
        """Phi(times) - Phi(times[0]) with Phi' = |k|; times must be sorted"""
        return np.concatenate(([0.0], np.cumsum(self.abs_integrals(times))))

    def _abs_antiderivative(self, t: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return abs(self.value) * t
        bps, vals = self.breakpoints, self.values
        if self.kind == "piecewise-constant":
            if len(bps) == 0:
                return abs(vals[0]) * t
            mags = np.abs(vals)
            cum = np.concatenate(([0.0], np.cumsum(mags[1:-1] * np.diff(bps))))
            j = np.searchsorted(bps, t, side="right")
            start = bps[np.clip(j - 1, 0, len(bps) - 1)]
            return np.where(j == 0, mags[0] * (t - bps[0]),
                            cum[np.clip(j - 1, 0, len(cum) - 1)] + mags[j] * (t - start))
        # piecewise linear: exact area of |linear| including sign changes
        cum = np.concatenate(([0.0], np.cumsum(_abs_segment(vals[:-1], vals[1:], np.diff(bps)))))
        j = np.clip(np.searchsorted(bps, t, side="right") - 1, 0, len(bps) - 2)
        inside = (t >= bps[0]) & (t <= bps[-1])
        y_t = np.interp(t, bps, vals)
        partial = cum[j] + _abs_segment(vals[j], y_t, t - bps[j])
        before = abs(vals[0]) * (t - bps[0])
        after = cum[-1] + abs(vals[-1]) * (t - bps[-1])
        return np.where(inside, partial, np.where(t < bps[0], before, after))

    def with_window_bound(self, K: float) -> "GainFunction":
        return replace(self, window_bound=float(K))

    def check_window_bound(self, tau_bar: float, times) -> bool:
        """Direct check of int_{t-tau_bar}^t |k| <= K at the sampled times"""
        if self.window_bound is None:
            return False
        times = np.asarray(times, dtype=float)
        masses = np.array([self.abs_integral(t - tau_bar, t) for t in times])
        return bool(np.all(masses <= self.window_bound * (1 + 1e-12) + 1e-15))


def _abs_segment(y0, y1, h):
    y0, y1, h = np.asarray(y0, float), np.asarray(y1, float), np.asarray(h, float)
    same_sign = y0 * y1 >= 0
    denom = np.where(same_sign, 1.0, np.abs(y0) + np.abs(y1))
    crossing = (y0 * y0 + y1 * y1) / (2.0 * denom) * h
    return np.where(same_sign, 0.5 * (np.abs(y0) + np.abs(y1)) * h, crossing)


# Operators
@dataclass(frozen=True, eq=False)
class GeneratorOperator:
    """Semi-discretised generator A with the Hilbert metric <x, y>_H = x^T M_H y"""

    matrix: np.ndarray
    metric: Optional[np.ndarray] = None
    # t -> e^{tA}, filled by semigroup.propagator
    propagator_cache: Dict[float, np.ndarray] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError("generator matrix must be square")
        n = A.shape[0]
        identity = self.metric is None
        metric = np.eye(n) if identity else np.atleast_2d(np.asarray(self.metric, dtype=float))
        if metric.shape != (n, n):
            raise DimensionError(f"metric shape {metric.shape} does not match dimension {n}")
        scale = max(1.0, float(np.max(np.abs(metric))))
        if not np.allclose(metric, metric.T, rtol=0, atol=1e-12 * scale):
            raise MetricError("metric must be symmetric")
        try:
            chol = linalg.cholesky(metric, lower=True)
        except linalg.LinAlgError:
            raise MetricError("metric is not positive definite") from None
        inv_t = linalg.solve_triangular(chol.T, np.eye(n), lower=False)
        object.__setattr__(self, "matrix", _frozen(A))
        object.__setattr__(self, "metric", _frozen(metric))
        object.__setattr__(self, "_identity", identity or np.array_equal(metric, np.eye(n)))
        object.__setattr__(self, "_to_euclid", _frozen(chol.T))
        object.__setattr__(self, "_from_euclid", _frozen(inv_t))

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dimension:
            raise DimensionError(f"state of size {x.shape[-1]} given, expected {self.dimension}")
        return x

    def norm(self, x) -> float:
        x = self._check(x)
        if self._identity:
            return float(np.linalg.norm(x))
        return float(np.sqrt(max(float(x @ self.metric @ x), 0.0)))

    def norms(self, states) -> np.ndarray:
        """Row-wise metric norms of a stack of states"""
        X = self._check(np.atleast_2d(states))
        if self._identity:
            return np.linalg.norm(X, axis=1)
        return np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", X, self.metric, X), 0.0))

    def to_euclidean(self, T: np.ndarray) -> np.ndarray:
        """L^T T L^-T, the Euclidean representative of an operator on H"""
        return self._to_euclid @ T @ self._from_euclid

    def operator_norm(self, T) -> float:
        T = np.atleast_2d(np.asarray(T, dtype=float))
        if T.shape != (self.dimension, self.dimension):
            raise DimensionError("operator shape does not match the generator")
        if self._identity:
            return float(np.linalg.norm(T, 2))
        return float(np.linalg.norm(self.to_euclidean(T), 2))

    def log_norm(self) -> float:
        """Logarithmic norm of A in the metric (max eigenvalue of the symmetric part)"""
        E = self.to_euclidean(self.matrix)
        return float(np.max(np.linalg.eigvalsh(0.5 * (E + E.T))))

    @property
    def distortion(self) -> float:
        """sqrt(cond(M_H)): bound on ||x||_H / ||x||_2 ratios between two vectors"""
        return float(np.linalg.norm(self._to_euclid, 2) * np.linalg.norm(self._from_euclid, 2))


def metric_norm(g: GeneratorOperator, x) -> float:
    return g.norm(x)


@dataclass(frozen=True, eq=False)
class FeedbackOperator:
    matrix: np.ndarray
    operator_norm: Optional[float] = None

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if B.ndim != 2 or B.shape[0] != B.shape[1]:
            raise DimensionError("feedback matrix must be square")
        object.__setattr__(self, "matrix", _frozen(B))
        if self.operator_norm is not None and self.operator_norm < 0:
            raise DomainError("feedback operator norm must be nonnegative")

    @classmethod
    def for_generator(cls, matrix, generator: GeneratorOperator,
                      operator_norm: Optional[float] = None) -> "FeedbackOperator":
        if operator_norm is None:
            operator_norm = generator.operator_norm(matrix)
        return cls(matrix, float(operator_norm))

    def max_ratio(self, generator: GeneratorOperator, samples: int = 200, seed: int = 0) -> float:
        """Largest ||Bx||_H / ||x||_H over random test vectors"""
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((samples, generator.dimension))
        return float(np.max(generator.norms(X @ self.matrix.T) / generator.norms(X)))


# Nonlinearity
_CATALOG = {
    "saturation": lambda x: x / (1.0 + np.abs(x)),
    "sine": np.sin,
    "tanh": np.tanh,
}


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """Lipschitz map G with G(0) = 0; ``lipschitz`` is measured in the metric norm"""

    func: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    name: str = "custom"

    def __post_init__(self):
        if not self.lipschitz >= 0:
            raise DomainError("Lipschitz constant must be nonnegative")

    @classmethod
    def from_catalog(cls, name: str, lipschitz: float,
                     generator: Optional[GeneratorOperator] = None) -> "Nonlinearity":
        """Componentwise catalog map scaled so its metric Lipschitz constant is ``lipschitz``"""
        if name not in _CATALOG:
            raise DomainError(f"unknown nonlinearity {name!r}; choose from {sorted(_CATALOG)}")
        base = _CATALOG[name]
        scale = float(lipschitz) / (generator.distortion if generator is not None else 1.0)
        return cls(lambda x: scale * base(x), float(lipschitz), name)

    @classmethod
    def from_expression(cls, text: str, lipschitz: float) -> "Nonlinearity":
        expr = Expression.parse(text, ("u",))
        return cls(lambda x: expr(u=x), float(lipschitz), text)

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def check_lipschitz(self, generator: GeneratorOperator, samples: int = 200,
                        seed: int = 0, slack: float = 1e-12) -> bool:
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((samples, generator.dimension)) * rng.uniform(0.1, 10.0, (samples, 1))
        Y = rng.standard_normal((samples, generator.dimension))
        lhs = generator.norms(np.array([self(x) - self(y) for x, y in zip(X, Y)]))
        rhs = self.lipschitz * generator.norms(X - Y)
        return bool(np.all(lhs <= rhs + slack))


# History
@dataclass(frozen=True, eq=False)
class HistorySegment:
    """Initial function f on [-tau_bar, 0] sampled on a grid"""

    grid: np.ndarray
    values: np.ndarray
    interpolation: str = "linear"
    derivatives: Optional[np.ndarray] = None

    def __post_init__(self):
        grid = _frozen(self.grid)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if len(grid) < 2:
            raise DomainError("history needs at least two nodes spanning [-tau_bar, 0]")
        if np.any(np.diff(grid) <= 0):
            raise DomainError("history grid must be strictly increasing")
        if grid[-1] != 0.0 or not grid[0] < 0.0:
            raise DomainError("history grid must run from -tau_bar < 0 to exactly 0")
        if values.shape[0] != len(grid):
            raise DimensionError("history needs one state per grid node")
        if self.interpolation not in INTERPOLATIONS:
            raise DomainError(f"unknown interpolation {self.interpolation!r}")
        derivs = self.derivatives
        if self.interpolation == "cubic-hermite" and derivs is None:
            derivs = np.gradient(values, grid, axis=0, edge_order=2 if len(grid) > 2 else 1)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", _frozen(values))
        if derivs is not None:
            object.__setattr__(self, "derivatives", _frozen(np.reshape(derivs, values.shape)))

    @classmethod
    def constant(cls, value, tau_bar: float, nodes: int = 2) -> "HistorySegment":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        grid = np.linspace(-tau_bar, 0.0, nodes)
        return cls(grid, np.tile(value, (nodes, 1)))

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], tau_bar: float,
                      nodes: int = 65, interpolation: str = "linear") -> "HistorySegment":
        """Sample ``fn`` (vectorised over times, returning rows of states)"""
        grid = np.linspace(-tau_bar, 0.0, nodes)
        values = np.asarray(fn(grid), dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        return cls(grid, values, interpolation)

    @property
    def tau_bar(self) -> float:
        return float(-self.grid[0])

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    @property
    def initial_state(self) -> np.ndarray:
        return self.values[-1]

    def __call__(self, t) -> np.ndarray:
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < self.grid[0]) or np.any(t_arr > 0.0):
            raise DomainError(f"history evaluated outside [{self.grid[0]}, 0]")
        flat = np.atleast_1d(t_arr)
        if self.interpolation == "linear":
            out = interp_linear(self.grid, self.values, flat)
        else:
            out = interp_hermite(self.grid, self.values, self.derivatives, flat)
        return out.reshape(t_arr.shape + (self.dimension,))


def eval_history(h: HistorySegment, t) -> np.ndarray:
    return h(t)


# Problem
@dataclass(frozen=True, eq=False)
class DelayProblem:
    generator: GeneratorOperator
    feedback: FeedbackOperator
    gain: GainFunction
    delay: DelayFunction
    history: HistorySegment
    nonlinearity: Optional[Nonlinearity] = None
    certificate: Optional["SemigroupCertificate"] = None
    layout: Any = None
    name: str = "problem"

    def __post_init__(self):
        n = self.generator.dimension
        if self.feedback.matrix.shape != (n, n):
            raise DimensionError(f"feedback is {self.feedback.matrix.shape}, generator is {n}x{n}")
        if self.history.dimension != n:
            raise DimensionError(f"history has dimension {self.history.dimension}, expected {n}")
        if not np.isclose(self.history.tau_bar, self.delay.upper_bound, rtol=1e-12, atol=0.0):
            raise DomainError(
                f"history spans [{-self.history.tau_bar}, 0] but tau_bar is {self.delay.upper_bound}")
        if self.feedback.operator_norm is None:
            object.__setattr__(self, "feedback",
                               FeedbackOperator.for_generator(self.feedback.matrix, self.generator))
        if self.nonlinearity is not None:
            g0 = self.nonlinearity(np.zeros(n))
            if g0.shape != (n,) or np.any(g0 != 0.0):
                raise DomainError("nonlinearity must satisfy G(0) = 0 exactly")

    @property
    def dimension(self) -> int:
        return self.generator.dimension

    @property
    def tau_bar(self) -> float:
        return self.delay.upper_bound

    @property
    def initial_state(self) -> np.ndarray:
        return self.history.initial_state

    @property
    def lipschitz(self) -> float:
        return self.nonlinearity.lipschitz if self.nonlinearity is not None else 0.0

    def replace(self, **changes) -> "DelayProblem":
        return replace(self, **changes)


# Trajectory
@dataclass(frozen=True, eq=False)
class Trajectory:
    """Solution samples on [0, T] plus the history segment on [-tau_bar, 0]"""

    problem: DelayProblem
    grid: np.ndarray
    states: np.ndarray
    interpolation: str = "linear"
    derivatives: Optional[np.ndarray] = None
    label: str = ""

    def __post_init__(self):
        grid = _frozen(self.grid)
        states = np.asarray(self.states, dtype=float)
        if grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
            raise DomainError("trajectory grid must start at 0 and increase strictly")
        if states.shape != (len(grid), self.problem.dimension):
            raise DimensionError("trajectory needs one state per grid node")
        if not np.array_equal(states[0], self.problem.initial_state):
            raise DomainError("trajectory must start at U0 = f(0)")
        if self.interpolation not in INTERPOLATIONS:
            raise DomainError(f"unknown interpolation {self.interpolation!r}")
        if self.interpolation == "cubic-hermite" and self.derivatives is None:
            raise DomainError("cubic-hermite trajectories need stored derivatives")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "states", _frozen(states))
        if self.derivatives is not None:
            object.__setattr__(self, "derivatives", _frozen(self.derivatives))

    @property
    def history(self) -> HistorySegment:
        return self.problem.history

    @property
    def end(self) -> float:
        return float(self.grid[-1])

    def __call__(self, t) -> np.ndarray:
        t_arr = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t_arr)
        tol = 1e-12 * (1.0 + abs(self.end))
        if np.any(flat < -self.history.tau_bar) or np.any(flat > self.end + tol):
            raise DomainError(
                f"trajectory evaluated outside [{-self.history.tau_bar}, {self.end}]")
        flat = np.minimum(flat, self.end)
        out = np.empty(flat.shape + (self.problem.dimension,))
        past = flat <= 0.0
        if np.any(past):
            out[past] = self.history(flat[past])
        if np.any(~past):
            if self.interpolation == "linear":
                out[~past] = interp_linear(self.grid, self.states, flat[~past])
            else:
                out[~past] = interp_hermite(self.grid, self.states, self.derivatives, flat[~past])
        return out.reshape(t_arr.shape + (self.problem.dimension,))

    def norms(self) -> np.ndarray:
        return self.problem.generator.norms(self.states)

    def full_grid(self) -> np.ndarray:
        """History nodes followed by solution nodes, without duplicating t = 0"""
        return np.concatenate((self.history.grid[:-1], self.grid))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.states, columns=[f"u_{i}" for i in range(self.problem.dimension)])
        frame.insert(0, "t", self.grid)
        frame["norm"] = self.norms()
        return frame


def eval_trajectory(tr: Trajectory, t) -> np.ndarray:
    return tr(t)
