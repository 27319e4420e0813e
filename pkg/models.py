"""Concrete delay problems: scalar toy, damped wave with localized delayed
feedback, and the Lamé elasticity system, plus their energy functionals.

The second-order models are written as first-order systems in U = (u, v):

    u' = v
    v' = -K u / w - a chi_O v - k(t) chi_Otilde v(t - tau(t))

on tensor-product grids with homogeneous Dirichlet data. K is the stiffness
form (so u^T K u approximates the potential part of the energy times 2), w the
cell weight, and the metric blockdiag(K, w I) makes ||U||_H^2 twice the
kinetic-plus-potential energy.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg, sparse

from core_types import (DelayFunction, DelayProblem, FeedbackOperator, GainFunction, GeneratorOperator,
                        HistorySegment, Nonlinearity, Trajectory)
from errors import DimensionError, DomainError, RegionError
from semigroup import SemigroupCertificate

logger = logging.getLogger(__name__)

Field = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
Region = Optional[Sequence]


def _as_history(history, tau_bar: float, dimension: int) -> HistorySegment:
    if isinstance(history, HistorySegment):
        return history
    value = np.broadcast_to(np.asarray(history, dtype=float), (dimension,))
    return HistorySegment.constant(value, tau_bar)


def build_scalar(a: float, b: float, gain: GainFunction, delay: DelayFunction, history=1.0,
                 nonlinearity: Optional[Nonlinearity] = None) -> DelayProblem:
    """u' = -a u + k(t) b u(t - tau(t)) with the exact certificate (1, a)"""
    if not a > 0:
        raise DomainError("scalar model needs a > 0")
    generator = GeneratorOperator(np.array([[-float(a)]]))
    feedback = FeedbackOperator(np.array([[float(b)]]), abs(float(b)))
    return DelayProblem(generator, feedback, gain, delay, _as_history(history, delay.tau_bar, 1),
                        nonlinearity=nonlinearity, certificate=SemigroupCertificate.exact(1.0, a),
                        name="scalar")


def build_matrix(A, B, gain: GainFunction, delay: DelayFunction, history, metric=None,
                 nonlinearity: Optional[Nonlinearity] = None, name: str = "matrix") -> DelayProblem:
    generator = GeneratorOperator(A, metric)
    feedback = FeedbackOperator.for_generator(B, generator)
    return DelayProblem(generator, feedback, gain, delay,
                        _as_history(history, delay.tau_bar, generator.dimension),
                        nonlinearity=nonlinearity, name=name)


# Mesh
@dataclass(frozen=True)
class _Mesh:
    counts: Tuple[int, ...]
    lengths: Tuple[float, ...]

    @property
    def dimension(self) -> int:
        return len(self.counts)

    @property
    def steps(self) -> Tuple[float, ...]:
        return tuple(L / (n + 1) for n, L in zip(self.counts, self.lengths))

    @property
    def weight(self) -> float:
        return float(np.prod(self.steps))

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    def coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        axes = [h * np.arange(1, n + 1) for n, h in zip(self.counts, self.steps)]
        if self.dimension == 1:
            return axes[0], np.zeros_like(axes[0])
        return np.tile(axes[0], self.counts[1]), np.repeat(axes[1], self.counts[0])

    def _lift(self, ops):
        """Embed one 1D operator per axis into the x-fastest node ordering"""
        if self.dimension == 1:
            return ops[0]
        return sparse.kron(ops[1], ops[0], format="csr")

    def differences(self):
        """Edge differences per axis (boundary edges included)"""
        d1 = [_edge_difference(n) for n in self.counts]
        if self.dimension == 1:
            return [d1[0]]
        ident = [sparse.identity(n, format="csr") for n in self.counts]
        return [self._lift([d1[0], ident[1]]), self._lift([ident[0], d1[1]])]

    def laplace_form(self) -> np.ndarray:
        """w * sum_i D_i^T D_i / h_i^2, the quadratic form of int |grad u|^2"""
        form = sum((D.T @ D) / h ** 2 for D, h in zip(self.differences(), self.steps))
        return self.weight * np.asarray(sparse.csr_matrix(form).toarray())

    def divergence(self):
        """Cell-centre divergence of a d-component field stacked component-wise"""
        if self.dimension == 1:
            return _edge_difference(self.counts[0]) / self.steps[0]
        nx, ny = self.counts
        hx, hy = self.steps
        dx = sparse.kron(_edge_average(ny), _edge_difference(nx)) / hx
        dy = sparse.kron(_edge_difference(ny), _edge_average(nx)) / hy
        return sparse.hstack([dx, dy], format="csr")

    def mask(self, region: Region, label: str) -> np.ndarray:
        x, y = self.coordinates()
        if region is None:
            return np.ones(self.size, dtype=bool)
        bounds = [tuple(region)] if self.dimension == 1 else [tuple(r) for r in region]
        if len(bounds) != self.dimension or any(len(b) != 2 for b in bounds):
            raise RegionError(f"{label} must give one (low, high) pair per axis")
        inside = np.ones(self.size, dtype=bool)
        for (lo, hi), coord, L in zip(bounds, (x, y), self.lengths):
            tol = 1e-12 * L
            if not (-tol <= lo < hi <= L + tol):
                raise RegionError(f"{label} [{lo}, {hi}] does not lie inside [0, {L}]")
            inside &= (coord >= lo - tol) & (coord <= hi + tol)
        if inside.sum() < 2:
            raise RegionError(f"{label} contains {int(inside.sum())} interior nodes; the mesh must resolve it")
        return inside


def _edge_difference(n: int):
    return sparse.diags([np.ones(n), -np.ones(n)], [0, -1], shape=(n + 1, n), format="csr")


def _edge_average(n: int):
    return sparse.diags([0.5 * np.ones(n), 0.5 * np.ones(n)], [0, -1], shape=(n + 1, n), format="csr")


# Model configs
@dataclass(frozen=True)
class WaveModelConfig:
    """u_tt - c^2 Lap u + a chi_O u_t + k(t) chi_Otilde u_t(t - tau(t)) = 0, Dirichlet"""

    nodes: Union[int, Tuple[int, int]] = 50
    length: Union[float, Tuple[float, float]] = 1.0
    dimension: int = 1
    damping: float = 1.0
    damping_region: Region = None
    delay_region: Region = None
    gain: GainFunction = field(default_factory=lambda: GainFunction.constant(0.0))
    delay: DelayFunction = field(default_factory=lambda: DelayFunction.constant(0.5))
    speed: float = 1.0
    # one field per displacement component, evaluated at (t, x, y)
    history_u: Optional[Sequence[Field]] = None
    history_v: Optional[Sequence[Field]] = None
    history_nodes: int = 33
    history_interpolation: str = "linear"

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise DomainError("spatial dimension must be 1 or 2")
        if self.damping < 0:
            raise DomainError("damping coefficient must be nonnegative")
        if not self.speed > 0:
            raise DomainError("wave speed must be positive")
        counts, lengths = self.mesh_shape()
        if any(n < 2 for n in counts):
            raise DomainError("need at least two interior nodes per axis")
        if any(not L > 0 for L in lengths):
            raise DomainError("domain lengths must be positive")

    def mesh_shape(self) -> Tuple[Tuple[int, ...], Tuple[float, ...]]:
        d = self.dimension
        counts = tuple(int(n) for n in np.broadcast_to(np.asarray(self.nodes), (d,)))
        lengths = tuple(float(L) for L in np.broadcast_to(np.asarray(self.length, dtype=float), (d,)))
        return counts, lengths

    @property
    def components(self) -> int:
        return 1

    @property
    def mode_speed(self) -> float:
        return self.speed


@dataclass(frozen=True)
class ElasticityModelConfig(WaveModelConfig):
    """u_tt - mu Lap u - (lambda + mu) grad div u + damping/delay terms, Dirichlet"""

    lame: Tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        super().__post_init__()
        lam, mu = self.lame
        if not (lam > 0 and mu > 0):
            raise DomainError("Lamé constants must be positive")

    @property
    def components(self) -> int:
        return self.dimension

    @property
    def mode_speed(self) -> float:
        lam, mu = self.lame
        return math.sqrt(lam + 2 * mu)


# Energy layout
@dataclass(frozen=True, eq=False)
class EnergyLayout:
    """How to read kinetic, potential and delay-window energy off a state"""

    kind: str
    n_u: int
    weight: float
    stiffness: np.ndarray
    delay_dofs: np.ndarray

    def kinetic(self, states: np.ndarray) -> np.ndarray:
        v = states[..., self.n_u:]
        return 0.5 * self.weight * np.sum(v * v, axis=-1)

    def potential(self, states: np.ndarray) -> np.ndarray:
        u = states[..., :self.n_u]
        return 0.5 * np.einsum("...i,ij,...j->...", u, self.stiffness, u)

    def delayed_kinetic(self, states: np.ndarray) -> np.ndarray:
        v = states[..., self.delay_dofs]
        return self.weight * np.sum(v * v, axis=-1)


def build_wave(cfg: WaveModelConfig) -> DelayProblem:
    mesh = _Mesh(*cfg.mesh_shape())
    stiffness = cfg.speed ** 2 * mesh.laplace_form()
    return _second_order_problem(cfg, mesh, stiffness, "wave")


def build_elasticity(cfg: ElasticityModelConfig) -> DelayProblem:
    mesh = _Mesh(*cfg.mesh_shape())
    lam, mu = cfg.lame
    div = mesh.divergence()
    grad_div = mesh.weight * np.asarray((div.T @ div).toarray())
    stiffness = np.kron(np.eye(cfg.components), mu * mesh.laplace_form()) + (lam + mu) * grad_div
    return _second_order_problem(cfg, mesh, stiffness, "elasticity")


def _second_order_problem(cfg: WaveModelConfig, mesh: _Mesh, stiffness: np.ndarray, kind: str) -> DelayProblem:
    c = cfg.components
    m = mesh.size * c
    w = mesh.weight
    damped = np.tile(mesh.mask(cfg.damping_region, "damping_region"), c).astype(float)
    delayed = np.tile(mesh.mask(cfg.delay_region, "delay_region"), c)

    A = np.block([[np.zeros((m, m)), np.eye(m)],
                  [-stiffness / w, -cfg.damping * np.diag(damped)]])
    B = np.zeros((2 * m, 2 * m))
    dofs = m + np.flatnonzero(delayed)
    B[dofs, dofs] = -1.0
    metric = linalg.block_diag(stiffness, w * np.eye(m))

    generator = GeneratorOperator(A, metric)
    history = _history(cfg, mesh)
    layout = EnergyLayout(kind, m, w, stiffness, dofs)
    logger.info("%s model: %dD mesh %s, state dimension %d", kind, mesh.dimension, mesh.counts, 2 * m)
    # masking velocity components cannot increase the metric norm
    return DelayProblem(generator, FeedbackOperator(B, 1.0), cfg.gain, cfg.delay, history,
                        layout=layout, name=kind)


def _history(cfg: WaveModelConfig, mesh: _Mesh) -> HistorySegment:
    x, y = mesh.coordinates()
    times = np.linspace(-cfg.delay.tau_bar, 0.0, cfg.history_nodes)
    T, X, Y = times[:, None], x[None, :], y[None, :]
    shape = (len(times), mesh.size)
    fields_u, fields_v = cfg.history_u, cfg.history_v
    if fields_u is None and fields_v is None:
        fields_u, fields_v = _standing_mode(cfg, mesh)
    zero = [lambda t, x, y: 0.0] * cfg.components
    fields_u = list(fields_u) if fields_u is not None else zero
    fields_v = list(fields_v) if fields_v is not None else zero
    if len(fields_u) != cfg.components or len(fields_v) != cfg.components:
        raise DimensionError(f"history needs {cfg.components} field(s) for u and for v")
    blocks = [np.broadcast_to(np.asarray(f(T, X, Y), dtype=float), shape) for f in fields_u + fields_v]
    return HistorySegment(times, np.hstack(blocks), cfg.history_interpolation)


def _standing_mode(cfg: WaveModelConfig, mesh: _Mesh):
    """Lowest Dirichlet mode in the first component, oscillating at its continuum frequency"""
    lengths = mesh.lengths
    freq = cfg.mode_speed * math.pi * math.sqrt(sum(1.0 / L ** 2 for L in lengths))

    def shape(x, y):
        out = np.sin(math.pi * x / lengths[0])
        if mesh.dimension == 2:
            out = out * np.sin(math.pi * y / lengths[1])
        return out

    rest = [lambda t, x, y: 0.0] * (cfg.components - 1)
    u = [lambda t, x, y: shape(x, y) * np.cos(freq * t)] + rest
    v = [lambda t, x, y: -freq * shape(x, y) * np.sin(freq * t)] + rest
    return u, v


# Energy
@dataclass
class EnergyReport:
    times: np.ndarray
    kinetic: np.ndarray
    potential: np.ndarray
    window: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.kinetic + self.potential + self.window

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "t": self.times,
            "kinetic": self.kinetic,
            "potential": self.potential,
            "window": self.window,
            "total": self.total,
        })


def window_quadrature(tr: Trajectory, density: Callable[[np.ndarray], np.ndarray], times) -> np.ndarray:
    """int_{t - tau_bar}^t |k(s)| density(U(s)) ds by the trapezoid rule on the trajectory grid.

    Nodes are the history and solution grids plus gain breakpoints; the
    window ends are added as extra nodes. One-sided gain limits are used at
    both ends of every interval so jumps never straddle a panel.
    """
    p = tr.problem
    tau_bar = p.tau_bar
    times = np.atleast_1d(np.asarray(times, dtype=float))
    tol = 1e-12 * (1.0 + tr.end)
    if np.any(times < 0) or np.any(times > tr.end + tol):
        raise DomainError(f"energy window needs 0 <= t <= {tr.end}")
    times = np.minimum(times, tr.end)

    nodes = np.unique(np.concatenate((tr.full_grid(), p.gain.breakpoints_between(-tau_bar, tr.end))))
    dens = density(tr(nodes))
    f_right = np.abs(p.gain(nodes, side="right")) * dens
    f_left = np.abs(p.gain(nodes, side="left")) * dens
    panels = 0.5 * np.diff(nodes) * (f_right[:-1] + f_left[1:])
    cumulative = np.concatenate(([0.0], np.cumsum(panels)))

    starts = times - tau_bar
    # first node at or after the window start, last node at or before its end
    i0 = np.searchsorted(nodes, starts, side="left")
    i1 = np.searchsorted(nodes, times, side="right") - 1
    dens_start = density(tr(starts))
    dens_end = density(tr(times))
    head = 0.5 * (nodes[i0] - starts) * (np.abs(p.gain(starts, side="right")) * dens_start + f_left[i0])
    tail = 0.5 * (times - nodes[i1]) * (f_right[i1] + np.abs(p.gain(times, side="left")) * dens_end)
    return head + (cumulative[i1] - cumulative[i0]) + tail


def compute_energy(tr: Trajectory, layout: Optional[EnergyLayout] = None, times=None) -> EnergyReport:
    """E(t) = kinetic + potential + 1/2 int_{t-tau_bar}^t |k| int_Otilde |u_t|^2"""
    layout = layout if layout is not None else tr.problem.layout
    if not isinstance(layout, EnergyLayout):
        raise DomainError(f"problem {tr.problem.name!r} defines no energy functional")
    times = tr.grid if times is None else np.atleast_1d(np.asarray(times, dtype=float))
    states = tr(times)
    window = 0.5 * window_quadrature(tr, layout.delayed_kinetic, times)
    report = EnergyReport(np.array(times, dtype=float), layout.kinetic(states), layout.potential(states), window)
    logger.debug("energy at %d times, E(0)=%.6g", len(times), report.total[0])
    return report
