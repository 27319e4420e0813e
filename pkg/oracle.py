"""Brute-force reference integrator used to referee the main solver.

Fixed-step classical RK4 with cubic Hermite dense output built from stored
(t, y, y') triples. Delayed arguments that fall inside the step being taken
are read from the previous step's cubic extrapolated forward, then refreshed
by two sweeps through the current step's own Hermite cubic. Nothing here
shares stepping or interpolation code with :mod:`solver`.
"""
import logging
import math

import numpy as np

from core_types import DelayProblem, Trajectory
from errors import DomainError, OracleDivergence

logger = logging.getLogger(__name__)

REFRESH_SWEEPS = 2


def _hermite(theta, h, y0, y1, m0, m1):
    t2 = theta * theta
    t3 = t2 * theta
    return ((2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + theta) * h * m0
            + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * h * m1)


def _fine_grid(T: float, dt_fine: float, breakpoints) -> np.ndarray:
    steps = int(math.ceil(T / dt_fine - 1e-9))
    times = [j * dt_fine for j in range(steps)] + [T]
    times += [float(b) for b in breakpoints if 0.0 < b < T]
    times = sorted(set(times))
    out = [times[0]]
    for t in times[1:]:
        if t - out[-1] > 1e-9 * dt_fine:
            out.append(t)
    out[-1] = T
    return np.array(out)


def oracle_solve(p: DelayProblem, T: float, dt_fine: float) -> Trajectory:
    """Dense-output reference trajectory on [0, T] with step ``dt_fine``"""
    if not T > 0 or not dt_fine > 0:
        raise DomainError("oracle needs T > 0 and dt_fine > 0")
    grid = _fine_grid(T, dt_fine, p.gain.breakpoints)
    steps = len(grid) - 1
    h = np.diff(grid)
    starts, ends = grid[:-1], grid[1:]
    mids = starts + 0.5 * h

    A = np.array(p.generator.matrix)
    B = np.array(p.feedback.matrix)
    G = p.nonlinearity
    hist = p.history

    # delays and gains for every stage, vectorised up front
    s_start, s_mid, s_end = starts - p.delay(starts), mids - p.delay(mids), ends - p.delay(ends)
    k_start, k_mid, k_end = p.gain(starts, side="right"), p.gain(mids, side="right"), p.gain(ends, side="left")
    k_next = p.gain(ends, side="right")
    j_mid = np.searchsorted(grid, s_mid, side="right") - 1
    j_end = np.searchsorted(grid, s_end, side="right") - 1

    n = p.dimension
    y = np.zeros((steps + 1, n))
    m_right = np.zeros((steps + 1, n))  # derivative as left end of the next interval
    m_left = np.zeros((steps + 1, n))  # derivative as right end of the previous interval
    y[0] = p.initial_state

    def rhs(u, k, delayed):
        du = A @ u
        if k != 0.0:
            du = du + k * (B @ delayed)
        if G is not None:
            du = du + G(u)
        return du

    def known(s, j, i):
        """Dense output on the solved part [-tau_bar, t_i]"""
        if s <= 0.0:
            return hist(max(s, -hist.tau_bar))
        j = min(j, i - 1)
        width = grid[j + 1] - grid[j]
        return _hermite((s - grid[j]) / width, width, y[j], y[j + 1], m_right[j], m_left[j + 1])

    m_right[0] = rhs(y[0], k_start[0], known(s_start[0], 0, 0))
    m_left[0] = m_right[0]

    for i in range(steps):
        t_i, hi = grid[i], h[i]
        inside = s_mid[i] > t_i or s_end[i] > t_i

        if i == 0:
            def current(s):
                return y[0] + (s - t_i) * m_right[0]
        else:
            w = grid[i] - grid[i - 1]

            def current(s, i=i, w=w):
                return _hermite((s - grid[i - 1]) / w, w, y[i - 1], y[i], m_right[i - 1], m_left[i])

        yi, k1 = y[i], m_right[i]
        for _ in range(1 + (REFRESH_SWEEPS if inside else 0)):
            d_mid = current(s_mid[i]) if s_mid[i] > t_i else known(s_mid[i], j_mid[i], i)
            d_end = current(s_end[i]) if s_end[i] > t_i else known(s_end[i], j_end[i], i)
            k2 = rhs(yi + 0.5 * hi * k1, k_mid[i], d_mid)
            k3 = rhs(yi + 0.5 * hi * k2, k_mid[i], d_mid)
            k4 = rhs(yi + hi * k3, k_end[i], d_end)
            y_new = yi + hi / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            m_new = rhs(y_new, k_end[i], d_end)

            def current(s, y1=y_new, m1=m_new, t0=t_i, w=hi):
                return _hermite((s - t0) / w, w, yi, y1, k1, m1)

        if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(m_new))):
            raise OracleDivergence(f"oracle state blew up near t={grid[i + 1]:.6g}", float(grid[i + 1]))
        y[i + 1] = y_new
        m_left[i + 1] = m_new
        m_right[i + 1] = m_new if k_next[i] == k_end[i] else rhs(y_new, k_next[i], d_end)

    derivs = m_left.copy()
    derivs[0] = m_right[0]
    logger.info("oracle: %d steps of %.3g on [0, %.6g]", steps, dt_fine, T)
    return Trajectory(p, grid, y, interpolation="cubic-hermite", derivatives=derivs, label="oracle")
