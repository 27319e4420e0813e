"""Semigroup action S(t) = e^{tA} and decay certificates ||S(t)|| <= M e^{-wt}"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np
from scipy import linalg

from core_types import GeneratorOperator, _frozen
from errors import CertificateError, DimensionError, DomainError, NumericError, StabilityError

logger = logging.getLogger(__name__)

DENSE_LIMIT = 400
MAX_EVIDENCE_SAMPLES = 20000
PROPAGATORS_PER_GENERATOR = 64
CHECK_TOLERANCE = 1e-9
# omega * T_h stays below this while auditing, so e^{omega T_h} and ||e^{T_h A}|| stay representable
MAX_TAIL_EXPONENT = 300.0


@dataclass(frozen=True, eq=False)
class SemigroupCertificate:
    """Constants (M, omega) with the sampled evidence that produced them"""

    M: float
    omega: float
    evidence_horizon: float = 0.0
    evidence_times: np.ndarray = field(default_factory=lambda: _frozen([]))
    evidence_norms: np.ndarray = field(default_factory=lambda: _frozen([]))
    tail_factor: float = 0.0
    provenance: str = "estimated"

    def __post_init__(self):
        if not self.M >= 1.0:
            raise DomainError("certificate constant M must be >= 1")
        if not self.omega > 0.0:
            raise DomainError("certificate rate omega must be positive")
        object.__setattr__(self, "evidence_times", _frozen(self.evidence_times))
        object.__setattr__(self, "evidence_norms", _frozen(self.evidence_norms))

    @classmethod
    def exact(cls, M: float, omega: float) -> "SemigroupCertificate":
        """Closed-form certificate (no sampled evidence needed)"""
        return cls(float(M), float(omega), provenance="closed-form")

    def envelope(self, t):
        return self.M * np.exp(-self.omega * np.asarray(t, dtype=float))

    def check(self, tol: float = CHECK_TOLERANCE) -> bool:
        """Both defining invariants: envelope at the evidence grid and tail closure"""
        if self.provenance == "closed-form":
            return True
        if len(self.evidence_times) == 0:
            return False
        on_grid = bool(np.all(self.evidence_norms <= self.envelope(self.evidence_times) * (1 + tol)))
        return on_grid and self.tail_factor <= 1.0 + tol

    def to_dict(self) -> Dict:
        return {
            "M": self.M,
            "omega": self.omega,
            "evidence_horizon": self.evidence_horizon,
            "evidence_samples": int(len(self.evidence_times)),
            "tail_factor": self.tail_factor,
            "provenance": self.provenance,
        }


def propagator(g: GeneratorOperator, t: float) -> np.ndarray:
    """Dense e^{tA} (scaling and squaring), cached per generator and time.

    The cache lives on the generator and keeps its most recent
    PROPAGATORS_PER_GENERATOR times.
    """
    t = float(t)
    if t < 0:
        raise DomainError(f"semigroup evaluated at negative time {t}")
    if g.dimension > DENSE_LIMIT:
        raise DimensionError(f"dimension {g.dimension} exceeds the dense limit {DENSE_LIMIT}")
    cache = g.propagator_cache
    E = cache.pop(t, None)
    if E is None:
        E = linalg.expm(t * g.matrix)
        if not np.all(np.isfinite(E)):
            raise NumericError(f"matrix exponential is not finite at t={t}")
        E = _frozen(E)
        if len(cache) >= PROPAGATORS_PER_GENERATOR:
            del cache[next(iter(cache))]
    cache[t] = E
    return E


def apply_semigroup(g: GeneratorOperator, t: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != g.dimension:
        raise DimensionError(f"state of size {x.shape[-1]} given, expected {g.dimension}")
    if t == 0:
        return x.copy()
    y = propagator(g, float(t)) @ x
    if not np.all(np.isfinite(y)):
        raise NumericError("semigroup action produced non-finite values")
    return y


def operator_norm_semigroup(g: GeneratorOperator, t: float) -> float:
    return g.operator_norm(propagator(g, float(t)))


def spectral_abscissa(g: GeneratorOperator) -> float:
    return float(np.max(np.linalg.eigvals(g.matrix).real))


def estimate_certificate(g: GeneratorOperator, omega_fraction: float = 0.95,
                         grid_density: int = 32, max_doublings: int = 40) -> SemigroupCertificate:
    """Fit (M, omega) by spectral-abscissa shrinkage and a sampled norm envelope.

    omega = omega_fraction * (-alpha(A)). The evidence horizon T_h doubles until
    ||e^{T_h A}|| e^{omega T_h} <= 1, so submultiplicativity carries the envelope
    past T_h. Between samples the logarithmic norm mu bounds growth, and M is
    inflated by exp(max(mu + omega, 0) * spacing) to cover it.
    """
    if not 0 < omega_fraction < 1:
        raise DomainError("omega_fraction must lie in (0, 1)")
    if grid_density < 1:
        raise DomainError("grid_density must be a positive integer")
    alpha = spectral_abscissa(g)
    if alpha >= 0:
        raise StabilityError(f"generator not exponentially stable (spectral abscissa {alpha:.3g})")
    omega = omega_fraction * (-alpha)

    horizon = 1.0 / omega
    for _ in range(max_doublings):
        q = operator_norm_semigroup(g, horizon) * math.exp(omega * horizon)
        logger.debug("tail closure at T_h=%.4g: q=%.6g", horizon, q)
        if q <= 1.0:
            break
        horizon *= 2.0
    else:
        raise CertificateError(f"tail closure not reached up to T_h={horizon:.4g}")

    times, norms = _sample_norms(g, horizon, grid_density)
    inflation = math.exp(max(g.log_norm() + omega, 0.0) * times[1])
    M = max(1.0, float(np.max(norms * np.exp(omega * times))) * inflation)
    cert = SemigroupCertificate(M, omega, horizon, times, norms, q)
    logger.info("certificate M=%.6g omega=%.6g (T_h=%.4g, %d samples)", M, omega, horizon, len(times))
    return cert


def audit_certificate(g: GeneratorOperator, M: float, omega: float, grid_density: int = 32,
                      provenance: str = "user-supplied") -> SemigroupCertificate:
    """Attach sampled evidence to given constants; ``check()`` on the result says whether they hold.

    The evidence horizon doubles from 1/omega until the tail closes or
    omega * T_h would pass MAX_TAIL_EXPONENT. Constants that are never
    closed keep the last tail factor above 1.
    """
    if grid_density < 1:
        raise DomainError("grid_density must be a positive integer")
    cert = SemigroupCertificate(float(M), float(omega), provenance=provenance)
    horizon = 1.0 / cert.omega
    q = operator_norm_semigroup(g, horizon) * math.exp(cert.omega * horizon)
    while q > 1.0 + CHECK_TOLERANCE and 2.0 * cert.omega * horizon <= MAX_TAIL_EXPONENT:
        horizon *= 2.0
        q = operator_norm_semigroup(g, horizon) * math.exp(cert.omega * horizon)
    times, norms = _sample_norms(g, horizon, grid_density)
    cert = SemigroupCertificate(cert.M, cert.omega, horizon, times, norms, q, provenance)
    if cert.check():
        logger.info("certificate M=%.6g omega=%.6g confirmed up to T_h=%.4g", cert.M, cert.omega, horizon)
    else:
        logger.warning("certificate M=%.6g omega=%.6g not confirmed (tail factor %.6g at T_h=%.4g)",
                       cert.M, cert.omega, q, horizon)
    return cert


def _sample_norms(g: GeneratorOperator, horizon: float, grid_density: int) -> Tuple[np.ndarray, np.ndarray]:
    samples = min(max(16, math.ceil(grid_density * horizon)), MAX_EVIDENCE_SAMPLES)
    times = np.linspace(0.0, horizon, samples + 1)
    step = propagator(g, float(times[1]))
    current = np.eye(g.dimension)
    norms = np.empty(len(times))
    for i in range(len(times)):
        norms[i] = g.operator_norm(current)
        current = step @ current
    # t = 0 is the identity exactly
    norms[0] = 1.0
    return times, norms
