import math

import numpy as np
import pytest

from analysis import (StabilityEnvelope, decay_bound_curve, energy_constant, extends_horizon, fit_envelope,
                      history_max, budget_window, verify_apriori, verify_decay, verify_energy_decay,
                      verify_energy_inequality, verify_gronwall, window_bound, windowed_max)
from core_types import DelayFunction, GainFunction, GeneratorOperator, HistorySegment, Nonlinearity
from errors import DomainError, HypothesisViolation
from models import (ElasticityModelConfig, WaveModelConfig, build_elasticity, build_matrix, build_scalar, build_wave,
                    compute_energy)
from semigroup import SemigroupCertificate, estimate_certificate
from solver import SolverConfig, solve

EXACT = SemigroupCertificate.exact(1.0, 1.0)


# Window bound and envelopes
def test_window_bound_of_constant_gain():
    assert window_bound(GainFunction.constant(-0.3), 1.0, 5.0) == pytest.approx(0.3)


def test_window_bound_catches_a_pulse_between_subdivisions():
    k = GainFunction.piecewise_constant([1.013, 1.513], [0.0, 2.0, 0.0])
    assert window_bound(k, 1.0, 5.0, subdivisions=4) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        window_bound(k, 1.0, 0.5)


def test_benchmark_envelope_fit():
    fit = fit_envelope(GainFunction.constant(0.3), EXACT, 1.0, 1.0, 10.0)
    assert len(fit.envelopes) == 100
    best = fit.best_extending
    coefficient = 0.3 * math.e
    assert best.omega_prime == pytest.approx(0.82)
    assert best.omega_prime >= coefficient
    assert best.gamma == 0.0 and best.extends
    assert best.K == pytest.approx(0.3)
    assert best.check(GainFunction.constant(0.3), tau_bar=1.0)
    assert all(e.extends == (e.omega_prime >= coefficient) for e in fit.envelopes)
    frame = fit.to_frame()
    assert frame["rate"].iloc[82] == pytest.approx(0.18)


def test_envelope_gamma_covers_the_integral():
    k = GainFunction.piecewise_linear([0.0, 2.0, 4.0], [0.0, 1.0, 0.0])
    fit = fit_envelope(k, EXACT, 0.5, 0.5, 6.0, omega_primes=[0.0, 0.1, 0.3])
    for env in fit.envelopes:
        assert env.check(k, tau_bar=0.5)
        times = np.linspace(0.0, 6.0, 601)
        assert np.all(env.coefficient * k.cumulative_abs(times) <= env.majorant(times) + 1e-12)


@pytest.mark.parametrize("k", [GainFunction.constant(0.3),
                               GainFunction.piecewise_constant([1.0, 2.5], [0.0, 1.2, 0.0]),
                               GainFunction.from_expression("0.4*sin(t)", period=2 * math.pi)])
def test_gamma_does_not_grow_with_omega_prime(k):
    gammas = np.array([e.gamma for e in fit_envelope(k, EXACT, 1.0, 1.0, 10.0).envelopes])
    assert np.all(np.diff(gammas) <= 0.0)


def test_raising_any_constant_never_lowers_the_bound():
    times = np.linspace(0.0, 10.0, 51)
    history = HistorySegment.constant([1.0], 1.0)

    def curve(K=0.3, gamma=0.2, M=1.5, b_norm=1.0, level=1.0):
        env = StabilityEnvelope(gamma, 0.1, 10.0, K, 1.0)
        h = history if level == 1.0 else HistorySegment.constant([level], 1.0)
        return decay_bound_curve(env, SemigroupCertificate(M, 1.0), b_norm, h, times).values

    base = curve()
    for raised in (curve(K=0.6), curve(gamma=0.5), curve(M=2.0), curve(b_norm=2.0), curve(level=2.0)):
        assert np.all(raised >= base)


def test_omega_prime_grid_must_stay_below_omega():
    with pytest.raises(DomainError):
        fit_envelope(GainFunction.constant(0.3), EXACT, 1.0, 1.0, 10.0, omega_primes=[0.5, 1.0])


def test_extension_rules():
    compact = GainFunction.piecewise_constant([1.0, 2.0], [0.0, 1.0, 0.0])
    assert extends_horizon(compact, 1.0, 0.0, 5.0)
    assert not extends_horizon(compact, 1.0, 0.0, 1.5)
    periodic = GainFunction.from_expression("sin(t)", period=2 * math.pi)
    # omega' * period must cover c * int_0^period |k| = 4c
    assert extends_horizon(periodic, 0.5, 1.0 / math.pi + 1e-9, 10.0)
    assert not extends_horizon(periodic, 0.5, 1.0 / math.pi - 1e-3, 10.0)
    assert not extends_horizon(periodic, 0.5, 1.0, 5.0)
    assert not extends_horizon(GainFunction.from_expression("sin(t)"), 0.5, 1.0, 10.0)


# Decay bound
def _benchmark_bound(tr, lipschitz=0.0):
    fit = fit_envelope(GainFunction.constant(0.3), EXACT, 1.0, 1.0, tr.end, lipschitz=lipschitz)
    env = fit.best_extending
    return decay_bound_curve(env, EXACT, 1.0, tr.history, tr.grid, lipschitz)


def test_benchmark_decay_bound(benchmark, coarse):
    tr, _ = solve(benchmark, 30.0, coarse)
    bound = _benchmark_bound(tr)
    assert bound.m_tilde == pytest.approx(1.0 + 0.3 * math.e)
    assert bound.rate == pytest.approx(0.18)
    assert bound.at(0.0) == pytest.approx(1.0 + 0.3 * math.e)
    report = verify_decay(tr, bound)
    assert report.passed and report.worst_margin > 0
    assert report.empirical_rate > report.theoretical_rate
    assert report.to_dict()["bound_pass"] is True


def test_nonlinear_decay_bound(benchmark, coarse):
    G = Nonlinearity.from_catalog("saturation", 0.1)
    p = benchmark.replace(nonlinearity=G)
    tr, _ = solve(p, 30.0, coarse)
    bound = _benchmark_bound(tr, lipschitz=0.1)
    assert bound.rate == pytest.approx(0.08)
    assert verify_decay(tr, bound).passed


def test_zero_lipschitz_report_is_identical(benchmark, coarse):
    plain, _ = solve(benchmark, 10.0, coarse)
    silent, _ = solve(benchmark.replace(nonlinearity=Nonlinearity.from_catalog("saturation", 0.0)), 10.0, coarse)
    a = verify_decay(plain, _benchmark_bound(plain))
    b = verify_decay(silent, _benchmark_bound(silent, lipschitz=0.0))
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.bounds, b.bounds)
    assert a.worst_margin == b.worst_margin


def test_unmet_hypotheses_raise(benchmark):
    env = StabilityEnvelope(0.0, 1.0, 10.0, 0.3, 0.3 * math.e)
    with pytest.raises(HypothesisViolation) as info:
        decay_bound_curve(env, EXACT, 1.0, benchmark.history, [0.0])
    assert info.value.hypothesis == "envelope"
    env = StabilityEnvelope(0.0, 0.82, 10.0, 0.3, 0.3 * math.e, extends=True)
    with pytest.raises(HypothesisViolation) as info:
        decay_bound_curve(env, EXACT, 1.0, benchmark.history, [0.0], lipschitz=0.2)
    assert info.value.hypothesis == "lipschitz"


def test_history_max_weights_the_past(benchmark):
    assert history_max(benchmark.history, 1.0) == pytest.approx(1.0)
    assert history_max(benchmark.history, -1.0) == pytest.approx(math.e)


def _admissible_problem(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(1, 5))
    R = rng.standard_normal((n, n))
    A = 0.5 * (R - R.T) - np.diag(rng.uniform(0.5, 1.5, n))
    B = rng.standard_normal((n, n))
    B /= np.linalg.norm(B, 2)
    if seed % 2:
        delay = DelayFunction.from_expression("0.5*abs(sin(t))", 0.5)
    else:
        delay = DelayFunction.from_expression("0.2 + 0.3*sin(3*t)^2", 0.5, lower_bound=0.2)
    cert = estimate_certificate(GeneratorOperator(A))
    # keep M |k| e^(omega tau_bar) at half of omega
    k0 = 0.5 * cert.omega / (cert.M * math.exp(cert.omega * 0.5))
    p = build_matrix(A, B, GainFunction.constant(k0), delay, rng.standard_normal(n))
    return p, cert


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(20))
def test_decay_bound_on_admissible_problems(seed):
    p, cert = _admissible_problem(seed)
    tr, _ = solve(p, 30.0, SolverConfig(dt=1e-2), certificate=cert)
    fit = fit_envelope(p.gain, cert, p.feedback.operator_norm, p.tau_bar, tr.end)
    env = fit.best_extending
    assert env is not None
    bound = decay_bound_curve(env, cert, p.feedback.operator_norm, p.history, tr.grid)
    assert verify_decay(tr, bound).passed


# Gronwall and a priori bounds
def test_windowed_max_matches_brute_force(benchmark, coarse):
    tr, _ = solve(benchmark, 4.0, coarse)
    weighted = np.exp(0.5 * tr.grid) * tr.norms()
    expected = [np.max(weighted[(tr.grid >= t - 1.0) & (tr.grid <= t)]) for t in tr.grid]
    np.testing.assert_array_equal(windowed_max(tr, 0.5, 1.0), expected)


def test_gronwall_conclusion_holds(benchmark, coarse):
    tr, _ = solve(benchmark, 10.0, coarse)
    report = verify_gronwall(tr, EXACT, 1.0, 0.3)
    assert report.passed
    assert np.all(report.windowed >= report.weighted - 1e-15)


def test_apriori_bound_on_the_budget_window(benchmark, coarse):
    tr, _ = solve(benchmark, 5.0, coarse)
    end = budget_window(benchmark.gain, EXACT, 1.0, tr.grid)
    assert end == pytest.approx(3.33)
    report = verify_apriori(tr, EXACT, 1.0, end)
    assert report.passed and report.budget < 1.0
    assert report.bound == pytest.approx(2.0 * math.e)


def test_apriori_bound_at_the_edge_of_the_budget(coarse):
    p = build_scalar(1.0, 1.0, GainFunction.constant(0.4995), DelayFunction.constant(1.0))
    tr, _ = solve(p, 3.0, coarse)
    report = verify_apriori(tr, EXACT, 1.0, 2.0)
    assert report.budget == pytest.approx(0.999)
    assert report.passed


def test_apriori_refuses_when_hypotheses_fail(benchmark, coarse):
    tr, _ = solve(benchmark, 5.0, coarse)
    with pytest.raises(HypothesisViolation):
        verify_apriori(tr, EXACT, 1.0, 4.0)
    nonlinear, _ = solve(benchmark.replace(nonlinearity=Nonlinearity.from_catalog("tanh", 0.1)), 5.0, coarse)
    with pytest.raises(HypothesisViolation):
        verify_apriori(nonlinear, EXACT, 1.0, 1.0)


# Energy
def test_energy_constant_covers_the_initial_energy():
    env = StabilityEnvelope(0.0, 0.1, 10.0, 0.05, 0.1)
    p = build_wave(WaveModelConfig(nodes=6))
    cert = SemigroupCertificate(2.0, 0.5)
    bound = decay_bound_curve(env, cert, 1.0, p.history, [0.0], generator=p.generator)
    h_norm = history_max(p.history, 0.0, p.generator)
    c_star = energy_constant(bound, 0.05, h_norm, p.tau_bar)
    assert c_star >= 0.5 * p.generator.norm(p.initial_state) ** 2


def test_energy_inequality_holds_pointwise():
    cfg = WaveModelConfig(nodes=12, gain=GainFunction.constant(0.3), delay_region=(0.3, 0.6),
                          delay=DelayFunction.from_expression("0.5 + 0.4*sin(t)^2", 0.9, 0.5))
    tr, _ = solve(build_wave(cfg), 3.0, SolverConfig(dt=1e-2))
    report = verify_energy_inequality(compute_energy(tr), tr)
    assert report.passed


def _energy_pipeline(p, T, dt):
    cert = estimate_certificate(p.generator)
    b_norm = p.feedback.operator_norm
    K = window_bound(p.gain, p.tau_bar, T)
    fit = fit_envelope(p.gain, cert, b_norm, p.tau_bar, T)
    env = fit.best_extending
    assert env is not None and env.omega_prime < cert.omega
    tr, _ = solve(p, T, SolverConfig(dt=dt))
    bound = decay_bound_curve(env, cert, b_norm, p.history, tr.grid, generator=p.generator)
    energy = compute_energy(tr)
    h_norm = history_max(p.history, 0.0, p.generator)
    return tr, bound, energy, verify_energy_decay(energy, bound, K, h_norm, p.tau_bar)


@pytest.mark.slow
def test_wave_energy_decay():
    cfg = WaveModelConfig(nodes=50, damping=1.0, damping_region=(0.2, 0.8), delay_region=(0.3, 0.6),
                          gain=GainFunction.constant(0.05),
                          delay=DelayFunction.from_expression("0.5 + 0.4*sin(t)^2", 0.9, 0.5))
    tr, bound, energy, report = _energy_pipeline(build_wave(cfg), 40.0, 1e-2)
    assert verify_decay(tr, bound).passed
    assert report.passed
    assert report.empirical_rate >= report.theoretical_rate
    assert verify_energy_inequality(energy, tr).passed


@pytest.mark.slow
def test_two_dimensional_elasticity_energy_decay():
    cfg = ElasticityModelConfig(nodes=4, dimension=2, damping=1.0, gain=GainFunction.constant(0.01),
                                delay=DelayFunction.constant(0.5), lame=(1.0, 1.0))
    tr, bound, energy, report = _energy_pipeline(build_elasticity(cfg), 10.0, 1e-2)
    assert report.passed
    assert verify_energy_inequality(energy, tr).passed
