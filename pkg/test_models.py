import numpy as np
import pytest

from core_types import DelayFunction, GainFunction
from errors import DomainError, RegionError
from models import (ElasticityModelConfig, EnergyLayout, WaveModelConfig, build_elasticity, build_scalar,
                    build_wave, compute_energy, window_quadrature)
from semigroup import spectral_abscissa
from solver import SolverConfig, solve

ZERO = [lambda t, x, y: 0.0 * x]


def test_scalar_certificate_is_exact():
    p = build_scalar(1.0, 1.0, GainFunction.constant(0.3), DelayFunction.constant(1.0))
    assert p.certificate.M == 1.0 and p.certificate.omega == 1.0
    assert p.feedback.operator_norm == 1.0
    with pytest.raises(DomainError):
        build_scalar(0.0, 1.0, GainFunction.constant(0.3), DelayFunction.constant(1.0))


def test_scalar_without_feedback_decays_exponentially():
    p = build_scalar(2.0, 0.0, GainFunction.constant(0.3), DelayFunction.constant(1.0), history=1.5)
    tr, _ = solve(p, 2.0, SolverConfig(dt=1e-3))
    np.testing.assert_allclose(tr.states[:, 0], 1.5 * np.exp(-2.0 * tr.grid), rtol=1e-10)


def test_wave_operator_shapes_and_metric():
    cfg = WaveModelConfig(nodes=10, damping_region=(0.2, 0.8), delay_region=(0.3, 0.6))
    p = build_wave(cfg)
    assert p.dimension == 20
    assert isinstance(p.layout, EnergyLayout)
    # the stiffness form is symmetric positive definite
    K = p.layout.stiffness
    np.testing.assert_allclose(K, K.T)
    assert np.min(np.linalg.eigvalsh(K)) > 0
    assert spectral_abscissa(p.generator) < 0


def test_feedback_never_increases_the_energy_norm():
    p = build_wave(WaveModelConfig(nodes=12, delay_region=(0.3, 0.6)))
    g = p.generator
    rng = np.random.default_rng(0)
    X = rng.standard_normal((100, p.dimension))
    assert np.all(g.norms(X @ p.feedback.matrix.T) <= g.norms(X) + 1e-12)
    assert g.operator_norm(p.feedback.matrix) <= 1.0 + 1e-12


def test_norm_is_twice_the_mechanical_energy():
    p = build_wave(WaveModelConfig(nodes=8))
    x = np.random.default_rng(1).standard_normal(p.dimension)
    layout = p.layout
    energy = layout.kinetic(x) + layout.potential(x)
    assert p.generator.norm(x) ** 2 == pytest.approx(2.0 * energy)


@pytest.mark.parametrize("region", [(0.5, 1.5), (0.8, 0.2), (0.41, 0.42)])
def test_unresolved_regions_are_rejected(region):
    with pytest.raises(RegionError):
        build_wave(WaveModelConfig(nodes=10, delay_region=region))


def test_zero_data_stays_zero():
    cfg = WaveModelConfig(nodes=10, gain=GainFunction.constant(0.05), history_u=ZERO, history_v=ZERO)
    tr, _ = solve(build_wave(cfg), 1.0, SolverConfig(dt=1e-2))
    assert np.all(tr.states == 0.0)
    assert np.all(compute_energy(tr).total == 0.0)


def test_fully_damped_mode_loses_energy():
    cfg = WaveModelConfig(nodes=20, damping=1.0)
    tr, _ = solve(build_wave(cfg), 6.0, SolverConfig(dt=1e-2))
    energy = compute_energy(tr).total
    assert np.all(np.diff(energy) <= 1e-9 * energy[0])
    assert energy[-1] < 0.01 * energy[0]


def test_undamped_wave_conserves_energy():
    cfg = WaveModelConfig(nodes=20, damping=0.0)
    tr, _ = solve(build_wave(cfg), 10.0, SolverConfig(dt=1e-3))
    half_norm = 0.5 * tr.norms() ** 2
    drift = np.max(np.abs(half_norm - half_norm[0])) / half_norm[0]
    assert drift < 1e-6


def test_energy_window_term_counts_delayed_velocity():
    cfg = WaveModelConfig(nodes=10, gain=GainFunction.constant(0.2), delay_region=(0.3, 0.6))
    tr, _ = solve(build_wave(cfg), 1.0, SolverConfig(dt=1e-2))
    report = compute_energy(tr)
    assert np.all(report.window >= 0) and np.all(report.total >= 0)
    assert report.window[0] > 0
    assert list(report.to_frame().columns) == ["t", "kinetic", "potential", "window", "total"]


def test_window_quadrature_of_constant_density(benchmark, coarse):
    tr, _ = solve(benchmark, 3.0, coarse)
    values = window_quadrature(tr, lambda states: np.ones(len(states)), [0.0, 0.37, 2.5])
    np.testing.assert_allclose(values, 0.3, rtol=1e-12)
    with pytest.raises(DomainError):
        window_quadrature(tr, lambda states: np.ones(len(states)), [3.5])


def test_energy_needs_a_layout(benchmark, coarse):
    tr, _ = solve(benchmark, 1.0, coarse)
    with pytest.raises(DomainError):
        compute_energy(tr)


def test_one_dimensional_elasticity_is_a_faster_wave():
    gain, delay = GainFunction.constant(0.05), DelayFunction.constant(0.5)
    common = dict(nodes=15, damping_region=(0.2, 0.8), delay_region=(0.3, 0.6), gain=gain, delay=delay)
    elastic = build_elasticity(ElasticityModelConfig(lame=(1.0, 1.0), **common))
    wave = build_wave(WaveModelConfig(speed=np.sqrt(3.0), **common))
    np.testing.assert_allclose(elastic.layout.stiffness, wave.layout.stiffness, rtol=1e-13, atol=1e-10)
    cfg = SolverConfig(dt=1e-2)
    a, _ = solve(elastic, 2.0, cfg)
    b, _ = solve(wave, 2.0, cfg)
    assert np.max(np.abs(a.states - b.states)) <= 1e-10


def test_two_dimensional_elasticity_layout():
    cfg = ElasticityModelConfig(nodes=(4, 3), length=(1.0, 0.5), dimension=2, lame=(2.0, 0.5))
    p = build_elasticity(cfg)
    assert p.dimension == 2 * 2 * 12
    K = p.layout.stiffness
    np.testing.assert_allclose(K, K.T, atol=1e-12)
    assert np.min(np.linalg.eigvalsh(K)) > 0


def test_lame_constants_must_be_positive():
    with pytest.raises(DomainError):
        ElasticityModelConfig(lame=(0.0, 1.0))
