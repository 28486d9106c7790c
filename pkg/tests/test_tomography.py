import time

import numpy as np
import pytest

from raman_memory.grid_pulse import ComplexEnvelope, Grid
from raman_memory.quantum_states import (
    ChannelParams,
    DensityMatrix,
    coherent_state,
    fock_state,
    phase_rotate,
    uhlmann_fidelity,
)
from raman_memory.tomography import (
    MLConfig,
    QuadratureRecord,
    estimate_displacement,
    matched_filter_quadrature,
    ml_reconstruct,
    quadrature_distribution,
    reconstruct_fidelity_pipeline,
    simulate_homodyne,
)


def phase_bin_stats(rec, n_bins=30):
    ib = np.minimum((rec.phases / (2 * np.pi) * n_bins).astype(int), n_bins - 1)
    centres = (np.arange(n_bins) + 0.5) * 2 * np.pi / n_bins
    means = np.array([rec.values[ib == k].mean() for k in range(n_bins)])
    vars_ = np.array([rec.values[ib == k].var() for k in range(n_bins)])
    return centres, means, vars_


def test_quadrature_distribution_of_vacuum_is_gaussian():
    x = np.linspace(-5, 5, 201)
    p = quadrature_distribution(fock_state(0, 5), [0.0, 1.3], x)
    ref = np.exp(-x**2) / np.sqrt(np.pi)
    np.testing.assert_allclose(p, np.vstack([ref, ref]), atol=1e-12)


def test_quadrature_distribution_of_coherent_state():
    alpha = 1.1 * np.exp(0.7j)
    x = np.linspace(-6, 8, 301)
    for th in (0.0, 1.0, 2.5):
        mu = np.sqrt(2) * np.real(alpha * np.exp(-1j * th))
        ref = np.exp(-((x - mu) ** 2)) / np.sqrt(np.pi)
        p = quadrature_distribution(coherent_state(alpha, 30), th, x)[0]
        np.testing.assert_allclose(p, ref, atol=1e-9)


def test_vacuum_variance_per_phase_bin():
    rec = simulate_homodyne(fock_state(0, 4), 100_000, seed=1)
    _, means, vars_ = phase_bin_stats(rec)
    assert np.all(np.abs(vars_ - 0.5) <= 0.01 * 5)  # bins hold ~3300 samples, sd of var ~0.012
    assert abs(rec.values.var() - 0.5) < 0.01


def test_coherent_mean_at_zero_phase():
    alpha = 1.5
    rec = simulate_homodyne(coherent_state(alpha, 30), 100_000, seed=2)
    sel = np.minimum(rec.phases, 2 * np.pi - rec.phases) < 0.05
    n = sel.sum()
    # the bin spans |theta| < 0.05, so the mean sits at sqrt(2) alpha times the bin-averaged cosine
    expect = np.sqrt(2) * alpha * np.sin(0.05) / 0.05
    assert abs(rec.values[sel].mean() - expect) < 3 * np.sqrt(0.5 / n)


def test_fringe_amplitude_at_7_9_photons():
    rec = simulate_homodyne(coherent_state(np.sqrt(7.9), 40), 100_000, seed=3)
    beta = estimate_displacement(rec)
    assert np.sqrt(2) * abs(beta) == pytest.approx(np.sqrt(2 * 7.9), rel=0.01)
    centres, means, _ = phase_bin_stats(rec)
    # bin averaging shrinks the cosine by sinc(half width)
    shrink = np.sinc(1 / 30)
    np.testing.assert_allclose(means, np.sqrt(2 * 7.9) * shrink * np.cos(centres), atol=0.05)


def test_simulation_is_deterministic():
    rho = coherent_state(0.8, 15)
    a = simulate_homodyne(rho, 2000, seed=9)
    b = simulate_homodyne(rho, 2000, seed=9)
    c = simulate_homodyne(rho, 2000, seed=10)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.phases, b.phases)
    assert not np.array_equal(a.values, c.values)
    with pytest.raises(ValueError):
        simulate_homodyne(rho, 0, seed=0)


def test_record_csv_round_trip():
    rec = simulate_homodyne(fock_state(1, 4), 50, seed=0)
    back = QuadratureRecord.from_csv("# note\n" + rec.to_csv())
    np.testing.assert_array_equal(back.values, rec.values)
    np.testing.assert_array_equal(back.phases, rec.phases)
    with pytest.raises(ValueError):
        QuadratureRecord.from_csv("a,b\n1,2\n")


def unit_mode(grid, centre, width):
    m = np.exp(-((grid.coords - centre) ** 2) / (2 * width**2)).astype(complex)
    env = ComplexEnvelope(grid, m)
    return ComplexEnvelope(grid, m / np.sqrt(env.norm2))


def test_matched_filter_self_and_orthogonal():
    grid = Grid.cells(0.0, 40.0, 800)
    mode = unit_mode(grid, 20.0, 2.0)
    assert matched_filter_quadrature(mode.samples.real, mode) == pytest.approx(1.0, abs=1e-12)
    odd = (grid.coords - 20.0) * mode.samples.real
    assert abs(matched_filter_quadrature(odd, mode)) < 1e-12
    assert matched_filter_quadrature(mode, mode) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError, match="unit norm"):
        matched_filter_quadrature(mode.samples, ComplexEnvelope(grid, 2 * mode.samples))
    with pytest.raises(ValueError):
        matched_filter_quadrature(np.ones(5), mode)


@pytest.mark.parametrize("width", [1.0, 4.0])
def test_matched_filter_white_noise_variance(width):
    grid = Grid.cells(0.0, 40.0, 800)
    mode = unit_mode(grid, 20.0, width)
    sigma = 0.7
    rng = np.random.default_rng(5)
    raw = rng.normal(0.0, sigma, (10_000, grid.n_points))
    q = matched_filter_quadrature(raw, mode)
    expect = sigma**2 * grid.step
    # sample variance of 1e4 Gaussian draws has relative sd sqrt(2/1e4)
    assert q.var() == pytest.approx(expect, rel=5 * np.sqrt(2 / 10_000))


def test_vacuum_round_trip():
    rec = simulate_homodyne(fock_state(0, 20), 100_000, seed=4)
    t0 = time.perf_counter()
    r = ml_reconstruct(rec, MLConfig(n_max=20))
    assert time.perf_counter() - t0 < 10
    assert r.converged
    assert uhlmann_fidelity(r.rho, fock_state(0, 20)) >= 0.995


def test_coherent_round_trip_and_likelihood_monotone():
    truth = coherent_state(np.sqrt(4.2), 20)
    rec = simulate_homodyne(truth, 100_000, seed=5)
    r = ml_reconstruct(rec, MLConfig(n_max=20))
    assert uhlmann_fidelity(r.rho, truth) >= 0.99
    assert np.all(np.diff(r.loglik_history) >= 0)
    m = r.rho.elements
    np.testing.assert_allclose(m, m.conj().T, atol=1e-12)
    assert np.trace(m).real == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.eigvalsh(m).min() > -1e-12


@pytest.mark.parametrize("max_iter", [1, 2, 5, 20])
def test_every_iterate_is_a_density_matrix(max_iter):
    rec = simulate_homodyne(coherent_state(0.9, 10), 5000, seed=6)
    r = ml_reconstruct(rec, MLConfig(n_max=8, max_iter=max_iter))
    r.rho.validate()
    assert r.iterations <= max_iter
    assert np.all(np.diff(r.loglik_history) >= 0)


def test_too_few_samples_not_converged():
    rec = QuadratureRecord(np.linspace(0, 2 * np.pi, 10, endpoint=False), np.zeros(10))
    with pytest.raises(ValueError, match="insufficient phase coverage"):
        ml_reconstruct(rec)
    rec = QuadratureRecord(np.linspace(0, 2 * np.pi, 20, endpoint=False), np.zeros(20))
    r = ml_reconstruct(rec, MLConfig(n_max=5))
    assert not r.converged
    r.rho.validate()


def test_record_errors():
    with pytest.raises(ValueError, match="empty"):
        ml_reconstruct(QuadratureRecord(np.array([]), np.array([])))
    th = np.random.default_rng(0).uniform(0, np.pi, 2000)
    with pytest.raises(ValueError, match="insufficient phase coverage"):
        ml_reconstruct(QuadratureRecord(th, np.zeros_like(th)))
    with pytest.raises(ValueError):
        QuadratureRecord(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        MLConfig(n_phase_bins=4)


def test_statistical_consistency():
    truth = coherent_state(0.7, 8)
    cfg = MLConfig(n_max=8)
    means, errs = [], []
    for n in (1_000, 10_000, 100_000):
        f = [
            uhlmann_fidelity(ml_reconstruct(simulate_homodyne(truth, n, seed=s), cfg).rho, truth)
            for s in range(10)
        ]
        means.append(np.mean(f))
        errs.append(np.std(f, ddof=1) / np.sqrt(len(f)))
    for k in range(2):
        assert means[k + 1] >= means[k] - 2 * np.hypot(errs[k], errs[k + 1])
    assert means[-1] > means[0]


@pytest.mark.parametrize("phi", [0.3, 1.7, -2.2])
def test_phase_covariance(phi):
    cfg = MLConfig(n_max=12)
    rec = simulate_homodyne(coherent_state(1.2 * np.exp(0.4j), 14), 50_000, seed=8)
    base = ml_reconstruct(rec, cfg).rho
    turned = ml_reconstruct(rec.rotated(phi), cfg).rho
    # measuring at theta + phi what was at theta rotates the amplitude by +phi
    assert uhlmann_fidelity(turned, phase_rotate(base, -phi)) >= 0.999


def test_bin_doubling_insensitivity():
    truth = coherent_state(np.sqrt(0.76), 12)
    rec = simulate_homodyne(truth, 50_000, seed=11)
    coarse = ml_reconstruct(rec, MLConfig(n_max=12)).rho
    fine = ml_reconstruct(rec, MLConfig(n_max=12, n_phase_bins=60, n_x_bins=240)).rho
    assert uhlmann_fidelity(coarse, fine) >= 0.998
    f_c, f_f = uhlmann_fidelity(coarse, truth), uhlmann_fidelity(fine, truth)
    assert abs(f_c - f_f) < 3e-3


def test_displaced_record_shifts_means():
    alpha = 1.0 + 0.5j
    rec = simulate_homodyne(coherent_state(alpha, 20), 20_000, seed=12)
    moved = rec.displaced(alpha)
    assert abs(estimate_displacement(moved)) < 0.02
    r = ml_reconstruct(moved, MLConfig(n_max=6))
    assert uhlmann_fidelity(r.rho, fock_state(0, 6)) > 0.99


def test_pipeline_identity_channel():
    _, _, f = reconstruct_fidelity_pipeline(
        coherent_state(np.sqrt(0.76), 20), ChannelParams(eta_t=1.0), 100_000, MLConfig(n_max=20)
    )
    assert f >= 0.99


def test_pipeline_recentre_matches_plain_frame():
    rho = coherent_state(np.sqrt(2.0), 20)
    ch = ChannelParams(eta_t=0.826)
    cfg = MLConfig(n_max=20)
    _, _, f_plain = reconstruct_fidelity_pipeline(rho, ch, 50_000, cfg, seed=3)
    _, _, f_shift = reconstruct_fidelity_pipeline(rho, ch, 50_000, cfg, seed=3, recentre=True)
    assert f_shift == pytest.approx(f_plain, abs=5e-3)
