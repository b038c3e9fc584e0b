import math

import numpy as np
import pytest
from scipy import stats

from urnbridge import (
    SpectralDeclined,
    SpectralModel,
    bridged_cov_kernel,
    example1_measure,
    limit_w2_mean,
    limit_w2_sample,
    mc_cdf,
    nystrom_eigs,
    smirnov_cdf,
    spectral_p_value,
)
from urnbridge._rng import derive_rng


def _brownian_bridge(s, t):
    return np.minimum(s, t) - s * t


def _zero(s, t):
    return np.zeros(np.broadcast(s, t).shape)


# ---------------------------------------------------------------------------
# Nystrom eigenvalues
# ---------------------------------------------------------------------------

def test_nystrom_brownian_bridge_oracle():
    # classical spectrum 1/(k pi)^2; injected on both diagonal blocks with a
    # zero cross kernel the doubled copies merge into multiplicity-2 entries
    model = nystrom_eigs(
        0.5, m=512, kmax=20, kernel_override=(_brownian_bridge, _zero)
    )
    assert np.all(model.multiplicities == 2)
    ks = np.arange(1, 11)
    expect = (ks * math.pi) ** 2
    rel = np.abs(model.lambdas[:10] - expect) / expect
    assert rel.max() < 1e-3


def test_nystrom_block_diagonal_decoupling():
    # zero cross kernel: spectrum is the two-fold multiset of the single
    # process spectrum
    theta = 0.5
    same = lambda s, t: bridged_cov_kernel(theta, s, t)
    model = nystrom_eigs(theta, m=256, kmax=24, kernel_override=(same, _zero))
    assert np.all(model.multiplicities == 2)


def test_nystrom_trace_identity():
    theta = 0.5
    model = nystrom_eigs(theta)
    trace_quad = limit_w2_mean(theta)  # = integral of both diagonal kernels
    assert abs(model.trace - trace_quad) < 1e-8
    retained = float(np.sum(model.multiplicities / model.lambdas))
    assert retained <= model.trace + 1e-12
    assert abs(retained - trace_quad) < 0.01 * trace_quad
    assert 0.99 <= model.trace_captured <= 1.0


def test_nystrom_discretization_stability():
    # top-10 eigenvalues move by < 0.5% when m doubles
    theta = 0.5
    a = nystrom_eigs(theta, m=256, kmax=64)
    b = nystrom_eigs(theta, m=512, kmax=64)
    rel = np.abs(a.lambdas[:10] - b.lambdas[:10]) / b.lambdas[:10]
    assert rel.max() < 5e-3


def test_nystrom_scaling_invariance():
    # multiplying the kernel by a divides each lambda by a
    theta, a = 0.5, 3.7
    same = lambda s, t: bridged_cov_kernel(theta, s, t)
    same_scaled = lambda s, t: a * bridged_cov_kernel(theta, s, t)
    cross = lambda s, t: np.asarray(
        np.vectorize(lambda u, v: 0.0)(s, t), dtype=float
    )
    base = nystrom_eigs(theta, m=256, kmax=16, kernel_override=(same, _zero))
    scaled = nystrom_eigs(theta, m=256, kmax=16, kernel_override=(same_scaled, _zero))
    np.testing.assert_allclose(scaled.lambdas, base.lambdas / a, rtol=1e-10)


def test_nystrom_resolution_guard():
    with pytest.raises(ValueError):
        nystrom_eigs(0.5, m=100, kmax=64)


def test_nystrom_estimated_variant_needs_measure():
    with pytest.raises(ValueError):
        nystrom_eigs(0.5, variant="estimated", m=256, kmax=16)


def test_nystrom_estimated_variant_psd():
    model = nystrom_eigs(0.5, variant="estimated", measure=example1_measure(),
                         m=256, kmax=64)
    assert np.all(model.lambdas > 0)
    assert model.trace < limit_w2_mean(0.5)  # the correction removes variance


# ---------------------------------------------------------------------------
# Smirnov formula
# ---------------------------------------------------------------------------

def test_smirnov_single_eigenvalue_chi_square():
    # W = eta^2 / lam: F(x) = P(chi2_1 <= lam x)
    lam = 2.5
    model = SpectralModel.from_eigenvalues([lam])
    for x in (0.01, 0.1, 0.5, 1.0, 3.0):
        expect = stats.chi2.cdf(lam * x, df=1)
        assert abs(smirnov_cdf(model, x) - expect) < 1e-6


def test_smirnov_two_eigenvalues_vs_monte_carlo():
    lams = np.array([1.3, 4.1])
    model = SpectralModel.from_eigenvalues(lams)
    rng = derive_rng(44)
    draws = (rng.standard_normal((400_000, 2)) ** 2 / lams).sum(axis=1)
    draws.sort()
    for q in (0.1, 0.3, 0.5, 0.7, 0.9):
        x = float(np.quantile(draws, q))
        emp = np.searchsorted(draws, x, side="right") / len(draws)
        assert abs(smirnov_cdf(model, x) - emp) < 4.0 / math.sqrt(len(draws)) + 1e-3


def test_smirnov_monotone_ladder():
    model = nystrom_eigs(0.5, m=256, kmax=64)
    xs = np.linspace(0.02, 2.0, 100)
    vals = [smirnov_cdf(model, float(x)) for x in xs]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
    assert all(0.0 <= v <= 1.0 for v in vals)


def test_smirnov_limits():
    model = nystrom_eigs(0.5, m=512, kmax=128)
    ew2 = limit_w2_mean(0.5)
    assert smirnov_cdf(model, 1e3 * ew2) > 1.0 - 1e-9
    # deep left tail within the formula's validity range
    assert smirnov_cdf(model, 0.02) < 1e-6
    # at extreme x the alternating terms stop decreasing and the evaluation
    # must decline rather than return garbage
    with pytest.raises(SpectralDeclined):
        smirnov_cdf(model, 1e-6 * ew2)


def test_smirnov_rejects_nonpositive_x():
    model = SpectralModel.from_eigenvalues([1.0, 2.0])
    with pytest.raises(ValueError):
        smirnov_cdf(model, 0.0)
    with pytest.raises(ValueError):
        smirnov_cdf(model, -1.0)


def test_smirnov_declines_on_heavy_multiplicity():
    model = nystrom_eigs(
        0.5, m=256, kmax=16, kernel_override=(_brownian_bridge, _zero)
    )
    assert np.any(model.multiplicities > 1)
    with pytest.raises(SpectralDeclined):
        smirnov_cdf(model, 0.3)


def test_smirnov_vs_monte_carlo_deciles_known():
    theta = 0.5
    model = nystrom_eigs(theta)
    sample = limit_w2_sample(theta, grid_size=128, reps=30_000, seed=3)
    for d in range(1, 10):
        q = float(np.quantile(sample.w2_values, d / 10.0))
        assert abs(smirnov_cdf(model, q) - mc_cdf(sample, q)) < 0.015


def test_smirnov_vs_monte_carlo_deciles_estimated():
    theta = 0.5
    measure = example1_measure()
    model = nystrom_eigs(theta, variant="estimated", measure=measure)
    sample = limit_w2_sample(theta, "estimated", measure, grid_size=128,
                             reps=30_000, seed=5)
    for d in range(1, 10):
        q = float(np.quantile(sample.w2_values, d / 10.0))
        assert abs(smirnov_cdf(model, q) - mc_cdf(sample, q)) < 0.015


# ---------------------------------------------------------------------------
# p-values
# ---------------------------------------------------------------------------

def test_spectral_p_value_zero_observation():
    model = SpectralModel.from_eigenvalues([1.0, 2.0])
    assert spectral_p_value(model, 0.0) == 1.0
    with pytest.raises(ValueError):
        spectral_p_value(model, -0.1)


def test_spectral_p_value_tail_percentile():
    theta = 0.5
    model = nystrom_eigs(theta)
    sample = limit_w2_sample(theta, grid_size=128, reps=30_000, seed=7)
    q95 = float(np.quantile(sample.w2_values, 0.95))
    assert abs(spectral_p_value(model, q95) - 0.05) < 0.01


def test_spectral_p_value_extreme_observation():
    model = nystrom_eigs(0.5, m=256, kmax=64)
    assert spectral_p_value(model, 50.0) < 1e-4


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_spectral_model_save_load_roundtrip(tmp_path):
    model = nystrom_eigs(0.5, m=256, kmax=32)
    path = tmp_path / "model.txt"
    model.save(path)
    loaded = SpectralModel.load(path)
    np.testing.assert_array_equal(loaded.lambdas, model.lambdas)
    np.testing.assert_array_equal(loaded.multiplicities, model.multiplicities)
    assert loaded.trace == model.trace
    assert loaded.theta == model.theta
    assert loaded.variant == model.variant
    assert loaded.kmax == model.kmax
    assert loaded.quad_size == model.quad_size
    # p-values agree bit for bit after reload
    assert spectral_p_value(loaded, 0.33) == spectral_p_value(model, 0.33)
