import math

import numpy as np
import pytest
from scipy import integrate, stats

from ipclab.errors import DomainError, RegimeError
from ipclab.limits import (RegimeParams, alep_marginals, alep_path, cox_points, cox_volume_sample, epdp_laplace,
                           epdp_log_sample, epdp_rate, epdp_sample, h_density, h_mass, h_tail, laplace_exponent,
                           psi_sampler, skewed_stable_scale, stable_density, window_intensity, z_process_sample)
from ipclab.offspring import Constant, Sibuya, Zeta
from ipclab.rng import stream


# -- envelope paths -------------------------------------------------------------


def test_alep_path_is_non_increasing(rng):
    path = alep_path(1.5, 0.0, 0.01, 5.0, rng)
    assert np.all(np.diff(path.levels) < 0)
    assert np.all(np.diff(path.breakpoints) > 0)
    assert path(0.01) == path.levels[0]
    assert path(5.0) == path.levels[-1]


def test_alep_unit_mean(rng):
    x = alep_marginals(2.0, 0.0, 0.01, [1.0], 10**5, rng)[:, 0]
    assert np.mean(x) == pytest.approx(1.0, abs=0.01)


def test_path_sampler_agrees_with_marginal_sampler(rng):
    a = np.array([alep_path(1.5, 0.0, 0.1, 1.0, rng)(1.0) for _ in range(20000)])
    b = alep_marginals(1.5, 0.0, 0.1, [1.0], 20000, rng)[:, 0]
    assert stats.ks_2samp(a, b).statistic < 0.02


@pytest.mark.parametrize("eta", [-0.3, 0.4])
def test_generalised_marginal(eta, rng):
    ah = 1.5
    x = alep_marginals(ah, eta, 0.01, [0.5, 2.0], 10**5, rng)
    for j, t in enumerate((0.5, 2.0)):
        law = stats.gamma((1 + eta) / (ah - 1), scale=1 / ((1 - eta) * t))
        assert stats.kstest(x[:, j], law.cdf).statistic < 0.02


def test_alep_domain(rng):
    with pytest.raises(DomainError):
        alep_path(2.5, 0.0, 0.1, 1.0, rng)
    with pytest.raises(DomainError):
        alep_marginals(1.5, 0.0, 0.1, [0.05], 10, rng)


# -- decay process --------------------------------------------------------------


def test_epdp_at_zero(rng):
    assert epdp_sample(0.5, 0.0, 0.0, rng) == 1.0


def test_epdp_laplace_and_concentration(rng):
    k = 100
    x = epdp_log_sample(0.5, 0.0, k, rng, 10**6)
    assert np.mean(np.exp(-x / k)) == pytest.approx(epdp_laplace(0.5, 0.0, k, 1.0, 1.0), rel=0.01)
    k = 1000
    root = np.exp(-epdp_log_sample(0.5, 0.0, k, rng, 10**4) / k)
    assert np.std(root) < 0.02
    assert np.mean(root) == pytest.approx(math.exp(-epdp_rate(0.5, 0.0, 1.0)), rel=0.01)


# -- stable densities -----------------------------------------------------------


def test_cauchy_and_gaussian():
    x = np.array([0.0, 0.3, 1.0, 7.0, 80.0])
    np.testing.assert_allclose(stable_density(1.0, 2.0, x), 2.0 / (math.pi * (4.0 + x**2)))
    assert stable_density(2.0, 1.5, 0.0) == pytest.approx(1 / (2 * 1.5 * math.sqrt(math.pi)))


@pytest.mark.parametrize("alpha", [0.5, 0.99, 1.01, 1.3, 1.7, 1.99])
def test_stable_density_near_closed_forms(alpha):
    # small-x power series, convergent for alpha > 1 and asymptotic otherwise
    x = np.array([1e-9, 1e-4, 0.005 if alpha > 1 else 1e-3])
    series = sum((-1) ** k * math.gamma((2 * k + 1) / alpha) / math.factorial(2 * k) * x ** (2 * k)
                 for k in range(4)) / (math.pi * alpha)
    np.testing.assert_allclose(stable_density(alpha, 1.0, x), series, rtol=1e-9)


@pytest.mark.parametrize("alpha", [0.5, 1.3, 1.7])
def test_stable_normalisation(alpha):
    c = 0.8
    x = np.linspace(0.0, 200 * c, 40001)
    body = 2 * integrate.simpson(stable_density(alpha, c, x), x=x)
    # mass beyond 200c from the large-x series integrated term by term
    far = 2 / math.pi * sum((-1) ** (k + 1) * math.gamma(alpha * k + 1) / math.factorial(k)
                            * math.sin(math.pi * alpha * k / 2) * 200.0 ** (-alpha * k) / (alpha * k)
                            for k in range(1, 11))
    assert body + far == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("alpha", [0.5, 1.5])
def test_stable_symmetric_and_unimodal(alpha):
    x = np.linspace(0.01, 60, 300)
    left, right = stable_density(alpha, 1.0, -x), stable_density(alpha, 1.0, x)
    np.testing.assert_allclose(left, right, rtol=1e-12)
    assert np.all(np.diff(right) < 0)


def test_skewed_stable_matches_levy_law():
    # the one-sided stable law with index 1/2 is the Levy distribution
    c = skewed_stable_scale(0.5, Sibuya(0.5).c_x)
    x = np.geomspace(0.01, 100, 20)
    dens = stable_density(0.5, c, x, skew=True)
    # both characteristic functions equal exp(-sqrt(c |t|) (1 - i sign t))
    np.testing.assert_allclose(dens, stats.levy.pdf(x, scale=c), rtol=1e-6)
    assert stable_density(0.5, c, -1.0, skew=True) == 0.0


# -- forest-size densities ------------------------------------------------------


def test_h_spot_value_finite_variance():
    params = RegimeParams.from_dist(Constant(2))
    assert h_density(params, 1.0, 1.0) == pytest.approx(math.exp(-1) / math.sqrt(math.pi), rel=1e-12)
    assert h_density(params, 1.0, 1.0) == pytest.approx(0.2075, abs=1e-4)
    corrected = RegimeParams.from_dist(Constant(2), corrected=True)
    assert h_density(corrected, 1.0, 1.0) == pytest.approx(0.5 * h_density(params, 1.0, 1.0))


def test_h_tail_closed_form_matches_quadrature():
    params = RegimeParams.from_dist(Zeta(2.3))
    for y in (0.1, 0.5, 1.0, 3.0):
        quad = integrate.quad(lambda u: h_density(params, u, 1.0), y, np.inf, epsabs=1e-13)[0]
        assert h_tail(params, y, 1.0) == pytest.approx(quad, abs=1e-6)


@pytest.mark.parametrize("dist,corrected", [(Constant(2), False), (Zeta(1.5), False), (Zeta(1.5), True),
                                            (Sibuya(0.5), True)], ids=str)
def test_h_tail_finite_and_monotone(dist, corrected):
    params = RegimeParams.from_dist(dist, corrected=corrected)
    tails = h_tail(params, np.array([0.1, 1.0, 10.0, 100.0]), 1.0)
    assert np.all(np.diff(tails) < 0)
    _, rest = h_mass(params, 1.0)
    assert rest <= 1e-6


def test_h_is_a_probability_density_for_one_sided_law():
    params = RegimeParams.from_dist(Sibuya(0.5), corrected=True)
    body, rest = h_mass(params)
    assert body + rest == pytest.approx(1.0, abs=1e-4)


def test_h_infinite_variance_quadrature_agrees():
    params = RegimeParams.from_dist(Zeta(1.5), corrected=True)
    y = 2.0
    quad = integrate.quad(lambda u: h_density(params, u, 0.7), y, np.inf, limit=200)[0]
    assert h_tail(params, y, 0.7) == pytest.approx(quad, rel=1e-4)


def test_h_rejects_non_positive_x():
    with pytest.raises(DomainError):
        h_density(RegimeParams.from_dist(Constant(2)), 0.0)


# -- Psi sampler and Z process --------------------------------------------------


def test_psi_sampler_matches_density(rng):
    params = RegimeParams.from_dist(Sibuya(0.5), corrected=True)
    sampler = psi_sampler(params)
    x = sampler.sample(rng, 10**5)

    def cdf(v):
        # integrate in log y, where the density is smooth
        return np.array([integrate.quad(lambda v: h_density(params, math.exp(v)) * math.exp(v), -60, math.log(t), epsrel=1e-6,
                                        limit=200)[0] for t in np.atleast_1d(v)])

    probe = np.quantile(x, [0.05, 0.25, 0.5, 0.75, 0.95])
    assert np.max(np.abs(cdf(probe) / sampler.mass - [0.05, 0.25, 0.5, 0.75, 0.95])) < 0.02
    assert stats.kstest(x, sampler.cdf_at).statistic < 0.02


def test_z_process_structure(rng):
    params = RegimeParams.from_dist(Sibuya(0.5), corrected=True)
    z = z_process_sample(params, 3, 1e-6, rng, 500)
    assert np.all(z.values > 0)
    assert np.all(np.diff(z.values, axis=1) <= 0)
    assert np.all(z.terms >= 64)
    single = z_process_sample(params, 0, 1e-6, rng)
    assert single.shape == (1,)
    with pytest.raises(DomainError):
        z_process_sample(params, 0, 0.0, rng)


# -- Cox volume -----------------------------------------------------------------


def test_cox_volume_scales_with_window():
    params = RegimeParams.from_dist(Constant(2), corrected=True)
    v1 = cox_volume_sample(params, 1.0, None, stream(5, "cox"), 10**4)
    v2 = cox_volume_sample(params, 2.0, None, stream(5, "cox"), 10**4)
    assert np.mean(v1) < np.mean(v2)
    # stationarity of the envelope makes the window-t volume equal t^gamma times the window-1 volume
    assert np.median(v2) / np.median(v1) == pytest.approx(4.0, rel=0.05)


def test_cox_empty_window_probability(rng):
    params = RegimeParams.from_dist(Constant(2), corrected=True)
    x_min, n = 0.05, 4000
    empty, predicted = 0, 0.0
    for _ in range(n):
        draw = cox_points(params, 1.0, 0.01, rng)
        empty += not np.any(draw.x >= x_min)
        predicted += math.exp(-window_intensity(params, draw.path, x_min))
    assert empty / n == pytest.approx(predicted / n, rel=0.02 + 3 / math.sqrt(empty))


def test_laplace_exponent_limits(rng):
    params = RegimeParams.from_dist(Constant(2), corrected=True)
    path = alep_path(2.0, 0.0, 0.01, 1.0, rng)
    small = laplace_exponent(params, path, 1e-6)
    big = laplace_exponent(params, path, 10.0)
    assert 0 < small < big < np.inf
    assert laplace_exponent(params, path, 1e-7) < small


def test_cox_requires_finite_mean(rng):
    with pytest.raises(RegimeError):
        cox_points(RegimeParams.from_dist(Sibuya(0.5), corrected=True), 1.0, 0.01, rng)
