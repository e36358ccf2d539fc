import math

import numpy as np
import pytest
from scipy import special

from ipclab.errors import DomainError
from ipclab.offspring import Constant, ShiftedGeometric, Sibuya, Table, Zeta, parse_dist

LAWS = [Constant(2), Constant(3), ShiftedGeometric(0.5), Sibuya(0.5), Sibuya(0.3), Zeta(2.3), Zeta(1.5)]


def test_pmf_examples():
    assert Constant(2).pmf(2) == 1.0
    assert Constant(2).pmf(3) == 0.0
    assert Sibuya(0.5).pmf(1) == pytest.approx(0.5)
    assert Sibuya(0.3).pmf(1) == pytest.approx(0.3)
    assert Sibuya(0.5).pmf(2) == pytest.approx(0.125)


def test_tail_examples():
    assert Constant(2).tail(1.5) == 1.0
    assert Constant(2).tail(2) == 0.0
    assert Sibuya(0.5).tail(1e6) == pytest.approx(1e-3 / math.gamma(0.5), rel=0.01)


@pytest.mark.parametrize("law", [Sibuya(0.5), Zeta(2.3), Zeta(1.5)], ids=str)
def test_tail_constant(law):
    x = np.array([1e4, 1e5, 1e6])
    np.testing.assert_allclose(law.tail(x) * x**law.alpha, law.c_x, rtol=0.01)


@pytest.mark.parametrize("law", LAWS, ids=str)
@pytest.mark.parametrize("L", [10, 1000, 100000])
def test_mass_conservation(law, L):
    total = float(np.sum(law.pmf(np.arange(1, L + 1)))) + float(law.tail(L))
    assert total == pytest.approx(1.0, abs=1e-10)


def test_constant_samples(rng):
    assert np.all(Constant(3).sample(rng, 1000) == 3)
    assert Constant(3).sample(rng) == 3


def test_sibuya_sampling(rng):
    x = Sibuya(0.5).sample(rng, 10**6)
    assert abs(np.mean(x == 1) - 0.5) < 0.002
    assert x.min() >= 1


def test_zeta_mean(rng):
    law = Zeta(2.3)
    exact = special.zeta(2.3) / special.zeta(3.3)
    assert law.mean == pytest.approx(exact, rel=1e-10)
    assert np.mean(law.sample(rng, 10**6)) == pytest.approx(exact, rel=0.01)


@pytest.mark.parametrize("law", [ShiftedGeometric(0.5), Sibuya(0.5), Zeta(2.3), Zeta(0.7)], ids=str)
def test_sampler_matches_cdf(law, rng):
    n = 10**6
    x = law.sample(rng, n)
    support = np.arange(1, 200)
    emp = np.searchsorted(np.sort(x), support, side="right") / n
    assert np.max(np.abs(emp - law.cdf(support))) < 4 / math.sqrt(n)


def test_tilted_moment_examples():
    assert Constant(2).tilted_moment(1 / 3, 1) == pytest.approx(4 / 3)
    for law in LAWS:
        assert law.tilted_moment(1.0, 0) == pytest.approx(0.0, abs=1e-15)
    for s in (1e-9, 1e-3, 0.2, 0.7):
        assert Sibuya(0.5).tilted_moment(s, 0) == pytest.approx(1 - s**0.5, rel=1e-12)
        assert Constant(3).tilted_moment(s, 0) == pytest.approx((1 - s) ** 3, rel=1e-12)


@pytest.mark.parametrize("law", [Zeta(2.3), Zeta(1.5), Zeta(0.6)], ids=str)
@pytest.mark.parametrize("s", [1e-5, 1e-3, 0.05, 0.5])
def test_power_tail_phi_against_direct_sum(law, s):
    # beyond L terms (1-s)^l < e^-60, so the remainder is just the tail mass
    L = int(60 / s)
    l = np.arange(1, L + 1, dtype=float)
    p = law.pmf(l)
    direct = float(np.sum(p * -np.expm1(l * math.log1p(-s)))) + float(law.tail(L))
    assert float(law.phi(s)) == pytest.approx(direct, rel=1e-6)


def test_infinite_mean_phi_near_zero():
    law = Zeta(0.6)
    s = 1e-12
    leading = math.gamma(1 - law.alpha) * law.c_x * s**law.alpha
    assert float(law.phi(s)) == pytest.approx(leading, rel=1e-3)


@pytest.mark.parametrize("law", LAWS, ids=str)
def test_phi_derivative(law):
    s = np.array([1e-3, 0.1, 0.5])
    h = 1e-6 * s
    fd = (law.phi(s + h) - law.phi(s - h)) / (2 * h)
    np.testing.assert_allclose(law.phi_prime(s), fd, rtol=1e-5)


def test_parse_dist():
    assert parse_dist("constant:d=2") == Constant(2)
    assert parse_dist("zeta:alpha=2.3") == Zeta(2.3)
    assert parse_dist("sibuya:alpha=0.5") == Sibuya(0.5)
    assert parse_dist("geom1:q=0.5") == ShiftedGeometric(0.5)
    with pytest.raises(DomainError):
        parse_dist("poisson:lam=1")
    with pytest.raises(DomainError):
        parse_dist("zeta:beta=1")


def test_invalid_parameters():
    with pytest.raises(DomainError):
        Sibuya(1.5)
    with pytest.raises(DomainError):
        Zeta(-1)


def test_table_requires_consistent_tail(tmp_path):
    z = Zeta(2.3)
    probs = z.pmf(np.arange(1, 51))
    good = tmp_path / "t.csv"
    good.write_text(f"# alpha=2.3 cx={z.c_x}\nl,prob\n" + "".join(f"{i + 1},{float(p)!r}\n" for i, p in enumerate(probs)))
    table = Table.from_csv(good)
    assert table.mean == pytest.approx(z.mean, rel=1e-8)
    assert float(table.phi(1e-3)) == pytest.approx(float(z.phi(1e-3)), rel=1e-8)
    bad = tmp_path / "b.csv"
    bad.write_text("# alpha=2.3 cx=1.0\n" + "".join(f"{i + 1},{float(p)!r}\n" for i, p in enumerate(probs)))
    with pytest.raises(DomainError):
        Table.from_csv(bad)
    missing = tmp_path / "m.csv"
    missing.write_text("1,0.5\n")
    with pytest.raises(DomainError):
        Table.from_csv(missing)


def test_sampler_is_seed_deterministic():
    from ipclab.rng import stream
    a = Zeta(1.5).sample(stream(1, "x"), 1000)
    b = Zeta(1.5).sample(stream(1, "x"), 1000)
    assert np.array_equal(a, b)
