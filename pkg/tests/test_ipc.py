import numpy as np
import pytest
from scipy import stats

from ipclab.errors import CapExceeded, DomainError, MemoryBudgetError
from ipclab.fmw import run_chains
from ipclab.ipc import (BackboneDegree, DualOffspring, build_kcut, dual_offspring_pmf, prim, sample_backbone_degree,
                        sample_dual_offspring, sample_forest, sample_subtree_progeny)
from ipclab.offspring import Constant, ShiftedGeometric, Sibuya, Zeta
from ipclab.rng import stream
from ipclab.survival import SurvivalSolver
from ipclab.verify import chi2_p, tv_distance


def test_prim_structure(rng):
    c = prim(Zeta(1.5), 2000, rng)
    assert np.all(c.parent < c.child)
    assert np.all(c.depth == np.concatenate([[0], c.depth])[c.parent] + 1)
    assert np.all(np.diff(c.future_max) <= 0)
    assert np.all(c.weight > 0) and np.all(c.weight < 1)
    assert np.all(c.frontier_size >= 1)


def test_prim_future_max_approaches_pc():
    ok = 0
    for trial in range(100):
        c = prim(Constant(2), 10**5, stream(7, "prim-pc", trial))
        ok += c.weight[5 * 10**4:].max() <= 0.55
    assert ok >= 95


def test_prim_matches_fmw_levels():
    # the running future maximum along the invasion settles near the chain's level
    s = SurvivalSolver(Constant(2))
    fm = [prim(Constant(2), 20000, stream(8, "p", t)).future_max[10000] for t in range(60)]
    batch = run_chains(s, 40, 4000, stream(8, "c"))
    chain = np.exp(batch.final_log_w)
    assert np.median(fm) <= np.median(chain) * 1.1 + 0.0
    assert np.median(fm) > s.p_c


def test_prim_frontier_budget(rng):
    with pytest.raises(MemoryBudgetError):
        prim(Constant(3), 5000, rng, frontier_cap=100)
    with pytest.raises(DomainError):
        prim(Constant(2), 0, rng)


def test_backbone_degree_constant(rng):
    assert np.all(sample_backbone_degree(Constant(2), 0.6, rng, 1000) == 2)


@pytest.mark.parametrize("dist,w", [(Zeta(2.3), 0.9), (Zeta(1.5), 0.6), (Sibuya(0.5), 0.05),
                                    (Sibuya(0.5), 1e-4), (ShiftedGeometric(0.5), 0.7)], ids=str)
def test_backbone_degree_sampler_matches_pmf(dist, w, rng):
    bd = BackboneDegree(SurvivalSolver(dist), w)
    n = 2 * 10**5
    x = bd.sample(rng, n)
    top = 60
    support = np.arange(1, top + 1)
    pmf = np.append(bd.pmf(support), 0.0)
    pmf[-1] = max(1.0 - pmf[:-1].sum(), 0.0)
    counts = np.bincount(np.minimum(x, top + 1), minlength=top + 2)[1:]
    assert chi2_p(counts, pmf) > 1e-3
    if w > 1e-3:
        assert bd.pmf(np.arange(1, 2 * 10**5)).sum() == pytest.approx(1.0, abs=1e-8)


def test_backbone_degree_far_tail(rng):
    # with theta_hat -> 0 the scaled degree of a Sibuya backbone vertex is Gamma(1 - alpha)
    s = SurvivalSolver(Sibuya(0.5))
    w = 1e-4
    x = w * s.theta(w) * BackboneDegree(s, w).sample(rng, 10**5)
    assert stats.kstest(x, stats.gamma(0.5).cdf).statistic < 0.01


def test_dual_offspring_constant2():
    pmf = dual_offspring_pmf(Constant(2), 0.6, 5 / 9, 2)
    assert pmf[0] == pytest.approx(0.36)
    assert pmf.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("dist,w", [(Zeta(2.3), None), (Sibuya(0.5), 0.2), (ShiftedGeometric(0.5), 0.6)], ids=str)
def test_dual_offspring_sampler_exact(dist, w, rng):
    s = SurvivalSolver(dist)
    w = s.p_c * 1.2 if w is None else w
    dual = DualOffspring(s, w)
    pmf = dual_offspring_pmf(dist, w, dual.theta, 49)
    x = dual.sample(rng, 10**6)
    emp = np.bincount(np.minimum(x, 50), minlength=51)[:51] / x.size
    ref = np.append(pmf, 1 - pmf.sum())
    assert tv_distance(emp, ref) < 0.01
    assert np.mean(x) == pytest.approx(dual.mean, rel=0.01)


def test_dual_mean_sibuya(rng):
    # heavy right tail: the relative standard error at 10^6 draws is about 3%
    assert np.mean(sample_dual_offspring(Sibuya(0.5), 1e-3, rng, 10**6)) == pytest.approx(0.5, rel=0.1)


def test_subtree_progeny(rng):
    w = 0.55
    s = SurvivalSolver(Constant(2))
    dual = DualOffspring(s, w)
    x = sample_subtree_progeny(s, w, rng, size=10**5)
    assert x.min() >= 1
    assert np.mean(x) == pytest.approx(1 / (1 - dual.mean), rel=0.02)
    assert sample_subtree_progeny(s, w, rng) >= 1


def test_progeny_cap(rng):
    with pytest.raises(CapExceeded) as info:
        sample_subtree_progeny(Constant(2), 0.5 + 1e-4, rng, cap=10, size=10**4)
    assert info.value.cap == 10


def test_sample_forest_examples(rng):
    assert sample_forest(Constant(2), 0.6, 1, rng) == (0, 0)
    d_eff, h = sample_forest(Constant(2), 0.6, np.full(10**5, 2), rng)
    assert abs(np.mean(h == 0) - 0.4) < 0.005
    assert np.all((h == 0) == (d_eff == 0))
    with pytest.raises(DomainError):
        sample_forest(Constant(2), 0.6, 0, rng)


def test_effective_degree_gamma_limit(rng):
    s = SurvivalSolver(Sibuya(0.5))
    limit = stats.gamma(0.5)
    for w in (1e-2, 1e-3):
        d = BackboneDegree(s, w).sample(rng, 10**5)
        x = s.theta(w) * rng.binomial(d - 1, w)
        ks = stats.kstest(x, limit.cdf).statistic
        # the scaled count lives on a lattice of spacing theta(w), so the
        # atom at zero alone costs about P(Gamma < theta(w))
        assert ks == pytest.approx(np.mean(x == 0), abs=0.01)
        assert ks < limit.cdf(s.theta(w)) + 0.01
    assert ks < 0.05


def test_kcut_base_case(rng):
    run = build_kcut(Constant(2), 0, rng)
    (rec,) = run.records()
    assert rec.m_cum == 1 + rec.h


@pytest.mark.parametrize("dist", [Constant(2), Zeta(1.5), Sibuya(0.5)], ids=str)
def test_kcut_telescoping(dist, rng):
    run = build_kcut(dist, 100, rng)
    recs = run.records()
    m = 0
    for r in recs:
        m += 1 + r.h
        assert r.m_cum == pytest.approx(m, rel=1e-12)
        assert r.d_eff <= max(r.d - 1, 0) + 1e-9 or r.rescaled


def test_kcut_weight_marginal_matches_chain():
    s = SurvivalSolver(Constant(2))
    k, n = 50, 10**4
    rng = stream(9, "kcut-marginal")
    kc = np.array([build_kcut(s, k, rng).log_w[-1] for _ in range(n)])
    ch = run_chains(s, k, n, stream(9, "chain-marginal"), keep_paths=False).final_log_w
    assert stats.ks_2samp(kc, ch).statistic < 0.02 * 1.5


def test_kcut_rescaled_levels(rng):
    run = build_kcut(Sibuya(0.5), 60, rng, theta_floor=1e-3)
    assert run.rescaled.any()
    assert np.all(np.exp(run.log_theta[run.rescaled]) < 1e-3)
    exact = build_kcut(Sibuya(0.5), 5, rng, theta_floor=None)
    assert not exact.rescaled.any()
