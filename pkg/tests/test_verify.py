import json
import math

import numpy as np
import pytest
from scipy import integrate, stats

from ipclab.errors import ConfigError, InsufficientData
from ipclab.ipc import DualOffspring, sample_forest, sample_subtree_progeny
from ipclab.limits import RegimeParams, h_density, h_tail
from ipclab.offspring import Constant, ShiftedGeometric
from ipclab.rng import stream
from ipclab.survival import SurvivalSolver
from ipclab.verify import (TestReport, chi2_p, hk_pmf_oracle, ks_stat, make_config, reports_to_json, run_suite,
                           tail_from_density, tv_distance, verdict)


def test_ks_null_calibration():
    n = 2000
    hits = sum(ks_stat(stream(s, "ks").random(n), stats.uniform.cdf) < 1.36 / math.sqrt(n) for s in range(60))
    assert hits >= 51


def test_statistics_need_data():
    with pytest.raises(InsufficientData):
        ks_stat(np.arange(10.0), stats.norm.cdf)
    with pytest.raises(InsufficientData):
        chi2_p([3, 4], [0.5, 0.5])


def test_tv_distance():
    p = np.array([0.2, 0.3, 0.5])
    assert tv_distance(p, p) == 0.0
    assert tv_distance(p, [0.5, 0.3, 0.2]) == pytest.approx(0.3)


def test_chi2_power_and_calibration(rng):
    pmf = np.full(10, 0.1)
    shifted = pmf.copy()
    shifted[3] += 0.1 * 0.1
    shifted[7] -= 0.1 * 0.1
    n = 10**5
    counts = np.bincount(rng.choice(10, n, p=shifted), minlength=10)
    assert chi2_p(counts, pmf) < 1e-6
    null = np.bincount(rng.choice(10, n, p=pmf), minlength=10)
    assert chi2_p(null, pmf) > 1e-3


def test_tail_from_density():
    grid = np.geomspace(1e-8, 60, 4000)
    dens = np.exp(-grid)
    assert tail_from_density(grid, dens, 1e-8) == pytest.approx(1.0, abs=1e-4)
    params = RegimeParams.from_dist(Constant(2))
    grid = np.geomspace(0.1, 1e3, 20000)
    vals = h_density(params, grid, 1.0)
    for x in (0.5, 1.0):
        assert tail_from_density(grid, vals, x) == pytest.approx(h_tail(params, x, 1.0), abs=1e-6)
    assert tail_from_density(grid, vals, 0.5) > tail_from_density(grid, vals, 1.0)


def test_oracle_examples():
    pmf = hk_pmf_oracle(Constant(2), 0.6, 200)
    assert pmf[0] == pytest.approx(0.4)
    assert 0.99 < pmf.sum() <= 1 + 1e-12
    empty = hk_pmf_oracle(Constant(2), 0.6, 50, d_eff_pmf=[1.0])
    assert empty[0] == 1.0 and empty[1:].sum() == 0.0
    with pytest.raises(ValueError):
        hk_pmf_oracle(Constant(2), 0.6, 2000)


def test_oracle_single_tree_slice(rng):
    law, w = ShiftedGeometric(0.5), 0.6
    pmf = hk_pmf_oracle(law, w, 30, d_eff_pmf=[0.0, 1.0])
    n = 2 * 10**5
    x = sample_subtree_progeny(law, w, rng, size=n)
    counts = np.bincount(np.minimum(x, 31), minlength=32)[1:32]
    ref = np.append(pmf[1:], 1 - pmf[1:].sum())
    assert chi2_p(counts, ref) > 0.01


def test_oracle_forest_equivalence(rng):
    n = 2 * 10**5
    w = 0.6
    _, h = sample_forest(Constant(2), w, np.full(n, 2), rng)
    pmf = hk_pmf_oracle(Constant(2), w, 30)
    counts = np.bincount(np.minimum(h, 31), minlength=32)[:32]
    assert chi2_p(counts, np.append(pmf, 1 - pmf.sum())) > 0.01


def test_oracle_mean_progeny():
    s = SurvivalSolver(Constant(2))
    w = 0.55
    pmf = hk_pmf_oracle(s, w, 1000, d_eff_pmf=[0.0, 1.0])
    mean = np.sum(np.arange(pmf.size) * pmf)
    assert mean == pytest.approx(1 / (1 - DualOffspring(s, w).mean), rel=1e-3)


def test_theta_suite():
    reports = run_suite("theta-analytic", {"seed": 42})
    assert len(reports) == 3
    assert all(r.passed for r in reports)
    assert all(r.criterion == 1 for r in reports)


def test_low_power_flag():
    reports = run_suite("wk-scaling", {"scale": 10 / 2000})
    assert all(r.n == 10 for r in reports)
    assert all(r.low_power for r in reports)


def test_config_errors():
    with pytest.raises(ConfigError):
        run_suite("no-such-suite")
    with pytest.raises(ConfigError):
        make_config({"seeds": 1})
    with pytest.raises(ConfigError):
        make_config({"scale": -1})


def test_report_json_is_stable():
    reports = [TestReport("a", 1, 0.1, 0.2, 10, 7, runtime=1.5),
               TestReport("b", 2, 0.3, 0.2, 10, 7, informational=True)]
    text = reports_to_json(reports)
    assert text == reports_to_json(reports)
    data = json.loads(text)
    assert "runtime" not in data[0]
    assert json.loads(reports_to_json(reports, timings=True))[0]["runtime"] == 1.5
    assert [d["passed"] for d in data] == [True, False]
    assert verdict(reports)
    assert list(data[0]) == sorted(data[0])


def test_suite_reproducible_across_threads():
    a = reports_to_json(run_suite("wk-decay", {"seed": 3, "quick": True, "threads": 1}))
    b = reports_to_json(run_suite("wk-decay", {"seed": 3, "quick": True, "threads": 2}))
    assert a == b
