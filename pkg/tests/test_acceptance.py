"""Acceptance criteria, one test each, at full sample sizes.

Every test prints a single PASS/FAIL line (collected again in the terminal
summary). Reports marked informational are shown next to the verdict but do
not decide it.
"""

import time

import pytest

from conftest import ACCEPTANCE_LINES
from ipclab.rng import DEFAULT_SEED
from ipclab.verify import SUITES, SuiteConfig, reports_to_json, run_suite, verdict

BUDGET_SECONDS = {1: 1, 2: 60, 3: 300, 4: 60, 5: 60, 6: 60, 7: 60, 8: 120, 9: 300, 10: 60, 11: 60, 12: 600}
SUITE_OF = {criterion: name for name, (criterion, _) in SUITES.items()}
CONFIG = SuiteConfig(seed=DEFAULT_SEED, threads=1)

_results: dict[str, tuple[list, float]] = {}


def _run(name):
    if name not in _results:
        start = time.perf_counter()
        reports = run_suite(name, CONFIG)
        _results[name] = (reports, time.perf_counter() - start)
    return _results[name]


def _describe(r):
    flag = "ok" if r.passed else "miss"
    extra = f" ({r.note})" if r.note else ""
    return f"{r.name}: {r.statistic:.4g} vs {r.threshold:g} {flag}{extra}"


def _emit(criterion, passed, summary):
    line = f"criterion {criterion:>2} {'PASS' if passed else 'FAIL'}  {summary}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.mark.parametrize("criterion", sorted(SUITE_OF))
def test_criterion(criterion):
    name = SUITE_OF[criterion]
    reports, elapsed = _run(name)
    budget = BUDGET_SECONDS[criterion]
    gated = [r for r in reports if not r.informational]
    shown = "; ".join(_describe(r) for r in gated)
    reference = [r for r in reports if r.informational]
    if reference:
        shown += " | informational: " + "; ".join(_describe(r) for r in reference)
    ok = verdict(reports) and elapsed < budget and not any(r.low_power for r in gated)
    _emit(criterion, ok, f"[{name}, {elapsed:.1f} s of {budget} s] {shown}")
    assert verdict(reports), shown
    assert elapsed < budget


def test_criterion_13_determinism():
    start = time.perf_counter()
    mismatched = []
    for name in SUITES:
        first = reports_to_json(_run(name)[0])
        again = reports_to_json(run_suite(name, SuiteConfig(seed=CONFIG.seed, threads=2)))
        if first != again:
            mismatched.append(name)
    elapsed = time.perf_counter() - start
    summary = (f"[all suites re-run with seed {CONFIG.seed} on 2 threads, {elapsed:.1f} s] "
               f"byte-identical JSON for {len(SUITES) - len(mismatched)}/{len(SUITES)} suites")
    if mismatched:
        summary += f"; differing: {', '.join(mismatched)}"
    _emit(13, not mismatched, summary)
    assert not mismatched
