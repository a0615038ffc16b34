"""End-to-end acceptance criteria.

Runs every branch through continuation and stability analysis once per
module, then evaluates each criterion at its stated tolerance.  A one-line
PASS/FAIL summary per criterion is printed at the end of the pytest run.
"""

import os

import pytest

from bridgestab import modes, pipeline, reference
from bridgestab.params import default_tnb

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.slow

BRANCHES = tuple(range(1, 11))
FIGURE_PERIODS = {7: 2.18, 8: 1.86}


def _record(c: pipeline.Criterion):
    ACCEPTANCE_LINES.append(c.line())
    assert c.passed, c.line()


@pytest.fixture(scope="module")
def params():
    return default_tnb()


@pytest.fixture(scope="module")
def outcomes(params):
    grid = list(reference.GRID_MJ)
    jobs = [
        pipeline.BranchJob(params=params, k=k, n=modes.default_truncation(k), stability=True,
                           grid_mj=tuple(grid), at_T=FIGURE_PERIODS.get(k))
        for k in BRANCHES
    ]
    workers = int(os.environ.get("BRIDGESTAB_JOBS", os.cpu_count() or 1))
    return {o.k: o for o in pipeline.run_jobs(jobs, workers)}


def test_1_small_energy_periods(params):
    _record(pipeline.check_small_energy_periods(params)[0])


def test_2_flat_cable_closed_form(params):
    _record(pipeline.check_flat_cable(params)[0])


def test_3_thresholds(outcomes):
    _record(pipeline.check_thresholds(outcomes)[0])


def test_4_expansion_rate_spot_checks(outcomes):
    _record(pipeline.check_spot_values(outcomes)[0])


@pytest.fixture(scope="module")
def properties(outcomes, params):
    return {(c.key, c.title): c for c in pipeline.check_properties(outcomes, params)}


@pytest.mark.parametrize("key", ["5a", "5b", "5c", "5d", "5e", "5f", "5g"])
def test_5_properties(properties, key):
    found = [c for (k, _), c in properties.items() if k == key]
    assert found
    for c in found:
        ACCEPTANCE_LINES.append(c.line())
    bad = [c.line() for c in found if not c.passed]
    assert not bad, "; ".join(bad)


def test_6_mode_shapes(outcomes):
    _record(pipeline.check_figures(outcomes))
