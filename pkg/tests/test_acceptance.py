"""Acceptance suite: every criterion at its stated tolerance.

The heavy Monte Carlo artifacts are computed once per session under the
pre-registered master seed and shared across criteria; each test prints its
pass/fail line with the measured numbers.
"""

import pytest

from agestruct.acceptance import AcceptanceSuite


@pytest.fixture(scope="session")
def suite():
    return AcceptanceSuite()


def _report(result):
    print()
    print(result.line())
    for d in result.details:
        print("   ", d)
    assert result.passed, result.line()


def test_criterion_1_lln_reproduction(suite):
    _report(suite.criterion_1())


def test_criterion_2_martingale_qv(suite):
    _report(suite.criterion_2())


def test_criterion_3_clt_mean(suite):
    _report(suite.criterion_3())


def test_criterion_4_clt_gaussianity(suite):
    _report(suite.criterion_4())


def test_criterion_5_clt_variance(suite):
    _report(suite.criterion_5())


def test_criterion_6_solver_orders_and_noise(suite):
    _report(suite.criterion_6())


def test_criterion_7_exactness_properties(suite):
    _report(suite.criterion_7())


def test_criterion_8_small_instance_law(suite):
    _report(suite.criterion_8())
