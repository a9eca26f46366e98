import math

import numpy as np
import pytest

from agestruct.measures import (AtomicMeasure, DomainError, GridDensity, bump,
                                constant, exponential, make_panel, monomial, pair,
                                signed_diff)


def test_pair_counts_mass():
    m = AtomicMeasure(ages=np.array([0.3, 0.7, 1.1]), weight=1.0, t_star=2.0)
    assert pair(constant(1.0), m) == 3.0


def test_pair_normalised_single_atom():
    m = AtomicMeasure(ages=np.array([0.5]), weight=0.01, t_star=2.0)
    assert pair(constant(1.0), m) == pytest.approx(0.01, abs=0)


def test_pair_exponential_hand_value():
    # e^0 + e^(ln 2) = 3
    m = AtomicMeasure(ages=np.array([0.0, math.log(2.0)]), weight=1.0, t_star=2.0)
    assert pair(exponential(1.0), m) == pytest.approx(3.0, rel=1e-14)


def test_pair_grid_midpoint_rule():
    g = GridDensity(dx=0.5, values=np.array([2.0, 4.0]))
    # dx * sum f(x_j) v_j with centers 0.25, 0.75
    assert pair(monomial(1), g) == pytest.approx(0.5 * (0.25 * 2 + 0.75 * 4))
    assert g.mass == pytest.approx(3.0)


def test_pair_bilinear():
    rng = np.random.default_rng(5)
    m = AtomicMeasure(ages=rng.uniform(0, 2, 17), weight=0.3, t_star=2.0)
    g = GridDensity(dx=0.01, values=rng.uniform(0, 1, 200))
    f, h = exponential(0.4), monomial(2)
    for mu in (m, g):
        lhs = pair(lambda x: 2.5 * f(x) - 1.3 * h(x), mu)
        rhs = 2.5 * pair(f, mu) - 1.3 * pair(h, mu)
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_grid_refinement_second_order():
    # midpoint rule: Richardson ratio ~ 4 under dx -> dx/2
    f = exponential(0.8)
    exact = (math.exp(0.8 * 2.0) - 1.0) / 0.8
    errs = []
    for dx in (0.02, 0.01):
        g = GridDensity.from_function(lambda x: np.ones_like(x), t_star=2.0, dx=dx)
        errs.append(abs(pair(f, g) - exact))
    ratio = errs[0] / errs[1]
    assert 3.2 <= ratio <= 4.8


def test_signed_diff_zero_when_equal():
    g = GridDensity(dx=0.5, values=np.array([1.0, 1.0]))
    m = AtomicMeasure(ages=np.array([0.25, 0.75]), weight=0.5, t_star=1.0)
    sp = signed_diff(m, g, scale=7.0)
    for f in make_panel(t_star=1.0):
        assert sp.pair(f) == pytest.approx(0.0, abs=1e-12)


def test_signed_diff_linearity_and_scaling():
    g = GridDensity(dx=1.0, values=np.array([1.0]))
    m1 = AtomicMeasure(ages=np.full(11, 0.5), weight=0.1, t_star=1.0)
    assert signed_diff(m1, g, 1.0).pair(constant(1.0)) == pytest.approx(0.1)
    m2 = AtomicMeasure(ages=np.full(101, 0.5), weight=0.01, t_star=1.0)
    assert signed_diff(m2, g, 10.0).pair(constant(1.0)) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        signed_diff(m1, g, -1.0)


def test_default_panel():
    panel = make_panel(t_star=2.0)
    assert len(panel) == 6
    labels = [f.label for f in panel]
    assert labels[:3] == ["1", "x", "x^2"]
    bump_f = panel[-1]
    assert bump_f.at_zero == 0.0
    assert max(bump_f(np.linspace(0, 2, 500))) == pytest.approx(1.0, abs=1e-3)


def test_panel_exp_zero_is_constant():
    (f,) = make_panel(["exp:0"], t_star=1.0)
    assert f.kind == "constant"
    assert float(f(np.array(3.0))) == 1.0


def test_panel_monomial_eval():
    (f,) = make_panel(["mono:1"], t_star=1.0)
    assert float(f(np.array(2.0))) == 2.0


def test_panel_unknown_kind():
    with pytest.raises(ValueError):
        make_panel(["sinusoid"], t_star=1.0)


@pytest.mark.parametrize("f", make_panel(t_star=2.0))
def test_derivative_matches_finite_differences(f):
    xs = np.linspace(0.15, 1.85, 23)
    h = 1e-6
    fd = (f(xs + h) - f(xs - h)) / (2 * h)
    d = f.deriv(xs)
    scale = np.maximum(np.abs(d), 1.0)
    assert np.max(np.abs(d - fd) / scale) < 1e-6


def test_domain_errors():
    with pytest.raises(DomainError):
        AtomicMeasure(ages=np.array([2.5]), weight=1.0, t_star=2.0)
    with pytest.raises(DomainError):
        AtomicMeasure(ages=np.array([-0.5]), weight=1.0, t_star=2.0)
    with pytest.raises(ValueError):
        AtomicMeasure(ages=np.array([0.5]), weight=0.0, t_star=2.0)
    with pytest.raises(DomainError):
        GridDensity(dx=0.1, values=np.array([1.0, -0.5]))
    GridDensity(dx=0.1, values=np.array([1.0, -0.5]), signed=True)


def test_csv_round_trips(tmp_path):
    g = GridDensity(dx=0.25, values=np.array([1.0, 0.5, 0.25, 0.0]))
    g.to_csv(tmp_path / "g.csv")
    g2 = GridDensity.from_csv(tmp_path / "g.csv")
    assert g2.dx == pytest.approx(g.dx)
    assert np.array_equal(g2.values, g.values)

    m = AtomicMeasure(ages=np.array([0.1, 0.9]), weight=0.5, t_star=1.0)
    m.to_csv(tmp_path / "m.csv")
    m2 = AtomicMeasure.from_csv(tmp_path / "m.csv")
    assert m2.weight == m.weight
    assert np.array_equal(m2.ages, m.ages)
    assert m2.t_star == m.t_star


def test_panel_discrepancy_restricted_surrogate():
    from agestruct.measures import panel_discrepancy

    g = GridDensity(dx=0.5, values=np.array([1.0, 1.0]))
    m = AtomicMeasure(ages=np.array([0.25, 0.75]), weight=0.5, t_star=1.0)
    panel = make_panel(t_star=1.0)
    assert panel_discrepancy(panel, m, g) <= 1e-12
    # extra half-weight atom at 0.75: the largest gap comes from e^(0.5x)
    m2 = AtomicMeasure(ages=np.array([0.25, 0.75, 0.75]), weight=0.5, t_star=1.0)
    assert panel_discrepancy(panel, m2, g) == pytest.approx(
        0.5 * math.exp(0.375), rel=1e-12)
