import math

import numpy as np
import pytest

from allopdmp.batch import T_DEATH, Caps, simulate_batch
from allopdmp.operator import (
    GridFunction,
    apply_K,
    default_grid,
    k_power_iterates,
    k_power_one,
    mean_offspring_no_loss,
    mean_offspring_series,
    survival_exponent,
)
from allopdmp.rates import figure_defaults
from allopdmp.stats import estimate_m_mc


@pytest.fixture(scope="module")
def i1():
    return figure_defaults(beta=-0.25, c_beta=2.0, c_delta=0.5)


@pytest.fixture(scope="module")
def iterates(i1):
    return k_power_iterates(i1, 10)


def test_grid_function_basics(tmp_path):
    nodes = default_grid(1.0)
    assert 1.0 in nodes and nodes[0] == pytest.approx(1e-4) and nodes[-1] == pytest.approx(1e6)
    f = GridFunction(np.array([1.0, 2.0, 4.0]), np.array([0.0, 1.0, 3.0]))
    assert f(0.1) == 0.0 and f(100.0) == 3.0 and f(2.0) == 1.0
    text = f.to_csv()
    assert text.startswith("energy,value\n") and "\r" not in text
    with pytest.raises(ValueError):
        GridFunction(np.array([2.0, 1.0]), np.array([0.0, 0.0]))


def test_zero_maps_to_zero(i1):
    z = GridFunction.constant(default_grid(1.0), 0.0)
    assert np.all(apply_K(z, i1).values == 0.0)


def test_geometric_decay_above_kx0(i1, iterates):
    for k in range(1, 11):
        f = iterates[k]
        xs = f.nodes[f.nodes >= k * i1.x0]
        assert np.max(np.abs(f(xs) - 0.8**k)) < 1e-6
    assert k_power_one(i1, 2.0, 2) == pytest.approx(0.64, abs=1e-6)
    assert k_power_one(i1, 3.7, 0) == 1.0


def test_iterates_are_monotone_probabilities(iterates):
    vals = np.array([f.values for f in iterates])
    assert np.all(vals >= -1e-12) and np.all(vals <= 1 + 1e-12)
    assert np.all(np.diff(vals, axis=0) <= 1e-10)


def test_lower_bound_at_birth_energy(i1, iterates):
    power = (i1.c_beta + i1.c_delta) / i1.c_r
    for k in (1, 2, 3, 5):
        assert iterates[k](i1.x0) >= 0.8**k * k**-power


def test_linearity():
    p = figure_defaults(beta=-0.1, phi_r=1.0)
    nodes = default_grid(1.0)
    f = GridFunction(nodes, 1.0 / (1.0 + nodes))
    g = GridFunction(nodes, np.exp(-nodes / 5))
    lhs = apply_K(GridFunction(nodes, 0.3 * f.values + 2.0 * g.values), p).values
    rhs = 0.3 * apply_K(f, p).values + 2.0 * apply_K(g, p).values
    # interpolation between nodes is shape preserving, hence only nearly linear
    assert np.max(np.abs(lhs - rhs)) < 1e-8


def test_K_matches_first_jump_monte_carlo():
    p = figure_defaults(beta=-0.1, phi_r=1.0)
    nodes = default_grid(1.0, extra=(1.5,))
    f = GridFunction(nodes, 1.0 / (1.0 + nodes))
    kf = float(apply_K(f, p)(1.5))
    n = 100_000
    res = simulate_batch(p, 1.5, n, 4, Caps(max_events=1), record=True)
    ev = res.events
    vals = np.zeros(n)
    births = ev.kind == 0
    vals[ev.path[births]] = 1.0 / (1.0 + ev.energy_after[births])
    assert abs(vals.mean() - kf) < 3 * vals.std(ddof=1) / math.sqrt(n)


def test_survival_exponent():
    assert survival_exponent(figure_defaults(), 1.0) == 0.0
    p = figure_defaults(beta=-0.75, delta=-0.75, c_beta=0.1, c_delta=0.1, phi_r=1.0)
    a = survival_exponent(p, 1.0)
    assert 0 < a < 1
    assert a == pytest.approx(survival_exponent(p, 1.0, closed_form=False), rel=1e-8)
    xs = [0.5, 1.0, 2.0, 10.0, 1e3]
    vals = [survival_exponent(p, x) for x in xs]
    assert all(b > a for a, b in zip(vals, vals[1:])) and vals[-1] < 1
    # Monte Carlo: fraction of lives whose first clock never rings
    n = 50_000
    res = simulate_batch(p, 1.0, n, 6, Caps(max_events=1, max_time=math.inf))
    no_jump = np.mean((res.terminal != T_DEATH) & (res.n_births == 0))
    assert abs(no_jump - a) < 3 * math.sqrt(a * (1 - a) / n)


def test_series_below_ratio_and_two_generation_bound():
    p = figure_defaults(beta=-0.25, c_beta=2.0, c_delta=0.5, x0=3.0)
    s = mean_offspring_series(p)
    assert s.converged and not s.diverged and s.value < 4.0
    for phi in (2.0 / 3.0, 1.0):
        q = figure_defaults(beta=-0.25, c_beta=0.31, c_delta=0.3, phi_r=phi)
        assert mean_offspring_series(q).value <= i1_upper_bound(q)
    # the simpler constant 5/18 needs c_delta >= c_r
    q = figure_defaults(beta=-0.25, c_beta=0.31, c_delta=0.3, phi_r=0.6)
    assert q.c_delta >= q.c_r
    bound = 0.31 / 0.3 - 5.0 / 18.0 * (0.31 / 0.61) ** 2
    assert i1_upper_bound(q) <= bound <= 1.0
    assert mean_offspring_series(q).value <= bound


def i1_upper_bound(p):
    """Upper bound on m for beta = delta = alpha - 1 from a two-generation comparison."""
    cb, cd, cr = p.c_beta, p.c_delta, p.c_r
    r = (2.0 / 3.0) ** ((cb + cd) / cr)
    frak = 0.5 ** (cd / cr) * (1.0 - r) + r
    return cb / cd - (1.0 - frak) * (cb / (cb + cd)) ** 2


def test_partial_sums_exceed_one_for_strong_births():
    # beta above the second threshold, c_beta > (e - 1) c_delta, c_beta + c_delta < c_r
    p = figure_defaults(beta=-0.1, c_beta=0.5, c_delta=0.1, phi_r=1.0)
    assert p.c_beta > (math.e - 1) * p.c_delta and p.c_beta + p.c_delta < p.c_r
    its = k_power_iterates(p, 12)
    assert sum(f(p.x0) for f in its[1:]) > 1.0


def test_no_loss_mean_equals_ratio(i1):
    for x in (1e-3, 1.0, 1e3):
        assert mean_offspring_no_loss(i1, x) == pytest.approx(4.0, abs=1e-6)


def test_no_loss_bound_between_thresholds():
    p = figure_defaults(beta=0.0, c_beta=2.0, c_delta=0.5, phi_r=1.0)
    a, cr, cb, cd, b = p.alpha, p.c_r, p.c_beta, p.c_delta, p.beta
    for x in (0.1, 1.0, 10.0):
        bound = cb * cd / (cr**2 * (b - a + 1) * (a + cd / cr - b - 1)) * x ** (b - a + 1)
        assert mean_offspring_no_loss(p, x) <= bound * (1 + 1e-9)


def test_no_loss_dominates_mc():
    p = figure_defaults(beta=-0.1, c_beta=1.0, c_delta=0.5, phi_r=1.0)
    est = estimate_m_mc(p, p.x0, 20_000, 12)
    assert est.mean < mean_offspring_no_loss(p, p.x0)


def test_no_loss_rejects_improper(i1):
    with pytest.raises(ValueError):
        mean_offspring_no_loss(i1.replace(delta=-0.5), 1.0)
