"""Acceptance checks.  Each test carries a ``criterion`` marker; the terminal
summary prints one PASS/FAIL/XFAIL line per criterion."""

import math

import numpy as np
import pytest
from scipy import stats as sps

from allopdmp.batch import T_DEATH, Caps, simulate_batch
from allopdmp.operator import k_power_iterates, mean_offspring_no_loss, mean_offspring_series
from allopdmp.pdmp import martingale_residual, reciprocal, saturating, simulate_coupled_family
from allopdmp.population import embedding_test
from allopdmp.rates import (
    ADMISSIBLE_I1,
    ADMISSIBLE_I2,
    VIOLATED,
    AllometricParams,
    classify_regime,
    figure_defaults,
)
from allopdmp.stats import (
    SUBCRITICAL,
    SUPERCRITICAL,
    compare_distributions,
    criticality_test,
    estimate_m_mc,
    heavy_tail_diagnostic,
    histogram,
    phase_diagram_sweep,
    simulate_counts,
)

criterion = pytest.mark.criterion
INF_TIME = Caps(max_time=math.inf)


def i1(c_beta, c_delta, phi_r=1.0, x0=1.0):
    return figure_defaults(beta=-0.25, c_beta=c_beta, c_delta=c_delta, phi_r=phi_r, x0=x0)


@criterion("1", "K^k 1 equals 0.8^k above k x0 (k = 1..10)")
def test_operator_geometric_iterates():
    p = i1(2.0, 0.5, phi_r=2.0 / 3.0)
    its = k_power_iterates(p, 10)
    worst = 0.0
    for k in range(1, 11):
        f = its[k]
        xs = f.nodes[f.nodes >= k * p.x0]
        worst = max(worst, float(np.max(np.abs(f(xs) - 0.8**k))))
    assert worst < 1e-6


@criterion("2", "no-loss mean equals c_beta/c_delta = 4 over six decades")
def test_no_loss_mean():
    p = i1(2.0, 0.5, phi_r=2.0 / 3.0)
    for x in (1e-3, 1.0, 1e3):
        assert abs(mean_offspring_no_loss(p, x) - 4.0) < 1e-6


I1_SETS = [
    (i1(2.0, 0.5, phi_r=2.0 / 3.0), 1.0),
    (i1(2.0, 0.5), 1e-3),
    (i1(0.55, 0.3), 1.0),
    (i1(0.31, 0.3, x0=1e3), 1e3),
    (i1(1.0, 1.0, phi_r=0.8), 10.0),
]


@criterion("3", "Monte Carlo mean within 3 sigma of the operator series for 5 parameter sets")
def test_mc_matches_series():
    for k, (p, x0) in enumerate(I1_SETS):
        p = p.replace(x0=x0)
        series = mean_offspring_series(p)
        assert series.converged
        est = estimate_m_mc(p, x0, 50_000, 100 + k)
        assert est.n_censored == 0
        assert abs(est.mean - series.value) < 3 * est.stderr, (k, est.mean, series.value, est.stderr)


@criterion("4", "c_delta = 0.3: c_beta = 0.31 Subcritical, 0.55 Supercritical (phi = 1)")
def test_figure8_verdicts():
    for x0 in (1e-3, 1.0, 1e3):
        lo = estimate_m_mc(i1(0.31, 0.3, x0=x0), x0, 50_000, 41)
        hi = estimate_m_mc(i1(0.55, 0.3, x0=x0), x0, 50_000, 42)
        assert criticality_test(lo) == SUBCRITICAL
        assert criticality_test(hi) == SUPERCRITICAL


@criterion("4*", "same verdicts at the literal resource level phi = 2/3")
@pytest.mark.xfail(strict=True, reason="at phi = 2/3 both constant sets are subcritical; see ledger")
def test_figure8_verdicts_literal_phi():
    hi = estimate_m_mc(i1(0.55, 0.3, phi_r=2.0 / 3.0), 1.0, 50_000, 42)
    assert criticality_test(hi) == SUPERCRITICAL


@criterion("5", "10^4 coupled pairs: N for x0 = 0 never below N for x0 > 0")
def test_coupling_monotone():
    r = np.random.default_rng(5)
    violations = 0
    for i in range(10_000):
        # b >= d growth order (d / b non-increasing) with positive net growth
        p = figure_defaults(beta=r.uniform(-0.25, -0.05), c_beta=2.0, c_delta=0.5, phi_r=1.0)
        xi0 = r.uniform(0.5, 4.0)
        hat = p.replace(x0=r.uniform(0.05, xi0))
        a, b = simulate_coupled_family([(p, xi0, 0.0), (hat, r.uniform(0.05, xi0))], 5, INF_TIME, path=i)
        assert not (a.censored or b.censored)
        violations += a.n_births < b.n_births
    assert violations == 0


@criterion("6", "thinning and split-clock simulators agree in >= 18 of 20 two-sample tests")
def test_construction_equivalence():
    p = figure_defaults(beta=-0.1, c_beta=1.0, c_delta=0.5, phi_r=1.0)
    passed = 0
    for rep in range(20):
        a = simulate_batch(p, 1.0, 10_000, 2 * rep, INF_TIME)
        b = simulate_batch(p, 1.0, 10_000, 2 * rep + 1, INF_TIME, method="split")
        births = compare_distributions(histogram(a.n_births), histogram(b.n_births)).p_value
        ta, tb = a.t_end[a.terminal == T_DEATH], b.t_end[b.terminal == T_DEATH]
        death = sps.ks_2samp(ta, tb).pvalue
        passed += min(1.0, 2 * min(births, death)) > 0.01
    assert passed >= 18


@criterion("7", "martingale residual within 3 stderr for two bounded test functions")
def test_martingale_residual():
    p = figure_defaults(beta=-0.2, c_beta=2.0, c_delta=0.5)
    for k, fn in enumerate((saturating(3.0), reciprocal())):
        est = martingale_residual(p, fn, 5.0, 100_000, 70 + k)
        assert abs(est.mean) < 3 * est.stderr, (fn.name, est.mean, est.stderr)


@criterion("8", "generation sizes match the Galton-Watson law in >= 18 of 20 repetitions")
def test_galton_watson_embedding():
    p = i1(0.55, 0.3)
    passed = sum(embedding_test(p, 3000, seed).p_value > 0.01 for seed in range(20))
    assert passed >= 18


@criterion("9", "m_hat + 3 stderr below c_beta/c_delta on a 20-point x0 sweep")
def test_summation_upper_bound():
    for k, x0 in enumerate(np.geomspace(1e-100, 1e100, 20)):
        c_beta, c_delta = (2.0, 0.5) if k % 2 == 0 else (0.55, 0.3)
        p = i1(c_beta, c_delta, x0=x0)
        est = estimate_m_mc(p, x0, 20_000, 900 + k)
        assert est.n_censored == 0
        assert est.mean + 3 * est.stderr < p.c_beta / p.c_delta


def tail_flags(beta, phi_r):
    p = figure_defaults(beta=beta, c_beta=2.0, c_delta=0.5, phi_r=phi_r)
    flags = []
    for seed in range(5):
        counts, _ = simulate_counts(p, p.x0, 10_000, seed)
        flags.append(heavy_tail_diagnostic(counts).plateau_flag)
    return flags


@criterion("10", "plateau flag raised in >= 2 of beta = 0.26, 1, 3")
@pytest.mark.xfail(strict=True, reason="for beta > alpha the energy is bounded and counts are light-tailed; see ledger")
def test_heavy_tails_in_two_of_three():
    flagged = [any(tail_flags(beta, 1.0)) for beta in (0.26, 1.0, 3.0)]
    assert sum(flagged) >= 2


@criterion("10*", "plateau flag raised at beta = 0.26, where the mean is infinite")
def test_heavy_tail_where_mean_diverges():
    p = figure_defaults(beta=0.26, c_beta=2.0, c_delta=0.5, phi_r=1.0)
    assert p.alpha - 1 + p.c_delta / p.c_r < p.beta < p.alpha
    assert sum(tail_flags(0.26, 1.0)) >= 2
    assert not any(tail_flags(1.0, 1.0)) and not any(tail_flags(3.0, 1.0))


@criterion("11", "12x12 phase diagram: no Supercritical at c_delta >= gap, boundaries > 1")
def test_phase_diagram():
    base = figure_defaults(phi_r=1.0)
    ratios = np.linspace(1.0, 4.3, 12)
    columns = np.linspace(0.1, 1.5, 12)
    res = phase_diagram_sweep(ratios, columns, base, 20_000, 7)
    assert len(res.cells) == 144
    gap = base.c_gamma - base.c_alpha
    for cell in res.cells:
        if cell.c_delta >= gap:
            assert cell.verdict != SUPERCRITICAL
        if cell.c_beta_over_c_delta <= 1.0:
            assert cell.verdict != SUPERCRITICAL
    resolved = [(c, b) for c, b in res.boundary if b is not None]
    assert resolved
    for c, b in resolved:
        assert b > 1.0
        if c >= 1.0:
            assert b > 1.07
    # the boundary rises with c_delta
    bs = [b for _, b in resolved]
    assert bs[-1] > bs[0]


BASE = dict(alpha=0.75, gamma=0.75, c_gamma=2.0, c_alpha=1.0, c_beta=2.0, c_delta=0.5)
TABLE = [
    (dict(beta=-0.25, delta=-0.25), ADMISSIBLE_I1),
    (dict(beta=-0.2, delta=-0.25), VIOLATED),
    (dict(beta=0.0, delta=-0.25), VIOLATED),
    (dict(beta=0.24, delta=-0.25), VIOLATED),
    (dict(beta=0.25, delta=-0.25), ADMISSIBLE_I2),
    (dict(beta=0.26, delta=-0.25), ADMISSIBLE_I2),
    (dict(beta=1.0, delta=-0.25), ADMISSIBLE_I2),
    (dict(beta=3.0, delta=-0.25), ADMISSIBLE_I2),
    (dict(beta=-0.3, delta=-0.25), VIOLATED),
    (dict(beta=-0.25, delta=-0.3), VIOLATED),
    (dict(beta=0.5, delta=-0.2), VIOLATED),
    (dict(beta=-0.25, delta=-0.25, gamma=0.8), VIOLATED),
]


@criterion("12", "admissibility verdicts on 12 exponent tuples")
def test_admissibility_table():
    for tup, verdict in TABLE:
        rep = classify_regime(AllometricParams(**{**BASE, **tup}))
        assert rep.verdict == verdict, tup
        assert (rep.i1, rep.i2) == (verdict == ADMISSIBLE_I1, verdict == ADMISSIBLE_I2), tup
