import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from allopdmp.rates import (
    ADMISSIBLE_I1,
    ADMISSIBLE_I2,
    VIOLATED,
    AllometricParams,
    FlowDomainError,
    ParameterError,
    classify_regime,
    eval_rates,
    flow,
    holling2,
    i2_threshold,
    params_from_mapping,
    phi_for_positive_growth,
    read_config,
    resource_set_membership,
    t_max,
)


def rk_flow(p, xi0, t):
    """Independent oracle: integrate dx/dt = g(x) with RK45 at tight tolerance."""
    def g(_, x):
        x = max(x[0], 0.0)
        return [p.phi_r * p.c_gamma * x**p.gamma - p.c_alpha * x**p.alpha]

    return solve_ivp(g, (0, t), [xi0], method="RK45", rtol=1e-12, atol=1e-14).y[0, -1]


def with_cr(alpha, c_r, **kw):
    """Parameters with gamma = alpha and net growth constant c_r (c_alpha = 1, phi = 1)."""
    return AllometricParams(alpha=alpha, gamma=alpha, c_alpha=1.0, c_gamma=1.0 + c_r, phi_r=1.0, **kw)


def test_validation_names_field():
    with pytest.raises(ParameterError) as e:
        AllometricParams(alpha=0)
    assert e.value.field == "alpha"
    with pytest.raises(ParameterError):
        AllometricParams(phi_r=1.5)
    with pytest.raises(ParameterError):
        AllometricParams(c_delta=float("nan"))
    AllometricParams(beta=-3.0, delta=5.0)  # exponents may be any real


def test_rates_examples():
    r = eval_rates(AllometricParams())
    assert r.net_growth(1.0) == pytest.approx(1.0 / 3.0, rel=1e-15)
    r4 = eval_rates(AllometricParams(beta=-0.2, c_beta=2.0))
    assert r4.birth(0.5) == 0.0
    assert r4.birth(1.0) == 0.0  # indicator is strict
    assert r4.birth(2.0) == pytest.approx(2.0 * 2.0**-0.2, rel=1e-15)
    r0 = eval_rates(AllometricParams(phi_r=0.0))
    xs = np.geomspace(1e-3, 1e3, 50)
    assert np.all(r0.net_growth(xs) < 0)
    assert np.all(r0.death(xs) > 0) and np.all(np.diff(r0.loss(xs)) > 0)


def test_flow_closed_forms_against_ode():
    p = with_cr(0.75, 1.0 / 3.0)
    assert flow(p, 1.0, 0.0) == 1.0
    assert flow(p, 1.0, 3.0) == pytest.approx(2.44140625, rel=1e-12)
    assert rk_flow(p, 1.0, 3.0) == pytest.approx(2.44140625, rel=1e-8)
    p1 = with_cr(1.0, 1.0 / 3.0)
    assert flow(p1, 2.0, 3.0) == pytest.approx(2 * math.e, rel=1e-12)
    assert rk_flow(p1, 2.0, 3.0) == pytest.approx(2 * math.e, rel=1e-8)


def test_general_gamma_uses_ode():
    p = AllometricParams(gamma=0.8, alpha=0.75, phi_r=1.0)
    for t in (0.1, 1.0, 4.0):
        assert flow(p, 1.5, t) == pytest.approx(rk_flow(p, 1.5, t), rel=1e-8)


def test_t_max_cases():
    assert t_max(with_cr(0.75, 1.0), 1.0) == math.inf
    assert t_max(with_cr(1.5, 1.0), 1.0) == pytest.approx(2.0, rel=1e-12)
    neg = AllometricParams(phi_r=0.0)  # c_r = -1
    assert t_max(neg, 1.0) == pytest.approx(1.0 / 0.25, rel=1e-12)
    assert t_max(AllometricParams(alpha=1.0, gamma=1.0, phi_r=0.0), 1.0) == math.inf
    assert t_max(AllometricParams(phi_r=0.5), 1.0) == math.inf  # c_r = 0
    # oracle: the ODE drives x to 0 just before t_max
    t = t_max(neg, 1.0)
    assert rk_flow(neg, 1.0, 0.999 * t) < 1e-6
    with pytest.raises(FlowDomainError):
        flow(neg, 1.0, t)


def test_t_max_blowup_detected_by_ode():
    p = with_cr(1.5, 1.0)
    hit = lambda _, x: x[0] - 1e12
    hit.terminal = True
    sol = solve_ivp(lambda _, x: [x[0] ** 1.5], (0, 10), [1.0], events=hit, rtol=1e-12, atol=1e-12)
    assert sol.t_events[0][0] == pytest.approx(t_max(p, 1.0), rel=1e-5)


@settings(max_examples=100, deadline=None)
@given(
    regime=st.sampled_from([0.75, 1.0, 1.5]),
    xi0=st.floats(0.05, 20.0),
    s=st.floats(0.0, 1.0),
    t=st.floats(0.0, 1.0),
)
def test_flow_semigroup(regime, xi0, s, t):
    p = with_cr(regime, 0.4)
    tm = t_max(p, xi0)
    if math.isfinite(tm):
        s, t = s * tm / 3, t * tm / 3
    else:
        s, t = 5 * s, 5 * t
    lhs = flow(p, flow(p, xi0, s), t)
    assert lhs == pytest.approx(flow(p, xi0, s + t), rel=1e-8)


@settings(max_examples=100, deadline=None)
@given(alpha=st.floats(0.3, 1.6), c_r=st.floats(-0.8, 0.8).filter(lambda c: abs(c) > 1e-3),
       xi0=st.floats(0.1, 10.0), frac=st.floats(0.0, 0.9))
def test_closed_form_matches_ode(alpha, c_r, xi0, frac):
    p = with_cr(alpha, c_r)
    tm = t_max(p, xi0)
    t = frac * (tm if math.isfinite(tm) else 3.0)
    assert flow(p, xi0, t) == pytest.approx(rk_flow(p, xi0, t), rel=1e-8)


# ---------------------------------------------------------------------------
# classification


BASE = dict(alpha=0.75, gamma=0.75, delta=-0.25, c_gamma=2.0, c_alpha=1.0, c_beta=2.0, c_delta=0.5)


def test_classify_examples():
    r = classify_regime(AllometricParams(**BASE, beta=-0.25))
    assert r.verdict == ADMISSIBLE_I1 and r.i1 and not r.i2
    r = classify_regime(AllometricParams(**BASE, beta=0.26))
    assert r.verdict == ADMISSIBLE_I2 and r.i2 and not r.i1
    assert r.i2_threshold == pytest.approx(0.25, abs=1e-15)
    r = classify_regime(AllometricParams(**BASE, beta=-0.2))
    assert r.verdict == VIOLATED and "point5" in r.violations


def test_classify_constants_conditions():
    assert classify_regime(AllometricParams(**{**BASE, "c_beta": 0.4}, beta=-0.25)).verdict == VIOLATED
    assert classify_regime(AllometricParams(**{**BASE, "c_delta": 1.5}, beta=2.0)).verdict == VIOLATED
    r = classify_regime(AllometricParams(**{**BASE, "c_gamma": 0.5}, beta=-0.25))
    assert r.verdict == VIOLATED and r.i2_threshold is None


def test_classify_boundaries_are_closed():
    assert classify_regime(AllometricParams(**BASE, beta=0.25)).verdict == ADMISSIBLE_I2
    assert classify_regime(AllometricParams(**BASE, beta=-0.25)).i1


def test_classify_pure_and_x0_free():
    p = AllometricParams(**BASE, beta=0.1)
    a, b = classify_regime(p), classify_regime(p.replace(x0=1e5, phi_r=0.1))
    assert a == b


def test_i2_threshold_limits():
    assert i2_threshold(AllometricParams(**BASE)) == pytest.approx(0.25)
    assert i2_threshold(AllometricParams(**{**BASE, "c_delta": 1e-12})) == pytest.approx(-0.25)
    assert i2_threshold(AllometricParams(**{**BASE, "c_delta": 1.0})) == pytest.approx(0.75)


def test_resource_sets():
    f = resource_set_membership(AllometricParams())
    assert f.in_R0 and not f.in_frak_R0
    f = resource_set_membership(AllometricParams(phi_r=0.0))
    assert f.in_frak_R0 and not f.in_R0
    f = resource_set_membership(AllometricParams(phi_r=0.5))  # phi c_gamma = c_alpha
    assert not f.in_R0
    assert flow(AllometricParams(phi_r=0.5), 3.0, 10.0) == 3.0


@settings(max_examples=50, deadline=None)
@given(cg=st.floats(1.01, 10.0), ca=st.floats(0.1, 1.0))
def test_phi_below_one_gives_growth(cg, ca):
    p = AllometricParams(c_gamma=cg * ca, c_alpha=ca)
    phi = phi_for_positive_growth(p)
    assert phi is not None and phi < 1
    assert resource_set_membership(p.replace(phi_r=phi)).in_R0


def test_holling_and_config(tmp_path):
    assert holling2(1.0) == 0.5 and holling2(0.0) == 0.0
    cfg = tmp_path / "p.cfg"
    cfg.write_text("# comment\nbeta = 0.3\nc_delta=0.2  # trailing\n\n", encoding="utf-8")
    p = params_from_mapping(read_config(cfg))
    assert p.beta == 0.3 and p.c_delta == 0.2
    cfg.write_text("betta = 1\n", encoding="utf-8")
    with pytest.raises(ParameterError) as e:
        read_config(cfg)
    assert e.value.field == "betta"
