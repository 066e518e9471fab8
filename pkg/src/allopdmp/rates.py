"""Allometric rate functions, the deterministic energy flow and regime checks.

Rates follow power laws in the individual energy ``x``::

    birth    b(x) = 1{x > x0} * c_beta * x**beta
    death    d(x) = c_delta * x**delta
    loss     l(x) = c_alpha * x**alpha
    intake   f(x) = phi_r * c_gamma * x**gamma
    growth   g(x) = f(x) - l(x)

Between jumps the energy follows ``dx/dt = g(x)``.  When ``gamma == alpha``
this reduces to ``dx/dt = c_r * x**alpha`` with ``c_r = phi_r*c_gamma - c_alpha``
and everything (flow, blow-up time, hazards) has a closed form.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy import integrate

# Exponent equalities (beta == alpha - 1 and friends) are decided with this
# absolute slack so that values typed as decimals still land on the boundary.
EQ_TOL = 1e-12

ODE_RTOL = 1e-10
ODE_ATOL = 1e-12
LOG_FLOOR = math.log(1e-300)
LOG_CEIL = math.log(1e300)

PARAM_KEYS = ("alpha", "beta", "gamma", "delta", "c_alpha", "c_beta", "c_gamma", "c_delta", "x0", "phi_r")


class ParameterError(ValueError):
    """Invalid model parameters; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class FlowDomainError(ValueError):
    """Requested flow time lies at or beyond the absorption time."""


@dataclass(frozen=True)
class AllometricParams:
    """The eight allometric constants, the birth energy and the functional response."""

    alpha: float = 0.75
    beta: float = -0.25
    gamma: float = 0.75
    delta: float = -0.25
    c_alpha: float = 1.0
    c_beta: float = 2.0
    c_gamma: float = 2.0
    c_delta: float = 0.5
    x0: float = 1.0
    phi_r: float = 2.0 / 3.0

    def __post_init__(self):
        for name in PARAM_KEYS:
            value = getattr(self, name)
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise ParameterError(name, f"not a number: {value!r}") from None
            if not math.isfinite(value):
                raise ParameterError(name, "must be finite")
            object.__setattr__(self, name, value)
        for name in ("alpha", "gamma", "c_alpha", "c_beta", "c_gamma", "c_delta", "x0"):
            if getattr(self, name) <= 0:
                raise ParameterError(name, "must be strictly positive")
        if not 0.0 <= self.phi_r <= 1.0:
            raise ParameterError("phi_r", "functional response must lie in [0, 1]")

    def replace(self, **changes) -> "AllometricParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in PARAM_KEYS}

    @property
    def gamma_eq_alpha(self) -> bool:
        return abs(self.gamma - self.alpha) <= EQ_TOL

    @property
    def c_r(self) -> float:
        """Net growth constant ``phi_r*c_gamma - c_alpha`` (the flow speed when gamma == alpha)."""
        return self.phi_r * self.c_gamma - self.c_alpha

    @property
    def gap(self) -> float:
        """``c_gamma - c_alpha``: the limit of ``c_r`` as resources grow."""
        return self.c_gamma - self.c_alpha


def holling2(resource: float, half_saturation: float = 1.0) -> float:
    """Holling type II response ``R / (h + R)``, for configuring by raw resource."""
    if resource < 0:
        raise ParameterError("resource", "must be non-negative")
    return resource / (half_saturation + resource)


def figure_defaults(**overrides) -> AllometricParams:
    """Simulation defaults: alpha=0.75, gamma=alpha, delta=alpha-1, phi=2/3, C_gamma=2, C_alpha=1."""
    base = dict(alpha=0.75, gamma=0.75, delta=-0.25, phi_r=2.0 / 3.0, c_gamma=2.0, c_alpha=1.0)
    base.update(overrides)
    if "alpha" in overrides:
        base.setdefault("gamma", overrides["alpha"])
        if "gamma" not in overrides:
            base["gamma"] = overrides["alpha"]
        if "delta" not in overrides:
            base["delta"] = overrides["alpha"] - 1.0
    return AllometricParams(**base)


def read_config(path: str | Path) -> dict[str, float]:
    """Parse a flat ``key=value`` file; ``#`` starts a comment."""
    out: dict[str, float] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"line {lineno}", f"expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in PARAM_KEYS:
            raise ParameterError(key, "unknown parameter")
        try:
            out[key] = float(value)
        except ValueError:
            raise ParameterError(key, f"not a number: {value!r}") from None
    return out


def params_from_mapping(values: Mapping[str, float], base: AllometricParams | None = None) -> AllometricParams:
    base = base or AllometricParams()
    unknown = set(values) - set(PARAM_KEYS)
    if unknown:
        raise ParameterError(sorted(unknown)[0], "unknown parameter")
    return base.replace(**dict(values))


# ---------------------------------------------------------------------------
# rate functions


@dataclass(frozen=True)
class RateBundle:
    birth: Callable[[float], float]
    death: Callable[[float], float]
    loss: Callable[[float], float]
    intake: Callable[[float], float]
    net_growth: Callable[[float], float]
    birth_tilde: Callable[[float], float] = field(repr=False, default=None)


def eval_rates(params: AllometricParams) -> RateBundle:
    """Closures for the rate functions; they accept floats or numpy arrays."""
    p = params

    def birth_tilde(x):
        return p.c_beta * np.power(x, p.beta)

    def birth(x):
        x = np.asarray(x, dtype=float)
        out = np.where(x > p.x0, p.c_beta * np.power(x, p.beta, where=x > 0, out=np.ones_like(x)), 0.0)
        return out if out.ndim else float(out)

    def death(x):
        return p.c_delta * np.power(x, p.delta)

    def loss(x):
        return p.c_alpha * np.power(x, p.alpha)

    def intake(x):
        return p.phi_r * p.c_gamma * np.power(x, p.gamma)

    def net_growth(x):
        return intake(x) - loss(x)

    return RateBundle(birth, death, loss, intake, net_growth, birth_tilde)


# ---------------------------------------------------------------------------
# deterministic flow


def _closed_flow(alpha: float, c_r: float, xi0: float, t: float) -> float:
    if c_r == 0.0 or t == 0.0:
        return xi0
    if abs(alpha - 1.0) <= EQ_TOL:
        return xi0 * math.exp(c_r * t)
    q = 1.0 - alpha
    base = 1.0 + q * c_r * t * xi0 ** (-q)
    # log-space keeps huge/small exponents finite for as long as possible
    return xi0 * math.exp(math.log(base) / q)


def t_max(params: AllometricParams, xi0: float) -> float:
    """Time at which the flow started at ``xi0`` reaches 0 or infinity (``inf`` if never)."""
    if xi0 <= 0:
        raise ValueError("xi0 must be positive")
    p = params
    if p.gamma_eq_alpha:
        c_r = p.c_r
        if c_r == 0.0:
            return math.inf
        q = 1.0 - p.alpha
        if abs(q) <= EQ_TOL:
            return math.inf
        if c_r > 0:
            return math.inf if q > 0 else xi0**q / (-q * c_r)
        return xi0**q / (q * -c_r) if q > 0 else math.inf
    return _t_max_general(p, xi0)


def _equilibrium(p: AllometricParams) -> float | None:
    if p.phi_r == 0.0:
        return None
    return (p.c_alpha / (p.phi_r * p.c_gamma)) ** (1.0 / (p.gamma - p.alpha))


def _t_max_general(p: AllometricParams, xi0: float) -> float:
    rates = eval_rates(p)
    x_eq = _equilibrium(p)
    if x_eq is not None and p.gamma < p.alpha:
        return math.inf  # stable equilibrium attracts every start
    if x_eq is not None and math.isclose(xi0, x_eq, rel_tol=1e-14):
        return math.inf
    going_up = x_eq is not None and xi0 > x_eq
    if going_up:
        # near infinity g ~ phi*c_gamma*x**gamma
        if p.gamma <= 1.0:
            return math.inf
        lo, hi = math.log(xi0), math.inf
    else:
        # near zero g ~ -c_alpha*x**alpha
        if p.alpha >= 1.0:
            return math.inf
        lo, hi = -math.inf, math.log(xi0)

    def dt_dy(y):
        x = math.exp(y)
        return x / abs(rates.net_growth(x))

    val, _ = integrate.quad(dt_dy, lo, hi, epsabs=0.0, epsrel=1e-12, limit=500)
    return val


def _ode_flow(p: AllometricParams, xi0: float, t: float) -> float:
    rates = eval_rates(p)

    def rhs(_, y):
        x = math.exp(y[0])
        return [rates.net_growth(x) / x]

    def low(_, y):
        return y[0] - LOG_FLOOR

    def high(_, y):
        return y[0] - LOG_CEIL

    low.terminal = high.terminal = True
    sol = integrate.solve_ivp(
        rhs, (0.0, t), [math.log(xi0)], method="DOP853", rtol=ODE_RTOL, atol=ODE_ATOL, events=(low, high)
    )
    if sol.status == 1:
        raise FlowDomainError(f"flow from {xi0} absorbed before t={t}")
    if not sol.success:
        raise FlowDomainError(sol.message)
    return math.exp(sol.y[0, -1])


def flow(params: AllometricParams, xi0: float, t: float) -> float:
    """Energy after following ``dx/dt = g(x)`` for time ``t`` from ``xi0``."""
    if xi0 <= 0:
        raise ValueError("xi0 must be positive")
    if t < 0:
        raise ValueError("t must be non-negative")
    tm = t_max(params, xi0)
    if t >= tm:
        raise FlowDomainError(f"t={t} is beyond t_max={tm}")
    if params.gamma_eq_alpha:
        return _closed_flow(params.alpha, params.c_r, xi0, t)
    return _ode_flow(params, xi0, t)


# ---------------------------------------------------------------------------
# admissibility


def _eq(a: float, b: float) -> bool:
    return abs(a - b) <= EQ_TOL


def _implies(premise: bool, conclusion: bool | None) -> bool | None:
    if not premise:
        return True
    return conclusion


def i2_threshold(params: AllometricParams) -> float | None:
    """``alpha - 1 + c_delta/(c_gamma - c_alpha)``; ``None`` when ``c_gamma <= c_alpha``."""
    if params.gap <= 0:
        return None
    return params.alpha - 1.0 + params.c_delta / params.gap


@dataclass(frozen=True)
class RegimeReport:
    zone: str  # "sublinear" (alpha <= 1, eight conditions) or "superlinear" (alpha > 1, five)
    assumption1: bool
    assumption2_integral: bool
    assumption4: bool
    points: dict[int, bool | None]
    i1: bool
    i2: bool
    i2_threshold: float | None
    verdict: str
    violations: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["points"] = {str(k): v for k, v in self.points.items()}
        d["violations"] = list(self.violations)
        return d


ADMISSIBLE_I1 = "Admissible-I1"
ADMISSIBLE_I2 = "Admissible-I2"
VIOLATED = "NecessaryConditionsViolated"
HOLDS_OUTSIDE_I = "NecessaryConditionsHold"


def classify_regime(params: AllometricParams) -> RegimeReport:
    """Check the allometric constants against the necessary admissibility conditions.

    Pure arithmetic on exponents and constants; ``x0`` and ``phi_r`` play no
    role.  A point whose threshold is undefined (``c_gamma <= c_alpha``) is
    reported as ``None``.
    """
    p = params
    am1 = p.alpha - 1.0
    thr = i2_threshold(p)
    growth_ok = p.gamma_eq_alpha and p.c_gamma > p.c_alpha

    a1 = p.delta <= am1 + EQ_TOL
    if p.gamma_eq_alpha:
        a2 = (p.gap <= 0) or max(p.beta, p.delta) >= am1 - EQ_TOL
    elif p.gamma > p.alpha:
        a2 = max(p.beta, p.delta) >= p.gamma - 1.0 - EQ_TOL
    else:
        a2 = True

    exps_i = p.gamma_eq_alpha and _eq(p.delta, am1)
    i1 = exps_i and _eq(p.beta, am1)
    i2 = exps_i and thr is not None and p.beta >= thr - EQ_TOL and not i1
    beta_gt = p.beta > am1 + EQ_TOL
    thr_ok = None if thr is None else p.beta >= thr - EQ_TOL

    if p.alpha <= 1.0:
        points = {
            1: growth_ok,
            2: a1,
            3: max(p.beta, p.delta) >= am1 - EQ_TOL,
            4: p.beta >= am1 - EQ_TOL and _implies(_eq(p.beta, am1) and _eq(p.delta, am1), p.c_beta > p.c_delta),
            5: _implies(_eq(p.delta, am1) and beta_gt, thr_ok),
            6: _implies(p.beta > p.alpha + EQ_TOL, p.delta >= am1 - EQ_TOL),
            7: _implies(_eq(p.delta, am1) and beta_gt, p.c_delta <= p.gap),
            8: _implies(p.beta <= p.alpha + EQ_TOL, p.delta >= am1 - EQ_TOL),
        }
        zone = "sublinear"
    else:
        points = {
            1: growth_ok,
            2: p.delta <= am1 + EQ_TOL and am1 <= p.beta + EQ_TOL,
            3: _implies(_eq(p.beta, am1) and _eq(p.delta, am1), p.c_beta > p.c_delta),
            4: _implies(_eq(p.delta, am1) and beta_gt, thr_ok),
            5: _implies(p.beta > p.alpha + EQ_TOL, p.delta >= am1 - EQ_TOL)
            and _implies(p.beta > p.alpha + EQ_TOL and _eq(p.delta, am1), p.c_delta <= p.gap),
        }
        zone = "superlinear"

    failed = tuple(f"point{k}" for k, v in points.items() if v is False)
    if i1 and growth_ok and p.c_beta > p.c_delta:
        verdict = ADMISSIBLE_I1
    elif i2 and growth_ok and p.c_delta <= p.gap:
        verdict = ADMISSIBLE_I2
    elif not failed and any(v is None for v in points.values()):
        verdict = VIOLATED
        failed = ("undetermined",)
    elif not failed and zone == "superlinear":
        verdict = HOLDS_OUTSIDE_I
    else:
        verdict = VIOLATED
        if not failed:
            failed = (zone,)
    if verdict in (ADMISSIBLE_I1, ADMISSIBLE_I2, HOLDS_OUTSIDE_I):
        failed = ()
    return RegimeReport(
        zone=zone,
        assumption1=a1,
        assumption2_integral=a2,
        assumption4=growth_ok,
        points=points,
        i1=i1,
        i2=i2,
        i2_threshold=thr,
        verdict=verdict,
        violations=failed,
    )


@dataclass(frozen=True)
class ResourceFlags:
    in_R0: bool  # g > 0 on the whole half-line
    in_frak_R0: bool  # g < 0 near zero
    in_frak_Rinf: bool  # g > 0 near infinity


def resource_set_membership(params: AllometricParams) -> ResourceFlags:
    p = params
    if p.gamma_eq_alpha:
        c_r = p.c_r
        return ResourceFlags(c_r > 0, c_r < 0, c_r > 0)
    if p.gamma > p.alpha:
        return ResourceFlags(False, True, p.phi_r > 0)
    return ResourceFlags(False, p.phi_r == 0, False)


def phi_for_positive_growth(params: AllometricParams) -> float | None:
    """Some ``phi_r < 1`` with ``c_r > 0`` (exists whenever c_gamma > c_alpha)."""
    if not (params.gamma_eq_alpha and params.gap > 0):
        return None
    lo = params.c_alpha / params.c_gamma
    return 0.5 * (lo + 1.0)


def as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=float)
