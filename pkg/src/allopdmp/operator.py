"""The offspring operator K, its iterates on 1, and offspring means.

For ``g > 0`` everywhere,

    (Kf)(xi) = int_xi^inf (b/g)(x) exp(-int_xi^x (b+d)/g) f(x - x0) dx,

the expected value of ``f(energy after the first jump)`` on the event that
this jump is a birth.  Substituting the cumulative hazard ``s`` turns it into
``int_0^inf [b/(b+d)](x(s)) exp(-s) f(x(s) - x0) ds`` whose energy map
``x(s)`` is available in closed form (see :mod:`allopdmp.hazard`).  The
s-integral is truncated at 40 and computed with composite Gauss-Legendre
panels whose edges include every ``s`` at which ``x(s)`` crosses a multiple of
``x0``; the iterates of 1 have kinks exactly there.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from .batch import death_probability
from .hazard import PowerFlow
from .rates import AllometricParams, resource_set_membership

S_TRUNC = 40.0
GRID_LO = 1e-4
GRID_HI = 1e6
GRID_NODES = 2048
KINK_MULTIPLES = 32


@dataclass(frozen=True)
class GridFunction:
    """Values on positive nodes; monotone cubic in log-energy between nodes, constant outside."""

    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if nodes.ndim != 1 or nodes.shape != values.shape or nodes.size < 2:
            raise ValueError("nodes and values must be matching 1-d arrays of length >= 2")
        if np.any(nodes <= 0) or np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be positive and strictly increasing")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_interp", PchipInterpolator(np.log(nodes), values, extrapolate=False))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            lx = np.log(np.maximum(x, 0.0))
        out = self._interp(lx)
        out = np.where(lx < math.log(self.nodes[0]), self.values[0], out)
        return np.where(lx > math.log(self.nodes[-1]), self.values[-1], out)

    @classmethod
    def constant(cls, nodes, c: float = 1.0) -> "GridFunction":
        nodes = np.asarray(nodes, dtype=float)
        return cls(nodes, np.full(nodes.shape, float(c)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["energy", "value"])
        for x, v in zip(self.nodes, self.values):
            w.writerow([repr(float(x)), repr(float(v))])
        return buf.getvalue()


def default_grid(x0: float, n: int = GRID_NODES, extra=()) -> np.ndarray:
    """Geometric grid over ``[1e-4 x0, 1e6 x0]`` plus the kink points ``m x0`` and any ``extra``."""
    base = np.geomspace(GRID_LO * x0, GRID_HI * x0, n)
    kinks = x0 * np.arange(1, KINK_MULTIPLES + 1)
    nodes = np.unique(np.concatenate([base, kinks, np.asarray(extra, dtype=float)]))
    # drop near-duplicates that would make the interpolant ill-conditioned
    keep = np.r_[True, np.diff(np.log(nodes)) > 1e-12]
    return nodes[keep]


def _flow(params: AllometricParams) -> PowerFlow:
    if not params.gamma_eq_alpha:
        raise ValueError("K is implemented for gamma == alpha")
    if not resource_set_membership(params).in_R0:
        raise ValueError("K needs positive net growth at every energy (c_r > 0)")
    return PowerFlow(params)


def cumulative_hazard(pf: PowerFlow, y, y_target):
    """``int (b+d)/g`` from log-energy ``y`` up to ``y_target >= y``."""
    y, yt = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(y_target, dtype=float))
    lx0 = pf.logx0
    low_end = np.minimum(yt, lx0)
    below = np.where(y < lx0, pf.hazard(pf.death, y, np.maximum(low_end - y, 0.0)), 0.0)
    start = np.maximum(y, lx0)
    above = pf.pair_hazard(start, np.maximum(yt - start, 0.0))
    return below + above


def energy_at_hazard(pf: PowerFlow, y, s):
    """Log-energy where the cumulative hazard from ``y`` reaches ``s`` (nan if it never does)."""
    y, s = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(s, dtype=float))
    lx0 = pf.logx0
    pre = y < lx0
    hseg = np.where(pre, pf.hazard(pf.death, y, np.where(pre, lx0 - y, 0.0)), 0.0)
    first = pre & (s <= hseg)
    out = np.full(y.shape, np.nan)
    if np.any(first):
        out[first] = y[first] + pf.invert(pf.death, y[first], s[first])
    rest = ~first
    if np.any(rest):
        st = np.maximum(y[rest], lx0)
        out[rest] = st + pf.invert_pair(st, s[rest] - hseg[rest])
    return np.where(np.isfinite(out), out, np.nan)


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl(order: int):
    if order not in _GL_CACHE:
        _GL_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _GL_CACHE[order]


@lru_cache(maxsize=16)
def _kernel(params: AllometricParams, nodes_key: bytes, s_trunc: float, panels: int, order: int):
    """Child energies and quadrature weights of ``K`` on a grid; ``K f = sum(w * f(child))``."""
    pf = _flow(params)
    nodes = np.frombuffer(nodes_key, dtype=float)
    x0 = params.x0
    y = np.log(nodes)
    mult = x0 * np.arange(1, KINK_MULTIPLES + 1)
    sb = cumulative_hazard(pf, y[:, None], np.log(mult)[None, :])
    sb = np.where((mult[None, :] > nodes[:, None]) & (sb > 0) & (sb < s_trunc), sb, s_trunc)
    base = np.broadcast_to(np.linspace(0.0, s_trunc, panels + 1), (nodes.size, panels + 1))
    edges = np.sort(np.concatenate([base, sb], axis=1), axis=1)
    a, b = edges[:, :-1], edges[:, 1:]
    gx, gw = _gl(order)
    half = 0.5 * (b - a)
    s = (0.5 * (a + b))[..., None] + half[..., None] * gx
    ye = energy_at_hazard(pf, np.broadcast_to(y[:, None, None], s.shape), s)
    valid = np.isfinite(ye) & (ye > pf.logx0)
    yv = np.where(valid, ye, pf.logx0 + 1.0)
    p_birth = 1.0 - death_probability(params, yv)
    child = x0 * np.expm1(yv - pf.logx0)
    weight = np.where(valid, p_birth * np.exp(-s), 0.0) * gw * half[..., None]
    child.setflags(write=False)
    weight.setflags(write=False)
    return child, weight


def apply_K(
    f: GridFunction,
    params: AllometricParams,
    nodes=None,
    s_trunc: float = S_TRUNC,
    panels: int = 8,
    order: int = 20,
) -> GridFunction:
    """``K f`` on ``nodes`` (default: the nodes of ``f``)."""
    nodes = f.nodes if nodes is None else np.asarray(nodes, dtype=float)
    child, weight = _kernel(params, np.ascontiguousarray(nodes, dtype=float).tobytes(), float(s_trunc),
                            panels, order)
    vals = np.einsum("npg,npg->n", weight, f(child))
    return GridFunction(nodes, vals)


def k_power_iterates(params: AllometricParams, k: int, nodes=None, xi0=None) -> list[GridFunction]:
    """``[1, K1, ..., K^k 1]`` on a common grid."""
    if k < 0:
        raise ValueError("k must be non-negative")
    extra = () if xi0 is None else (xi0,)
    nodes = default_grid(params.x0, extra=extra) if nodes is None else np.asarray(nodes, dtype=float)
    if k > 0:
        _flow(params)
    out = [GridFunction.constant(nodes)]
    for _ in range(k):
        out.append(apply_K(out[-1], params))
    return out


def k_power_one(params: AllometricParams, xi0: float, k: int, nodes=None) -> float:
    """Probability that the first ``k`` jumps from ``xi0`` are all births."""
    if k == 0:
        return 1.0
    its = k_power_iterates(params, k, nodes, xi0)
    return float(its[-1](xi0))


def survival_exponent(params: AllometricParams, xi0: float, closed_form: bool = True) -> float:
    """Probability of never jumping: ``exp(-int_xi0^inf (b+d)/g)``; 0 when the integral diverges."""
    pf = _flow(params)
    if max(params.beta, params.delta) >= params.alpha - 1.0 - 1e-12:
        return 0.0
    y = math.log(xi0)
    if closed_form:
        total = float(cumulative_hazard(pf, y, np.inf))
    else:
        p = params

        lx0 = math.log(p.x0)

        def integrand(t):
            # (b + d) x / g in log-energy, as exponentials of linear functions of t
            d = math.exp(math.log(p.c_delta) + (p.delta + 1.0 - p.alpha) * t)
            b = math.exp(math.log(p.c_beta) + (p.beta + 1.0 - p.alpha) * t) if t > lx0 else 0.0
            return (b + d) / p.c_r

        pts = [y, max(y, math.log(p.x0))]
        total = 0.0
        lo = y
        for hi in sorted(set(pts[1:])) + [np.inf]:
            if hi > lo:
                total += integrate.quad(integrand, lo, hi, epsabs=0.0, epsrel=1e-12, limit=400)[0]
                lo = hi
    return math.exp(-total)


@dataclass(frozen=True)
class SeriesResult:
    value: float
    truncation_k: int
    diverged: bool
    converged: bool
    terms: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "truncation_k": self.truncation_k,
            "diverged": self.diverged,
            "converged": self.converged,
        }


def mean_offspring_series(
    params: AllometricParams,
    xi0: float | None = None,
    tol: float = 1e-9,
    max_k: int = 2000,
    plateau: int = 50,
) -> SeriesResult:
    """``m = sum_k K^k 1(xi0)`` (default ``xi0 = x0``).

    Stops once a term falls below ``tol * (1 - r)`` with ``r`` the latest
    term ratio; reports divergence when ``plateau`` consecutive terms stay
    above ``tol`` without decaying.
    """
    xi0 = params.x0 if xi0 is None else xi0
    _flow(params)
    nodes = default_grid(params.x0, extra=(xi0,))
    f = GridFunction.constant(nodes)
    total = 0.0
    terms = []
    flat = 0
    prev = 1.0
    for k in range(1, max_k + 1):
        f = apply_K(f, params)
        term = float(f(xi0))
        terms.append(term)
        total += term
        ratio = term / prev if prev > 0 else 0.0
        prev = term
        if term <= 0.0 or (ratio < 1.0 and term < tol * (1.0 - ratio)):
            return SeriesResult(total, k, False, True, tuple(terms))
        flat = flat + 1 if (term > tol and ratio > 1.0 - 1e-3) else 0
        if flat >= plateau:
            return SeriesResult(total, k, True, False, tuple(terms))
    return SeriesResult(total, max_k, False, False, tuple(terms))


def mean_offspring_no_loss(params: AllometricParams, x: float) -> float:
    """Mean births of a life started at ``x`` when births cost no energy.

    With ``B`` and ``D`` the cumulative birth (no indicator) and death hazards
    along the flow, the births form a Poisson count with mean ``B`` at the
    death time, so ``m0 = int_0^inf B(L(s)) exp(-s) ds`` where ``L(s)`` inverts
    ``D``.  Returns ``inf`` when that integral diverges.
    """
    if not params.gamma_eq_alpha or params.c_r <= 0:
        raise ValueError("needs gamma == alpha and c_r > 0")
    if params.delta < params.alpha - 1.0 - 1e-12:
        raise ValueError("improper: with delta < alpha - 1 a life may never end")
    pf = PowerFlow(params, x0=0.0)
    y = math.log(x)
    qd = pf.death.q
    if abs(qd) <= 1e-15 and pf.birth.q * params.c_r / params.c_delta >= 1.0:
        return math.inf

    a = pf.birth.q  # c_r > 0, so the flow moves up in log-energy

    def integrand(s):
        L = float(pf.invert(pf.death, y, s))
        if L <= 0.0:
            return 0.0
        # log of the birth hazard, kept finite where expm1(a L) overflows
        if a > 0:
            log_ratio = a * L + math.log(-math.expm1(-a * L)) - math.log(a)
        elif a < 0:
            log_ratio = math.log(math.expm1(a * L) / a)
        else:
            log_ratio = math.log(L)
        return math.exp(pf.birth.logk + a * y + log_ratio - s)

    pieces = [0.0, 1.0, 5.0, 20.0, 60.0, np.inf]
    total = 0.0
    for lo, hi in zip(pieces[:-1], pieces[1:]):
        val, _ = integrate.quad(integrand, lo, hi, epsabs=0.0, epsrel=1e-11, limit=400)
        total += val
    return total
