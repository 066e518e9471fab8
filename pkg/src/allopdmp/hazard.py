"""Closed-form cumulative hazards along the flow when gamma == alpha.

With ``dx/dt = c_r x**alpha`` a rate ``C x**r`` accumulates, while the energy
moves a log-distance ``L`` along the flow from ``u``, the hazard

    H(L) = (C/|c_r|) * u**q * expm1(s*q*L) / (s*q),   q = r - alpha + 1,

where ``s = sign(c_r)``.  Elapsed time is the same expression with ``C = 1``
and ``r = 0``.  Everything is evaluated from log-energies so that energies
between 1e-300 and 1e300 stay representable, and every function here takes
numpy arrays (0-d arrays work too, which the scalar simulators rely on).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rates import AllometricParams

NEWTON_MAXITER = 200
HAZARD_ATOL = 1e-12


@dataclass(frozen=True)
class Term:
    """A power law ``exp(logk) * x**q`` integrated along the log-energy coordinate."""

    logk: float
    q: float

    def scaled(self, sign: float) -> float:
        return sign * self.q


def _expm1_ratio(a, L):
    """``expm1(a*L)/a`` with the ``a -> 0`` limit ``L``."""
    a = np.asarray(a, dtype=float)
    L = np.asarray(L, dtype=float)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        small = np.abs(a) < 1e-300
        safe = np.where(small, 1.0, a)
        out = np.where(small, L, np.expm1(safe * L) / safe)
    # L = inf with a < 0 gives -1/a, which expm1 already returns; L = 0 gives 0
    return out


class PowerFlow:
    """Hazard bookkeeping for one parameter set with ``gamma == alpha`` and ``c_r != 0``."""

    def __init__(self, params: AllometricParams, x0: float | None = None):
        if not params.gamma_eq_alpha:
            raise ValueError("closed-form hazards need gamma == alpha")
        c_r = params.c_r
        if c_r == 0.0:
            raise ValueError("closed-form hazards need c_r != 0")
        self.params = params
        self.sign = 1.0 if c_r > 0 else -1.0
        k = abs(c_r)
        a = params.alpha
        self.birth = Term(math.log(params.c_beta / k), params.beta - a + 1.0)
        self.death = Term(math.log(params.c_delta / k), params.delta - a + 1.0)
        self.clock = Term(-math.log(k), 1.0 - a)
        self.x0 = params.x0 if x0 is None else float(x0)
        self.logx0 = math.log(self.x0) if self.x0 > 0 else -math.inf
        self.same_power = abs(self.birth.q - self.death.q) <= 1e-15
        if self.same_power:
            self.both = Term(float(np.logaddexp(self.birth.logk, self.death.logk)), self.birth.q)

    # -- single terms -------------------------------------------------------

    def hazard(self, term: Term, y, L):
        """Hazard accumulated over log-distance ``L`` from log-energy ``y``."""
        with np.errstate(over="ignore", invalid="ignore"):
            pre = np.exp(term.logk + term.q * np.asarray(y, dtype=float))
            out = pre * _expm1_ratio(self.sign * term.q, L)
        return np.where(np.asarray(L) == 0, 0.0, out)

    def capacity(self, term: Term, y):
        """Total hazard available from ``y`` onwards (``inf`` if unbounded)."""
        a = self.sign * term.q
        y = np.asarray(y, dtype=float)
        if a >= 0:
            return np.full(y.shape, np.inf)
        with np.errstate(over="ignore"):
            return np.exp(term.logk + term.q * y) / (-a)

    def invert(self, term: Term, y, h):
        """Log-distance at which ``term`` has accumulated ``h``; ``inf`` if never."""
        a = self.sign * term.q
        y = np.asarray(y, dtype=float)
        h = np.asarray(h, dtype=float)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            scaled = h * np.exp(-(term.logk + term.q * y))
            if abs(a) < 1e-300:
                return scaled
            arg = a * scaled
            out = np.log1p(arg) / a
        return np.where(arg <= -1.0, np.inf, out)

    def elapsed(self, y, L):
        """Flow time to move log-distance ``L`` from ``y``."""
        return self.hazard(self.clock, y, L)

    def t_max(self, y):
        return self.capacity(self.clock, y)

    def move(self, y, L):
        return np.asarray(y, dtype=float) + self.sign * np.asarray(L, dtype=float)

    # -- birth + death ------------------------------------------------------

    def pair_hazard(self, y, L):
        return self.hazard(self.birth, y, L) + self.hazard(self.death, y, L)

    def pair_capacity(self, y):
        return self.capacity(self.birth, y) + self.capacity(self.death, y)

    def invert_pair(self, y, h):
        """Solve ``H_b(L) + H_d(L) = h`` for ``L``; ``inf`` when the total falls short."""
        y = np.asarray(y, dtype=float)
        h = np.asarray(h, dtype=float)
        y, h = np.broadcast_arrays(y, h)
        if self.same_power:
            return self.invert(self.both, y, h)
        cap_b = self.capacity(self.birth, y)
        cap_d = self.capacity(self.death, y)
        total = cap_b + cap_d
        out = np.full(y.shape, np.inf)
        live = total > h
        if not np.any(live):
            return out
        yl, hl = y[live], h[live]
        cb, cd = cap_b[live], cap_d[live]
        upper = np.minimum(self.invert(self.birth, yl, hl), self.invert(self.death, yl, hl))
        both_finite = np.isfinite(cb) & np.isfinite(cd)
        if np.any(both_finite):
            w = np.where(both_finite, cb / np.where(both_finite, cb + cd, 1.0), 0.5)
            alt = np.maximum(self.invert(self.birth, yl, w * hl), self.invert(self.death, yl, (1 - w) * hl))
            upper = np.where(both_finite, np.minimum(upper, alt), upper)
        out[live] = self._newton_bisect(yl, hl, upper)
        return out

    def _newton_bisect(self, y, h, upper):
        b, d, s = self.birth, self.death, self.sign
        lo = np.zeros_like(h)
        hi = upper.copy()
        L = 0.5 * hi
        tol = HAZARD_ATOL * np.maximum(h, 1.0)
        done = np.zeros(h.shape, dtype=bool)
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(NEWTON_MAXITER):
                F = self.pair_hazard(y, L) - h
                conv = np.abs(F) <= tol
                done |= conv
                if done.all():
                    break
                lo = np.where(F < 0, L, lo)
                hi = np.where(F > 0, L, hi)
                dF = np.exp(b.logk + b.q * y + s * b.q * L) + np.exp(d.logk + d.q * y + s * d.q * L)
                step = L - F / dF
                bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
                nxt = np.where(bad, 0.5 * (lo + hi), step)
                # bracket collapsed to round-off: accept
                done |= (hi - lo) <= 4 * np.finfo(float).eps * np.maximum(hi, 1.0)
                L = np.where(done, L, nxt)
        return L
