"""Vectorized simulation of many independent individuals.

Each step function advances every live path to its next event at once.  The
scalar simulators in :mod:`allopdmp.pdmp` call the same functions on
one-element arrays, so a path simulated alone and inside a batch consume the
same variates and end up with the same event list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .hazard import PowerFlow
from .rates import AllometricParams

# outcome codes of one step
JUMP = 0
ABSORB_ZERO = 1
ABSORB_INF = 2
CENSOR = 3

# terminal codes stored per path
T_DEATH = 0
T_ZERO = 1
T_INF = 2
T_CENSORED = 3

# event codes in the flat log
EV_BIRTH = 0
EV_DEATH = 1
EV_ZERO = 2
EV_INF = 3
EV_CENSOR = 4

DEFAULT_MAX_EVENTS = 1_000_000
DEFAULT_MAX_TIME = 1e6


@dataclass(frozen=True)
class Caps:
    max_events: int = DEFAULT_MAX_EVENTS
    max_time: float = DEFAULT_MAX_TIME

    def __post_init__(self):
        if self.max_events <= 0 or not self.max_time > 0:
            raise ValueError("caps must be positive")


@dataclass
class StepResult:
    outcome: np.ndarray  # JUMP / ABSORB_* / CENSOR
    dt: np.ndarray  # time to the outcome
    y: np.ndarray  # log-energy at the outcome (nan when absorbed)
    birth: np.ndarray | None = None  # split clock only: the jump is a birth


def _log_energy_after_birth(y, logx0):
    with np.errstate(divide="ignore", invalid="ignore"):
        return y + np.log1p(-np.exp(logx0 - y))


def _finish(pf: PowerFlow, outcome_jump, no_jump, t, tleft, censor_y):
    outcome = np.where(no_jump, ABSORB_INF if pf.sign > 0 else ABSORB_ZERO, JUMP)
    # no jump and no absorption either: the life never ends, censor it
    late = (t > tleft) | ~np.isfinite(t)
    outcome = np.where(late, CENSOR, outcome)
    dt = np.where(late, tleft, t)
    y = np.where(late, censor_y, np.where(no_jump, np.nan, outcome_jump))
    return outcome, dt, y


def _censor_energy(pf: PowerFlow, y, tleft, y_mid=None, t_mid=None):
    """Log-energy after flowing ``tleft`` from ``y``; ``y_mid`` is a waypoint reached at ``t_mid``."""
    if y_mid is None:
        return pf.move(y, pf.invert(pf.clock, y, tleft))
    first = tleft <= t_mid
    a = pf.move(y, pf.invert(pf.clock, y, np.where(first, tleft, 0.0)))
    b = pf.move(y_mid, pf.invert(pf.clock, y_mid, np.where(first, 0.0, tleft - t_mid)))
    return np.where(first, a, b)


def gillespie_step(pf: PowerFlow, y, E, tleft) -> StepResult:
    """First jump of the joint clock at rate ``b + d`` against exponential ``E``."""
    y = np.asarray(y, dtype=float)
    E = np.asarray(E, dtype=float)
    tleft = np.broadcast_to(np.asarray(tleft, dtype=float), y.shape)
    lx0 = pf.logx0
    if pf.sign > 0:
        pre = y < lx0  # only deaths until the energy passes x0
        Lseg = np.where(pre, lx0 - y, 0.0)
        Hseg = pf.hazard(pf.death, y, Lseg)
        single = pf.death
    else:
        pre = y > lx0  # births and deaths until the energy falls to x0
        Lseg = np.where(pre, y - lx0, 0.0)
        Hseg = pf.pair_hazard(y, Lseg)
        single = None
    in_first = pre & (E <= Hseg)
    rest = ~in_first
    y2 = np.where(pre, lx0, y)
    E2 = E - np.where(pre, Hseg, 0.0)
    t_mid = np.where(pre, pf.elapsed(y, Lseg), 0.0)

    L = np.full(y.shape, np.inf)
    if np.any(in_first):
        yi, Ei = y[in_first], E[in_first]
        L[in_first] = pf.invert(single, yi, Ei) if single is not None else pf.invert_pair(yi, Ei)
    if np.any(rest):
        yr, Er = y2[rest], E2[rest]
        L[rest] = pf.invert_pair(yr, Er) if single is not None else pf.invert(pf.death, yr, Er)

    ystart = np.where(in_first, y, y2)
    tpre = np.where(in_first, 0.0, t_mid)
    no_jump = ~np.isfinite(L)
    with np.errstate(invalid="ignore"):
        t = tpre + np.where(no_jump, pf.t_max(ystart), pf.elapsed(ystart, np.where(no_jump, 0.0, L)))
        yj = pf.move(ystart, np.where(no_jump, 0.0, L))
    late = t > tleft
    yc = np.full(y.shape, np.nan)
    if np.any(late):
        yc[late] = _censor_energy(pf, y[late], tleft[late], y2[late], t_mid[late])
    outcome, dt, yo = _finish(pf, yj, no_jump, t, tleft, yc)
    return StepResult(outcome, dt, yo)


def split_step(pf: PowerFlow, y, Fb, Fd, tleft) -> StepResult:
    """Next event with separate birth clock ``Fb`` (rate b) and death clock ``Fd`` (rate d)."""
    y = np.asarray(y, dtype=float)
    Fb = np.asarray(Fb, dtype=float)
    Fd = np.asarray(Fd, dtype=float)
    tleft = np.broadcast_to(np.asarray(tleft, dtype=float), y.shape)
    lx0 = pf.logx0
    if pf.sign > 0:
        below = y < lx0
        start = np.where(below, lx0, y)
        Lb = np.where(below, lx0 - y, 0.0) + pf.invert(pf.birth, start, Fb)
    else:
        above = y > lx0
        cap = pf.hazard(pf.birth, y, np.where(above, y - lx0, 0.0))
        Lb = np.where(above & (Fb <= cap), pf.invert(pf.birth, y, Fb), np.inf)
    Ld = pf.invert(pf.death, y, Fd)
    L = np.minimum(Lb, Ld)
    birth = Lb < Ld
    no_jump = ~np.isfinite(L)
    with np.errstate(invalid="ignore"):
        t = np.where(no_jump, pf.t_max(y), pf.elapsed(y, np.where(no_jump, 0.0, L)))
        yj = pf.move(y, np.where(no_jump, 0.0, L))
    late = t > tleft
    yc = np.full(y.shape, np.nan)
    if np.any(late):
        yc[late] = _censor_energy(pf, y[late], tleft[late])
    outcome, dt, yo = _finish(pf, yj, no_jump, t, tleft, yc)
    return StepResult(outcome, dt, yo, birth & (outcome == JUMP))


class ConstantFlow:
    """Stand-in for :class:`PowerFlow` when ``c_r == 0``: the energy never moves."""

    sign = 0.0

    def __init__(self, params: AllometricParams, x0: float | None = None):
        self.params = params
        self.x0 = params.x0 if x0 is None else float(x0)
        self.logx0 = math.log(self.x0) if self.x0 > 0 else -math.inf

    def rates(self, y):
        p = self.params
        b = np.where(y > self.logx0, p.c_beta * np.exp(p.beta * y), 0.0)
        d = p.c_delta * np.exp(p.delta * y)
        return b, d


def constant_gillespie_step(cf: ConstantFlow, y, E, tleft) -> StepResult:
    y = np.asarray(y, dtype=float)
    b, d = cf.rates(y)
    t = np.asarray(E, dtype=float) / (b + d)
    late = t > tleft
    return StepResult(np.where(late, CENSOR, JUMP), np.where(late, tleft, t), y.copy())


def constant_split_step(cf: ConstantFlow, y, Fb, Fd, tleft) -> StepResult:
    y = np.asarray(y, dtype=float)
    b, d = cf.rates(y)
    with np.errstate(divide="ignore"):
        tb = np.where(b > 0, np.asarray(Fb) / np.where(b > 0, b, 1.0), np.inf)
    td = np.asarray(Fd) / d
    t = np.minimum(tb, td)
    late = t > tleft
    return StepResult(np.where(late, CENSOR, JUMP), np.where(late, tleft, t), y.copy(), (tb < td) & ~late)


def make_flow(params: AllometricParams, x0: float | None = None):
    if not params.gamma_eq_alpha:
        raise NotImplementedError("vectorized simulation needs gamma == alpha")
    if params.c_r == 0.0:
        return ConstantFlow(params, x0)
    return PowerFlow(params, x0)


def death_probability(params: AllometricParams, y):
    """``d/(b+d)`` at log-energies ``y`` above ``x0`` (the thinning threshold)."""
    p = params
    with np.errstate(over="ignore"):
        log_ratio = math.log(p.c_beta / p.c_delta) + (p.beta - p.delta) * np.asarray(y, dtype=float)
        return 1.0 / (1.0 + np.exp(log_ratio))


# ---------------------------------------------------------------------------


@dataclass
class EventLog:
    path: np.ndarray
    time: np.ndarray
    kind: np.ndarray
    energy_before: np.ndarray
    energy_after: np.ndarray


@dataclass
class BatchResult:
    n_births: np.ndarray
    terminal: np.ndarray
    t_end: np.ndarray  # time of the terminal event (death, absorption or censoring)
    energy_end: np.ndarray  # energy at censoring, nan otherwise
    seed: int
    first_path: int
    events: EventLog | None = field(default=None, repr=False)

    @property
    def censored(self) -> np.ndarray:
        return self.terminal == T_CENSORED

    @property
    def t_death(self) -> np.ndarray:
        return np.where(self.terminal == T_DEATH, self.t_end, np.nan)


class _Recorder:
    def __init__(self):
        self.chunks: list[tuple] = []

    def add(self, path, time, kind, before, after):
        if len(path):
            self.chunks.append((path.copy(), time.copy(), np.full(len(path), kind) if np.isscalar(kind) else kind.copy(),
                                before.copy(), after.copy()))

    def build(self) -> EventLog:
        if not self.chunks:
            e = np.empty(0)
            return EventLog(e.astype(np.int64), e, e.astype(np.int8), e, e)
        cols = list(zip(*self.chunks))
        path = np.concatenate(cols[0])
        time = np.concatenate(cols[1])
        order = np.lexsort((time, path))
        return EventLog(
            path[order],
            time[order],
            np.concatenate(cols[2]).astype(np.int8)[order],
            np.concatenate(cols[3])[order],
            np.concatenate(cols[4])[order],
        )


def simulate_batch(
    params: AllometricParams,
    xi0,
    n: int,
    seed: int,
    caps: Caps = Caps(),
    method: str = "gillespie",
    first_path: int = 0,
    record: bool = False,
    keys: np.ndarray | None = None,
    max_time=None,
) -> BatchResult:
    """Simulate ``n`` independent lives started at ``xi0`` (a scalar or one energy per path).

    Path ``i`` uses the key ``derive_key(seed, first_path + i)``, so splitting a
    run into chunks by ``first_path`` reproduces the unsplit run exactly;
    ``keys`` overrides this with explicit per-path keys.  ``max_time`` may
    give a per-path time cap in place of ``caps.max_time``.  ``method`` is
    ``"gillespie"`` (joint clock plus thinning) or ``"split"`` (separate birth
    and death clocks).
    """
    xi0 = np.broadcast_to(np.asarray(xi0, dtype=float), (n,))
    if np.any(xi0 <= 0):
        raise ValueError("xi0 must be positive")
    if method not in ("gillespie", "split"):
        raise ValueError(f"unknown method {method!r}")
    flow = make_flow(params)
    const = isinstance(flow, ConstantFlow)
    if keys is None:
        keys = rng.path_keys(seed, np.arange(first_path, first_path + n, dtype=np.uint64))
    else:
        keys = np.asarray(keys, dtype=np.uint64)
        if keys.shape != (n,):
            raise ValueError("need one key per path")
    y = np.log(xi0)
    t = np.zeros(n)
    births = np.zeros(n, dtype=np.int64)
    terminal = np.full(n, -1, dtype=np.int8)
    t_end = np.full(n, np.nan)
    e_end = np.full(n, np.nan)
    Fd = rng.exponential_arr(keys, rng.DEATH, np.zeros(n, dtype=np.uint64)) if method == "split" else None
    rec = _Recorder() if record else None
    lx0 = flow.logx0
    idx = np.arange(n)
    max_time = np.broadcast_to(np.asarray(caps.max_time if max_time is None else max_time, dtype=float), (n,))

    while idx.size:
        # event cap
        capped = births[idx] >= caps.max_events
        if np.any(capped):
            ci = idx[capped]
            terminal[ci] = T_CENSORED
            t_end[ci] = t[ci]
            e_end[ci] = np.exp(y[ci])
            if rec:
                rec.add(ci, t[ci], EV_CENSOR, np.exp(y[ci]), np.full(ci.size, np.nan))
            idx = idx[~capped]
            if not idx.size:
                break
        k = keys[idx]
        ctr = births[idx].astype(np.uint64)
        tleft = max_time[idx] - t[idx]
        yi = y[idx]
        if method == "gillespie":
            E = rng.exponential_arr(k, rng.CLOCK, ctr)
            st = constant_gillespie_step(flow, yi, E, tleft) if const else gillespie_step(flow, yi, E, tleft)
            jump = st.outcome == JUMP
            above = st.y > lx0
            u = rng.uniform_arr(k, rng.THIN, ctr)
            with np.errstate(invalid="ignore"):
                is_birth = jump & above & (u > death_probability(params, st.y))
        else:
            Fb = rng.exponential_arr(k, rng.BIRTH, ctr)
            st = constant_split_step(flow, yi, Fb, Fd[idx], tleft) if const else split_step(flow, yi, Fb, Fd[idx], tleft)
            is_birth = st.birth
            if np.any(is_birth):
                bi = np.flatnonzero(is_birth)
                if const:
                    _, d = flow.rates(yi[bi])
                    Fd[idx[bi]] -= d * st.dt[bi]
                else:
                    Fd[idx[bi]] -= flow.hazard(flow.death, yi[bi], np.abs(st.y[bi] - yi[bi]))
        t_new = t[idx] + st.dt
        y_after = _log_energy_after_birth(st.y, lx0)
        # round-off can put a birth exactly at x0; treat it as the forced death it borders on
        is_birth &= np.isfinite(y_after)
        is_death = (st.outcome == JUMP) & ~is_birth

        if rec:
            e_before = np.exp(st.y)
            rec.add(idx[is_birth], t_new[is_birth], EV_BIRTH, e_before[is_birth], np.exp(y_after[is_birth]))
            rec.add(idx[is_death], t_new[is_death], EV_DEATH, e_before[is_death], np.full(is_death.sum(), np.nan))
            for code, ev in ((ABSORB_ZERO, EV_ZERO), (ABSORB_INF, EV_INF)):
                m = st.outcome == code
                rec.add(idx[m], t_new[m], ev, np.where(code == ABSORB_ZERO, 0.0, np.inf) * np.ones(m.sum()),
                        np.full(m.sum(), np.nan))
            m = st.outcome == CENSOR
            rec.add(idx[m], t_new[m], EV_CENSOR, e_before[m], np.full(m.sum(), np.nan))

        bi = idx[is_birth]
        births[bi] += 1
        y[bi] = y_after[is_birth]
        t[bi] = t_new[is_birth]

        for code, term in ((JUMP, T_DEATH), (ABSORB_ZERO, T_ZERO), (ABSORB_INF, T_INF), (CENSOR, T_CENSORED)):
            m = (st.outcome == code) & ~is_birth
            if np.any(m):
                mi = idx[m]
                terminal[mi] = term
                t_end[mi] = t_new[m]
                if code == CENSOR:
                    e_end[mi] = np.exp(st.y[m])
        idx = idx[is_birth]

    return BatchResult(births, terminal, t_end, e_end, seed, first_path, rec.build() if rec else None)
