"""Single-individual trajectories: exact event-by-event simulation.

Two constructions are provided.  :func:`simulate_trajectory` runs one
exponential clock at rate ``b + d`` and decides birth versus death with a
uniform at each jump.  :func:`simulate_split_clock` drives births with their
own clocks (restarted at each birth) and death with a single clock, which is
what makes pathwise couplings between different birth energies possible.

When ``gamma == alpha`` both use the closed-form hazards of
:mod:`allopdmp.hazard` through the same step functions as the batch
simulator.  Otherwise each step integrates the flow and hazards together with
an adaptive Runge-Kutta scheme.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate

from . import rng
from .batch import (
    ABSORB_INF,
    ABSORB_ZERO,
    CENSOR,
    EV_BIRTH,
    EV_CENSOR,
    EV_DEATH,
    JUMP,
    Caps,
    ConstantFlow,
    StepResult,
    _log_energy_after_birth,
    constant_gillespie_step,
    constant_split_step,
    death_probability,
    gillespie_step,
    make_flow,
    simulate_batch,
    split_step,
)
from .rates import LOG_CEIL, LOG_FLOOR, ODE_ATOL, ODE_RTOL, AllometricParams, RateBundle, classify_regime, eval_rates
from .stats import EstimateResult, summarize

ODE_SPAN = 1e300


class EventKind(str, Enum):
    BIRTH = "Birth"
    DEATH = "Death"
    ABSORB_ZERO = "AbsorbZero"
    ABSORB_INF = "AbsorbInfinity"
    CENSORED = "CensoredCap"


TERMINAL_KINDS = (EventKind.DEATH, EventKind.ABSORB_ZERO, EventKind.ABSORB_INF, EventKind.CENSORED)


@dataclass(frozen=True)
class TrajectoryEvent:
    time: float
    kind: EventKind
    energy_before: float
    energy_after: float | None = None


@dataclass(frozen=True)
class Trajectory:
    xi0: float
    events: tuple[TrajectoryEvent, ...]
    seed_path: str = ""
    accumulation_warning: bool = False

    @property
    def terminal(self) -> EventKind | None:
        return self.events[-1].kind if self.events and self.events[-1].kind in TERMINAL_KINDS else None

    @property
    def n_births(self) -> int:
        return sum(1 for e in self.events if e.kind is EventKind.BIRTH)

    @property
    def t_death(self) -> float | None:
        return self.events[-1].time if self.terminal is EventKind.DEATH else None

    @property
    def censored(self) -> bool:
        return self.terminal is EventKind.CENSORED

    @property
    def t_end(self) -> float:
        return self.events[-1].time if self.events else 0.0

    def summary(self) -> dict:
        return {
            "n_births": self.n_births,
            "terminal": self.terminal.value if self.terminal else None,
            "t_death": self.t_death,
            "censored": self.censored,
            "seed_path": self.seed_path,
        }


class NoJumpType:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "NoJump"

    def __bool__(self):
        return False


NoJump = NoJumpType()


class NumericFailure(RuntimeError):
    """A step could not be resolved; ``prefix`` holds the events simulated so far."""

    def __init__(self, message: str, prefix: Sequence[TrajectoryEvent] = ()):
        super().__init__(message)
        self.prefix = tuple(prefix)


# ---------------------------------------------------------------------------
# adaptive-ODE steps for gamma != alpha (also used as an oracle in tests)


class OdeStepper:
    """Advance flow and cumulative hazards together until one reaches its target.

    ``freeze_above`` evaluates birth and death rates at ``min(x, freeze_above)``,
    which gives the frozen-rate comparison process.
    """

    def __init__(self, params: AllometricParams, x0: float | None = None, freeze_above: float | None = None):
        self.params = params
        self.rates = eval_rates(params)
        self.x0 = params.x0 if x0 is None else float(x0)
        self.logx0 = math.log(self.x0) if self.x0 > 0 else -math.inf
        self.freeze = math.log(freeze_above) if freeze_above is not None else math.inf

    def _rhs(self, above: bool):
        p, r = self.params, self.rates
        cap = self.freeze

        def rhs(_, s):
            y = s[0]
            x = math.exp(y)
            yr = min(y, cap)
            db = p.c_beta * math.exp(p.beta * yr) if above else 0.0
            dd = p.c_delta * math.exp(p.delta * yr)
            return [r.net_growth(x) / x, db, dd]

        return rhs

    def step(self, y: float, tleft: float, E: float | None = None, Fb: float | None = None, Fd: float | None = None):
        """Return a one-element :class:`StepResult` (``birth`` set in split mode)."""
        split = E is None
        t, hb, hd = 0.0, 0.0, 0.0
        end = min(tleft, ODE_SPAN)
        while True:
            x = math.exp(y)
            g = self.rates.net_growth(x)
            if y > self.logx0:
                above = True
            elif y < self.logx0:
                above = False
            else:
                above = g > 0
            if g == 0.0:
                return self._constant(y, tleft, t, hb, hd, E, Fb, Fd, above)

            events = []
            if split:
                ev_b = lambda _, s: s[1] - Fb  # noqa: E731
                ev_d = lambda _, s: s[2] - Fd  # noqa: E731
                events += [ev_b, ev_d]
            else:
                ev_j = lambda _, s: s[1] + s[2] - E  # noqa: E731
                events += [ev_j]
            ev_x0 = lambda _, s: s[0] - self.logx0  # noqa: E731
            ev_lo = lambda _, s: s[0] - LOG_FLOOR  # noqa: E731
            ev_hi = lambda _, s: s[0] - LOG_CEIL  # noqa: E731
            for ev in events:
                ev.terminal, ev.direction = True, 1
            ev_x0.terminal = math.isfinite(self.logx0)
            ev_x0.direction = -1 if above else 1
            ev_lo.terminal = ev_hi.terminal = True
            allev = events + [ev_x0, ev_lo, ev_hi]
            if t >= end:
                return self._censor(y, tleft)
            sol = integrate.solve_ivp(
                self._rhs(above), (t, end), [y, hb, hd], method="DOP853",
                rtol=ODE_RTOL, atol=ODE_ATOL, events=allev, dense_output=False,
            )
            if sol.status == -1:
                raise NumericFailure(sol.message)
            hit = [i for i, te in enumerate(sol.t_events) if len(te)]
            if not hit:
                return self._censor(sol.y[0, -1], tleft)
            # earliest event wins
            i = min(hit, key=lambda j: sol.t_events[j][0])
            te = float(sol.t_events[i][0])
            ye = sol.y_events[i][0]
            name = "x0" if allev[i] is ev_x0 else ("lo" if allev[i] is ev_lo else ("hi" if allev[i] is ev_hi else "jump"))
            if name == "x0":
                t, y, hb, hd = te, self.logx0, float(ye[1]), float(ye[2])
                continue
            if name == "lo":
                return StepResult(np.array([ABSORB_ZERO]), np.array([te]), np.array([np.nan]), np.array([False]))
            if name == "hi":
                return StepResult(np.array([ABSORB_INF]), np.array([te]), np.array([np.nan]), np.array([False]))
            is_birth = split and allev[i] is events[0]
            self.last_death_hazard = float(ye[2])
            return StepResult(np.array([JUMP]), np.array([te]), np.array([float(ye[0])]), np.array([is_birth]))

    def _censor(self, y, tleft=math.inf):
        return StepResult(np.array([CENSOR]), np.array([tleft]), np.array([y]), np.array([False]))

    def _constant(self, y, tleft, t, hb, hd, E, Fb, Fd, above):
        p = self.params
        b = p.c_beta * math.exp(p.beta * min(y, self.freeze)) if above else 0.0
        d = p.c_delta * math.exp(p.delta * min(y, self.freeze))
        if E is None:
            tb = (Fb - hb) / b if b > 0 else math.inf
            td = (Fd - hd) / d
            dt = min(tb, td)
            birth = tb < td
            self.last_death_hazard = hd + d * dt
        else:
            dt = (E - hb - hd) / (b + d)
            birth = False
        if t + dt > tleft:
            return self._censor(y, tleft)
        return StepResult(np.array([JUMP]), np.array([t + dt]), np.array([y]), np.array([birth]))


# ---------------------------------------------------------------------------


def invert_hazard(params: AllometricParams, xi0: float, target: float, bundle: RateBundle | None = None):
    """Time and energy at which the cumulative jump hazard from ``xi0`` equals ``target``.

    Returns :data:`NoJump` when the hazard available before the flow reaches 0
    or infinity (or forever) does not exceed ``target``.
    """
    if xi0 <= 0 or not target > 0:
        raise ValueError("xi0 and target must be positive")
    y = math.log(xi0)
    if params.gamma_eq_alpha:
        flow = make_flow(params)
        if isinstance(flow, ConstantFlow):
            st = constant_gillespie_step(flow, np.array([y]), np.array([target]), math.inf)
        else:
            st = gillespie_step(flow, np.array([y]), np.array([target]), math.inf)
    else:
        st = OdeStepper(params).step(y, math.inf, E=target)
    if st.outcome[0] != JUMP:
        return NoJump
    return float(st.dt[0]), float(math.exp(st.y[0]))


def _ev(kind, t, before, after=None):
    return TrajectoryEvent(float(t), kind, float(before), None if after is None else float(after))


_ABSORB = {ABSORB_ZERO: (EventKind.ABSORB_ZERO, 0.0), ABSORB_INF: (EventKind.ABSORB_INF, math.inf)}

ACCUMULATION_GAP = 1e-12


def _run_scalar(step, xi0, caps, logx0, seed_path, decide_birth, on_birth=None) -> Trajectory:
    y = math.log(xi0)
    t = 0.0
    events: list[TrajectoryEvent] = []
    warn = False
    i = 0
    while True:
        if i >= caps.max_events:
            events.append(_ev(EventKind.CENSORED, t, math.exp(y)))
            break
        try:
            st = step(y, caps.max_time - t, i)
        except NumericFailure as exc:
            raise NumericFailure(str(exc), events) from exc
        out = int(st.outcome[0])
        dt = float(st.dt[0])
        t_new = t + dt
        if out in _ABSORB:
            kind, e = _ABSORB[out]
            events.append(_ev(kind, t_new, e))
            break
        if out == CENSOR:
            events.append(_ev(EventKind.CENSORED, t_new if math.isfinite(t_new) else caps.max_time,
                              math.exp(st.y[0]) if np.isfinite(st.y[0]) else math.exp(y)))
            break
        yj = float(st.y[0])
        birth = decide_birth(st, yj, i)
        y_after = float(_log_energy_after_birth(np.array(yj), logx0)) if birth else -math.inf
        if birth and math.isfinite(y_after):
            if dt < ACCUMULATION_GAP and events:
                warn = True
            events.append(_ev(EventKind.BIRTH, t_new, math.exp(yj), math.exp(y_after)))
            if on_birth:
                on_birth(y, yj, dt)
            y, t, i = y_after, t_new, i + 1
            continue
        events.append(_ev(EventKind.DEATH, t_new, math.exp(yj)))
        break
    return Trajectory(xi0, tuple(events), seed_path, warn)


def simulate_trajectory(
    params: AllometricParams,
    xi0: float,
    seed: int,
    caps: Caps = Caps(),
    path: int = 0,
    key: int | None = None,
) -> Trajectory:
    """Joint-clock construction: exponential clock on ``b + d``, uniform thinning at each jump.

    Variates come from key ``derive_key(seed, path)`` unless ``key`` is
    given; path ``i`` of :func:`allopdmp.batch.simulate_batch` with the same
    seed is the same life.
    """
    if xi0 <= 0:
        raise ValueError("xi0 must be positive")
    if key is None:
        key = rng.derive_key(seed, path)
        token = f"{seed}:{path}"
    else:
        token = f"key:{key:016x}"
    if params.gamma_eq_alpha:
        flow = make_flow(params)
        logx0 = flow.logx0
        fn = constant_gillespie_step if isinstance(flow, ConstantFlow) else gillespie_step

        def step(y, tleft, i):
            return fn(flow, np.array([y]), np.array([rng.exponential(key, rng.CLOCK, i)]), tleft)
    else:
        ode = OdeStepper(params)
        logx0 = ode.logx0

        def step(y, tleft, i):
            return ode.step(y, tleft, E=rng.exponential(key, rng.CLOCK, i))

    def decide(st, yj, i):
        if not yj > logx0:
            return False  # at or below x0 the jump can only be a death
        return rng.uniform(key, rng.THIN, i) > float(death_probability(params, yj))

    return _run_scalar(step, xi0, caps, logx0, token, decide)


@dataclass(frozen=True)
class ClockStream:
    """Birth clocks ``F_1, F_2, ...`` and death clock ``F_0`` shared by coupled lives."""

    key: int

    @classmethod
    def from_seed(cls, seed: int, path: int = 0) -> "ClockStream":
        return cls(rng.derive_key(seed, path))

    def birth(self, i: int) -> float:
        return rng.exponential(self.key, rng.BIRTH, i)

    def death(self) -> float:
        return rng.exponential(self.key, rng.DEATH, 0)


def simulate_split_clock(
    params: AllometricParams,
    xi0: float,
    clocks: ClockStream,
    death_clock: float | None = None,
    caps: Caps = Caps(),
    x0: float | None = None,
    freeze_above: float | None = None,
) -> Trajectory:
    """Birth clocks restarted at each birth, one death clock for the whole life.

    ``x0`` overrides the birth energy and may be 0, in which case births cost
    no energy.  ``freeze_above`` caps the energy at which rates are evaluated
    (always uses the ODE stepper).
    """
    if xi0 <= 0:
        raise ValueError("xi0 must be positive")
    if x0 is not None and x0 < 0:
        raise ValueError("x0 must be non-negative")
    state = {"Fd": clocks.death() if death_clock is None else float(death_clock)}
    if params.gamma_eq_alpha and freeze_above is None:
        flow = make_flow(params, x0)
        logx0 = flow.logx0
        const = isinstance(flow, ConstantFlow)
        fn = constant_split_step if const else split_step

        def step(y, tleft, i):
            return fn(flow, np.array([y]), np.array([clocks.birth(i)]), np.array([state["Fd"]]), tleft)

        def on_birth(y, yj, dt):
            if const:
                state["Fd"] -= float(flow.rates(np.array(y))[1]) * dt
            else:
                state["Fd"] -= float(flow.hazard(flow.death, np.array(y), abs(yj - y)))
    else:
        ode = OdeStepper(params, x0, freeze_above)
        logx0 = ode.logx0

        def step(y, tleft, i):
            return ode.step(y, tleft, Fb=clocks.birth(i), Fd=state["Fd"])

        def on_birth(y, yj, dt):
            state["Fd"] -= ode.last_death_hazard

    def decide(st, yj, i):
        return bool(st.birth[0])

    return _run_scalar(step, xi0, caps, logx0, f"clock:{clocks.key:x}", decide, on_birth)


def simulate_coupled_family(
    members: Sequence[tuple], shared_seed: int, caps: Caps = Caps(), path: int = 0
) -> list[Trajectory]:
    """Run several lives on one set of clocks.

    Each member is ``(params, xi0)`` or ``(params, xi0, x0)``; members may
    differ in their birth energy and rate constants but must live in the
    same environment (same ``alpha``, ``gamma``, ``phi_r``, ``c_alpha``,
    ``c_gamma``) with positive net growth.
    """
    if not members:
        return []
    env = None
    for m in members:
        p = m[0]
        key = (p.alpha, p.gamma, p.phi_r, p.c_alpha, p.c_gamma)
        if env is None:
            env = key
        elif key != env:
            raise ValueError("coupled family members must share the environment")
        if not (p.gamma_eq_alpha and p.c_r > 0):
            raise ValueError("coupling needs gamma == alpha and c_r > 0")
    clocks = ClockStream.from_seed(shared_seed, path)
    out = []
    for m in members:
        p, xi0 = m[0], m[1]
        x0 = m[2] if len(m) > 2 else None
        out.append(simulate_split_clock(p, xi0, clocks, caps=caps, x0=x0))
    return out


def max_energy_at_jumps(traj: Trajectory, k: int) -> float | None:
    """Largest pre-jump energy among the first ``k`` events (``None`` if there are none)."""
    vals = [e.energy_before for e in traj.events[:k] if e.kind in (EventKind.BIRTH, EventKind.DEATH)]
    return max(vals) if vals else None


# ---------------------------------------------------------------------------
# martingale check


@dataclass(frozen=True)
class TestFunction:
    """A bounded C1 function of energy with its value at the cemetery."""

    phi: Callable[[np.ndarray], np.ndarray]
    dphi: Callable[[np.ndarray], np.ndarray]
    at_cemetery: float
    name: str = ""

    __test__ = False  # not a pytest class


def saturating(scale: float) -> TestFunction:
    """``scale * (1 - exp(-x/scale))``: a smoothed ``min(x, scale)``, zero at the cemetery."""
    return TestFunction(
        lambda x: scale * -np.expm1(-np.asarray(x) / scale),
        lambda x: np.exp(-np.asarray(x) / scale),
        0.0,
        f"saturating({scale:g})",
    )


def reciprocal() -> TestFunction:
    """``1/(1+x)`` with cemetery value 1, its limit at zero energy."""
    return TestFunction(lambda x: 1.0 / (1.0 + np.asarray(x)), lambda x: -1.0 / (1.0 + np.asarray(x)) ** 2, 1.0,
                        "reciprocal")


def constant(c: float) -> TestFunction:
    return TestFunction(lambda x: np.full(np.shape(x), c, dtype=float), lambda x: np.zeros(np.shape(x)), c,
                        f"constant({c:g})")


def generator(params: AllometricParams, fn: TestFunction, x):
    """``g phi' + b (phi(x - x0) - phi(x)) + d (phi(cemetery) - phi(x))`` at energies ``x``."""
    x = np.asarray(x, dtype=float)
    r = eval_rates(params)
    px = fn.phi(x)
    b = r.birth(x)
    shifted = np.where(x > params.x0, fn.phi(np.maximum(x - params.x0, 0.0)), 0.0)
    return r.net_growth(x) * fn.dphi(x) + b * (shifted - px) + r.death(x) * (fn.at_cemetery - px)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


def _flow_integral(params: AllometricParams, fn: TestFunction, e0, e1, dt):
    """``int L phi dt`` along flow pieces from energies ``e0`` to ``e1`` lasting ``dt``.

    The time integral is taken in log-energy (``dt = x dy / g``), split where
    the piece crosses ``x0`` so the birth-rate jump sits on a panel edge.
    """
    e0 = np.asarray(e0, dtype=float)
    e1 = np.asarray(e1, dtype=float)
    if params.c_r == 0.0:
        return generator(params, fn, e0) * dt
    y0, y1 = np.log(e0), np.log(e1)
    lx0 = math.log(params.x0)
    mid = np.clip(lx0, np.minimum(y0, y1), np.maximum(y0, y1))
    total = np.zeros_like(y0)
    c_r, a = params.c_r, params.alpha
    for a_, b_ in ((y0, mid), (mid, y1)):
        half = 0.5 * (b_ - a_)
        centre = 0.5 * (b_ + a_)
        ys = centre[:, None] + half[:, None] * _GL_X[None, :]
        xs = np.exp(ys)
        integrand = generator(params, fn, xs) * np.exp((1.0 - a) * ys) / c_r
        total += half * (integrand @ _GL_W)
    return total


def martingale_residual(
    params: AllometricParams,
    test_fn: TestFunction,
    horizon: float,
    n_paths: int,
    seed: int,
    chunk: int = 50_000,
) -> EstimateResult:
    """Monte Carlo mean of ``phi(xi_T) - phi(xi_0) - int_0^T L phi(xi_s) ds`` with its standard error."""
    rep = classify_regime(params)
    if not (rep.assumption1 and rep.assumption2_integral):
        raise ValueError("martingale check needs the energy to avoid 0 and lives to be a.s. finite")
    if not params.gamma_eq_alpha:
        raise NotImplementedError("martingale check is implemented for gamma == alpha")
    xi0 = params.x0
    parts = []
    for start in range(0, n_paths, chunk):
        n = min(chunk, n_paths - start)
        res = simulate_batch(params, xi0, n, seed, Caps(max_time=horizon), first_path=start, record=True)
        parts.append(_residuals(params, test_fn, xi0, res))
    vals = np.concatenate(parts) if parts else np.empty(0)
    return summarize(vals, n_censored=0)


def _residuals(params, fn, xi0, res):
    ev = res.events
    n = res.n_births.size
    # segment starts: xi0 at t=0, then the energy after each birth
    first = np.r_[True, ev.path[1:] != ev.path[:-1]]
    prev_e = np.where(first, xi0, np.r_[np.nan, ev.energy_after[:-1]])
    prev_t = np.where(first, 0.0, np.r_[np.nan, ev.time[:-1]])
    end_e = ev.energy_before
    ok = np.isfinite(end_e) & (end_e > 0)
    integral = np.zeros(ev.path.size)
    if np.any(ok):
        integral[ok] = _flow_integral(params, fn, prev_e[ok], end_e[ok], ev.time[ok] - prev_t[ok])
    int_path = np.bincount(ev.path, weights=integral, minlength=n)
    last = np.r_[ev.path[1:] != ev.path[:-1], True]
    kind = ev.kind[last]
    term_path = ev.path[last]
    final = np.full(n, fn.at_cemetery, dtype=float)
    cens = kind == EV_CENSOR
    final[term_path[cens]] = fn.phi(ev.energy_before[last][cens])
    return final - float(fn.phi(np.array(xi0))) - int_path


# ---------------------------------------------------------------------------
# export


def events_csv(trajectories: Iterable[tuple[int, Trajectory]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path_id", "time", "kind", "energy_before", "energy_after"])
    for pid, tr in trajectories:
        for e in tr.events:
            w.writerow([pid, repr(e.time), e.kind.value, repr(e.energy_before),
                        "" if e.energy_after is None else repr(e.energy_after)])
    return buf.getvalue()


def summaries_json(trajectories: Iterable[tuple[int, Trajectory]]) -> str:
    return json.dumps([{"path_id": pid, **tr.summary()} for pid, tr in trajectories], indent=2, allow_nan=False,
                      default=str)
