"""Monte Carlo estimation, criticality calls, tail diagnostics and sweeps."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as sps

from .batch import Caps, simulate_batch
from .rates import AllometricParams
from .rng import derive_key

DEFAULT_Z = 3.0
TRACE_POINTS = 500
CHUNK = 100_000

SUPERCRITICAL = "Supercritical"
SUBCRITICAL = "Subcritical"
INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class EstimateResult:
    mean: float
    stderr: float
    n: int
    n_censored: int
    running_means: np.ndarray = field(repr=False)
    tail_index: float | None = None
    z: float = DEFAULT_Z

    @property
    def ci_low(self) -> float:
        return self.mean - self.z * self.stderr

    @property
    def ci_high(self) -> float:
        return self.mean + self.z * self.stderr

    @property
    def verdict_support(self) -> dict[str, float]:
        return {"ci_low": self.ci_low, "ci_high": self.ci_high}

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "n": self.n,
            "n_censored": self.n_censored,
            "tail_index": self.tail_index,
            "z": self.z,
            **self.verdict_support,
        }


def running_mean_trace(values: np.ndarray, points: int = TRACE_POINTS) -> np.ndarray:
    """Cumulative mean recorded every ``n/points`` samples (last sample always included)."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n == 0:
        return np.empty(0)
    every = max(1, n // points)
    cm = np.cumsum(values) / np.arange(1, n + 1)
    idx = np.arange(every - 1, n, every)
    if idx[-1] != n - 1:
        idx = np.r_[idx, n - 1]
    return cm[idx]


def summarize(values, n_censored: int = 0, z: float = DEFAULT_Z, tail: bool = False) -> EstimateResult:
    values = np.asarray(values, dtype=float)
    n = values.size
    mean = float(values.mean()) if n else math.nan
    eff = n - n_censored
    sd = float(values.std(ddof=1)) if n > 1 else math.nan
    stderr = sd / math.sqrt(eff) if eff > 0 else math.inf
    tail_index = hill_estimator(values) if tail and n >= 100 else None
    return EstimateResult(mean, stderr, n, int(n_censored), running_mean_trace(values), tail_index, z)


def _chunk(args):
    params, xi0, n, seed, caps, method, first = args
    res = simulate_batch(params, xi0, n, seed, caps, method=method, first_path=first)
    return res.n_births, int(res.censored.sum())


def simulate_counts(
    params: AllometricParams,
    xi0: float,
    n: int,
    seed: int,
    caps: Caps | None = None,
    method: str = "gillespie",
    workers: int = 1,
) -> tuple[np.ndarray, int]:
    """Offspring counts of ``n`` independent lives plus the number censored.

    Paths are keyed by index, so the result does not depend on ``workers``.
    """
    caps = caps or Caps(max_time=math.inf)
    jobs = [(params, xi0, min(CHUNK, n - s), seed, caps, method, s) for s in range(0, n, CHUNK)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(_chunk, jobs))
    else:
        out = [_chunk(j) for j in jobs]
    if not out:
        return np.empty(0, dtype=np.int64), 0
    return np.concatenate([o[0] for o in out]), sum(o[1] for o in out)


def estimate_m_mc(
    params: AllometricParams,
    xi0: float,
    n: int,
    seed: int,
    caps: Caps | None = None,
    z: float = DEFAULT_Z,
    workers: int = 1,
    method: str = "gillespie",
) -> EstimateResult:
    """Mean number of births per life.  Censored lives count with their births so far.

    The default caps have no time limit: the flow time scale grows like
    ``x0**(1-alpha)``, so any fixed horizon would censor large-``x0`` runs.
    """
    if n < 100:
        raise ValueError("need at least 100 samples")
    counts, n_cens = simulate_counts(params, xi0, n, seed, caps, method, workers)
    return summarize(counts, n_cens, z, tail=True)


def criticality_test(est: EstimateResult, level: float | None = None) -> str:
    """Supercritical if the interval sits above 1; Subcritical only if below 1 with no censoring."""
    z = est.z if level is None else level
    lo = est.mean - z * est.stderr
    hi = est.mean + z * est.stderr
    if lo > 1.0:
        return SUPERCRITICAL
    if hi < 1.0 and est.n_censored == 0:
        return SUBCRITICAL
    return INCONCLUSIVE


# ---------------------------------------------------------------------------
# tails


def hill_estimator(samples, top_fraction: float = 0.05) -> float | None:
    """Hill estimate of the tail index from the top ``top_fraction`` order statistics."""
    x = np.sort(np.asarray(samples, dtype=float))[::-1]
    x = x[x > 0]
    k = int(math.ceil(top_fraction * len(np.asarray(samples))))
    if k < 2 or len(x) <= k:
        return None
    ref = x[k]
    if ref <= 0:
        return None
    h = float(np.mean(np.log(x[:k] / ref)))
    if h <= 0:
        return None
    return 1.0 / h


def plateau_flag(samples, window: float = 0.5, threshold: float = 5.0) -> bool:
    """True when the running mean keeps jumping over the last ``window`` of the samples.

    The largest excursion of the running mean from its final value is compared
    with ``threshold`` standard errors computed from the samples with their
    top 1% removed.  Light tails stay well inside; a mean dominated by rare huge
    values does not.
    """
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 10:
        return False
    cm = np.cumsum(x) / np.arange(1, n + 1)
    start = int(n * (1.0 - window))
    tail = cm[start:]
    cut = np.quantile(x, 0.99)
    trimmed = x[x <= cut]
    s = float(trimmed.std(ddof=1)) if trimmed.size > 1 else 0.0
    scale = s / math.sqrt(max(n - start, 1))
    dev = float(np.max(np.abs(tail - cm[-1])))
    if scale == 0.0:
        return dev > 0.0
    return dev > threshold * scale


@dataclass(frozen=True)
class TailReport:
    hill_estimate: float | None
    hill_sensitivity: dict[float, float | None]
    plateau_flag: bool

    def to_dict(self) -> dict:
        return {
            "hill_estimate": self.hill_estimate,
            "hill_sensitivity": {str(k): v for k, v in self.hill_sensitivity.items()},
            "plateau_flag": self.plateau_flag,
        }


def heavy_tail_diagnostic(samples) -> TailReport:
    x = np.asarray(samples, dtype=float)
    if x.size < 1000:
        raise ValueError("need at least 1000 samples")
    sens = {f: hill_estimator(x, f) for f in (0.01, 0.05, 0.10)}
    return TailReport(sens[0.05], sens, plateau_flag(x))


# ---------------------------------------------------------------------------
# distribution comparison


def _as_counts(h) -> dict[int, float]:
    if isinstance(h, Mapping):
        return {int(k): float(v) for k, v in h.items() if v}
    arr = np.asarray(h, dtype=float)
    return {i: float(v) for i, v in enumerate(arr) if v}


def histogram(samples) -> dict[int, int]:
    vals, cnt = np.unique(np.asarray(samples, dtype=np.int64), return_counts=True)
    return {int(v): int(c) for v, c in zip(vals, cnt)}


@dataclass(frozen=True)
class Comparison:
    tv_distance: float
    p_value: float
    cells: int

    def to_dict(self) -> dict:
        return {"tv_distance": self.tv_distance, "p_value": self.p_value, "cells": self.cells}


def _pool(table: np.ndarray, min_expected: float = 5.0) -> np.ndarray:
    """Merge adjacent columns (in support order) until every expected count reaches ``min_expected``."""
    cols = [table[:, j].astype(float) for j in range(table.shape[1])]

    def expected(c):
        tot = table.sum()
        return table.sum(axis=1) * c.sum() / tot

    merged: list[np.ndarray] = []
    acc = np.zeros(2)
    for c in cols:
        acc = acc + c
        if np.all(expected(acc) >= min_expected):
            merged.append(acc)
            acc = np.zeros(2)
    if acc.sum() > 0:
        if merged:
            merged[-1] = merged[-1] + acc
        else:
            merged.append(acc)
    return np.column_stack(merged)


def compare_distributions(a, b) -> Comparison:
    """Total-variation distance and chi-square homogeneity p-value of two count histograms.

    Histograms are mappings ``value -> count`` or count arrays indexed by value.
    """
    ca, cb = _as_counts(a), _as_counts(b)
    if not ca or not cb:
        raise ValueError("histograms must be non-empty")
    support = sorted(set(ca) | set(cb))
    ta = np.array([ca.get(k, 0.0) for k in support])
    tb = np.array([cb.get(k, 0.0) for k in support])
    tv = 0.5 * float(np.abs(ta / ta.sum() - tb / tb.sum()).sum())
    table = _pool(np.vstack([ta, tb]))
    if table.shape[1] < 2:
        return Comparison(tv, 1.0, table.shape[1])
    stat, p, _, _ = sps.chi2_contingency(table, correction=False)
    return Comparison(tv, float(p), table.shape[1])


# ---------------------------------------------------------------------------
# phase diagram


@dataclass(frozen=True)
class Cell:
    c_beta_over_c_delta: float
    c_delta_over_gap: float
    verdict: str
    m_hat: float
    stderr: float
    n_censored: int
    c_beta: float
    c_delta: float


@dataclass
class PhaseResult:
    cells: list[Cell]
    boundary: list[tuple[float, float | None]]


def _cell_params(base: AllometricParams, ratio: float, column: float) -> AllometricParams:
    c_delta = column * base.gap
    return base.replace(beta=base.alpha - 1.0, delta=base.alpha - 1.0, c_delta=c_delta, c_beta=ratio * c_delta)


def _cell_seed(seed: int, i: int, j: int) -> int:
    return derive_key(seed, 0x9A5E, i, j)


def _run_cell(args):
    base, ratio, column, n, seed, z = args
    p = _cell_params(base, ratio, column)
    est = estimate_m_mc(p, p.x0, n, seed, z=z)
    return Cell(ratio, column, criticality_test(est), est.mean, est.stderr, est.n_censored, p.c_beta, p.c_delta)


def phase_diagram_sweep(
    ratios: Sequence[float],
    columns: Sequence[float],
    base: AllometricParams,
    n: int,
    seed: int,
    refine_steps: int = 4,
    z: float = DEFAULT_Z,
    workers: int = 1,
) -> PhaseResult:
    """Criticality verdict on a grid of ``C_beta/C_delta`` by ``C_delta/(C_gamma-C_alpha)``.

    The sweep holds ``beta = delta = alpha - 1``.  Per column, the boundary is
    bisected between the highest Subcritical ratio lying below the lowest
    Supercritical one; columns without that pair report ``None``.
    """
    if base.gap <= 0:
        raise ValueError("the sweep needs c_gamma > c_alpha")
    ratios = sorted(float(r) for r in ratios)
    columns = sorted(float(c) for c in columns)
    jobs = [(base, r, c, n, _cell_seed(seed, i, j), z) for j, c in enumerate(columns) for i, r in enumerate(ratios)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            cells = list(ex.map(_run_cell, jobs))
    else:
        cells = [_run_cell(j) for j in jobs]
    boundary = []
    for j, c in enumerate(columns):
        col = [cell for cell in cells if cell.c_delta_over_gap == c]
        sup = [cell.c_beta_over_c_delta for cell in col if cell.verdict == SUPERCRITICAL]
        if not sup:
            boundary.append((c, None))
            continue
        hi = min(sup)
        sub = [cell.c_beta_over_c_delta for cell in col if cell.verdict == SUBCRITICAL and cell.c_beta_over_c_delta < hi]
        if not sub:
            boundary.append((c, None))
            continue
        lo = max(sub)
        for step in range(refine_steps):
            mid = 0.5 * (lo + hi)
            cell = _run_cell((base, mid, c, n, _cell_seed(seed, 1000 + step, j), z))
            if cell.verdict == SUPERCRITICAL:
                hi = mid
            elif cell.verdict == SUBCRITICAL:
                lo = mid
            else:
                break
        boundary.append((c, 0.5 * (lo + hi)))
    return PhaseResult(cells, boundary)
