"""Populations of independent individuals with Ulam-Harris lineage labels.

Founders get labels ``(1,), (2,), ...``; the ``j``-th child of ``u`` is
``u + (j,)``.  Every life draws its randomness from a key derived from the
master seed and its label, so a life is the same whichever order, batch or
worker simulates it.  Children always start at ``x0``.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import rng
from .batch import T_CENSORED, Caps, simulate_batch
from .pdmp import EventKind, NumericFailure, Trajectory, simulate_trajectory
from .rates import AllometricParams
from .stats import Comparison, compare_distributions, histogram

DEFAULT_MAX_INDIVIDUALS = 100_000
LAW_FACTOR = 20
Label = tuple[int, ...]


@dataclass(frozen=True)
class PopulationCaps:
    max_individuals: int = DEFAULT_MAX_INDIVIDUALS
    max_time: float = 1e6
    max_events: int = 1_000_000


@dataclass(frozen=True)
class Individual:
    label: Label
    birth_time: float
    parent: Label | None
    trajectory: Trajectory | None  # None when the run stopped before simulating this life

    @property
    def generation(self) -> int:
        return len(self.label) - 1

    @property
    def death_time(self) -> float | None:
        if self.trajectory is None or self.trajectory.t_death is None:
            return None
        return self.birth_time + self.trajectory.t_death


@dataclass(frozen=True)
class GenerationSizes:
    counts: list[int]
    truncated_at: int | None = None


@dataclass
class PopulationRun:
    individuals: list[Individual]
    extinct: bool
    censored: bool
    accumulation_warning: bool = False
    generation_sizes: GenerationSizes = field(default=None)


def individual_key(seed: int, label: Label) -> int:
    return rng.label_key(seed, label)


def _children(ind_label: Label, t0: float, traj: Trajectory):
    j = 0
    for e in traj.events:
        if e.kind is EventKind.BIRTH:
            j += 1
            yield ind_label + (j,), t0 + e.time


def simulate_population(
    initial_energies: Sequence[float],
    params: AllometricParams,
    seed: int,
    caps: PopulationCaps = PopulationCaps(),
    max_generation: int | None = None,
) -> PopulationRun:
    """Event-ordered simulation of the whole population.

    Individuals are spawned in order of birth time.  A life is simulated in
    full when it is spawned, and its births enter the queue.  The run stops
    when the queue empties (extinction unless some life was censored) or when
    ``max_individuals`` lives have been spawned.  Individuals of generation
    ``max_generation`` are recorded but not simulated.
    """
    energies = [float(e) for e in initial_energies]
    if any(e <= 0 for e in energies):
        raise ValueError("initial energies must be positive")
    queue: list[tuple[float, Label, Label | None, float]] = []
    for i, e in enumerate(energies, 1):
        heapq.heappush(queue, (0.0, (i,), None, e))
    individuals: list[Individual] = []
    censored = False
    warn = False
    while queue:
        if len(individuals) >= caps.max_individuals:
            censored = True
            break
        t0, label, parent, e0 = heapq.heappop(queue)
        if max_generation is not None and len(label) - 1 >= max_generation:
            individuals.append(Individual(label, t0, parent, None))
            censored = True
            continue
        tcap = Caps(max_events=caps.max_events, max_time=caps.max_time - t0)
        try:
            traj = simulate_trajectory(params, e0, seed, tcap, key=individual_key(seed, label))
        except NumericFailure as exc:
            raise NumericFailure(f"individual {label}: {exc}", exc.prefix) from exc
        individuals.append(Individual(label, t0, parent, traj))
        warn |= traj.accumulation_warning
        if traj.censored:
            censored = True
        for child, tc in _children(label, t0, traj):
            heapq.heappush(queue, (tc, child, label, params.x0))
    # lives queued but never spawned are known to exist; record them unsimulated
    for t0, label, parent, _ in sorted(queue):
        individuals.append(Individual(label, t0, parent, None))
    run = PopulationRun(individuals, extinct=not censored and not queue, censored=censored or bool(queue),
                        accumulation_warning=warn)
    run.generation_sizes = generation_sizes(run)
    return run


def generation_sizes(run: PopulationRun) -> GenerationSizes:
    """Individuals per generation; ``truncated_at`` is the first generation that may be undercounted."""
    if not run.individuals:
        return GenerationSizes([], None)
    top = max(ind.generation for ind in run.individuals)
    counts = [0] * (top + 1)
    trunc = math.inf
    for ind in run.individuals:
        counts[ind.generation] += 1
        if ind.trajectory is None or ind.trajectory.censored:
            trunc = min(trunc, ind.generation + 1)
    return GenerationSizes(counts, None if trunc == math.inf else int(trunc))


def simulate_generations(
    initial_energies: Sequence[float],
    params: AllometricParams,
    seed: int,
    max_generation: int,
    max_individuals: int = DEFAULT_MAX_INDIVIDUALS,
    caps: Caps | None = None,
) -> GenerationSizes:
    """Generation sizes up to ``max_generation`` by simulating whole generations as batches.

    Lives use the same label keys as :func:`simulate_population`, so when no
    cap binds both give the same counts.  ``max_individuals`` bounds the
    number of lives simulated.
    """
    caps = caps or Caps(max_time=math.inf)
    labels: list[Label] = [(i,) for i in range(1, len(initial_energies) + 1)]
    energies = np.asarray(initial_energies, dtype=float)
    counts = [len(labels)]
    spent = 0
    for gen in range(max_generation):
        if not labels:
            return GenerationSizes(counts, None)
        if spent + len(labels) > max_individuals:
            return GenerationSizes(counts, gen + 1)
        keys = np.array([individual_key(seed, lab) for lab in labels], dtype=np.uint64)
        res = simulate_batch(params, energies, len(labels), seed, caps, keys=keys)
        spent += len(labels)
        births = res.n_births
        nxt = [lab + (j,) for lab, k in zip(labels, births) for j in range(1, int(k) + 1)]
        counts.append(len(nxt))
        if np.any(res.terminal == T_CENSORED):
            return GenerationSizes(counts, gen + 1)
        labels = nxt
        energies = np.full(len(labels), params.x0)
    return GenerationSizes(counts, max_generation + 1 if labels else None)


@dataclass(frozen=True)
class OffspringLaw:
    histogram: dict[int, int]
    censored_histogram: dict[int, int]
    n_paths: int

    @property
    def mean(self) -> float:
        tot = sum(k * v for k, v in self.histogram.items()) + sum(k * v for k, v in self.censored_histogram.items())
        return tot / self.n_paths if self.n_paths else math.nan

    def sample(self, size, key: int) -> np.ndarray:
        """Draws from the uncensored empirical law (inverse CDF on counter-based uniforms)."""
        vals = np.array(sorted(self.histogram), dtype=np.int64)
        cdf = np.cumsum([self.histogram[v] for v in vals], dtype=float)
        cdf /= cdf[-1]
        u = rng.uniform_arr(np.full(size, key, dtype=np.uint64), rng.AUX, np.arange(size, dtype=np.uint64))
        return vals[np.minimum(np.searchsorted(cdf, u, side="right"), len(vals) - 1)]


def offspring_law_mc(params: AllometricParams, n_paths: int, seed: int, xi0: float | None = None,
                     caps: Caps | None = None) -> OffspringLaw:
    """Empirical law of the number of births of a life started at ``x0`` (censored lives kept apart)."""
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    xi0 = params.x0 if xi0 is None else xi0
    caps = caps or Caps(max_time=math.inf)
    res = simulate_batch(params, xi0, n_paths, seed, caps)
    c = res.censored
    return OffspringLaw(histogram(res.n_births[~c]), histogram(res.n_births[c]), n_paths)


def founder_generation_counts(
    params: AllometricParams,
    n_founders: int,
    seed: int,
    generations: int,
    xi0: float | None = None,
    max_individuals: int = DEFAULT_MAX_INDIVIDUALS,
    caps: Caps | None = None,
) -> np.ndarray:
    """Generation sizes of each founder's family: row ``i`` is ``[1, Y_1, ..., Y_g]`` for founder ``(i+1,)``.

    All families share one batch per generation.  Raises ``RuntimeError`` if
    a life is censored or more than ``max_individuals`` lives are needed.
    """
    caps = caps or Caps(max_time=math.inf)
    xi0 = params.x0 if xi0 is None else xi0
    labels: list[Label] = [(i,) for i in range(1, n_founders + 1)]
    out = np.zeros((n_founders, generations + 1), dtype=np.int64)
    out[:, 0] = 1
    energies = np.full(n_founders, float(xi0))
    spent = 0
    for gen in range(1, generations + 1):
        if not labels:
            break
        spent += len(labels)
        if spent > max_individuals:
            raise RuntimeError("individual cap reached before the last generation")
        keys = np.array([individual_key(seed, lab) for lab in labels], dtype=np.uint64)
        res = simulate_batch(params, energies, len(labels), seed, caps, keys=keys)
        if np.any(res.terminal == T_CENSORED):
            raise RuntimeError("a life was censored; raise the caps")
        roots = np.array([lab[0] - 1 for lab in labels], dtype=np.int64)
        np.add.at(out[:, gen], roots, res.n_births)
        labels = [lab + (j,) for lab, k in zip(labels, res.n_births) for j in range(1, int(k) + 1)]
        energies = np.full(len(labels), params.x0)
    return out


@dataclass(frozen=True)
class EmbeddingReport:
    first: Comparison  # Y_1 of the population against the individual law
    second: Comparison  # Y_2 against sums of Y_1 independent draws from that law
    n_families: int
    n_law: int

    @property
    def p_value(self) -> float:
        """Bonferroni combination of the two comparisons."""
        return min(1.0, 2.0 * min(self.first.p_value, self.second.p_value))

    def to_dict(self) -> dict:
        return {
            "p_value": self.p_value,
            "first_generation": {"tv_distance": self.first.tv_distance, "p_value": self.first.p_value},
            "second_generation": {"tv_distance": self.second.tv_distance, "p_value": self.second.p_value},
            "n_families": self.n_families,
            "n_law": self.n_law,
        }


def embedding_test(params: AllometricParams, n_families: int, seed: int, n_law: int | None = None,
                   max_individuals: int = DEFAULT_MAX_INDIVIDUALS) -> EmbeddingReport:
    """Check that generation sizes of the population form a Galton-Watson process.

    The offspring law is estimated from ``n_law`` single lives on a stream
    disjoint from the population.  Generation one is compared with that law
    directly; generation two with the sum of ``Y_1`` fresh draws from it.
    The law sample defaults to ``LAW_FACTOR`` times the number of families so
    that its own estimation error, shared by all draws, stays negligible.
    """
    n_law = n_law or LAW_FACTOR * n_families
    fam = founder_generation_counts(params, n_families, rng.derive_key(seed, 1), 2,
                                    max_individuals=max_individuals)
    law = offspring_law_mc(params, n_law, rng.derive_key(seed, 2))
    if law.censored_histogram:
        raise RuntimeError("censored lives in the offspring law")
    y1, y2 = fam[:, 1], fam[:, 2]
    draws = law.sample(int(y1.sum()), rng.derive_key(seed, 3))
    starts = np.r_[0, np.cumsum(y1)[:-1]]
    synth = np.add.reduceat(np.r_[draws, 0], starts) if draws.size else np.zeros_like(y1)
    synth = np.where(y1 > 0, synth, 0)
    return EmbeddingReport(compare_distributions(histogram(y1), law.histogram),
                          compare_distributions(histogram(y2), histogram(synth)), n_families, n_law)


# ---------------------------------------------------------------------------
# export


def _label_str(label: Label | None) -> str:
    return "" if label is None else ".".join(map(str, label))


def lineage_csv(run: PopulationRun) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "parent", "birth_time", "death_time", "n_births"])
    for ind in run.individuals:
        dt = ind.death_time
        nb = "" if ind.trajectory is None else ind.trajectory.n_births
        w.writerow([_label_str(ind.label), _label_str(ind.parent), repr(ind.birth_time),
                    "" if dt is None else repr(dt), nb])
    return buf.getvalue()


def generation_json(sizes: GenerationSizes) -> str:
    return json.dumps({"counts": sizes.counts, "truncated_at": sizes.truncated_at})
