import json

import numpy as np
import pytest

from allopdmp.operator import mean_offspring_series
from allopdmp.population import (
    PopulationCaps,
    embedding_test,
    founder_generation_counts,
    generation_json,
    lineage_csv,
    offspring_law_mc,
    simulate_generations,
    simulate_population,
)
from allopdmp.rates import figure_defaults

SUB = figure_defaults(beta=-0.25, c_beta=0.31, c_delta=0.3)
SUPER = figure_defaults(beta=-0.25, c_beta=0.55, c_delta=0.3, phi_r=1.0)


def test_no_founders_is_extinct():
    run = simulate_population([], SUB, 0)
    assert run.extinct and not run.censored and run.individuals == []
    assert run.generation_sizes.counts == []


def test_no_growth_single_life():
    run = simulate_population([1.0], figure_defaults(phi_r=0.0), 4)
    assert run.extinct and len(run.individuals) == 1
    assert run.generation_sizes.counts == [1]
    assert simulate_generations([1.0], figure_defaults(phi_r=0.0), 4, 5).counts == [1, 0]


def test_rejects_bad_energy():
    with pytest.raises(ValueError):
        simulate_population([1.0, 0.0], SUB, 0)


def test_labels_are_consistent():
    run = simulate_population([1.0, 2.0], SUPER, 8, PopulationCaps(max_individuals=500), max_generation=6)
    labels = {ind.label for ind in run.individuals}
    assert len(labels) == len(run.individuals)
    for ind in run.individuals:
        if ind.parent is None:
            assert len(ind.label) == 1
            continue
        assert ind.label[:-1] == ind.parent and ind.parent in labels
        parent = next(p for p in run.individuals if p.label == ind.parent)
        # the j-th child is the parent's j-th birth, born at that event time
        births = [e for e in parent.trajectory.events if e.kind.name == "BIRTH"]
        assert ind.birth_time == pytest.approx(parent.birth_time + births[ind.label[-1] - 1].time)
    times = [ind.birth_time for ind in run.individuals if ind.trajectory is not None]
    assert times == sorted(times)


def test_population_matches_generation_batches():
    for seed in range(5):
        run = simulate_population([1.0] * 3, SUB, seed, PopulationCaps(max_time=np.inf))
        assert run.extinct
        top = len(run.generation_sizes.counts)
        g = simulate_generations([1.0] * 3, SUB, seed, top)
        assert g.counts[:top] == run.generation_sizes.counts and g.counts[top] == 0


def test_larger_caps_never_lose_lives():
    small = simulate_generations([1.0], SUPER, 3, 10, max_individuals=50)
    large = simulate_generations([1.0], SUPER, 3, 10, max_individuals=5000)
    stop = small.truncated_at if small.truncated_at is not None else len(small.counts)
    assert small.counts[:stop] == large.counts[:stop]
    assert sum(large.counts) >= sum(small.counts)


def test_exports():
    run = simulate_population([1.0], SUPER, 2, PopulationCaps(max_individuals=30), max_generation=4)
    text = lineage_csv(run)
    assert "\r" not in text and text.endswith("\n")
    assert text.splitlines()[0] == "label,parent,birth_time,death_time,n_births"
    assert len(text.splitlines()) == len(run.individuals) + 1
    d = json.loads(generation_json(run.generation_sizes))
    assert d["counts"] == run.generation_sizes.counts and d["truncated_at"] is not None


def test_offspring_law():
    law = offspring_law_mc(figure_defaults(phi_r=0.0), 1000, 1)
    assert law.histogram == {0: 1000} and law.mean == 0.0
    law = offspring_law_mc(SUPER, 40_000, 2)
    m = mean_offspring_series(SUPER).value
    k = np.array(sorted(law.histogram))
    c = np.array([law.histogram[i] for i in k], dtype=float)
    sd = np.sqrt(np.sum(c * (k - law.mean) ** 2) / c.sum())
    assert abs(law.mean - m) < 3 * sd / np.sqrt(law.n_paths)
    draws = law.sample(10, 5)
    assert draws.shape == (10,) and np.array_equal(draws, law.sample(10, 5))


def test_founder_counts_shape():
    out = founder_generation_counts(SUB, 20, 6, 3)
    assert out.shape == (20, 4) and np.all(out[:, 0] == 1)


def test_supercritical_lineages_survive():
    alive = 0
    for seed in range(100):
        g = simulate_generations([SUPER.x0], SUPER, seed, 20, max_individuals=20_000)
        if g.truncated_at is not None or g.counts[-1] > 0:
            alive += 1
    assert alive > 0


def test_embedding_report():
    rep = embedding_test(SUB, 2000, 9)
    d = rep.to_dict()
    assert 0.0 <= rep.p_value <= 1.0 and d["n_families"] == 2000
    assert rep.p_value > 1e-4
