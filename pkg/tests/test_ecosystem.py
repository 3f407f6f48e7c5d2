from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feedlab import lab
from feedlab.ecosystem import (
    ActivityLevel,
    BehaviorRange,
    ContributionLevel,
    EventKind,
    GroundTruthBehavior,
    SocialGraph,
    assign_population,
    generate_graph,
    graph_from_csv,
    graph_to_csv,
    new_state,
    step_simulation,
    true_create_prob,
    validate_event_log,
)
from feedlab.ecosystem.events import eventlog_to_jsonl
from feedlab.ecosystem.population import population_from_csv, population_to_csv
from feedlab.errors import ConfigurationError


# -- generate_graph ---------------------------------------------------------------


def test_two_node_graph_is_the_unique_ring():
    g = generate_graph(2, 1.0, 0.0, seed=7)
    assert sorted(map(tuple, g.edges.tolist())) == [(0, 1), (1, 0)]


def test_mean_out_degree_close_to_requested():
    g = generate_graph(1000, 20.0, 0.1, seed=1)
    assert g.n_users == 1000
    assert 18.0 <= g.mean_out_degree() <= 22.0


def test_graph_deterministic_per_seed():
    g1 = generate_graph(300, 10.0, 0.3, seed=5)
    g2 = generate_graph(300, 10.0, 0.3, seed=5)
    assert np.array_equal(g1.edges, g2.edges)
    g3 = generate_graph(300, 10.0, 0.3, seed=6)
    assert not np.array_equal(g1.edges, g3.edges)


def test_graph_no_self_or_duplicate_edges():
    g = generate_graph(400, 12.5, 0.25, seed=9)
    assert np.all(g.edges[:, 0] != g.edges[:, 1])
    assert len({tuple(e) for e in g.edges.tolist()}) == g.n_edges
    assert g.edges.max() < g.n_users


def test_graph_invalid_sizes_rejected():
    with pytest.raises(ConfigurationError):
        generate_graph(1, 1.0, 0.0, seed=0)
    with pytest.raises(ConfigurationError):
        generate_graph(10, 10.0, 0.0, seed=0)
    with pytest.raises(ConfigurationError):
        generate_graph(10, 3.0, 1.5, seed=0)


def test_graph_csv_roundtrip(tmp_path):
    g = generate_graph(50, 6.0, 0.2, seed=3)
    path = tmp_path / "graph.csv"
    graph_to_csv(g, path)
    g2 = graph_from_csv(path)
    assert g2.n_users == g.n_users and g2.seed == g.seed
    assert np.array_equal(g2.edges, g.edges)


# -- assign_population --------------------------------------------------------------


def test_degenerate_mix_all_daily():
    g = generate_graph(50, 5.0, 0.0, seed=1)
    pop = assign_population(g, {ActivityLevel.DAILY: 1.0}, None, seed=2)
    assert all(p.activity_level is ActivityLevel.DAILY for p in pop.profiles)


def test_cohort_counts_match_requested_mix():
    g = generate_graph(10_000, 8.0, 0.1, seed=4)
    mix = {"daily": 0.3, "weekly": 0.3, "monthly": 0.3, "inactive": 0.1}
    pop = assign_population(g, mix, None, seed=3)
    counts = np.bincount(pop.activity, minlength=4)
    for idx, expected in enumerate((3000, 3000, 3000, 1000)):
        assert abs(counts[idx] - expected) <= 200


def test_injected_gain_ordering_monthly_above_daily():
    g = generate_graph(3000, 8.0, 0.1, seed=4)
    mix = {"daily": 0.5, "monthly": 0.5}
    ranges = {
        ActivityLevel.DAILY: BehaviorRange(gain=(0.5, 0.9)),
        ActivityLevel.MONTHLY: BehaviorRange(gain=(1.8, 2.4), rho=(0.8, 1.2)),
    }
    pop = assign_population(g, mix, ranges, seed=11)
    monthly = pop.gain[pop.activity == 2]
    daily = pop.gain[pop.activity == 0]
    assert len(monthly) >= 1000 and len(daily) >= 1000
    assert monthly.mean() > daily.mean()


def test_fractions_must_sum_to_one():
    g = generate_graph(10, 3.0, 0.0, seed=0)
    with pytest.raises(ConfigurationError):
        assign_population(g, {"daily": 0.5, "weekly": 0.4}, None, seed=0)


def test_contribution_never_outranks_activity():
    g = generate_graph(2000, 8.0, 0.1, seed=8)
    pop = assign_population(g, {"daily": 0.25, "weekly": 0.25, "monthly": 0.25, "inactive": 0.25},
                            None, seed=8)
    for p in pop.profiles:
        assert p.contribution_level.rank <= p.activity_level.rank


def test_population_csv_roundtrip(tmp_path):
    g = generate_graph(80, 6.0, 0.1, seed=2)
    pop = assign_population(g, {"daily": 0.5, "weekly": 0.5}, None, seed=5)
    path = tmp_path / "population.csv"
    population_to_csv(pop, path)
    pop2 = population_from_csv(path)
    assert len(pop2) == len(pop)
    assert np.allclose(pop2.base, pop.base) and np.allclose(pop2.gain, pop.gain)
    assert pop2.profiles[17].activity_level is pop.profiles[17].activity_level
    assert np.allclose(pop2.static, pop.static)


# -- true_create_prob -----------------------------------------------------------------


def test_feedback_blind_user_has_flat_response():
    b = GroundTruthBehavior(base=-1.0, gain=0.0, rho=0.5)
    p0 = true_create_prob(b, 0)
    for a in (1, 5, 50):
        assert true_create_prob(b, a) == pytest.approx(p0)


def test_saturation_limit_closed_form():
    # rho -> infinity saturates after one feedback: sigmoid(base + gain).
    b = GroundTruthBehavior(base=0.0, gain=1.0, rho=1e9)
    assert true_create_prob(b, 1) == pytest.approx(0.731059, abs=1e-6)


def test_diminishing_returns_of_feedback():
    b = GroundTruthBehavior(base=-2.0, gain=2.0, rho=0.1)
    early = true_create_prob(b, 10) - true_create_prob(b, 5)
    late = true_create_prob(b, 20) - true_create_prob(b, 15)
    assert early > late


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=3999))
def test_generated_behaviors_monotone_saturating(idx):
    g = _shared_graph()
    pop = _shared_population()
    b = pop.behaviors[idx % len(pop)]
    a = np.arange(0, 60)
    p = np.array([true_create_prob(b, x) for x in a])
    assert np.all(np.diff(p) >= -1e-15)
    inc = np.diff(p)
    assert np.all(np.diff(inc) <= 1e-12)


_GRAPH_CACHE = {}


def _shared_graph():
    if "g" not in _GRAPH_CACHE:
        _GRAPH_CACHE["g"] = generate_graph(4000, 10.0, 0.1, seed=77)
    return _GRAPH_CACHE["g"]


def _shared_population():
    if "p" not in _GRAPH_CACHE:
        _GRAPH_CACHE["p"] = assign_population(
            _shared_graph(),
            {"daily": 0.25, "weekly": 0.25, "monthly": 0.25, "inactive": 0.25},
            None, seed=13)
    return _GRAPH_CACHE["p"]


# -- step_simulation --------------------------------------------------------------------


def _tiny_world(n=120, seed=21):
    cfg = lab.WorldConfig(n_users=n, mean_degree=8.0)
    return lab.build_world(cfg, seed)


def test_zero_ticks_empty_log():
    world = _tiny_world()
    state = new_state(world.graph, world.population, world.config.sim, seed=1,
                      affinity=world.affinity)
    log = step_simulation(state, lab.bootstrap_policy(), 0, seed=3)
    assert len(log) == 0 and log.n_ticks == 0


def test_never_creating_population_emits_no_creates():
    world = _tiny_world()
    behaviors = [GroundTruthBehavior(base=-np.inf, gain=0.0, rho=1.0)
                 for _ in world.population.behaviors]
    from feedlab.ecosystem.population import Population
    silent = Population(world.population.profiles, behaviors, seed=0)
    state = new_state(world.graph, silent, world.config.sim, seed=1, affinity=world.affinity)
    log = step_simulation(state, lab.bootstrap_policy(), 10, seed=3)
    assert np.sum(log.kind_mask(EventKind.CREATE)) == 0
    assert np.sum(log.kind_mask(EventKind.IMPRESSION)) == 0  # nothing to show


def test_same_seed_byte_identical_logs(tmp_path):
    world = _tiny_world()
    paths = []
    for run in range(2):
        state = new_state(world.graph, world.population, world.config.sim, seed=5,
                          affinity=world.affinity)
        log = step_simulation(state, lab.bootstrap_policy(), 15, seed=9)
        path = tmp_path / f"log{run}.jsonl"
        eventlog_to_jsonl(log, path)
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_unknown_policy_rejected():
    world = _tiny_world()
    state = new_state(world.graph, world.population, world.config.sim, seed=1)

    class FakePolicy:
        kind = "greedy"

    with pytest.raises(ConfigurationError):
        step_simulation(state, FakePolicy(), 1, seed=0)


def test_event_log_satisfies_structural_invariants():
    world = _tiny_world(n=200, seed=33)
    state = new_state(world.graph, world.population, world.config.sim, seed=2,
                      affinity=world.affinity)
    log = step_simulation(state, lab.bootstrap_policy(), 20, seed=4)
    validate_event_log(log)  # raises on violation


def test_feedback_conservation():
    world = _tiny_world(n=200, seed=34)
    state = new_state(world.graph, world.population, world.config.sim, seed=2,
                      affinity=world.affinity)
    log = step_simulation(state, lab.bootstrap_policy(), 20, seed=4)
    total_feedback = int(np.sum(log.kind_mask(EventKind.FEEDBACK)))
    per_creator = log.count_by_user(EventKind.FEEDBACK, 0, log.n_ticks, world.graph.n_users,
                                    by="target")
    assert per_creator.sum() == total_feedback
    per_item = {}
    for ev in log:
        if ev.kind is EventKind.FEEDBACK:
            per_item[ev.item] = per_item.get(ev.item, 0) + 1
    assert sum(per_item.values()) == total_feedback
