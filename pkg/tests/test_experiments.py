from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from feedlab import lab
from feedlab.ecosystem.events import EventKind, EventLog
from feedlab.ecosystem.graph import SocialGraph, generate_graph
from feedlab.errors import ConfigurationError, SelectionError
from feedlab.experiments import (
    Arm,
    EgoCluster,
    MetricSample,
    assign_treatments,
    compute_metrics,
    delta_effect,
    ego_policy_resolver,
    run_consumer_ab,
    run_ego_experiment,
    select_ego_clusters,
    sutva_bias_demo,
)


def _graph_from_edges(n, edge_list):
    edges = np.array(sorted(edge_list), dtype=np.int64).reshape(-1, 2)
    return SocialGraph(n_users=n, edges=edges, seed=0)


# -- select_ego_clusters ---------------------------------------------------------


def test_star_graph_single_cluster():
    g = _graph_from_edges(51, [(leaf, 50) for leaf in range(50)])
    clusters = select_ego_clusters(g, n_egos=1, min_alters=10, max_overlap=0.2, seed=1)
    assert len(clusters) == 1
    assert clusters[0].ego == 50
    assert clusters[0].alters == frozenset(range(50))


def test_fully_overlapping_egos_rejected():
    edges = [(leaf, 20) for leaf in range(10)] + [(leaf, 21) for leaf in range(10)]
    g = _graph_from_edges(22, edges)
    with pytest.raises(SelectionError) as err:
        select_ego_clusters(g, n_egos=2, min_alters=5, max_overlap=0.0, seed=3)
    assert err.value.achievable == 1


def test_accepted_clusters_respect_overlap_bound():
    g = generate_graph(1000, 16.0, 0.1, seed=5)
    clusters = select_ego_clusters(g, n_egos=30, min_alters=10, max_overlap=0.3, seed=7)
    assert len(clusters) == 30
    for i, a in enumerate(clusters):
        assert len(a.alters) >= 10
        assert a.alters == frozenset(int(u) for u in g.followers(a.ego))
        for b in clusters[i + 1:]:
            inter = len(a.alters & b.alters)
            union = len(a.alters | b.alters)
            assert inter / union <= 0.3


def test_selection_deterministic():
    g = generate_graph(500, 12.0, 0.1, seed=2)
    a = select_ego_clusters(g, 15, 8, 0.25, seed=9)
    b = select_ego_clusters(g, 15, 8, 0.25, seed=9)
    assert [c.ego for c in a] == [c.ego for c in b]


# -- assign_treatments ---------------------------------------------------------------


def _fake_clusters(k):
    return [EgoCluster(ego=i, alters=frozenset({1000 + i})) for i in range(k)]


def test_two_clusters_one_per_arm():
    armed = assign_treatments(_fake_clusters(2), seed=4)
    arms = sorted(c.arm for c in armed)
    assert arms == [Arm.CONTROL, Arm.TREATMENT]


def test_hundred_clusters_split_evenly():
    armed = assign_treatments(_fake_clusters(100), seed=4)
    n_treat = sum(c.arm is Arm.TREATMENT for c in armed)
    assert n_treat == 50


def test_odd_count_balanced_within_one():
    armed = assign_treatments(_fake_clusters(9), seed=11)
    n_treat = sum(c.arm is Arm.TREATMENT for c in armed)
    assert n_treat in (4, 5)


def test_assignment_deterministic():
    a = assign_treatments(_fake_clusters(20), seed=6)
    b = assign_treatments(_fake_clusters(20), seed=6)
    assert [c.arm for c in a] == [c.arm for c in b]


# -- compute_metrics -------------------------------------------------------------------


def test_empty_log_all_zero_samples():
    log = EventLog.empty(n_ticks=10, seed=0)
    samples = compute_metrics(log, [0, 1, 2], (5, 10))
    assert len(samples) == 3
    for s in samples:
        assert (s.contributions, s.public_contributor, s.contributor_with_response,
                s.retained_creator, s.feed_viral_actions, s.feed_viral_actor,
                s.feed_interactions) == (0, 0, 0, 0, 0, 0, 0)


def test_retained_creator_requires_both_windows():
    # user 0 creates in window 5..10 and in previous window 0..5 -> retained
    # user 1 creates only in the current window -> not retained
    ticks = [2, 7, 7]
    kinds = [int(EventKind.CREATE)] * 3
    actors = [0, 0, 1]
    log = EventLog(ticks, kinds, actors, [-1] * 3, [0, 1, 2], n_ticks=10, seed=0)
    by_id = {s.unit_id: s for s in compute_metrics(log, [0, 1], (5, 10))}
    assert by_id[0].retained_creator == 1
    assert by_id[1].retained_creator == 0


def test_contributor_with_response_horizon():
    # user 0 creates at tick 6 and receives feedback at tick 8 (within horizon 2)
    # user 1 creates at tick 5 and receives feedback at tick 9 (outside horizon)
    rows = [
        (6, EventKind.CREATE, 0, -1, 0),
        (5, EventKind.CREATE, 1, -1, 1),
        (8, EventKind.FEEDBACK, 9, 0, 0),
        (9, EventKind.FEEDBACK, 9, 1, 1),
    ]
    rows.sort(key=lambda r: r[0])
    log = EventLog([r[0] for r in rows], [int(r[1]) for r in rows], [r[2] for r in rows],
                   [r[3] for r in rows], [r[4] for r in rows], n_ticks=10, seed=0)
    by_id = {s.unit_id: s for s in compute_metrics(log, [0, 1], (5, 10), response_horizon=2)}
    assert by_id[0].contributor_with_response == 1
    assert by_id[1].contributor_with_response == 0


def _brute_force_metrics(log, unit, window, horizon=2):
    start, end = window
    events = list(log)
    creates = [e for e in events if e.kind is EventKind.CREATE and e.actor == unit
               and start <= e.tick < end]
    fb_given = [e for e in events if e.kind is EventKind.FEEDBACK and e.actor == unit
                and start <= e.tick < end]
    imps = [e for e in events if e.kind is EventKind.IMPRESSION and e.actor == unit
            and start <= e.tick < end]
    prev_creates = [e for e in events if e.kind is EventKind.CREATE and e.actor == unit
                    and start - (end - start) <= e.tick < start]
    contrib_ticks = sorted(e.tick for e in creates + fb_given)
    recv_ticks = sorted(e.tick for e in events
                        if e.kind is EventKind.FEEDBACK and e.target == unit
                        and start <= e.tick < min(log.n_ticks, end + horizon))
    responded = int(any(any(s <= f <= s + horizon for f in recv_ticks) for s in contrib_ticks))
    contributions = len(creates) + len(fb_given)
    return MetricSample(
        unit_id=unit,
        contributions=contributions,
        public_contributor=int(contributions > 0),
        contributor_with_response=responded,
        retained_creator=int(bool(creates) and bool(prev_creates)),
        feed_viral_actions=len(fb_given),
        feed_viral_actor=int(bool(fb_given)),
        feed_interactions=len(imps) + len(fb_given),
    )


def test_metrics_match_brute_force_recount_on_sim_log():
    world = lab.build_world(lab.WorldConfig(n_users=150, mean_degree=8.0), seed=31)
    log = lab.run_policy_sim(world, lab.bootstrap_policy(), 20, seed=5)
    window = (10, 17)
    units = list(range(0, 150, 11))
    samples = {s.unit_id: s for s in compute_metrics(log, units, window)}
    for unit in units:
        assert samples[unit] == _brute_force_metrics(log, unit, window)


def test_metrics_window_validation():
    log = EventLog.empty(n_ticks=10, seed=0)
    with pytest.raises(ConfigurationError):
        compute_metrics(log, [0], (5, 12))


# -- delta_effect -----------------------------------------------------------------------


def _samples(vals, metric="contributions"):
    out = []
    for i, v in enumerate(vals):
        kwargs = dict(contributions=0, public_contributor=0, contributor_with_response=0,
                      retained_creator=0, feed_viral_actions=0, feed_viral_actor=0,
                      feed_interactions=0)
        kwargs[metric] = int(v)
        out.append(MetricSample(unit_id=i, **kwargs))
    return out


def test_identical_arms_delta_zero_p_one():
    t = _samples([3, 1, 4, 1])
    c = _samples([3, 1, 4, 1])
    est = delta_effect(t, c, "contributions")
    assert est.delta_pct == pytest.approx(0.0)
    assert est.p_value == pytest.approx(1.0)
    assert est.label == "Neutral"


def test_constant_arms_hand_computed():
    est = delta_effect(_samples([2, 2, 2, 2]), _samples([1, 1, 1, 1]), "contributions")
    assert est.delta_pct == pytest.approx(100.0)
    # zero variance in both arms: the Welch statistic diverges, p collapses to 0
    assert est.p_value == 0.0
    assert est.label.startswith("+100.00%")


def test_welch_matches_scipy_oracle():
    rng = np.random.default_rng(13)
    t_vals = rng.poisson(5, 40)
    c_vals = rng.poisson(4, 35)
    est = delta_effect(_samples(t_vals), _samples(c_vals), "contributions")
    oracle = stats.ttest_ind(t_vals.astype(float), c_vals.astype(float), equal_var=False)
    assert est.p_value == pytest.approx(oracle.pvalue, abs=1e-12)


def test_two_proportion_z_hand_computed():
    t_vals = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0]  # 3/10
    c_vals = [1, 0, 0, 0, 0, 0, 0, 0, 0, 0]  # 1/10
    est = delta_effect(_samples(t_vals, "retained_creator"),
                       _samples(c_vals, "retained_creator"), "retained_creator")
    pooled = 4 / 20
    se0 = np.sqrt(pooled * (1 - pooled) * (1 / 10 + 1 / 10))
    z = (0.3 - 0.1) / se0
    assert est.p_value == pytest.approx(2 * stats.norm.sf(abs(z)), abs=1e-12)
    assert est.delta_pct == pytest.approx(200.0)


def test_neutral_label_follows_p_threshold():
    rng = np.random.default_rng(17)
    base = rng.poisson(5, 200)
    est = delta_effect(_samples(base + rng.integers(0, 2, 200)), _samples(base), "contributions")
    assert (est.label == "Neutral") == (est.p_value > 0.05)


def test_zero_control_mean_relative_effect_undefined():
    est = delta_effect(_samples([1, 2, 1]), _samples([0, 0, 0]), "contributions")
    assert np.isnan(est.delta_pct)
    assert est.label == "NA"
    assert est.abs_delta == pytest.approx(4.0 / 3.0)


def test_delta_effect_requires_both_arms():
    with pytest.raises(ConfigurationError):
        delta_effect([], _samples([1]), "contributions")


# -- experiment runners -------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_world():
    return lab.build_world(lab.WorldConfig(n_users=400, mean_degree=12.0), seed=57)


def test_ego_resolver_never_treats_egos(small_world):
    clusters = select_ego_clusters(small_world.graph, 10, 6, 0.3, seed=3)
    armed = assign_treatments(clusters, seed=4)
    treatment, control = object(), object()
    resolver, treated_alters = ego_policy_resolver(armed, treatment, control)
    for c in armed:
        assert resolver(c.ego) is control
    for uid in treated_alters:
        assert resolver(uid) is treatment
    treated_union = set()
    for c in armed:
        if c.arm is Arm.TREATMENT:
            treated_union |= c.alters
    egos = {c.ego for c in armed}
    assert treated_alters == treated_union - egos


def test_ego_experiment_log_invariant_to_arm_labels_when_policies_equal(small_world):
    # With treatment == control and no injected effect, the arm assignment must
    # not leak into the simulation at all.
    from feedlab.ecosystem.events import eventlog_to_jsonl
    clusters = select_ego_clusters(small_world.graph, 10, 6, 0.3, seed=3)
    pol = lab.bootstrap_policy()
    logs = []
    for arm_seed in (1, 2):
        armed = assign_treatments(clusters, seed=arm_seed)
        result = run_ego_experiment(small_world, armed, pol, pol, ticks=12,
                                    measurement_ticks=6, seed=99)
        logs.append(result.log)
    assert np.array_equal(logs[0].kind, logs[1].kind)
    assert np.array_equal(logs[0].actor, logs[1].actor)
    assert np.array_equal(logs[0].item, logs[1].item)


def test_ego_experiment_requires_armed_clusters(small_world):
    clusters = select_ego_clusters(small_world.graph, 5, 6, 0.3, seed=3)
    pol = lab.bootstrap_policy()
    with pytest.raises(ConfigurationError):
        run_ego_experiment(small_world, clusters, pol, pol, ticks=8,
                           measurement_ticks=4, seed=1)


def test_ego_experiment_measures_only_egos(small_world):
    clusters = select_ego_clusters(small_world.graph, 12, 6, 0.3, seed=13)
    armed = assign_treatments(clusters, seed=14)
    pol = lab.bootstrap_policy()
    result = run_ego_experiment(small_world, armed, pol, pol, ticks=12,
                                measurement_ticks=6, seed=7)
    treat_ids = {s.unit_id for s in result.treat}
    control_ids = {s.unit_id for s in result.control}
    assert treat_ids == {c.ego for c in armed if c.arm is Arm.TREATMENT}
    assert control_ids == {c.ego for c in armed if c.arm is Arm.CONTROL}


def test_consumer_ab_split_and_determinism(small_world):
    pol = lab.bootstrap_policy()
    r1 = run_consumer_ab(small_world, pol, pol, 0.5, 10, seed=21, measurement_ticks=5)
    r2 = run_consumer_ab(small_world, pol, pol, 0.5, 10, seed=21, measurement_ticks=5)
    assert np.array_equal(r1.treated_mask, r2.treated_mask)
    n_treat = int(r1.treated_mask.sum())
    # binomial(400, .5): allow 4 sigma
    assert abs(n_treat - 200) <= 40
    assert len(r1.treat) == n_treat
    assert len(r1.control) == 400 - n_treat


def test_consumer_ab_split_sizes_at_scale():
    world = lab.build_world(lab.WorldConfig(n_users=10_000, mean_degree=6.0), seed=71)
    pol = lab.bootstrap_policy()
    result = run_consumer_ab(world, pol, pol, 0.5, 2, seed=5, measurement_ticks=1)
    assert abs(int(result.treated_mask.sum()) - 5000) <= 150


def test_consumer_ab_validates_split(small_world):
    pol = lab.bootstrap_policy()
    with pytest.raises(ConfigurationError):
        run_consumer_ab(small_world, pol, pol, 0.0, 4, seed=1, measurement_ticks=2)


def test_feedback_boost_scales_feedback_volume(small_world):
    from feedlab.ecosystem.simulate import FeedbackBoost
    pol = lab.bootstrap_policy()
    n = small_world.graph.n_users
    plain = lab.run_policy_sim(small_world, pol, 12, seed=41)
    boost = FeedbackBoost(multiplier=3.0, treated=np.ones(n, dtype=bool),
                          creator_mask=small_world.population.gain > 0)
    boosted = lab.run_policy_sim(small_world, pol, 12, seed=41, boost=boost)
    fb_plain = int(np.sum(plain.kind_mask(EventKind.FEEDBACK)))
    fb_boosted = int(np.sum(boosted.kind_mask(EventKind.FEEDBACK)))
    assert fb_boosted > 1.5 * fb_plain


def test_feedback_boost_only_affects_treated_consumers(small_world):
    from feedlab.ecosystem.simulate import FeedbackBoost
    n = small_world.graph.n_users
    treated = np.zeros(n, dtype=bool)
    boost = FeedbackBoost(multiplier=3.0, treated=treated)
    p = np.array([0.1, 0.2])
    assert np.array_equal(boost.apply(5, np.array([1, 2]), p), p)
    treated[5] = True
    assert np.allclose(boost.apply(5, np.array([1, 2]), p), [0.3, 0.6])
    # probabilities stay below 1 even under a huge multiplier
    big = FeedbackBoost(multiplier=100.0, treated=treated)
    assert np.all(big.apply(5, np.array([1, 2]), p) <= 0.999)


# -- sutva_bias_demo ---------------------------------------------------------------------------


def test_sutva_demo_requires_thirty_replicates():
    with pytest.raises(ConfigurationError):
        sutva_bias_demo(lab.WorldConfig(n_users=100, mean_degree=6.0), 1.5, replicates=5)


@pytest.mark.slow
def test_sutva_demo_null_effect_centers_both_estimators_on_zero():
    # A/A at desk scale: use the dense count metric so every replicate's
    # relative effect is well defined; the full statistical validation runs in
    # the acceptance suite at experiment scale.
    cfg = lab.WorldConfig(n_users=250, mean_degree=10.0)
    report = sutva_bias_demo(cfg, effect_multiplier=1.0, replicates=30, n_egos=12,
                             min_alters=6, max_overlap=0.3, ticks=14, measurement_ticks=7,
                             base_seed=3, ground_truth_replicates=3,
                             metric="contributions")
    assert report.replicates == 30
    assert len(report.ego_estimates) == 30 and len(report.naive_estimates) == 30
    assert abs(report.mean_ego_delta_pct) <= 3.0 * report.se_ego_delta_pct + 1e-9
    assert abs(report.mean_naive_delta_pct) <= 3.0 * report.se_naive_delta_pct + 1e-9
    summary = report.summary()
    assert set(summary) >= {"metric", "ground_truth_delta_pct", "mean_ego_delta_pct"}
