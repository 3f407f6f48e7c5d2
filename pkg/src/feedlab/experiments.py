"""Policy impact measurement: consumer A/B tests and ego-cluster network experiments.

Creator-side effects travel through the network (a treated consumer's feedback
changes another user's creation), which breaks per-user randomization. The
ego-cluster design randomizes whole clusters: the measured "ego" keeps the
control experience while every follower ("alter") of a treatment ego gets the
treatment, approximating a world where the ego's entire audience is treated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import stats

from .ecosystem.events import EventKind, EventLog
from .ecosystem.graph import SocialGraph
from .ecosystem.simulate import FeedbackBoost
from .errors import ConfigurationError, SelectionError, UndefinedMetricError
from .lab import World, WorldConfig, bootstrap_policy, build_world, run_policy_sim
from .seeds import spawn_seed

RESPONSE_HORIZON_TICKS = 2  # window for "contributor with response"

COUNT_METRICS = ("contributions", "feed_viral_actions", "feed_interactions")
FLAG_METRICS = ("public_contributor", "contributor_with_response", "retained_creator",
                "feed_viral_actor")
ALL_METRICS = COUNT_METRICS + FLAG_METRICS


class Arm(str, Enum):
    TREATMENT = "treatment"
    CONTROL = "control"


@dataclass(frozen=True)
class EgoCluster:
    ego: int
    alters: frozenset[int]
    arm: Arm | None = None

    def __post_init__(self):
        if self.ego in self.alters:
            raise ConfigurationError(f"ego {self.ego} cannot be its own alter")
        if not self.alters:
            raise ConfigurationError(f"ego {self.ego} has an empty alter set")


def _jaccard(a: frozenset[int], b: frozenset[int]) -> float:
    inter = len(a & b)
    if inter == 0:
        return 0.0
    return inter / len(a | b)


def select_ego_clusters(graph: SocialGraph, n_egos: int, min_alters: int,
                        max_overlap: float, seed: int) -> list[EgoCluster]:
    """Sample egos whose follower sets overlap pairwise at most `max_overlap` (Jaccard).

    Candidates are visited in seeded random order; an ego overlapping any
    previously accepted cluster too much is rejected outright, which keeps the
    estimator simple at the cost of a known under-estimation direction.
    """
    if n_egos < 1:
        raise ConfigurationError(f"n_egos must be >= 1, got {n_egos}")
    if min_alters < 1:
        raise ConfigurationError(f"min_alters must be >= 1, got {min_alters}")
    if not 0.0 <= max_overlap <= 1.0:
        raise ConfigurationError(f"max_overlap must be in [0, 1], got {max_overlap}")

    in_deg = graph.in_degrees()
    candidates = np.nonzero(in_deg >= min_alters)[0]
    rng = np.random.default_rng(seed)
    rng.shuffle(candidates)

    accepted: list[EgoCluster] = []
    for ego in candidates:
        alters = frozenset(int(u) for u in graph.followers(int(ego)))
        if any(_jaccard(alters, c.alters) > max_overlap for c in accepted):
            continue
        accepted.append(EgoCluster(ego=int(ego), alters=alters))
        if len(accepted) == n_egos:
            return accepted
    raise SelectionError(
        f"only {len(accepted)} of {n_egos} requested ego clusters are selectable "
        f"(min_alters={min_alters}, max_overlap={max_overlap})",
        achievable=len(accepted),
    )


def assign_treatments(clusters: Sequence[EgoCluster], seed: int) -> list[EgoCluster]:
    """Randomize clusters into arms, balanced within one cluster."""
    if len(clusters) < 2:
        raise ConfigurationError("need at least 2 clusters to assign treatments")
    rng = np.random.default_rng(seed)
    order = np.arange(len(clusters))
    rng.shuffle(order)
    n_treat = (len(clusters) + 1) // 2 if rng.random() < 0.5 else len(clusters) // 2
    armed = list(clusters)
    for pos, idx in enumerate(order):
        arm = Arm.TREATMENT if pos < n_treat else Arm.CONTROL
        c = clusters[int(idx)]
        armed[int(idx)] = EgoCluster(ego=c.ego, alters=c.alters, arm=arm)
    return armed


# -- Table-style unit metrics ---------------------------------------------------


@dataclass(frozen=True)
class MetricSample:
    unit_id: int
    contributions: int
    public_contributor: int
    contributor_with_response: int
    retained_creator: int
    feed_viral_actions: int
    feed_viral_actor: int
    feed_interactions: int

    def value(self, metric: str) -> float:
        if metric not in ALL_METRICS:
            raise ConfigurationError(f"unknown metric {metric!r}")
        return float(getattr(self, metric))


def compute_metrics(log: EventLog, units: Sequence[int], window: tuple[int, int],
                    response_horizon: int = RESPONSE_HORIZON_TICKS) -> list[MetricSample]:
    """Per-unit engagement/creation metrics over the half-open tick window.

    Contributions cover both content-generating and content-distributing acts:
    creates plus feedback given. Retention compares against the previous window
    of the same length.
    """
    start, end = window
    if start < 0 or end > log.n_ticks or start >= end:
        raise ConfigurationError(f"window {window} outside log span [0, {log.n_ticks})")

    n = max((int(u) for u in units), default=-1) + 1
    creates = log.count_by_user(EventKind.CREATE, start, end, n)
    fb_given = log.count_by_user(EventKind.FEEDBACK, start, end, n)
    fb_received_mask = log.kind_mask(EventKind.FEEDBACK)
    impressions = log.count_by_user(EventKind.IMPRESSION, start, end, n)

    prev_len = end - start
    prev_creates = (log.count_by_user(EventKind.CREATE, start - prev_len, start, n)
                    if start - prev_len >= 0 else np.zeros(n, dtype=np.int64))

    unit_set = set(int(u) for u in units)
    contrib_ticks: dict[int, list[int]] = {u: [] for u in unit_set}
    received_ticks: dict[int, list[int]] = {u: [] for u in unit_set}
    in_window = log.window_mask(start, end)
    response_window = log.window_mask(start, min(log.n_ticks, end + response_horizon))
    for kind in (EventKind.CREATE, EventKind.FEEDBACK):
        mask = log.kind_mask(kind) & in_window
        for tick, actor in zip(log.tick[mask], log.actor[mask]):
            if int(actor) in unit_set:
                contrib_ticks[int(actor)].append(int(tick))
    recv = fb_received_mask & response_window
    for tick, target in zip(log.tick[recv], log.target[recv]):
        if int(target) in unit_set:
            received_ticks[int(target)].append(int(tick))

    samples = []
    for u in units:
        u = int(u)
        responded = 0
        if contrib_ticks[u] and received_ticks[u]:
            fb_ticks = np.array(sorted(received_ticks[u]))
            for s in contrib_ticks[u]:
                i = np.searchsorted(fb_ticks, s)
                if i < fb_ticks.size and fb_ticks[i] <= s + response_horizon:
                    responded = 1
                    break
        contributions = int(creates[u] + fb_given[u])
        samples.append(MetricSample(
            unit_id=u,
            contributions=contributions,
            public_contributor=int(contributions > 0),
            contributor_with_response=responded,
            retained_creator=int(creates[u] > 0 and prev_creates[u] > 0),
            feed_viral_actions=int(fb_given[u]),
            feed_viral_actor=int(fb_given[u] > 0),
            feed_interactions=int(impressions[u] + fb_given[u]),
        ))
    return samples


# -- effect estimation ------------------------------------------------------------


@dataclass(frozen=True)
class EffectEstimate:
    metric: str
    delta_pct: float          # nan when the control mean is 0
    p_value: float
    ci95: tuple[float, float]
    n_treat: int
    n_control: int
    abs_delta: float
    abs_ci95: tuple[float, float]

    @property
    def label(self) -> str:
        if np.isnan(self.delta_pct):
            return "NA"
        if self.p_value > 0.05:
            return "Neutral"
        return f"{self.delta_pct:+.2f}% ({self.p_value:.3g})"


def _welch(t_vals: np.ndarray, c_vals: np.ndarray) -> tuple[float, float]:
    """Welch two-sample t-test; returns (p_value, se of the mean difference)."""
    nt, nc = len(t_vals), len(c_vals)
    vt = t_vals.var(ddof=1) if nt > 1 else 0.0
    vc = c_vals.var(ddof=1) if nc > 1 else 0.0
    se2 = vt / nt + vc / nc
    diff = t_vals.mean() - c_vals.mean()
    if se2 == 0.0:
        return (1.0 if diff == 0.0 else 0.0), 0.0
    tstat = diff / np.sqrt(se2)
    df = se2**2 / ((vt / nt) ** 2 / max(nt - 1, 1) + (vc / nc) ** 2 / max(nc - 1, 1))
    return float(2.0 * stats.t.sf(abs(tstat), df)), float(np.sqrt(se2))


def _two_proportion_z(t_vals: np.ndarray, c_vals: np.ndarray) -> tuple[float, float]:
    """Pooled two-proportion z-test; returns (p_value, unpooled se for the CI)."""
    nt, nc = len(t_vals), len(c_vals)
    pt, pc = t_vals.mean(), c_vals.mean()
    pooled = (t_vals.sum() + c_vals.sum()) / (nt + nc)
    se0 = np.sqrt(pooled * (1.0 - pooled) * (1.0 / nt + 1.0 / nc))
    se1 = np.sqrt(pt * (1.0 - pt) / nt + pc * (1.0 - pc) / nc)
    if se0 == 0.0:
        return (1.0 if pt == pc else 0.0), float(se1)
    z = (pt - pc) / se0
    return float(2.0 * stats.norm.sf(abs(z))), float(se1)


def delta_effect(treat: Sequence[MetricSample], control: Sequence[MetricSample],
                 metric: str) -> EffectEstimate:
    """Relative effect with significance: Welch t for counts, 2-proportion z for flags."""
    if not treat or not control:
        raise ConfigurationError("both arms must be nonempty")
    t_vals = np.array([s.value(metric) for s in treat])
    c_vals = np.array([s.value(metric) for s in control])

    if metric in FLAG_METRICS:
        p_value, se = _two_proportion_z(t_vals, c_vals)
    else:
        p_value, se = _welch(t_vals, c_vals)

    diff = float(t_vals.mean() - c_vals.mean())
    mc = float(c_vals.mean())
    abs_ci = (diff - 1.96 * se, diff + 1.96 * se)
    if mc == 0.0:
        delta_pct, ci = float("nan"), (float("nan"), float("nan"))
    else:
        delta_pct = 100.0 * diff / mc
        ci = (100.0 * abs_ci[0] / mc, 100.0 * abs_ci[1] / mc)
    return EffectEstimate(metric=metric, delta_pct=delta_pct, p_value=p_value, ci95=ci,
                          n_treat=len(t_vals), n_control=len(c_vals),
                          abs_delta=diff, abs_ci95=abs_ci)


# -- experiment runners ------------------------------------------------------------


def ego_policy_resolver(clusters: Sequence[EgoCluster], treatment_policy, control_policy):
    """Alters of treatment clusters get the treatment feed; egos never do."""
    egos = {c.ego for c in clusters}
    treated_alters = set()
    for c in clusters:
        if c.arm is Arm.TREATMENT:
            treated_alters |= c.alters
    treated_alters -= egos  # an ego's own feed stays on control in both arms
    return (lambda uid: treatment_policy if uid in treated_alters else control_policy), treated_alters


@dataclass
class EgoExperimentResult:
    treat: list[MetricSample]
    control: list[MetricSample]
    log: EventLog = field(repr=False)
    treated_alters: set[int] = field(default_factory=set, repr=False)


def run_ego_experiment(world: World, clusters: Sequence[EgoCluster], treatment_policy,
                       control_policy, *, ticks: int, measurement_ticks: int, seed: int,
                       effect_multiplier: float | None = None) -> EgoExperimentResult:
    """Simulate with per-cluster treatment and measure the egos only.

    `effect_multiplier` optionally injects a ground-truth effect: for every
    treatment cluster, each alter's feedback propensity toward that cluster's
    ego is scaled (only where the ego is feedback-sensitive), giving a clean
    network-mediated effect the estimator should recover.
    """
    if any(c.arm is None for c in clusters):
        raise ConfigurationError("clusters must be armed; call assign_treatments first")
    resolver, treated_alters = ego_policy_resolver(clusters, treatment_policy, control_policy)

    boost = None
    if effect_multiplier is not None:
        sensitive = world.population.gain > 0
        pairs: dict[int, list[int]] = {}
        for c in clusters:
            if c.arm is Arm.TREATMENT and sensitive[c.ego]:
                for alter in c.alters:
                    pairs.setdefault(alter, []).append(c.ego)
        pair_targets = {a: np.array(sorted(egos), dtype=np.int64) for a, egos in pairs.items()}
        boost = FeedbackBoost(multiplier=effect_multiplier, pair_targets=pair_targets)

    log = run_policy_sim(world, None, ticks, seed, boost=boost, policy_for=resolver)
    window = (ticks - measurement_ticks, ticks)
    treat_egos = sorted(c.ego for c in clusters if c.arm is Arm.TREATMENT)
    control_egos = sorted(c.ego for c in clusters if c.arm is Arm.CONTROL)
    return EgoExperimentResult(
        treat=compute_metrics(log, treat_egos, window),
        control=compute_metrics(log, control_egos, window),
        log=log,
        treated_alters=treated_alters,
    )


@dataclass
class ConsumerAbResult:
    treat: list[MetricSample]
    control: list[MetricSample]
    treated_mask: np.ndarray = field(repr=False)
    log: EventLog = field(repr=False, default=None)


def run_consumer_ab(world: World, treatment_policy, control_policy, split: float,
                    ticks: int, seed: int, *, measurement_ticks: int) -> ConsumerAbResult:
    """Standard per-user randomized test measured on the consumers themselves."""
    if not 0.0 < split < 1.0:
        raise ConfigurationError(f"split must be in (0, 1), got {split}")
    rng = np.random.default_rng(spawn_seed(seed, "consumer-arms"))
    treated = rng.random(world.graph.n_users) < split
    resolver = lambda uid: treatment_policy if treated[uid] else control_policy  # noqa: E731

    log = run_policy_sim(world, None, ticks, spawn_seed(seed, "consumer-sim"),
                         policy_for=resolver)
    window = (ticks - measurement_ticks, ticks)
    treat_units = np.nonzero(treated)[0]
    control_units = np.nonzero(~treated)[0]
    return ConsumerAbResult(
        treat=compute_metrics(log, treat_units, window),
        control=compute_metrics(log, control_units, window),
        treated_mask=treated,
        log=log,
    )


# -- SUTVA bias demonstration --------------------------------------------------------


@dataclass
class SutvaReport:
    metric: str
    effect_multiplier: float
    replicates: int
    ego_estimates: list[EffectEstimate]
    naive_estimates: list[EffectEstimate]
    ground_truth_delta_pct: float
    mean_ego_delta_pct: float
    se_ego_delta_pct: float
    mean_naive_delta_pct: float
    se_naive_delta_pct: float
    ego_ci_coverage: float

    def summary(self) -> dict:
        return {
            "metric": self.metric,
            "effect_multiplier": self.effect_multiplier,
            "replicates": self.replicates,
            "ground_truth_delta_pct": self.ground_truth_delta_pct,
            "mean_ego_delta_pct": self.mean_ego_delta_pct,
            "se_ego_delta_pct": self.se_ego_delta_pct,
            "mean_naive_delta_pct": self.mean_naive_delta_pct,
            "se_naive_delta_pct": self.se_naive_delta_pct,
            "ego_ci_coverage": self.ego_ci_coverage,
        }


def _frame_rate_delta(world: World, frame: np.ndarray, metric: str, ticks: int,
                      measurement_ticks: int, seed: int,
                      effect_multiplier: float) -> float:
    """Everyone-treated vs no-one-treated contrast on the measurement frame."""
    policy = bootstrap_policy()
    window = (ticks - measurement_ticks, ticks)
    all_on = FeedbackBoost(multiplier=effect_multiplier,
                           treated=np.ones(world.graph.n_users, dtype=bool),
                           creator_mask=world.population.gain > 0)
    log_on = run_policy_sim(world, policy, ticks, spawn_seed(seed, "gt-on"), boost=all_on)
    log_off = run_policy_sim(world, policy, ticks, spawn_seed(seed, "gt-off"))
    on = np.mean([s.value(metric) for s in compute_metrics(log_on, frame, window)])
    off = np.mean([s.value(metric) for s in compute_metrics(log_off, frame, window)])
    return float(100.0 * (on - off) / off) if off > 0 else float("nan")


def sutva_bias_demo(world_config: WorldConfig, effect_multiplier: float, replicates: int, *,
                    n_egos: int = 50, min_alters: int = 8, max_overlap: float = 0.2,
                    ticks: int = 21, measurement_ticks: int = 7, base_seed: int = 0,
                    metric: str = "retained_creator",
                    ground_truth_replicates: int | None = None) -> SutvaReport:
    """Estimate the same injected creator-side effect two ways on identical worlds.

    The ego-cluster estimator treats whole follower sets; the naive estimator
    randomizes users individually, so a measured user's audience is an even
    treated/untreated mix in both arms and the network-mediated effect cancels.
    """
    if replicates < 30:
        raise ConfigurationError(f"replicates must be >= 30, got {replicates}")
    gt_reps = ground_truth_replicates if ground_truth_replicates is not None else min(20, replicates)

    ego_estimates: list[EffectEstimate] = []
    naive_estimates: list[EffectEstimate] = []
    gt_deltas: list[float] = []
    policy = bootstrap_policy()

    for r in range(replicates):
        world = build_world(world_config, spawn_seed(base_seed, "sutva-world", r))
        frame = np.nonzero(world.graph.in_degrees() >= min_alters)[0]

        clusters = select_ego_clusters(world.graph, n_egos, min_alters, max_overlap,
                                       spawn_seed(base_seed, "sutva-select", r))
        armed = assign_treatments(clusters, spawn_seed(base_seed, "sutva-arms", r))
        result = run_ego_experiment(world, armed, policy, policy, ticks=ticks,
                                    measurement_ticks=measurement_ticks,
                                    seed=spawn_seed(base_seed, "sutva-egosim", r),
                                    effect_multiplier=effect_multiplier)
        ego_estimates.append(delta_effect(result.treat, result.control, metric))

        arm_rng = np.random.default_rng(spawn_seed(base_seed, "sutva-naive-arms", r))
        treated = arm_rng.random(world.graph.n_users) < 0.5
        boost = FeedbackBoost(multiplier=effect_multiplier, treated=treated,
                              creator_mask=world.population.gain > 0)
        log = run_policy_sim(world, policy, ticks, spawn_seed(base_seed, "sutva-naive-sim", r),
                             boost=boost)
        window = (ticks - measurement_ticks, ticks)
        t_units = frame[treated[frame]]
        c_units = frame[~treated[frame]]
        naive_estimates.append(delta_effect(
            compute_metrics(log, t_units, window),
            compute_metrics(log, c_units, window), metric))

        if r < gt_reps:
            gt_deltas.append(_frame_rate_delta(world, frame, metric, ticks,
                                               measurement_ticks,
                                               spawn_seed(base_seed, "sutva-gt", r),
                                               effect_multiplier))

    ego_pct = np.array([e.delta_pct for e in ego_estimates])
    naive_pct = np.array([e.delta_pct for e in naive_estimates])
    gt = float(np.nanmean(gt_deltas)) if gt_deltas else float("nan")
    coverage = float(np.mean([e.ci95[0] <= gt <= e.ci95[1] for e in ego_estimates
                              if not np.isnan(e.delta_pct)])) if not np.isnan(gt) else float("nan")
    return SutvaReport(
        metric=metric,
        effect_multiplier=effect_multiplier,
        replicates=replicates,
        ego_estimates=ego_estimates,
        naive_estimates=naive_estimates,
        ground_truth_delta_pct=gt,
        mean_ego_delta_pct=float(np.nanmean(ego_pct)),
        se_ego_delta_pct=float(np.nanstd(ego_pct, ddof=1) / np.sqrt(len(ego_pct))),
        mean_naive_delta_pct=float(np.nanmean(naive_pct)),
        se_naive_delta_pct=float(np.nanstd(naive_pct, ddof=1) / np.sqrt(len(naive_pct))),
        ego_ci_coverage=coverage,
    )


# -- report files ----------------------------------------------------------------------


EFFECTS_SCHEMA = "feedlab-effects-v1"


def effects_to_csv(estimates: Sequence[EffectEstimate], path, mode: str = "") -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# {EFFECTS_SCHEMA}{f' mode={mode}' if mode else ''}\n")
        f.write("metric,delta_pct,p_value,label\n")
        for e in estimates:
            d = "" if np.isnan(e.delta_pct) else repr(e.delta_pct)
            f.write(f"{e.metric},{d},{e.p_value!r},{e.label}\n")


def effects_summary_json(estimates: Sequence[EffectEstimate], path, *, mode: str,
                         seeds: Sequence[int]) -> None:
    doc = {
        "schema": EFFECTS_SCHEMA,
        "mode": mode,
        "seeds": list(seeds),
        "effects": [
            {
                "metric": e.metric,
                "delta_pct": None if np.isnan(e.delta_pct) else e.delta_pct,
                "p_value": e.p_value,
                "ci95": [None if np.isnan(x) else x for x in e.ci95],
                "abs_delta": e.abs_delta,
                "abs_ci95": list(e.abs_ci95),
                "n_treat": e.n_treat,
                "n_control": e.n_control,
                "label": e.label,
            }
            for e in estimates
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
