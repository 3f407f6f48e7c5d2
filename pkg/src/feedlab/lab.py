"""End-to-end orchestration: build a world, log behavior, train, estimate, rank.

This is the programmatic counterpart of the CLI pipeline. A `World` owns the
ground truth (graph, population, per-edge affinities); `Artifacts` owns
everything learned from a logged simulation (creation model, sensitivity
snapshot, engagement predictor). Fresh simulations under different ranking
policies then consume the artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .datagen import (
    BucketEdges,
    FeatureVector,
    TimelineConfig,
    TrainingExample,
    collect_examples,
    split_dataset,
    user_features,
)
from .ecosystem.graph import SocialGraph, generate_graph
from .ecosystem.population import ActivityLevel, BehaviorRange, Population, assign_population
from .ecosystem.simulate import (
    FeedbackBoost,
    SimulationConfig,
    SimulationState,
    run_simulation,
)
from .errors import ConfigurationError
from .models.evaluate import EvalReport, segment_eval
from .models.gbt import GbtParams, train_gbt
from .models.logistic import train_logistic
from .ranking import (
    PolicyKind,
    RankingPolicy,
    SmoothedRatePredictor,
    UtilitySnapshot,
    make_policy,
    train_feedback_model,
)
from .seeds import spawn_seed
from .sensitivity import LevelGrid, SensitivityCurve, build_snapshot

DEFAULT_COHORT_MIX: dict[str, float] = {
    "daily": 0.35,
    "weekly": 0.30,
    "monthly": 0.25,
    "inactive": 0.10,
}


@dataclass(frozen=True)
class WorldConfig:
    n_users: int = 2000
    mean_degree: float = 20.0
    rewire_prob: float = 0.1
    cohort_mix: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_COHORT_MIX))
    behavior: Mapping[ActivityLevel, BehaviorRange] | None = None
    sim: SimulationConfig = field(default_factory=SimulationConfig)
    contribution_table: Mapping | None = None   # per-activity contribution distribution
    contribution_offsets: Mapping | None = None  # per-contribution base offsets


@dataclass
class World:
    config: WorldConfig
    graph: SocialGraph
    population: Population
    affinity: np.ndarray
    seed: int


def build_world(config: WorldConfig, seed: int) -> World:
    """Deterministically materialize ground truth from one root seed."""
    graph = generate_graph(config.n_users, config.mean_degree, config.rewire_prob,
                           spawn_seed(seed, "graph"))
    population = assign_population(graph, config.cohort_mix, config.behavior,
                                   spawn_seed(seed, "population"),
                                   contribution_table=config.contribution_table,
                                   contribution_offsets=config.contribution_offsets)
    rng = np.random.default_rng(spawn_seed(seed, "affinity"))
    affinity = rng.normal(config.sim.affinity_mean, config.sim.affinity_sd, graph.n_edges)
    return World(config=config, graph=graph, population=population, affinity=affinity, seed=seed)


def new_sim_state(world: World, seed: int) -> SimulationState:
    return SimulationState(world.graph, world.population, world.config.sim, seed,
                           affinity=world.affinity)


def bootstrap_policy() -> RankingPolicy:
    """Consumer-only ranking with the untrained smoothed-rate estimator."""
    return make_policy(PolicyKind.CONSUMER_ONLY, 1.0, SmoothedRatePredictor())


def run_policy_sim(world: World, policy, ticks: int, seed: int,
                   boost: FeedbackBoost | None = None,
                   policy_for: Callable[[int], object] | None = None):
    """Fresh seeded simulation; `policy_for` overrides the single policy per user."""
    state = new_sim_state(world, seed)
    resolver = policy_for if policy_for is not None else (lambda _uid: policy)
    rng = np.random.default_rng(seed)
    return run_simulation(state, resolver, ticks, rng, boost=boost)


@dataclass
class Artifacts:
    """Everything the offline flow produces for the online side."""

    model: object
    timeline: TimelineConfig
    edges: BucketEdges
    grid: LevelGrid
    curves: list[SensitivityCurve]
    snapshot: UtilitySnapshot
    predictor: object
    examples: list[TrainingExample] = field(default_factory=list, repr=False)
    splits: tuple[list, list, list] | None = field(default=None, repr=False)
    features: list[tuple[int, FeatureVector]] = field(default_factory=list, repr=False)


def build_artifacts(
    world: World,
    log,
    *,
    u: int = 28,
    w: int = 7,
    edges: BucketEdges | None = None,
    family: str = "logistic",
    l2_grid: tuple[float, ...] = (0.1, 1.0, 10.0),
    use_interactions: bool = True,
    gbt_params: GbtParams | None = None,
    ratios: tuple[float, float, float] = (0.7, 0.15, 0.15),
    seed: int = 0,
) -> tuple[Artifacts, list[EvalReport]]:
    """Run the offline flow on a logged simulation: dataset, model, snapshot."""
    edges = edges or BucketEdges()
    timeline = TimelineConfig(t=log.n_ticks - w, u=u, w=w)
    examples = collect_examples(log, timeline, edges, world.population)
    train, valid, test = split_dataset(examples, ratios, spawn_seed(seed, "split"))

    if family == "logistic":
        model = train_logistic(train, valid, list(l2_grid), use_interactions=use_interactions)
    elif family == "gbt":
        model = train_gbt(train, valid, gbt_params)
    else:
        raise ConfigurationError(f"unknown model family {family!r}")

    reports = []
    if test:
        reports = [segment_eval(model, test, "activity"), segment_eval(model, test, "contribution")]

    predictor = train_feedback_model(log, world.graph, world.population,
                                     ea_window=world.config.sim.ea_window_ticks)
    features = user_features(log, timeline, edges, world.population)
    grid = LevelGrid.from_bucket_edges(edges)
    curves = build_snapshot(model, features, grid)
    snapshot = UtilitySnapshot.from_curves(curves)
    artifacts = Artifacts(model=model, timeline=timeline, edges=edges, grid=grid,
                          curves=curves, snapshot=snapshot, predictor=predictor,
                          examples=examples, splits=(train, valid, test), features=features)
    return artifacts, reports


def make_policy_from_artifacts(kind: PolicyKind | str, alpha: float,
                               artifacts: Artifacts) -> RankingPolicy:
    return make_policy(kind, alpha, artifacts.predictor, artifacts.snapshot)


def simulate_and_learn(world_config: WorldConfig, seed: int, *, ticks: int | None = None,
                       u: int = 28, w: int = 7, warmup: int = 5,
                       **artifact_kwargs) -> tuple[World, object, Artifacts, list[EvalReport]]:
    """Convenience: build a world, log it under the bootstrap policy, train."""
    world = build_world(world_config, seed)
    total = ticks if ticks is not None else warmup + u + w
    log = run_policy_sim(world, bootstrap_policy(), total, spawn_seed(seed, "base-sim"))
    artifacts, reports = build_artifacts(world, log, u=u, w=w, seed=seed, **artifact_kwargs)
    return world, log, artifacts, reports
