"""Synthetic social-graph ecosystem with known ground-truth behavior."""

from .events import EventKind, Event, EventLog, FeedItem, validate_event_log
from .graph import SocialGraph, generate_graph, graph_to_csv, graph_from_csv
from .population import (
    ActivityLevel,
    ContributionLevel,
    UserProfile,
    GroundTruthBehavior,
    BehaviorRange,
    Population,
    assign_population,
    true_create_prob,
    DEFAULT_BEHAVIOR_RANGES,
    population_to_csv,
    population_from_csv,
)
from .simulate import (
    SimulationConfig,
    SimulationState,
    FeedbackBoost,
    new_state,
    step_simulation,
    run_simulation,
    KNOWN_POLICY_KINDS,
)

__all__ = [
    "EventKind",
    "Event",
    "EventLog",
    "FeedItem",
    "validate_event_log",
    "SocialGraph",
    "generate_graph",
    "graph_to_csv",
    "graph_from_csv",
    "ActivityLevel",
    "ContributionLevel",
    "UserProfile",
    "GroundTruthBehavior",
    "BehaviorRange",
    "Population",
    "assign_population",
    "true_create_prob",
    "DEFAULT_BEHAVIOR_RANGES",
    "population_to_csv",
    "population_from_csv",
    "SimulationConfig",
    "SimulationState",
    "FeedbackBoost",
    "new_state",
    "step_simulation",
    "run_simulation",
    "KNOWN_POLICY_KINDS",
]
