"""Run configuration: one YAML file drives every pipeline stage.

Parsing is strict: unknown keys are rejected by name, as are missing required
keys, so a config typo fails fast instead of silently using a default.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import yaml

from .datagen import BucketEdges
from .ecosystem.population import ActivityLevel, BehaviorRange
from .ecosystem.simulate import SimulationConfig
from .errors import ConfigurationError
from .lab import DEFAULT_COHORT_MIX, WorldConfig
from .models.gbt import GbtParams

_ECOSYSTEM_KEYS = {
    "n_users", "mean_degree", "rewire_prob", "cohort_mix", "behavior", "ticks",
    "slate_size", "item_ttl_ticks", "feedback_memory_ticks", "ea_window_ticks",
    "ea_horizon_ticks", "affinity_mean", "affinity_sd", "quality_sd", "visit_probs",
}
_TIMELINE_KEYS = {"u", "w"}
_MODEL_KEYS = {"family", "l2_grid", "use_interactions", "gbt", "split_ratios"}
_GBT_KEYS = {"max_depth", "learning_rate", "n_trees", "early_stopping_rounds",
             "min_child_weight", "reg_lambda", "max_bins"}
_RANKING_KEYS = {"policy", "alpha", "alpha_grid", "sweep_seeds"}
_EXPERIMENT_KEYS = {"mode", "ticks", "measurement_ticks", "n_egos", "min_alters",
                    "max_overlap", "split", "control_policy", "control_alpha",
                    "effect_multiplier"}
_TOP_KEYS = {"seed", "out_dir", "ecosystem", "timeline", "bucket_edges", "model",
             "ranking", "experiment"}


def _check_keys(section: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigurationError(f"unknown config key(s) in {where}: {sorted(unknown)}")


def _require(section: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in section:
        raise ConfigurationError(f"missing required config key: {where}.{key}" if where else
                                 f"missing required config key: {key}")
    return section[key]


@dataclass(frozen=True)
class ModelSection:
    family: str = "logistic"
    l2_grid: tuple[float, ...] = (0.1, 1.0, 10.0)
    use_interactions: bool = True
    gbt: GbtParams = field(default_factory=GbtParams)
    split_ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)


@dataclass(frozen=True)
class RankingSection:
    policy: str = "pcreate_param"
    alpha: float = 0.8
    alpha_grid: tuple[float, ...] = (1.0, 0.8, 0.5)
    sweep_seeds: int = 5


@dataclass(frozen=True)
class ExperimentSection:
    mode: str = "consumer"
    ticks: int = 28
    measurement_ticks: int = 7
    n_egos: int = 40
    min_alters: int = 8
    max_overlap: float = 0.2
    split: float = 0.5
    control_policy: str = "consumer_only"
    control_alpha: float = 1.0
    effect_multiplier: float | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int
    out_dir: str
    world: WorldConfig
    sim_ticks: int
    u: int
    w: int
    bucket_edges: BucketEdges
    model: ModelSection
    ranking: RankingSection
    experiment: ExperimentSection


def _parse_behavior(raw: Mapping[str, Any]) -> dict[ActivityLevel, BehaviorRange]:
    out = {}
    for cohort, spec in raw.items():
        level = ActivityLevel(str(cohort).lower())
        _check_keys(spec, {"base", "gain", "rho"}, f"ecosystem.behavior.{cohort}")
        kwargs = {}
        for name in ("base", "gain", "rho"):
            if name in spec:
                pair = spec[name]
                if len(pair) != 2:
                    raise ConfigurationError(
                        f"ecosystem.behavior.{cohort}.{name} must be a [lo, hi] pair"
                    )
                kwargs[name] = (float(pair[0]), float(pair[1]))
        out[level] = BehaviorRange(**kwargs)
    return out


def parse_config(doc: Mapping[str, Any]) -> RunConfig:
    if not isinstance(doc, Mapping):
        raise ConfigurationError("config root must be a mapping")
    _check_keys(doc, _TOP_KEYS, "top level")
    seed = int(_require(doc, "seed", ""))
    out_dir = str(doc.get("out_dir", "runs/default"))

    eco = dict(_require(doc, "ecosystem", ""))
    _check_keys(eco, _ECOSYSTEM_KEYS, "ecosystem")
    n_users = int(_require(eco, "n_users", "ecosystem"))

    sim_kwargs = {}
    for name in ("slate_size", "item_ttl_ticks", "feedback_memory_ticks", "ea_window_ticks",
                 "ea_horizon_ticks"):
        if name in eco:
            sim_kwargs[name] = int(eco[name])
    for name in ("affinity_mean", "affinity_sd", "quality_sd"):
        if name in eco:
            sim_kwargs[name] = float(eco[name])
    if "visit_probs" in eco:
        sim_kwargs["visit_probs"] = {
            ActivityLevel(str(k).lower()): float(v) for k, v in eco["visit_probs"].items()
        }
    sim = SimulationConfig(**sim_kwargs)

    behavior = _parse_behavior(eco["behavior"]) if "behavior" in eco else None
    world = WorldConfig(
        n_users=n_users,
        mean_degree=float(eco.get("mean_degree", 20.0)),
        rewire_prob=float(eco.get("rewire_prob", 0.1)),
        cohort_mix=dict(eco.get("cohort_mix", DEFAULT_COHORT_MIX)),
        behavior=behavior,
        sim=sim,
    )

    timeline = dict(doc.get("timeline", {}))
    _check_keys(timeline, _TIMELINE_KEYS, "timeline")
    u = int(timeline.get("u", 28))
    w = int(timeline.get("w", 7))
    sim_ticks = int(eco.get("ticks", 5 + u + w))

    edges = BucketEdges(tuple(int(v) for v in doc.get("bucket_edges", (0, 1, 2, 5, 10, 25))))

    model_raw = dict(doc.get("model", {}))
    _check_keys(model_raw, _MODEL_KEYS, "model")
    gbt_raw = dict(model_raw.get("gbt", {}))
    _check_keys(gbt_raw, _GBT_KEYS, "model.gbt")
    model = ModelSection(
        family=str(model_raw.get("family", "logistic")),
        l2_grid=tuple(float(x) for x in model_raw.get("l2_grid", (0.1, 1.0, 10.0))),
        use_interactions=bool(model_raw.get("use_interactions", True)),
        gbt=GbtParams(**gbt_raw),
        split_ratios=tuple(float(x) for x in model_raw.get("split_ratios", (0.7, 0.15, 0.15))),
    )
    if model.family not in ("logistic", "gbt"):
        raise ConfigurationError(f"model.family must be logistic|gbt, got {model.family!r}")

    ranking_raw = dict(doc.get("ranking", {}))
    _check_keys(ranking_raw, _RANKING_KEYS, "ranking")
    ranking = RankingSection(
        policy=str(ranking_raw.get("policy", "pcreate_param")),
        alpha=float(ranking_raw.get("alpha", 0.8)),
        alpha_grid=tuple(float(x) for x in ranking_raw.get("alpha_grid", (1.0, 0.8, 0.5))),
        sweep_seeds=int(ranking_raw.get("sweep_seeds", 5)),
    )

    exp_raw = dict(doc.get("experiment", {}))
    _check_keys(exp_raw, _EXPERIMENT_KEYS, "experiment")
    experiment = ExperimentSection(
        mode=str(exp_raw.get("mode", "consumer")),
        ticks=int(exp_raw.get("ticks", 28)),
        measurement_ticks=int(exp_raw.get("measurement_ticks", 7)),
        n_egos=int(exp_raw.get("n_egos", 40)),
        min_alters=int(exp_raw.get("min_alters", 8)),
        max_overlap=float(exp_raw.get("max_overlap", 0.2)),
        split=float(exp_raw.get("split", 0.5)),
        control_policy=str(exp_raw.get("control_policy", "consumer_only")),
        control_alpha=float(exp_raw.get("control_alpha", 1.0)),
        effect_multiplier=(float(exp_raw["effect_multiplier"])
                           if exp_raw.get("effect_multiplier") is not None else None),
    )
    if experiment.mode not in ("consumer", "ego", "sweep"):
        raise ConfigurationError(f"experiment.mode must be consumer|ego|sweep, got {experiment.mode!r}")

    return RunConfig(seed=seed, out_dir=out_dir, world=world, sim_ticks=sim_ticks,
                     u=u, w=w, bucket_edges=edges, model=model, ranking=ranking,
                     experiment=experiment)


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config file is not valid YAML: {exc}")
    return parse_config(doc or {})
