"""Supervised dataset construction from event logs.

Features come strictly from ticks in [t-u, t) and labels strictly from
[t, t+w), so nothing at or after the cut tick can leak into a feature.
The feedback count is additionally bucketized into K ordinal levels for the
linear model, with optional bucket-by-cohort interaction crosses.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .ecosystem.events import EventKind, EventLog
from .ecosystem.population import (
    ACTIVITY_ORDER,
    CONTRIBUTION_ORDER,
    STATIC_FEATURE_NAMES,
    ActivityLevel,
    ContributionLevel,
    Population,
)
from .errors import ConfigurationError, DataError, WindowingError

DEFAULT_BUCKET_EDGES = (0, 1, 2, 5, 10, 25)
DEFAULT_FEATURE_WINDOW = 28
DEFAULT_RESPONSE_WINDOW = 7

ACTIVITY_FEATURE_NAMES = ("log_visits", "log_impressions_seen", "log_feedback_given")
N_COHORT_FEATURES = 8  # 4 activity one-hots + 4 contribution one-hots


@dataclass(frozen=True)
class TimelineConfig:
    """Cut tick t with feature window [t-u, t) and response window [t, t+w)."""

    t: int
    u: int = DEFAULT_FEATURE_WINDOW
    w: int = DEFAULT_RESPONSE_WINDOW

    def __post_init__(self):
        if self.u <= 0 or self.w <= 0:
            raise ConfigurationError(f"window lengths must be positive, got u={self.u} w={self.w}")
        if self.t < self.u:
            raise ConfigurationError(f"need t >= u, got t={self.t} u={self.u}")


@dataclass(frozen=True)
class BucketEdges:
    """Feedback bucketization thresholds; edge k is the minimum of interval k."""

    values: tuple[int, ...] = DEFAULT_BUCKET_EDGES

    def __post_init__(self):
        v = self.values
        if len(v) < 2:
            raise ConfigurationError("need at least two bucket edges")
        if v[0] != 0:
            raise ConfigurationError(f"first bucket edge must be 0, got {v[0]}")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ConfigurationError(f"bucket edges must be strictly increasing: {v}")

    @property
    def n_levels(self) -> int:
        return len(self.values)


def bucketize_feedback(a: int, edges: BucketEdges) -> int:
    """Map a feedback count to its 1-based bucket level (v_k <= a < v_{k+1})."""
    if a < 0:
        raise ValueError(f"feedback count must be >= 0, got {a}")
    return int(np.searchsorted(edges.values, a, side="right"))


@dataclass(frozen=True)
class FeatureVector:
    a_i: int
    a_bucket: int
    S_i: np.ndarray            # cohort one-hots followed by profile statics
    activity_feats: np.ndarray
    interactions: np.ndarray | None  # bucket-by-cohort crosses; linear model only


@dataclass(frozen=True)
class TrainingExample:
    user_id: int
    features: FeatureVector
    label: int
    cohort: tuple[ActivityLevel, ContributionLevel]


@dataclass(frozen=True)
class FeatureSchema:
    """Feature layout shared by dataset construction and model scoring."""

    bucket_edges: BucketEdges = BucketEdges()

    @property
    def n_levels(self) -> int:
        return self.bucket_edges.n_levels

    @property
    def static_dim(self) -> int:
        return N_COHORT_FEATURES + len(STATIC_FEATURE_NAMES)

    @property
    def activity_dim(self) -> int:
        return len(ACTIVITY_FEATURE_NAMES)

    @property
    def interaction_dim(self) -> int:
        return self.n_levels * N_COHORT_FEATURES

    def static_block(self, activity: ActivityLevel, contribution: ContributionLevel,
                     profile_static: np.ndarray) -> np.ndarray:
        s = np.zeros(self.static_dim)
        s[ACTIVITY_ORDER.index(activity)] = 1.0
        s[4 + CONTRIBUTION_ORDER.index(contribution)] = 1.0
        s[N_COHORT_FEATURES:] = profile_static
        return s

    def activity_block(self, visits: int, impressions: int, feedback_given: int) -> np.ndarray:
        return np.log1p(np.array([visits, impressions, feedback_given], dtype=float))

    def interactions_for(self, bucket: int, static: np.ndarray) -> np.ndarray:
        onehot = np.zeros(self.n_levels)
        onehot[bucket - 1] = 1.0
        return np.outer(onehot, static[:N_COHORT_FEATURES]).ravel()

    def encode(self, a: int, static: np.ndarray, activity_feats: np.ndarray) -> FeatureVector:
        bucket = bucketize_feedback(a, self.bucket_edges)
        return FeatureVector(
            a_i=int(a),
            a_bucket=bucket,
            S_i=static,
            activity_feats=activity_feats,
            interactions=self.interactions_for(bucket, static),
        )

    def with_feedback(self, fv: FeatureVector, a_new: int) -> FeatureVector:
        """Re-derive the bucket and interaction features at a new feedback count."""
        bucket = bucketize_feedback(a_new, self.bucket_edges)
        return replace(
            fv,
            a_i=int(a_new),
            a_bucket=bucket,
            interactions=self.interactions_for(bucket, fv.S_i),
        )


def _window_counts(log: EventLog, n_users: int, start: int, end: int):
    feedback_received = log.count_by_user(EventKind.FEEDBACK, start, end, n_users, by="target")
    visits = log.count_by_user(EventKind.SESSION, start, end, n_users)
    impressions = log.count_by_user(EventKind.IMPRESSION, start, end, n_users)
    feedback_given = log.count_by_user(EventKind.FEEDBACK, start, end, n_users)
    creates = log.count_by_user(EventKind.CREATE, start, end, n_users)
    return feedback_received, visits, impressions, feedback_given, creates


def user_features(log: EventLog, cfg: TimelineConfig, edges: BucketEdges,
                  population: Population) -> list[tuple[int, FeatureVector]]:
    """Feature vectors for every user in the population (no labels).

    Only requires the log to cover the feature window, so it can run on the
    freshest data available for utility scoring.
    """
    if cfg.t > log.n_ticks:
        raise WindowingError(f"log covers {log.n_ticks} ticks, need features at t={cfg.t}")
    schema = FeatureSchema(edges)
    n = len(population)
    fb, visits, imps, given, _ = _window_counts(log, n, cfg.t - cfg.u, cfg.t)
    out = []
    for uid in range(n):
        profile = population.profiles[uid]
        static = schema.static_block(profile.activity_level, profile.contribution_level,
                                     profile.static_features)
        act = schema.activity_block(visits[uid], imps[uid], given[uid])
        out.append((uid, schema.encode(int(fb[uid]), static, act)))
    return out


def collect_examples(log: EventLog, cfg: TimelineConfig, edges: BucketEdges,
                     population: Population) -> list[TrainingExample]:
    """One labeled example per user active in the feature window, by user id."""
    if log.n_ticks < cfg.t + cfg.w:
        raise WindowingError(
            f"log covers {log.n_ticks} ticks but the response window needs {cfg.t + cfg.w}"
        )
    n = len(population)
    feature_mask = log.window_mask(cfg.t - cfg.u, cfg.t)
    active = np.zeros(n, dtype=bool)
    active[log.actor[feature_mask]] = True

    creates = log.count_by_user(EventKind.CREATE, cfg.t, cfg.t + cfg.w, n)
    features = user_features(log, cfg, edges, population)

    examples = []
    for uid in np.nonzero(active)[0]:
        profile = population.profiles[uid]
        examples.append(
            TrainingExample(
                user_id=int(uid),
                features=features[uid][1],
                label=int(creates[uid] > 0),
                cohort=(profile.activity_level, profile.contribution_level),
            )
        )
    return examples


def split_dataset(examples: Sequence[TrainingExample], ratios: tuple[float, float, float],
                  seed: int) -> tuple[list[TrainingExample], list[TrainingExample], list[TrainingExample]]:
    """Label-stratified exact partition into train/valid/test."""
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigurationError(f"ratios must be three nonnegative numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"ratios must sum to 1, got {sum(ratios)}")
    if not examples:
        warnings.warn("split_dataset called with no examples; returning empty splits")
        return [], [], []

    rng = np.random.default_rng(seed)
    n = len(examples)
    global_quota = _largest_remainder([r * n for r in ratios], n)

    strata: dict[int, list[int]] = {0: [], 1: []}
    for idx, ex in enumerate(examples):
        strata[ex.label].append(idx)

    per_stratum: dict[int, list[int]] = {}
    for label, idxs in strata.items():
        per_stratum[label] = _largest_remainder([r * len(idxs) for r in ratios], len(idxs))

    # Reconcile per-stratum rounding with the exact global quotas.
    for split in range(3):
        while sum(per_stratum[lbl][split] for lbl in strata) > global_quota[split]:
            donor = max(strata, key=lambda lbl: per_stratum[lbl][split])
            receiver = min(range(3), key=lambda s: sum(per_stratum[lbl][s] for lbl in strata) - global_quota[s])
            per_stratum[donor][split] -= 1
            per_stratum[donor][receiver] += 1

    splits: tuple[list[TrainingExample], ...] = ([], [], [])
    for label in sorted(strata):
        idxs = np.array(strata[label], dtype=np.int64)
        rng.shuffle(idxs)
        q = per_stratum[label]
        bounds = [0, q[0], q[0] + q[1], q[0] + q[1] + q[2]]
        for split in range(3):
            for idx in idxs[bounds[split]:bounds[split + 1]]:
                splits[split].append(examples[int(idx)])
    return splits


def design_matrix(examples: Sequence[TrainingExample], family: str,
                  use_interactions: bool = True) -> np.ndarray:
    """Stack feature vectors into a model design matrix (no intercept column).

    family "logistic": [S_i, activity, bucket one-hot(, interactions)].
    family "gbt": [raw a_i, S_i, activity]; buckets and crosses are omitted
    because the trees learn the nonlinearity themselves.
    """
    if family not in ("logistic", "gbt"):
        raise ConfigurationError(f"unknown model family {family!r}")
    rows = []
    for ex in examples:
        fv = ex.features
        if family == "gbt":
            rows.append(np.concatenate([[float(fv.a_i)], fv.S_i, fv.activity_feats]))
        else:
            n_levels = fv.interactions.shape[0] // N_COHORT_FEATURES
            onehot = np.zeros(n_levels)
            onehot[fv.a_bucket - 1] = 1.0
            blocks = [fv.S_i, fv.activity_feats, onehot]
            if use_interactions:
                blocks.append(fv.interactions)
            rows.append(np.concatenate(blocks))
    return np.vstack(rows) if rows else np.zeros((0, 0))


def labels_of(examples: Sequence[TrainingExample]) -> np.ndarray:
    return np.array([ex.label for ex in examples], dtype=float)


def _largest_remainder(raw: Sequence[float], n: int) -> list[int]:
    counts = [int(np.floor(r)) for r in raw]
    short = n - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (raw[i] - counts[i], -i), reverse=True)
    for i in order[:short]:
        counts[i] += 1
    return counts


EXAMPLES_SCHEMA = "feedlab-examples-v1"


def examples_to_csv(examples: Sequence[TrainingExample], cfg: TimelineConfig,
                    edges: BucketEdges, path) -> None:
    s_names = [f"s_{i}" for i in range(N_COHORT_FEATURES + len(STATIC_FEATURE_NAMES))]
    a_names = list(ACTIVITY_FEATURE_NAMES)
    with open(path, "w", encoding="utf-8") as f:
        f.write(
            f"# {EXAMPLES_SCHEMA} t={cfg.t} u={cfg.u} w={cfg.w} "
            f"edges={'|'.join(str(v) for v in edges.values)}\n"
        )
        f.write("user_id,activity,contribution,label,a,bucket," + ",".join(s_names + a_names) + "\n")
        for ex in examples:
            fv = ex.features
            cols = [str(ex.user_id), ex.cohort[0].value, ex.cohort[1].value, str(ex.label),
                    str(fv.a_i), str(fv.a_bucket)]
            cols += [repr(float(x)) for x in fv.S_i]
            cols += [repr(float(x)) for x in fv.activity_feats]
            f.write(",".join(cols) + "\n")


def examples_from_csv(path) -> tuple[list[TrainingExample], TimelineConfig, BucketEdges]:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if not header.startswith(f"# {EXAMPLES_SCHEMA}"):
            raise DataError(f"unrecognized examples file header: {header!r}")
        meta = dict(kv.split("=", 1) for kv in header.split()[2:])
        cfg = TimelineConfig(t=int(meta["t"]), u=int(meta["u"]), w=int(meta["w"]))
        edges = BucketEdges(tuple(int(v) for v in meta["edges"].split("|")))
        schema = FeatureSchema(edges)
        f.readline()
        examples = []
        for line in f:
            if not line.strip():
                continue
            parts = line.strip().split(",")
            uid, activity, contribution = int(parts[0]), ActivityLevel(parts[1]), ContributionLevel(parts[2])
            label, a = int(parts[3]), int(parts[4])
            s_dim = N_COHORT_FEATURES + len(STATIC_FEATURE_NAMES)
            static = np.array([float(x) for x in parts[6:6 + s_dim]])
            act = np.array([float(x) for x in parts[6 + s_dim:6 + s_dim + len(ACTIVITY_FEATURE_NAMES)]])
            examples.append(TrainingExample(uid, schema.encode(a, static, act), label,
                                            (activity, contribution)))
    return examples, cfg, edges
