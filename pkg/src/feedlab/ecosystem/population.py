"""Population synthesis: cohort labels, static features, and ground-truth behavior.

Each user gets a saturating creation response p*(a) = sigmoid(base + gain * (1 - exp(-rho * a)))
in the feedback count a. The response is nondecreasing with nonincreasing
increments (diminishing returns), which is enforced numerically on every
sampled parameter triple.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from ..errors import ConfigurationError, DataError


class ActivityLevel(str, Enum):
    """How often a user visits; ordered by frequency."""

    DAILY = "daily"
    WEEKLY = "weekly"
    MONTHLY = "monthly"
    INACTIVE = "inactive"

    @property
    def rank(self) -> int:
        return _ACTIVITY_RANK[self]


class ContributionLevel(str, Enum):
    """How often a user contributes content; ordered by frequency."""

    DAILY_CONTRIB = "daily_contrib"
    WEEKLY_CONTRIB = "weekly_contrib"
    MONTHLY_CONTRIB = "monthly_contrib"
    NON_CONTRIB = "non_contrib"

    @property
    def rank(self) -> int:
        return _CONTRIB_RANK[self]


_ACTIVITY_RANK = {
    ActivityLevel.DAILY: 3,
    ActivityLevel.WEEKLY: 2,
    ActivityLevel.MONTHLY: 1,
    ActivityLevel.INACTIVE: 0,
}
_CONTRIB_RANK = {
    ContributionLevel.DAILY_CONTRIB: 3,
    ContributionLevel.WEEKLY_CONTRIB: 2,
    ContributionLevel.MONTHLY_CONTRIB: 1,
    ContributionLevel.NON_CONTRIB: 0,
}

ACTIVITY_ORDER = [
    ActivityLevel.DAILY,
    ActivityLevel.WEEKLY,
    ActivityLevel.MONTHLY,
    ActivityLevel.INACTIVE,
]
CONTRIBUTION_ORDER = [
    ContributionLevel.DAILY_CONTRIB,
    ContributionLevel.WEEKLY_CONTRIB,
    ContributionLevel.MONTHLY_CONTRIB,
    ContributionLevel.NON_CONTRIB,
]

STATIC_FEATURE_NAMES = ("log_followers", "log_following", "locale_a", "locale_b", "locale_c")


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    activity_level: ActivityLevel
    contribution_level: ContributionLevel
    static_features: np.ndarray  # aligned with STATIC_FEATURE_NAMES

    def __post_init__(self):
        if self.contribution_level.rank > self.activity_level.rank:
            raise ConfigurationError(
                f"user {self.user_id}: contribution level {self.contribution_level.value} "
                f"is more frequent than activity level {self.activity_level.value}"
            )


@dataclass(frozen=True)
class GroundTruthBehavior:
    base: float  # logit baseline; -inf allowed as a degenerate never-creates sentinel
    gain: float  # max logit lift from feedback, >= 0
    rho: float   # saturation rate, > 0

    def __post_init__(self):
        if self.gain < 0:
            raise ConfigurationError(f"gain must be >= 0, got {self.gain}")
        if not self.rho > 0:
            raise ConfigurationError(f"rho must be > 0, got {self.rho}")


def true_create_prob(behavior: GroundTruthBehavior, feedback_count: float) -> float:
    """Ground-truth per-tick creation probability at a given feedback count."""
    if feedback_count < 0:
        raise ValueError(f"feedback_count must be >= 0, got {feedback_count}")
    z = behavior.base + behavior.gain * (1.0 - np.exp(-behavior.rho * feedback_count))
    return float(expit(z))


def create_prob_vector(base: np.ndarray, gain: np.ndarray, rho: np.ndarray,
                       feedback: np.ndarray) -> np.ndarray:
    return expit(base + gain * (1.0 - np.exp(-rho * feedback)))


@dataclass(frozen=True)
class BehaviorRange:
    """Uniform sampling ranges for one cohort's behavior parameters."""

    base: tuple[float, float] = (-5.0, -4.0)
    gain: tuple[float, float] = (0.5, 1.0)
    rho: tuple[float, float] = (0.6, 1.1)


# Default gain ordering mirrors the observed cohort separation: monthly
# visitors respond to feedback the most, weekly the least.
DEFAULT_BEHAVIOR_RANGES: dict[ActivityLevel, BehaviorRange] = {
    ActivityLevel.DAILY: BehaviorRange(gain=(1.0, 1.6)),
    ActivityLevel.WEEKLY: BehaviorRange(gain=(0.3, 0.7)),
    ActivityLevel.MONTHLY: BehaviorRange(gain=(1.9, 2.6), rho=(0.8, 1.2)),
    ActivityLevel.INACTIVE: BehaviorRange(gain=(0.2, 0.6)),
}

# Conditional contribution-level distribution given activity level. Only
# levels no more frequent than the activity level get mass.
DEFAULT_CONTRIBUTION_TABLE: dict[ActivityLevel, dict[ContributionLevel, float]] = {
    ActivityLevel.DAILY: {
        ContributionLevel.DAILY_CONTRIB: 0.25,
        ContributionLevel.WEEKLY_CONTRIB: 0.35,
        ContributionLevel.MONTHLY_CONTRIB: 0.25,
        ContributionLevel.NON_CONTRIB: 0.15,
    },
    ActivityLevel.WEEKLY: {
        ContributionLevel.WEEKLY_CONTRIB: 0.35,
        ContributionLevel.MONTHLY_CONTRIB: 0.35,
        ContributionLevel.NON_CONTRIB: 0.30,
    },
    ActivityLevel.MONTHLY: {
        ContributionLevel.MONTHLY_CONTRIB: 0.40,
        ContributionLevel.NON_CONTRIB: 0.60,
    },
    ActivityLevel.INACTIVE: {ContributionLevel.NON_CONTRIB: 1.0},
}

# Additive logit offsets applied to the sampled base, keyed by contribution level.
DEFAULT_CONTRIBUTION_BASE_OFFSETS: dict[ContributionLevel, float] = {
    ContributionLevel.DAILY_CONTRIB: 1.5,
    ContributionLevel.WEEKLY_CONTRIB: 0.5,
    ContributionLevel.MONTHLY_CONTRIB: -0.25,
    ContributionLevel.NON_CONTRIB: -1.0,
}

LOCALE_PROBS = (0.5, 0.3, 0.2)


class Population(Sequence):
    """Sequence of (UserProfile, GroundTruthBehavior) with vectorized views."""

    def __init__(self, profiles: list[UserProfile], behaviors: list[GroundTruthBehavior], seed: int):
        if len(profiles) != len(behaviors):
            raise ConfigurationError("profiles and behaviors must align")
        self.profiles = profiles
        self.behaviors = behaviors
        self.seed = seed
        self.base = np.array([b.base for b in behaviors])
        self.gain = np.array([b.gain for b in behaviors])
        self.rho = np.array([b.rho for b in behaviors])
        self.activity = np.array([ACTIVITY_ORDER.index(p.activity_level) for p in profiles])
        self.contribution = np.array([CONTRIBUTION_ORDER.index(p.contribution_level) for p in profiles])
        self.static = np.vstack([p.static_features for p in profiles]) if profiles else np.zeros((0, 5))

    def __len__(self) -> int:
        return len(self.profiles)

    def __getitem__(self, i):
        if isinstance(i, slice):
            raise TypeError("slicing a Population is not supported")
        return (self.profiles[i], self.behaviors[i])

    def activity_of(self, user: int) -> ActivityLevel:
        return self.profiles[user].activity_level

    def cohort_of(self, user: int) -> tuple[ActivityLevel, ContributionLevel]:
        p = self.profiles[user]
        return (p.activity_level, p.contribution_level)


def _largest_remainder_counts(fractions: Sequence[float], n: int) -> list[int]:
    raw = [f * n for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    short = n - sum(counts)
    remainders = sorted(range(len(raw)), key=lambda i: (raw[i] - counts[i], -i), reverse=True)
    for i in remainders[:short]:
        counts[i] += 1
    return counts


def _increments_nonincreasing(base: float, gain: float, rho: float, max_a: int = 80) -> bool:
    a = np.arange(max_a + 2, dtype=float)
    p = expit(base + gain * (1.0 - np.exp(-rho * a)))
    inc = np.diff(p)
    return bool(np.all(np.diff(inc) <= 1e-12))


def _compliant_gain(base: float, gain: float, rho: float) -> float:
    """Largest gain <= requested that keeps p*(a) increments nonincreasing."""
    if _increments_nonincreasing(base, gain, rho):
        return gain
    lo, hi = 0.0, gain
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if _increments_nonincreasing(base, mid, rho):
            lo = mid
        else:
            hi = mid
    return lo


def assign_population(
    graph,
    cohort_mix: Mapping[ActivityLevel | str, float],
    behavior_params: Mapping[ActivityLevel, BehaviorRange] | None,
    seed: int,
    contribution_table: Mapping[ActivityLevel, Mapping[ContributionLevel, float]] | None = None,
    contribution_offsets: Mapping[ContributionLevel, float] | None = None,
) -> Population:
    """Assign cohort labels, static features, and behavior parameters.

    Cohort counts are allocated by largest remainder and then shuffled, so the
    realized mix matches the request up to rounding. Behavior parameters are
    drawn uniformly inside the configured per-cohort ranges; gains are clamped
    down (rarely) where the sampled triple would violate diminishing returns.
    """
    mix: dict[ActivityLevel, float] = {}
    for key, frac in cohort_mix.items():
        level = key if isinstance(key, ActivityLevel) else ActivityLevel(str(key).lower())
        mix[level] = float(frac)
    total = sum(mix.values())
    if abs(total - 1.0) > 1e-9:
        raise ConfigurationError(f"cohort fractions must sum to 1, got {total}")
    if any(f < 0 for f in mix.values()):
        raise ConfigurationError("cohort fractions must be nonnegative")

    ranges = dict(DEFAULT_BEHAVIOR_RANGES)
    if behavior_params:
        ranges.update(behavior_params)
    ctable = contribution_table or DEFAULT_CONTRIBUTION_TABLE
    offsets = contribution_offsets or DEFAULT_CONTRIBUTION_BASE_OFFSETS

    n = graph.n_users
    rng = np.random.default_rng(seed)

    levels = [lvl for lvl in ACTIVITY_ORDER if lvl in mix]
    counts = _largest_remainder_counts([mix[lvl] for lvl in levels], n)
    labels = np.concatenate([np.full(c, i, dtype=np.int64) for i, c in enumerate(counts)])
    rng.shuffle(labels)

    in_deg = graph.in_degrees()
    out_deg = graph.out_degrees()
    locales = rng.choice(3, size=n, p=LOCALE_PROBS)

    profiles: list[UserProfile] = []
    behaviors: list[GroundTruthBehavior] = []
    for uid in range(n):
        activity = levels[labels[uid]]
        table = ctable[activity]
        options = list(table.keys())
        probs = np.array([table[o] for o in options], dtype=float)
        probs /= probs.sum()
        contribution = options[int(rng.choice(len(options), p=probs))]

        static = np.zeros(len(STATIC_FEATURE_NAMES))
        static[0] = np.log1p(in_deg[uid])
        static[1] = np.log1p(out_deg[uid])
        static[2 + locales[uid]] = 1.0

        r = ranges[activity]
        base = rng.uniform(*r.base) + offsets[contribution]
        gain = rng.uniform(*r.gain)
        rho = rng.uniform(*r.rho)
        gain = _compliant_gain(base, gain, rho)
        if gain < r.gain[0] - 1e-9:
            raise ConfigurationError(
                f"behavior range for {activity.value} is incompatible with diminishing "
                f"returns at base={base:.3f}, rho={rho:.3f}: max compliant gain {gain:.3f}"
            )

        profiles.append(UserProfile(uid, activity, contribution, static))
        behaviors.append(GroundTruthBehavior(base=base, gain=gain, rho=rho))

    return Population(profiles, behaviors, seed)


POPULATION_SCHEMA = "feedlab-population-v1"


def population_to_csv(population: Population, path) -> None:
    names = ",".join(STATIC_FEATURE_NAMES)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# {POPULATION_SCHEMA} seed={population.seed} n_users={len(population)}\n")
        f.write(f"user_id,activity,contribution,base,gain,rho,{names}\n")
        for profile, behavior in population:
            feats = ",".join(repr(float(x)) for x in profile.static_features)
            f.write(
                f"{profile.user_id},{profile.activity_level.value},{profile.contribution_level.value},"
                f"{behavior.base!r},{behavior.gain!r},{behavior.rho!r},{feats}\n"
            )


def population_from_csv(path) -> Population:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if not header.startswith(f"# {POPULATION_SCHEMA}"):
            raise DataError(f"unrecognized population file header: {header!r}")
        meta = dict(kv.split("=") for kv in header.split()[2:])
        f.readline()
        profiles, behaviors = [], []
        for line in f:
            if not line.strip():
                continue
            parts = line.strip().split(",")
            uid = int(parts[0])
            activity = ActivityLevel(parts[1])
            contribution = ContributionLevel(parts[2])
            base, gain, rho = (float(x) for x in parts[3:6])
            static = np.array([float(x) for x in parts[6:]])
            profiles.append(UserProfile(uid, activity, contribution, static))
            behaviors.append(GroundTruthBehavior(base, gain, rho))
    return Population(profiles, behaviors, int(meta["seed"]))
