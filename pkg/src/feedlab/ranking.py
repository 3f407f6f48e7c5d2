"""Creator-aware feed scoring.

The final score blends an estimated consumer utility with a creator-side
utility: score = alpha * CU + (1 - alpha) * pFeedback * C. Four policies set C:
consumer-only (no creator term), the exponential heuristic exp(-E(a)), the
first-level sensitivity delta, and the parametric form exp(tau * E(a) + b)
read from an offline utility snapshot. The snapshot file is the only offline
artifact the ranking side consumes.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Protocol, Sequence

import numpy as np
from scipy.special import expit

from .ecosystem.events import EventKind, EventLog, FeedItem  # noqa: F401 (FeedItem re-exported)
from .errors import ConfigurationError
from .models.logistic import fit_logistic
from .sensitivity import SensitivityCurve

DEFAULT_EA_HORIZON = 7
_EXP_CAP = 30.0  # keeps exp() finite for fitted tau > 0


class PolicyKind(str, Enum):
    CONSUMER_ONLY = "consumer_only"
    HEURISTIC = "heuristic"
    PCREATE_DELTA = "pcreate_delta"
    PCREATE_PARAM = "pcreate_param"


# -- creator-side utilities ---------------------------------------------------


def heuristic_utility(e_a: float | np.ndarray) -> float | np.ndarray:
    """Exponential-decay heuristic: creators expecting little feedback score high."""
    if np.any(np.asarray(e_a) < 0):
        raise ConfigurationError("expected feedback must be >= 0")
    return np.exp(-np.asarray(e_a)) if isinstance(e_a, np.ndarray) else float(np.exp(-e_a))


def pcreate_utility_delta(curve: SensitivityCurve) -> float:
    """First-level sensitivity delta, floored at zero."""
    return max(float(curve.deltas[0]), 0.0)


def pcreate_utility_param(curve: SensitivityCurve, e_a: float) -> float:
    """Parametric utility exp(tau * E(a) + b) at the expected feedback level."""
    if e_a < 0:
        raise ConfigurationError("expected feedback must be >= 0")
    return float(np.exp(min(curve.tau * e_a + curve.b, _EXP_CAP)))


def feed_score(consumer_utility, p_feedback, creator_utility, policy: "RankingPolicy"):
    """Blend per the ranking equation; consumer-only ignores the creator term."""
    if policy.kind is PolicyKind.CONSUMER_ONLY:
        return consumer_utility
    a = policy.alpha
    return a * consumer_utility + (1.0 - a) * p_feedback * creator_utility


# -- offline snapshot view ------------------------------------------------------


class UtilitySnapshot:
    """Per-creator sensitivity parameters, indexable by user id."""

    def __init__(self, user_ids: np.ndarray, b: np.ndarray, tau: np.ndarray,
                 delta1: np.ndarray):
        n = int(user_ids.max()) + 1 if user_ids.size else 0
        self.b = np.zeros(n)
        self.tau = np.zeros(n)
        self.delta1 = np.zeros(n)
        self.b[user_ids] = b
        self.tau[user_ids] = tau
        self.delta1[user_ids] = delta1
        self.n_users = n

    @classmethod
    def from_curves(cls, curves: Sequence[SensitivityCurve]) -> "UtilitySnapshot":
        ids = np.array([c.user_id for c in curves], dtype=np.int64)
        return cls(
            ids,
            np.array([c.b for c in curves]),
            np.array([c.tau for c in curves]),
            np.array([float(c.deltas[0]) for c in curves]),
        )

    @classmethod
    def from_csv(cls, path) -> "UtilitySnapshot":
        from .sensitivity import snapshot_from_csv

        curves, _ = snapshot_from_csv(path)
        return cls.from_curves(curves)


# -- scoring context ------------------------------------------------------------


class SlateContext(Protocol):
    """Online features a policy may read while scoring a slate."""

    def edge_rates(self, consumer: int, creators: np.ndarray,
                   edge_slots: np.ndarray | None = None) -> np.ndarray: ...

    def ea_counts(self, creators: np.ndarray) -> np.ndarray: ...

    def expected_feedback(self, creators: np.ndarray) -> np.ndarray: ...

    def activity_onehot(self, consumer: int) -> np.ndarray: ...


@dataclass
class StaticSlateContext:
    """Dict-backed context for offline scoring and tests."""

    edge_rate_table: dict[tuple[int, int], float] | None = None
    ea_table: dict[int, float] | None = None
    activity_table: dict[int, np.ndarray] | None = None
    default_rate: float = 0.2
    ea_horizon: int = DEFAULT_EA_HORIZON
    ea_window: int = 14

    def edge_rates(self, consumer, creators, edge_slots=None):
        table = self.edge_rate_table or {}
        return np.array([table.get((consumer, int(c)), self.default_rate) for c in creators])

    def ea_counts(self, creators):
        table = self.ea_table or {}
        return np.array([table.get(int(c), 0.0) for c in creators])

    def expected_feedback(self, creators):
        return self.ea_counts(creators) * (self.ea_horizon / self.ea_window)

    def activity_onehot(self, consumer):
        table = self.activity_table or {}
        return table.get(consumer, np.zeros(4))


# -- pFeedback / consumer-utility estimators -----------------------------------


class SmoothedRatePredictor:
    """Prior-smoothed per-edge feedback rate; the untrained bootstrap estimator."""

    def predict(self, view, ctx: SlateContext) -> np.ndarray:
        return ctx.edge_rates(view.consumer, view.creators, view.edge_slots)


class LogisticFeedbackPredictor:
    """Logistic model on (edge rate, trailing creator feedback, consumer activity)."""

    def __init__(self, weights: np.ndarray):
        self.weights = np.asarray(weights, dtype=float)

    def features(self, view, ctx: SlateContext) -> np.ndarray:
        rates = ctx.edge_rates(view.consumer, view.creators, view.edge_slots)
        ea = np.log1p(ctx.ea_counts(view.creators))
        onehot = ctx.activity_onehot(view.consumer)
        act = np.tile(onehot, (len(rates), 1))
        return np.column_stack([rates, ea, act])

    def predict(self, view, ctx: SlateContext) -> np.ndarray:
        X = self.features(view, ctx)
        w = self.weights
        return expit(w[0] + X @ w[1:])


def train_feedback_model(log: EventLog, graph, population, *, ea_window: int = 14,
                         prior_fb: float = 1.0, prior_imp: float = 5.0, l2: float = 1.0,
                         max_rows: int = 200_000) -> LogisticFeedbackPredictor:
    """Fit the impression->feedback model from a logged simulation.

    Features are reconstructed exactly as they would have been available at
    serve time: counters only reflect events before each impression.
    """
    n = graph.n_users
    indptr, targets = graph._out_csr()
    slot_of: dict[tuple[int, int], int] = {}
    for consumer in range(n):
        for slot in range(indptr[consumer], indptr[consumer + 1]):
            slot_of[(consumer, int(targets[slot]))] = slot

    # Trailing per-creator feedback counts by tick (exclusive of the tick itself).
    fb_tc = np.zeros((log.n_ticks + 1, n), dtype=np.int64)
    fb_mask = log.kind_mask(EventKind.FEEDBACK)
    np.add.at(fb_tc, (log.tick[fb_mask], log.target[fb_mask]), 1)
    cum = np.cumsum(fb_tc, axis=0)

    def trailing(tick: int) -> np.ndarray:
        lo = max(0, tick - ea_window)
        return cum[tick] - cum[lo]

    fired = set(zip(log.tick[fb_mask].tolist(),
                    log.actor[fb_mask].tolist(),
                    log.item[fb_mask].tolist()))

    imp_idx = np.nonzero(log.kind_mask(EventKind.IMPRESSION))[0]
    if imp_idx.size == 0:
        raise ConfigurationError("log contains no impressions to train on")
    stride = max(1, imp_idx.size // max_rows)

    edge_fb = np.zeros(graph.n_edges, dtype=np.int64)
    edge_imp = np.zeros(graph.n_edges, dtype=np.int64)
    activity_eye = np.eye(4)

    rows, labels = [], []
    current_tick = -1
    trail = None
    for count, i in enumerate(imp_idx):
        tick = int(log.tick[i])
        actor = int(log.actor[i])
        creator = int(log.target[i])
        item = int(log.item[i])
        slot = slot_of[(actor, creator)]
        fb = (tick, actor, item) in fired
        if count % stride == 0:
            if tick != current_tick:
                trail = trailing(tick)
                current_tick = tick
            rate = (edge_fb[slot] + prior_fb) / (edge_imp[slot] + prior_fb + prior_imp)
            rows.append([rate, np.log1p(trail[creator]),
                         *activity_eye[population.activity[actor]]])
            labels.append(1.0 if fb else 0.0)
        edge_imp[slot] += 1
        if fb:
            edge_fb[slot] += 1

    X = np.array(rows)
    y = np.array(labels)
    w, _ = fit_logistic(X, y, l2)
    return LogisticFeedbackPredictor(w)


# -- policies -------------------------------------------------------------------


@dataclass
class RankingPolicy:
    """Base policy: holds the blend weight and the shared engagement estimator."""

    kind: PolicyKind
    alpha: float
    predictor: object
    snapshot: UtilitySnapshot | None = None

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigurationError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.kind in (PolicyKind.PCREATE_DELTA, PolicyKind.PCREATE_PARAM) and self.snapshot is None:
            raise ConfigurationError(f"policy {self.kind.value} requires a utility snapshot")

    def components(self, view, ctx: SlateContext):
        """(consumer_utility, p_feedback, creator_utility, expected_feedback) arrays."""
        cu = np.asarray(self.predictor.predict(view, ctx), dtype=float)
        pf = cu  # feedback is the engagement event this lab models
        k = self.kind
        if k is PolicyKind.CONSUMER_ONLY:
            zeros = np.zeros(len(cu))
            return cu, pf, zeros, zeros
        if k is PolicyKind.HEURISTIC:
            ea = np.asarray(ctx.expected_feedback(view.creators), dtype=float)
            return cu, pf, np.exp(-ea), ea
        if k is PolicyKind.PCREATE_DELTA:
            c = np.maximum(self.snapshot.delta1[view.creators], 0.0)
            return cu, pf, c, np.zeros(len(cu))
        ea = np.asarray(ctx.expected_feedback(view.creators), dtype=float)
        z = self.snapshot.tau[view.creators] * ea + self.snapshot.b[view.creators]
        return cu, pf, np.exp(np.minimum(z, _EXP_CAP)), ea

    def score_slate(self, view, ctx: SlateContext) -> np.ndarray:
        cu, pf, c, _ = self.components(view, ctx)
        return np.asarray(feed_score(cu, pf, c, self), dtype=float)


def make_policy(kind: PolicyKind | str, alpha: float, predictor,
                snapshot: UtilitySnapshot | None = None) -> RankingPolicy:
    kind = PolicyKind(kind)
    return RankingPolicy(kind=kind, alpha=alpha, predictor=predictor, snapshot=snapshot)


# -- ranking --------------------------------------------------------------------


@dataclass(frozen=True)
class ScoredItem:
    item: FeedItem
    consumer_utility: float
    p_feedback: float
    creator_utility: float
    expected_feedback: float
    final_score: float


@dataclass
class _ItemView:
    consumer: int
    item_ids: np.ndarray
    creators: np.ndarray
    ages: np.ndarray
    qualities: np.ndarray
    edge_slots: np.ndarray | None = None


def rank_feed(candidates: Sequence[FeedItem], consumer: int, policy: RankingPolicy,
              context: SlateContext | None = None) -> list[ScoredItem]:
    """Score and order one consumer's slate.

    Candidates are assumed to come from creators the consumer follows.
    Descending final score; ties break by item age ascending then item id.
    """
    if not candidates:
        return []
    context = context or StaticSlateContext()
    view = _ItemView(
        consumer=consumer,
        item_ids=np.array([it.item_id for it in candidates], dtype=np.int64),
        creators=np.array([it.creator_id for it in candidates], dtype=np.int64),
        ages=np.array([it.age_ticks for it in candidates], dtype=np.int64),
        qualities=np.array([it.quality for it in candidates]),
    )
    cu, pf, c, ea = policy.components(view, context)
    scores = np.asarray(feed_score(cu, pf, c, policy), dtype=float)
    order = np.lexsort((view.item_ids, view.ages, -scores))
    return [
        ScoredItem(
            item=candidates[int(i)],
            consumer_utility=float(cu[i]),
            p_feedback=float(pf[i]),
            creator_utility=float(c[i]),
            expected_feedback=float(ea[i]),
            final_score=float(scores[i]),
        )
        for i in order
    ]


def estimate_expected_feedback(log: EventLog, creator: int, window_ticks: int,
                               horizon_ticks: int = DEFAULT_EA_HORIZON) -> float:
    """Trailing-window feedback count scaled to the utility horizon."""
    if window_ticks < 1:
        raise ConfigurationError(f"window_ticks must be >= 1, got {window_ticks}")
    window_eff = min(window_ticks, log.n_ticks) or 1
    mask = log.kind_mask(EventKind.FEEDBACK) & log.window_mask(log.n_ticks - window_eff, log.n_ticks)
    count = int(np.sum(log.target[mask] == creator))
    return count * horizon_ticks / window_eff


# -- offline alpha sweep ----------------------------------------------------------


def gini(values: np.ndarray) -> float:
    """Gini coefficient of a nonnegative distribution (0 when all equal or empty)."""
    x = np.sort(np.asarray(values, dtype=float))
    total = x.sum()
    if x.size == 0 or total <= 0:
        return 0.0
    ranks = np.arange(1, x.size + 1)
    return float(2.0 * (ranks * x).sum() / (x.size * total) - (x.size + 1) / x.size)


def top_quartile_share(fb_by_creator: np.ndarray, sensitivity: np.ndarray) -> float:
    """Share of total feedback received by the top-quartile-sensitivity creators."""
    n = sensitivity.shape[0]
    q = max(1, n // 4)
    order = np.lexsort((np.arange(n), -sensitivity))
    top = order[:q]
    total = fb_by_creator.sum()
    return float(fb_by_creator[top].sum() / total) if total > 0 else 0.0


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    policy: str
    consumer_ctr: float
    viral_actions: float
    feedback_gini: float
    top_quartile_feedback_share: float
    seeds_used: tuple[int, ...]


def sweep_alpha(world, artifacts, policy_kind: PolicyKind | str, alpha_grid: Sequence[float],
                *, ticks: int, measurement_ticks: int, n_seeds: int = 5,
                base_seed: int = 0) -> list[SweepRow]:
    """Trade-off table: one row per alpha, averaged over independent seeded runs."""
    from . import lab  # local import: lab orchestrates both this module and the simulator

    if not alpha_grid:
        raise ConfigurationError("alpha grid must be nonempty")
    if any(not 0.0 <= a <= 1.0 for a in alpha_grid):
        raise ConfigurationError(f"alpha grid must lie in [0, 1]: {alpha_grid}")
    kind = PolicyKind(policy_kind)
    rows = []
    for alpha in alpha_grid:
        ctrs, virals, ginis, shares, seeds = [], [], [], [], []
        for s in range(n_seeds):
            seed = base_seed + 1000 * s
            policy = lab.make_policy_from_artifacts(kind, alpha, artifacts)
            log = lab.run_policy_sim(world, policy, ticks, seed)
            start = log.n_ticks - measurement_ticks
            imp = float(np.sum(log.kind_mask(EventKind.IMPRESSION) & log.window_mask(start, log.n_ticks)))
            fb_mask = log.kind_mask(EventKind.FEEDBACK) & log.window_mask(start, log.n_ticks)
            fb_by_creator = np.bincount(log.target[fb_mask], minlength=world.graph.n_users).astype(float)
            fb = float(fb_by_creator.sum())
            ctrs.append(fb / imp if imp else 0.0)
            virals.append(fb)
            ginis.append(gini(fb_by_creator))
            shares.append(top_quartile_share(fb_by_creator, artifacts.snapshot.delta1))
            seeds.append(seed)
        rows.append(SweepRow(
            alpha=float(alpha),
            policy=kind.value,
            consumer_ctr=float(np.mean(ctrs)),
            viral_actions=float(np.mean(virals)),
            feedback_gini=float(np.mean(ginis)),
            top_quartile_feedback_share=float(np.mean(shares)),
            seeds_used=tuple(seeds),
        ))
    return rows


SWEEP_SCHEMA = "feedlab-sweep-v1"


def sweep_to_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# {SWEEP_SCHEMA}\n")
        f.write("alpha,policy,consumer_ctr,viral_actions,feedback_gini,"
                "top_quartile_feedback_share,seeds_used\n")
        for r in rows:
            seeds = "|".join(str(s) for s in r.seeds_used)
            f.write(f"{r.alpha!r},{r.policy},{r.consumer_ctr!r},{r.viral_actions!r},"
                    f"{r.feedback_gini!r},{r.top_quartile_feedback_share!r},{seeds}\n")
