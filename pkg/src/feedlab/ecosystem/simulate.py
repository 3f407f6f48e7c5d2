"""Tick-based ecosystem simulation.

One tick is one simulated day. Per tick every user may create content with
their ground-truth probability p*(recent feedback), and users sampled by their
activity level visit the feed: they receive a ranked slate of recent items
from creators they follow, and react item by item with probability
sigmoid(edge affinity + item quality).

The ranking policy is injected (duck-typed: `.kind` string and a
`score_slate(view, ctx)` method) so this module stays independent of the
ranking implementations.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit

from ..errors import ConfigurationError
from .events import NO_ID, EventKind, EventLog
from .graph import SocialGraph
from .population import ActivityLevel, Population, create_prob_vector

KNOWN_POLICY_KINDS = frozenset({"consumer_only", "heuristic", "pcreate_delta", "pcreate_param"})

DEFAULT_VISIT_PROBS: dict[ActivityLevel, float] = {
    ActivityLevel.DAILY: 0.9,
    ActivityLevel.WEEKLY: 0.25,
    ActivityLevel.MONTHLY: 0.05,
    ActivityLevel.INACTIVE: 0.01,
}


@dataclass(frozen=True)
class SimulationConfig:
    slate_size: int = 5
    item_ttl_ticks: int = 7
    feedback_memory_ticks: int = 7   # trailing window feeding p*(a)
    ea_window_ticks: int = 14        # trailing window for expected-feedback estimates
    ea_horizon_ticks: int = 7        # horizon the estimate is scaled to
    affinity_mean: float = -1.6
    affinity_sd: float = 0.8
    quality_sd: float = 1.0
    edge_rate_prior_fb: float = 1.0
    edge_rate_prior_imp: float = 5.0
    visit_probs: Mapping[ActivityLevel, float] | None = None

    def visit_prob_of(self, level: ActivityLevel) -> float:
        probs = self.visit_probs or DEFAULT_VISIT_PROBS
        return float(probs[level])


@dataclass
class SlateView:
    """Candidate arrays for one consumer's slate, aligned index-wise."""

    consumer: int
    item_ids: np.ndarray
    creators: np.ndarray
    ages: np.ndarray
    qualities: np.ndarray
    affinities: np.ndarray
    edge_slots: np.ndarray | None  # positions into the state's edge arrays

    def __len__(self) -> int:
        return int(self.item_ids.shape[0])


@dataclass
class FeedbackBoost:
    """Ground-truth effect injection: scales a consumer's feedback propensity.

    Two granularities:
      * user level: every `treated` consumer is boosted toward all creators
        passing `creator_mask` (None means everyone);
      * pair level: `pair_targets[consumer]` lists the exact creators that
        consumer is boosted toward (sorted arrays), ignoring the mask.
    """

    multiplier: float
    treated: np.ndarray | None = None          # bool per user (the acting consumer)
    creator_mask: np.ndarray | None = None
    pair_targets: dict[int, np.ndarray] | None = None

    def apply(self, consumer: int, creators: np.ndarray, p: np.ndarray) -> np.ndarray:
        if self.pair_targets is not None:
            targets = self.pair_targets.get(consumer)
            if targets is None:
                return p
            hit = np.isin(creators, targets)
            if not hit.any():
                return p
            return np.minimum(p * np.where(hit, self.multiplier, 1.0), 0.999)
        if self.treated is None or not self.treated[consumer]:
            return p
        if self.creator_mask is None:
            boosted = p * self.multiplier
        else:
            boosted = p * np.where(self.creator_mask[creators], self.multiplier, 1.0)
        return np.minimum(boosted, 0.999)


class SimContext:
    """Online feature view handed to ranking policies during simulation."""

    def __init__(self, state: "SimulationState"):
        self._state = state

    @property
    def tick(self) -> int:
        return self._state.tick

    def edge_rates(self, consumer: int, creators: np.ndarray,
                   edge_slots: np.ndarray | None = None) -> np.ndarray:
        st = self._state
        cfg = st.config
        if edge_slots is None:
            s, e = st.out_indptr[consumer], st.out_indptr[consumer + 1]
            followees = st.out_targets[s:e]
            pos = np.searchsorted(followees, creators)
            edge_slots = s + pos
        fb = st.edge_fb[edge_slots]
        imp = st.edge_imp[edge_slots]
        return (fb + cfg.edge_rate_prior_fb) / (imp + cfg.edge_rate_prior_fb + cfg.edge_rate_prior_imp)

    def ea_counts(self, creators: np.ndarray) -> np.ndarray:
        return self._state.ea_counts_vec[creators]

    def expected_feedback(self, creators: np.ndarray) -> np.ndarray:
        st = self._state
        cfg = st.config
        window_eff = max(1, min(cfg.ea_window_ticks, st.tick))
        return self.ea_counts(creators) * (cfg.ea_horizon_ticks / window_eff)

    def activity_onehot(self, consumer: int) -> np.ndarray:
        onehot = np.zeros(4)
        onehot[self._state.population.activity[consumer]] = 1.0
        return onehot


class SimulationState:
    """Mutable world state; step it with `step_simulation` or `run_simulation`."""

    def __init__(self, graph: SocialGraph, population: Population, config: SimulationConfig,
                 seed: int, affinity: np.ndarray | None = None):
        if len(population) != graph.n_users:
            raise ConfigurationError("population size must match graph size")
        self.graph = graph
        self.population = population
        self.config = config
        self.seed = int(seed)
        self.n = graph.n_users

        indptr, targets = graph._out_csr()
        self.out_indptr = indptr
        self.out_targets = targets
        if affinity is None:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0xAFF]))
            affinity = rng.normal(config.affinity_mean, config.affinity_sd, graph.n_edges)
        if affinity.shape[0] != graph.n_edges:
            raise ConfigurationError("affinity array must align with graph edges")
        self.affinity = affinity

        self.visit_prob = np.array(
            [config.visit_prob_of(p.activity_level) for p in population.profiles]
        )

        self.fb_mem = np.zeros((config.feedback_memory_ticks, self.n), dtype=np.int64)
        self.fb_ea = np.zeros((config.ea_window_ticks, self.n), dtype=np.int64)
        self.ea_counts_vec = np.zeros(self.n, dtype=np.int64)
        self.edge_fb = np.zeros(graph.n_edges, dtype=np.int64)
        self.edge_imp = np.zeros(graph.n_edges, dtype=np.int64)

        self.items_creator: list[int] = []
        self.items_tick: list[int] = []
        self.items_quality: list[float] = []
        self.recent_by_creator: list[deque[int]] = [deque() for _ in range(self.n)]
        # slate-building cache: per-creator (ids, ticks, qualities) arrays,
        # invalidated by a version counter bumped on item append/prune
        self._item_version = np.zeros(self.n, dtype=np.int64)
        self._slate_cache: dict[int, tuple[int, tuple[np.ndarray, np.ndarray, np.ndarray]]] = {}

        self.ev_tick: list[int] = []
        self.ev_kind: list[int] = []
        self.ev_actor: list[int] = []
        self.ev_target: list[int] = []
        self.ev_item: list[int] = []

        self.tick = 0
        self._ctx = SimContext(self)

    # -- event emission -----------------------------------------------------

    def _emit(self, kind: int, actor: int, target: int, item: int) -> None:
        self.ev_tick.append(self.tick)
        self.ev_kind.append(kind)
        self.ev_actor.append(actor)
        self.ev_target.append(target)
        self.ev_item.append(item)

    def event_log(self) -> EventLog:
        return EventLog(self.ev_tick, self.ev_kind, self.ev_actor, self.ev_target,
                        self.ev_item, n_ticks=self.tick, seed=self.seed)

    # -- slate construction ---------------------------------------------------

    def _creator_items(self, creator: int):
        """Cached (ids, ticks, qualities) arrays of the creator's live items."""
        dq = self.recent_by_creator[creator]
        oldest = self.tick - self.config.item_ttl_ticks
        while dq and self.items_tick[dq[0]] < oldest:
            dq.popleft()
            self._item_version[creator] += 1
        if not dq:
            return None
        version = int(self._item_version[creator])
        cached = self._slate_cache.get(creator)
        if cached is not None and cached[0] == version:
            return cached[1]
        ids = np.fromiter(dq, dtype=np.int64, count=len(dq))
        ticks = np.array([self.items_tick[i] for i in dq], dtype=np.int64)
        quals = np.array([self.items_quality[i] for i in dq])
        arrays = (ids, ticks, quals)
        self._slate_cache[creator] = (version, arrays)
        return arrays

    def build_slate(self, consumer: int) -> SlateView:
        s, e = self.out_indptr[consumer], self.out_indptr[consumer + 1]
        id_chunks, tick_chunks, qual_chunks = [], [], []
        slot_list: list[int] = []
        counts: list[int] = []
        for slot in range(s, e):
            arrays = self._creator_items(int(self.out_targets[slot]))
            if arrays is None:
                continue
            id_chunks.append(arrays[0])
            tick_chunks.append(arrays[1])
            qual_chunks.append(arrays[2])
            slot_list.append(slot)
            counts.append(arrays[0].shape[0])
        if not id_chunks:
            z = np.zeros(0, dtype=np.int64)
            return SlateView(consumer, z, z.copy(), z.copy(), np.zeros(0), np.zeros(0), z.copy())
        ids = np.concatenate(id_chunks)
        sl = np.repeat(np.asarray(slot_list, dtype=np.int64), counts)
        ages = self.tick - np.concatenate(tick_chunks)
        quality = np.concatenate(qual_chunks)
        return SlateView(consumer, ids, self.out_targets[sl], ages, quality,
                         self.affinity[sl], sl)


def slate_order(scores: np.ndarray, ages: np.ndarray, item_ids: np.ndarray) -> np.ndarray:
    """Descending score; ties broken by age ascending, then item id ascending."""
    return np.lexsort((item_ids, ages, -scores))


def _validate_policy(policy) -> None:
    kind = getattr(policy, "kind", None)
    kind_value = getattr(kind, "value", kind)
    if kind_value not in KNOWN_POLICY_KINDS:
        raise ConfigurationError(
            f"unknown ranking policy kind {kind_value!r}; expected one of {sorted(KNOWN_POLICY_KINDS)}"
        )


def run_simulation(
    state: SimulationState,
    policy_for: Callable[[int], object],
    ticks: int,
    rng: np.random.Generator,
    boost: FeedbackBoost | None = None,
) -> EventLog:
    """Advance the state by `ticks` and return the accumulated event log.

    `policy_for(user)` resolves the ranking policy applied to that user's own
    feed, which is how experiments assign different policies per arm.
    """
    if ticks < 0:
        raise ConfigurationError(f"ticks must be >= 0, got {ticks}")
    cfg = state.config
    pop = state.population
    ctx = state._ctx
    n = state.n
    memory = cfg.feedback_memory_ticks
    ea_window = cfg.ea_window_ticks
    slate_size = cfg.slate_size

    ev_tick, ev_kind = state.ev_tick, state.ev_kind
    ev_actor, ev_target, ev_item = state.ev_actor, state.ev_target, state.ev_item
    KIND_SESSION, KIND_IMP = int(EventKind.SESSION), int(EventKind.IMPRESSION)
    KIND_FB, KIND_CREATE = int(EventKind.FEEDBACK), int(EventKind.CREATE)

    for _ in range(ticks):
        t = state.tick

        # Trailing feedback counts exclude the current tick.
        recent_fb = state.fb_mem.sum(axis=0)
        state.ea_counts_vec = state.fb_ea.sum(axis=0)
        mem_slot = t % memory
        ea_slot = t % ea_window
        state.fb_mem[mem_slot, :] = 0
        state.fb_ea[ea_slot, :] = 0
        fb_mem_row = state.fb_mem[mem_slot]
        fb_ea_row = state.fb_ea[ea_slot]

        # Creation pass.
        p_create = create_prob_vector(pop.base, pop.gain, pop.rho, recent_fb)
        create_draws = rng.random(n)
        quality_draws = rng.normal(0.0, cfg.quality_sd, n)
        for uid in np.nonzero(create_draws < p_create)[0]:
            uid = int(uid)
            iid = len(state.items_creator)
            state.items_creator.append(uid)
            state.items_tick.append(t)
            state.items_quality.append(float(quality_draws[uid]))
            state.recent_by_creator[uid].append(iid)
            state._item_version[uid] += 1
            ev_tick.append(t)
            ev_kind.append(KIND_CREATE)
            ev_actor.append(uid)
            ev_target.append(NO_ID)
            ev_item.append(iid)

        # Visit pass.
        visit_draws = rng.random(n)
        for uid in np.nonzero(visit_draws < state.visit_prob)[0]:
            consumer = int(uid)
            ev_tick.append(t)
            ev_kind.append(KIND_SESSION)
            ev_actor.append(consumer)
            ev_target.append(NO_ID)
            ev_item.append(NO_ID)
            view = state.build_slate(consumer)
            if len(view) == 0:
                continue
            policy = policy_for(consumer)
            scores = policy.score_slate(view, ctx)
            order = slate_order(scores, view.ages, view.item_ids)[:slate_size]
            k = order.shape[0]

            shown_items = view.item_ids[order]
            shown_creators = view.creators[order]
            np.add.at(state.edge_imp, view.edge_slots[order], 1)
            ev_tick.extend([t] * k)
            ev_kind.extend([KIND_IMP] * k)
            ev_actor.extend([consumer] * k)
            ev_target.extend(shown_creators.tolist())
            ev_item.extend(shown_items.tolist())

            p_fb = expit(view.affinities[order] + view.qualities[order])
            if boost is not None:
                p_fb = boost.apply(consumer, shown_creators, p_fb)
            fired = np.nonzero(rng.random(k) < p_fb)[0]
            if fired.shape[0]:
                fb_creators = shown_creators[fired]
                np.add.at(state.edge_fb, view.edge_slots[order[fired]], 1)
                np.add.at(fb_mem_row, fb_creators, 1)
                np.add.at(fb_ea_row, fb_creators, 1)
                m = fired.shape[0]
                ev_tick.extend([t] * m)
                ev_kind.extend([KIND_FB] * m)
                ev_actor.extend([consumer] * m)
                ev_target.extend(fb_creators.tolist())
                ev_item.extend(shown_items[fired].tolist())

        state.tick += 1

    return state.event_log()


def new_state(graph: SocialGraph, population: Population, config: SimulationConfig | None = None,
              seed: int = 0, affinity: np.ndarray | None = None) -> SimulationState:
    return SimulationState(graph, population, config or SimulationConfig(), seed, affinity)


def step_simulation(state: SimulationState, ranking_policy, ticks: int, seed: int) -> EventLog:
    """Run `ticks` simulation steps under one ranking policy for everyone."""
    _validate_policy(ranking_policy)
    rng = np.random.default_rng(seed)
    return run_simulation(state, lambda _uid: ranking_policy, ticks, rng)
