"""Directed small-world follow graph.

Edges point consumer -> creator ("follows"). The generator lays a ring lattice
with the requested mean out-degree and then rewires each edge target with a
fixed probability, which keeps out-degrees exact while adding shortcuts and
preserving local clustering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, DataError


@dataclass
class SocialGraph:
    n_users: int
    edges: np.ndarray  # (m, 2) int64, rows (consumer, creator), sorted lexicographically
    seed: int
    _out: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)
    _in: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def _out_csr(self) -> tuple[np.ndarray, np.ndarray]:
        if self._out is None:
            counts = np.bincount(self.edges[:, 0], minlength=self.n_users)
            indptr = np.concatenate([[0], np.cumsum(counts)])
            # edges are sorted by source already
            self._out = (indptr.astype(np.int64), self.edges[:, 1].copy())
        return self._out

    def _in_csr(self) -> tuple[np.ndarray, np.ndarray]:
        if self._in is None:
            order = np.lexsort((self.edges[:, 0], self.edges[:, 1]))
            counts = np.bincount(self.edges[:, 1], minlength=self.n_users)
            indptr = np.concatenate([[0], np.cumsum(counts)])
            self._in = (indptr.astype(np.int64), self.edges[order, 0].copy())
        return self._in

    def followees(self, user: int) -> np.ndarray:
        indptr, targets = self._out_csr()
        return targets[indptr[user]:indptr[user + 1]]

    def followers(self, user: int) -> np.ndarray:
        indptr, sources = self._in_csr()
        return sources[indptr[user]:indptr[user + 1]]

    def out_degrees(self) -> np.ndarray:
        return np.bincount(self.edges[:, 0], minlength=self.n_users)

    def in_degrees(self) -> np.ndarray:
        return np.bincount(self.edges[:, 1], minlength=self.n_users)

    def mean_out_degree(self) -> float:
        return self.n_edges / self.n_users


def generate_graph(n_users: int, mean_degree: float, rewire_prob: float, seed: int) -> SocialGraph:
    """Generate a seeded directed small-world follow graph.

    Out-degree per node is floor(mean_degree) plus a Bernoulli extra edge for
    the fractional part, so the realized mean out-degree matches mean_degree
    in expectation (exactly, for integer mean_degree).
    """
    if n_users < 2:
        raise ConfigurationError(f"n_users must be >= 2, got {n_users}")
    if not (0 < mean_degree < n_users):
        raise ConfigurationError(
            f"mean_degree must be in (0, n_users), got {mean_degree} for n_users={n_users}"
        )
    if not (0.0 <= rewire_prob <= 1.0):
        raise ConfigurationError(f"rewire_prob must be in [0, 1], got {rewire_prob}")

    rng = np.random.default_rng(seed)
    base = int(np.floor(mean_degree))
    frac = mean_degree - base
    degrees = np.full(n_users, base, dtype=np.int64)
    if frac > 0:
        degrees += (rng.random(n_users) < frac).astype(np.int64)
    np.clip(degrees, 0, n_users - 1, out=degrees)

    # Ring lattice: k nearest neighbours, right-biased for odd degrees.
    target_sets: list[set[int]] = []
    target_lists: list[list[int]] = []
    for i in range(n_users):
        k = int(degrees[i])
        right = (k + 1) // 2
        left = k // 2
        targets = [(i + off) % n_users for off in range(1, right + 1)]
        targets += [(i - off) % n_users for off in range(1, left + 1)]
        target_lists.append(targets)
        target_sets.append(set(targets))

    if rewire_prob > 0:
        for i in range(n_users):
            s = target_sets[i]
            for t in target_lists[i]:
                if rng.random() >= rewire_prob:
                    continue
                if len(s) >= n_users - 1:
                    continue  # already follows everyone else
                while True:
                    cand = int(rng.integers(n_users))
                    if cand != i and cand not in s:
                        break
                s.discard(t)
                s.add(cand)

    rows = [(i, t) for i in range(n_users) for t in sorted(target_sets[i])]
    edges = np.array(rows, dtype=np.int64).reshape(-1, 2)
    return SocialGraph(n_users=n_users, edges=edges, seed=seed)


GRAPH_SCHEMA = "feedlab-graph-v1"


def graph_to_csv(graph: SocialGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# {GRAPH_SCHEMA} seed={graph.seed} n_users={graph.n_users}\n")
        f.write("consumer,creator\n")
        for src, dst in graph.edges:
            f.write(f"{src},{dst}\n")


def graph_from_csv(path) -> SocialGraph:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if not header.startswith(f"# {GRAPH_SCHEMA}"):
            raise DataError(f"unrecognized graph file header: {header!r}")
        meta = dict(kv.split("=") for kv in header.split()[2:])
        f.readline()  # column header
        rows = [tuple(int(x) for x in line.strip().split(",")) for line in f if line.strip()]
    edges = np.array(rows, dtype=np.int64).reshape(-1, 2)
    return SocialGraph(n_users=int(meta["n_users"]), edges=edges, seed=int(meta["seed"]))
