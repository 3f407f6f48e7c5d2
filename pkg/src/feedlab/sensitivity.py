"""Per-creator feedback-sensitivity utilities from a trained creation model.

Two forms are produced for every user: level-specific slopes of the predicted
creation probability across the feedback grid, and a two-parameter exponential
decay (offset b, decay tau) fitted to those slopes in closed form through the
log transform and the normal equations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import BucketEdges, FeatureSchema, FeatureVector
from .errors import ConfigurationError, SingularDesignError
from .models.common import Model, model_hash, predict

DELTA_FLOOR = 1e-6  # log transform needs strictly positive slopes


@dataclass(frozen=True)
class LevelGrid:
    """Representative feedback values v_1..v_K (interval minimums, above zero).

    The implied baseline level v_0 is 0 feedback. The design matrix V stacks
    rows [1, v_k] for the closed-form fit.
    """

    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) < 2:
            raise ConfigurationError("level grid needs at least two levels")
        if self.values[0] <= 0:
            raise ConfigurationError(f"grid values must be positive, got {self.values[0]}")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ConfigurationError(f"grid values must be strictly increasing: {self.values}")

    @classmethod
    def from_bucket_edges(cls, edges: BucketEdges) -> "LevelGrid":
        # Drop the zero edge: it is the baseline level, not a fit point.
        return cls(tuple(float(v) for v in edges.values[1:]))

    @property
    def n_levels(self) -> int:
        return len(self.values)

    @property
    def V(self) -> np.ndarray:
        return np.column_stack([np.ones(self.n_levels), np.asarray(self.values)])

    def bucket_edges(self) -> BucketEdges:
        return BucketEdges((0,) + tuple(int(v) for v in self.values))


@dataclass(frozen=True)
class SensitivityCurve:
    user_id: int
    deltas: np.ndarray          # per-level slopes, length K
    b: float
    tau: float
    residual_rss: float
    clamped_levels: tuple[int, ...]  # 1-based levels floored before the log fit


def delta_at(model: Model, features: FeatureVector, delta_a: int, schema: FeatureSchema) -> float:
    """Change in predicted creation probability from delta_a extra feedback."""
    if delta_a < 1:
        raise ConfigurationError(f"delta_a must be >= 1, got {delta_a}")
    bumped = schema.with_feedback(features, features.a_i + delta_a)
    return predict(model, bumped) - predict(model, features)


def level_deltas(model: Model, user_features: FeatureVector, grid: LevelGrid) -> np.ndarray:
    """Per-interval slopes of predicted creation probability across the grid.

    delta_k = (P(a=v_k) - P(a=v_{k-1})) / (v_k - v_{k-1}), with v_0 = 0 and all
    non-feedback features held fixed.
    """
    schema = FeatureSchema(grid.bucket_edges())
    levels = np.concatenate([[0.0], np.asarray(grid.values)])
    preds = np.array([
        predict(model, schema.with_feedback(user_features, int(v))) for v in levels
    ])
    return np.diff(preds) / np.diff(levels)


def fit_exp_decay(grid: LevelGrid, deltas: np.ndarray,
                  floor: float = DELTA_FLOOR) -> tuple[float, float, float, tuple[int, ...]]:
    """Closed-form least squares of log(deltas) on [1, v_k].

    Slopes at or below `floor` are clamped up to it (the log transform is
    undefined otherwise) and the affected 1-based levels are reported.
    Returns (b, tau, residual_rss, clamped_levels).
    """
    deltas = np.asarray(deltas, dtype=float)
    if deltas.shape[0] != grid.n_levels:
        raise ConfigurationError(
            f"got {deltas.shape[0]} deltas for a {grid.n_levels}-level grid"
        )
    clamped = tuple(int(k + 1) for k in np.nonzero(deltas <= floor)[0])
    clipped = np.maximum(deltas, floor)
    logd = np.log(clipped)

    V = grid.V
    G = V.T @ V
    det = G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0]
    if abs(det) < 1e-12:
        raise SingularDesignError("level grid design matrix V^T V is singular")
    theta = np.linalg.solve(G, V.T @ logd)
    resid = logd - V @ theta
    return float(theta[0]), float(theta[1]), float(resid @ resid), clamped


def build_snapshot(model: Model, population_features: list[tuple[int, FeatureVector]],
                   grid: LevelGrid, floor: float = DELTA_FLOOR) -> list[SensitivityCurve]:
    """One fitted SensitivityCurve per user, in user-id order."""
    curves = []
    for user_id, fv in sorted(population_features, key=lambda p: p[0]):
        deltas = level_deltas(model, fv, grid)
        b, tau, rss, clamped = fit_exp_decay(grid, deltas, floor)
        curves.append(SensitivityCurve(user_id=user_id, deltas=deltas, b=b, tau=tau,
                                       residual_rss=rss, clamped_levels=clamped))
    return curves


SNAPSHOT_SCHEMA = "feedlab-snapshot-v1"


def snapshot_to_csv(curves: list[SensitivityCurve], grid: LevelGrid, model: Model, path,
                    floor: float = DELTA_FLOOR) -> None:
    k = grid.n_levels
    delta_cols = ",".join(f"delta_{i + 1}" for i in range(k))
    grid_str = "|".join(repr(float(v)) for v in grid.values)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# {SNAPSHOT_SCHEMA} model={model_hash(model)} grid={grid_str} floor={floor!r}\n")
        f.write(f"user_id,b,tau,{delta_cols},residual_rss,clamped_mask\n")
        for c in curves:
            mask = "".join("1" if (i + 1) in c.clamped_levels else "0" for i in range(k))
            ds = ",".join(repr(float(d)) for d in c.deltas)
            f.write(f"{c.user_id},{c.b!r},{c.tau!r},{ds},{c.residual_rss!r},{mask}\n")


def snapshot_from_csv(path) -> tuple[list[SensitivityCurve], LevelGrid]:
    from .errors import DataError

    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if not header.startswith(f"# {SNAPSHOT_SCHEMA}"):
            raise DataError(f"unrecognized snapshot header: {header!r}")
        meta = dict(kv.split("=", 1) for kv in header.split()[2:])
        grid = LevelGrid(tuple(float(v) for v in meta["grid"].split("|")))
        k = grid.n_levels
        f.readline()
        curves = []
        for line in f:
            if not line.strip():
                continue
            parts = line.strip().split(",")
            user_id = int(parts[0])
            b, tau = float(parts[1]), float(parts[2])
            deltas = np.array([float(x) for x in parts[3:3 + k]])
            rss = float(parts[3 + k])
            mask = parts[4 + k]
            clamped = tuple(i + 1 for i, ch in enumerate(mask) if ch == "1")
            curves.append(SensitivityCurve(user_id, deltas, b, tau, rss, clamped))
    return curves, grid
