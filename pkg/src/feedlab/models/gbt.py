"""Gradient-boosted decision trees with logistic loss and second-order split gain.

Splits are scored by the standard second-order objective
gain = 1/2 * (GL^2/(HL+lambda) + GR^2/(HR+lambda) - G^2/(H+lambda))
over histogram-binned features. Candidate thresholds are the observed feature
values (bin representatives when a feature has more than max_bins distinct
values); the predicate is x <= threshold. Ties break toward the lowest feature
index, then the lowest threshold, so training is order-invariant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from ..datagen import FeatureVector, TrainingExample, design_matrix, labels_of
from ..errors import ContractError, DegenerateDataError
from .metrics import auprc

_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class GbtParams:
    max_depth: int = 4
    learning_rate: float = 0.1
    n_trees: int = 200
    early_stopping_rounds: int = 20
    min_child_weight: float = 1.0
    reg_lambda: float = 1.0
    max_bins: int = 256


@dataclass
class Tree:
    """Flat node arrays; feature == -1 marks a leaf holding `value`."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def add_leaf(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        return len(self.feature) - 1

    def add_split(self, feature: int, threshold: float) -> int:
        self.feature.append(int(feature))
        self.threshold.append(float(threshold))
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(X.shape[0])
        node_of = np.zeros(X.shape[0], dtype=np.int64)
        feature = np.array(self.feature)
        threshold = np.array(self.threshold)
        left = np.array(self.left)
        right = np.array(self.right)
        value = np.array(self.value)
        active = np.arange(X.shape[0])
        while active.size:
            nodes = node_of[active]
            leaf_mask = feature[nodes] == -1
            leaves = active[leaf_mask]
            out[leaves] = value[node_of[leaves]]
            active = active[~leaf_mask]
            if not active.size:
                break
            nodes = node_of[active]
            goes_left = X[active, feature[nodes]] <= threshold[nodes]
            node_of[active] = np.where(goes_left, left[nodes], right[nodes])
        return out

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left,
            "right": self.right,
            "value": self.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=[int(x) for x in d["feature"]],
            threshold=[float(x) for x in d["threshold"]],
            left=[int(x) for x in d["left"]],
            right=[int(x) for x in d["right"]],
            value=[float(x) for x in d["value"]],
        )


def _bin_features(X: np.ndarray, max_bins: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Per-feature bin representative values and the binned codes.

    code j means: x lies in [values[j], values[j+1]), so "x <= values[j]" is
    exactly "code <= j" and the values double as candidate split thresholds.
    """
    n, d = X.shape
    codes = np.zeros((n, d), dtype=np.int32)
    bin_values: list[np.ndarray] = []
    for f in range(d):
        uniq = np.unique(X[:, f])
        if uniq.size > max_bins:
            qs = np.linspace(0.0, 1.0, max_bins)
            uniq = np.unique(np.quantile(X[:, f], qs))
        codes[:, f] = np.clip(np.searchsorted(uniq, X[:, f], side="right") - 1, 0, uniq.size - 1)
        bin_values.append(uniq)
    return codes, bin_values


def best_split_for_node(codes: np.ndarray, bin_values: list[np.ndarray], rows: np.ndarray,
                        g: np.ndarray, h: np.ndarray, params: GbtParams):
    """Scan all (feature, threshold) candidates; returns (gain, feature, code, threshold)."""
    g_tot = float(g[rows].sum())
    h_tot = float(h[rows].sum())
    parent = g_tot * g_tot / (h_tot + params.reg_lambda)
    best = (0.0, -1, -1, 0.0)
    for f in range(codes.shape[1]):
        values = bin_values[f]
        if values.size < 2:
            continue
        c = codes[rows, f]
        hist_g = np.bincount(c, weights=g[rows], minlength=values.size)
        hist_h = np.bincount(c, weights=h[rows], minlength=values.size)
        gl = np.cumsum(hist_g)[:-1]
        hl = np.cumsum(hist_h)[:-1]
        gr = g_tot - gl
        hr = h_tot - hl
        ok = (hl >= params.min_child_weight) & (hr >= params.min_child_weight)
        if not ok.any():
            continue
        gains = 0.5 * (gl**2 / (hl + params.reg_lambda) + gr**2 / (hr + params.reg_lambda) - parent)
        gains = np.where(ok, gains, -np.inf)
        j = int(np.argmax(gains))
        if gains[j] > best[0] + _MIN_GAIN:
            best = (float(gains[j]), f, j, float(values[j]))
    return best


def _build_tree(codes: np.ndarray, bin_values: list[np.ndarray], g: np.ndarray, h: np.ndarray,
                params: GbtParams) -> Tree:
    tree = Tree()

    def grow(rows: np.ndarray, depth: int) -> int:
        g_tot = float(g[rows].sum())
        h_tot = float(h[rows].sum())
        if depth >= params.max_depth:
            return tree.add_leaf(-g_tot / (h_tot + params.reg_lambda))
        gain, f, code, thr = best_split_for_node(codes, bin_values, rows, g, h, params)
        if f < 0 or gain <= _MIN_GAIN:
            return tree.add_leaf(-g_tot / (h_tot + params.reg_lambda))
        node = tree.add_split(f, thr)
        left_mask = codes[rows, f] <= code
        tree.left[node] = grow(rows[left_mask], depth + 1)
        tree.right[node] = grow(rows[~left_mask], depth + 1)
        return node

    grow(np.arange(codes.shape[0]), 0)
    return tree


@dataclass
class GbtModel:
    """Boosted ensemble; prediction is sigmoid(base_margin + lr * sum of leaf scores)."""

    trees: list[Tree]
    learning_rate: float
    base_margin: float
    feat_dim: int
    params: GbtParams = field(default_factory=GbtParams)
    best_valid_auprc: float | None = field(default=None, compare=False)

    @property
    def family(self) -> str:
        return "gbt"

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def raw_vector(self, fv: FeatureVector) -> np.ndarray:
        x = np.concatenate([[float(fv.a_i)], fv.S_i, fv.activity_feats])
        if x.shape[0] != self.feat_dim:
            raise ContractError(
                f"feature vector dim {x.shape[0]} does not match model schema {self.feat_dim}"
            )
        return x

    def predict_fv(self, fv: FeatureVector) -> float:
        x = self.raw_vector(fv)[None, :]
        return float(self.predict_matrix(x)[0])

    def margin_matrix(self, X: np.ndarray) -> np.ndarray:
        if X.shape[1] != self.feat_dim:
            raise ContractError(
                f"design matrix has {X.shape[1]} features, model expects {self.feat_dim}"
            )
        margin = np.full(X.shape[0], self.base_margin)
        for tree in self.trees:
            margin += self.learning_rate * tree.predict(X)
        return margin

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        return expit(self.margin_matrix(X))

    def to_dict(self) -> dict:
        return {
            "family": "gbt",
            "learning_rate": self.learning_rate,
            "base_margin": self.base_margin,
            "feat_dim": self.feat_dim,
            "params": {
                "max_depth": self.params.max_depth,
                "learning_rate": self.params.learning_rate,
                "n_trees": self.params.n_trees,
                "early_stopping_rounds": self.params.early_stopping_rounds,
                "min_child_weight": self.params.min_child_weight,
                "reg_lambda": self.params.reg_lambda,
                "max_bins": self.params.max_bins,
            },
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbtModel":
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            learning_rate=float(d["learning_rate"]),
            base_margin=float(d["base_margin"]),
            feat_dim=int(d["feat_dim"]),
            params=GbtParams(**d["params"]),
        )


def fit_gbt(X: np.ndarray, y: np.ndarray, X_valid: np.ndarray | None = None,
            y_valid: np.ndarray | None = None, params: GbtParams | None = None) -> GbtModel:
    """Boost logistic-loss trees with early stopping on validation AUPRC."""
    params = params or GbtParams()
    y = np.asarray(y, dtype=float)
    if len(y) == 0 or np.all(y == y[0]):
        raise DegenerateDataError("training labels contain a single class")

    base_margin = float(logit(np.clip(y.mean(), 1e-12, 1 - 1e-12)))
    codes, bin_values = _bin_features(X, params.max_bins)

    margin = np.full(X.shape[0], base_margin)
    valid_margin = None if X_valid is None else np.full(X_valid.shape[0], base_margin)

    trees: list[Tree] = []
    best_score = -np.inf
    best_n = 0
    since_best = 0
    for _ in range(params.n_trees):
        p = expit(margin)
        g = p - y
        h = np.maximum(p * (1.0 - p), 1e-12)
        tree = _build_tree(codes, bin_values, g, h, params)
        trees.append(tree)
        margin += params.learning_rate * tree.predict(X)

        if valid_margin is not None and len(y_valid):
            valid_margin += params.learning_rate * tree.predict(X_valid)
            score = auprc(expit(valid_margin), y_valid)
            if score > best_score + 1e-12:
                best_score = score
                best_n = len(trees)
                since_best = 0
            else:
                since_best += 1
                if since_best >= params.early_stopping_rounds:
                    break
        else:
            best_n = len(trees)

    model = GbtModel(trees=trees[:best_n], learning_rate=params.learning_rate,
                     base_margin=base_margin, feat_dim=X.shape[1], params=params)
    if best_score > -np.inf:
        model.best_valid_auprc = float(best_score)
    return model


def train_gbt(train: list[TrainingExample], valid: list[TrainingExample],
              params: GbtParams | None = None) -> GbtModel:
    """Train on raw features: unbucketized feedback, no interaction crosses."""
    if not train:
        raise DegenerateDataError("empty training set")
    X = design_matrix(train, "gbt")
    y = labels_of(train)
    Xv = design_matrix(valid, "gbt") if valid else None
    yv = labels_of(valid) if valid else None
    return fit_gbt(X, y, Xv, yv, params)
