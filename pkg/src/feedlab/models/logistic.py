"""L2-regularized linear-logistic creation model, trained by damped Newton.

The logit decomposes as mu + gamma.(static, activity) + lambda[bucket] +
beta.(bucket x cohort crosses): a global intercept, main effects, per-level
feedback coefficients, and optional interaction terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ..datagen import N_COHORT_FEATURES, FeatureVector, TrainingExample, design_matrix, labels_of
from ..errors import ContractError, DegenerateDataError
from .metrics import auprc

_JITTER = 1e-10  # keeps the Newton solve nonsingular for constant features at l2=0


def _loss_only(w: np.ndarray, X1: np.ndarray, y: np.ndarray, l2: float) -> float:
    z = X1 @ w
    loss = float(np.sum(np.logaddexp(0.0, z) - y * z))
    return loss + 0.5 * l2 * float(np.sum(w[1:] ** 2))


def logistic_loss_and_grad(w: np.ndarray, X1: np.ndarray, y: np.ndarray,
                           l2: float) -> tuple[float, np.ndarray]:
    """Regularized negative log-likelihood (sum form) and its gradient.

    `X1` carries the intercept column; the intercept is not penalized.
    """
    z = X1 @ w
    p = expit(z)
    loss = float(np.sum(np.logaddexp(0.0, z) - y * z))
    loss += 0.5 * l2 * float(np.sum(w[1:] ** 2))
    grad = X1.T @ (p - y)
    grad[1:] += l2 * w[1:]
    return loss, grad


@dataclass
class LogisticFitDiagnostics:
    losses: list[float]
    grad_norm: float
    n_iter: int
    converged: bool


def fit_logistic(X: np.ndarray, y: np.ndarray, l2: float, *, max_iter: int = 500,
                 tol: float = 1e-6) -> tuple[np.ndarray, LogisticFitDiagnostics]:
    """Fit weights [intercept, coeffs] by full-batch damped Newton.

    Stops when the gradient norm drops to `tol`, when a step can no longer
    decrease the loss in float64 (numerical convergence), or after `max_iter`
    iterations. Every accepted step is nonincreasing in the regularized loss.
    """
    y = np.asarray(y, dtype=float)
    if np.all(y == y[0] if len(y) else True):
        raise DegenerateDataError("training labels contain a single class")
    X1 = np.hstack([np.ones((X.shape[0], 1)), np.asarray(X, dtype=float)])
    d = X1.shape[1]
    w = np.zeros(d)

    loss, grad = logistic_loss_and_grad(w, X1, y, l2)
    losses = [loss]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            converged = True
            break
        p = expit(X1 @ w)
        s = np.maximum(p * (1.0 - p), 1e-12)
        H = X1.T @ (X1 * s[:, None])
        H[1:, 1:] += l2 * np.eye(d - 1)
        H += _JITTER * np.eye(d)
        step = np.linalg.solve(H, grad)

        eta = 1.0
        accepted = False
        for _ in range(40):
            cand = w - eta * step
            cand_loss = _loss_only(cand, X1, y, l2)
            if cand_loss <= loss:
                improvement = loss - cand_loss
                w = cand
                loss, grad = logistic_loss_and_grad(w, X1, y, l2)
                accepted = improvement > 1e-12 * max(1.0, abs(loss))
                losses.append(loss)
                break
            eta *= 0.5
        if not accepted:
            break  # no float64-visible descent left; numerically converged

    gnorm = float(np.linalg.norm(grad))
    return w, LogisticFitDiagnostics(losses=losses, grad_norm=gnorm,
                                     n_iter=it, converged=converged or gnorm <= tol)


@dataclass
class LogisticModel:
    """Trained logistic creation model with block-structured coefficients."""

    mu: float
    gamma: np.ndarray         # static block then activity block
    lambda_: np.ndarray       # one coefficient per feedback bucket level
    beta: np.ndarray | None   # bucket-by-cohort interactions, or None
    l2: float
    static_dim: int
    activity_dim: int
    n_levels: int
    diagnostics: LogisticFitDiagnostics | None = field(default=None, repr=False, compare=False)

    @property
    def family(self) -> str:
        return "logistic"

    @property
    def use_interactions(self) -> bool:
        return self.beta is not None

    def _check_schema(self, fv: FeatureVector) -> None:
        if fv.S_i.shape[0] + fv.activity_feats.shape[0] != self.static_dim + self.activity_dim:
            raise ContractError(
                f"feature vector dims {fv.S_i.shape[0]}+{fv.activity_feats.shape[0]} do not "
                f"match model schema {self.static_dim}+{self.activity_dim}"
            )
        if not 1 <= fv.a_bucket <= self.n_levels:
            raise ContractError(f"bucket level {fv.a_bucket} outside model levels 1..{self.n_levels}")
        if self.beta is not None:
            if fv.interactions is None or fv.interactions.shape[0] != self.beta.shape[0]:
                raise ContractError("interaction block missing or misaligned with model")

    def predict_fv(self, fv: FeatureVector) -> float:
        self._check_schema(fv)
        z = self.mu
        z += float(self.gamma[: self.static_dim] @ fv.S_i)
        z += float(self.gamma[self.static_dim:] @ fv.activity_feats)
        z += float(self.lambda_[fv.a_bucket - 1])
        if self.beta is not None:
            z += float(self.beta @ fv.interactions)
        return float(expit(z))

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        w = self.weights()
        return expit(w[0] + X @ w[1:])

    def weights(self) -> np.ndarray:
        blocks = [np.array([self.mu]), self.gamma, self.lambda_]
        if self.beta is not None:
            blocks.append(self.beta)
        return np.concatenate(blocks)

    @classmethod
    def from_weights(cls, w: np.ndarray, static_dim: int, activity_dim: int, n_levels: int,
                     use_interactions: bool, l2: float,
                     diagnostics: LogisticFitDiagnostics | None = None) -> "LogisticModel":
        main = static_dim + activity_dim
        mu = float(w[0])
        gamma = w[1:1 + main].copy()
        lam = w[1 + main:1 + main + n_levels].copy()
        beta = w[1 + main + n_levels:].copy() if use_interactions else None
        return cls(mu=mu, gamma=gamma, lambda_=lam, beta=beta, l2=l2,
                   static_dim=static_dim, activity_dim=activity_dim, n_levels=n_levels,
                   diagnostics=diagnostics)

    def to_dict(self) -> dict:
        return {
            "family": "logistic",
            "mu": self.mu,
            "gamma": self.gamma.tolist(),
            "lambda": self.lambda_.tolist(),
            "beta": None if self.beta is None else self.beta.tolist(),
            "l2": self.l2,
            "static_dim": self.static_dim,
            "activity_dim": self.activity_dim,
            "n_levels": self.n_levels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticModel":
        return cls(
            mu=float(d["mu"]),
            gamma=np.array(d["gamma"], dtype=float),
            lambda_=np.array(d["lambda"], dtype=float),
            beta=None if d["beta"] is None else np.array(d["beta"], dtype=float),
            l2=float(d["l2"]),
            static_dim=int(d["static_dim"]),
            activity_dim=int(d["activity_dim"]),
            n_levels=int(d["n_levels"]),
        )


def train_logistic(train: list[TrainingExample], valid: list[TrainingExample],
                   l2_grid: list[float], use_interactions: bool = True) -> LogisticModel:
    """Fit one model per l2 value and keep the best validation AUPRC."""
    if not train:
        raise DegenerateDataError("empty training set")
    if not l2_grid:
        raise DegenerateDataError("empty l2 grid")
    X = design_matrix(train, "logistic", use_interactions)
    y = labels_of(train)
    Xv = design_matrix(valid, "logistic", use_interactions)
    yv = labels_of(valid)

    fv = train[0].features
    static_dim = fv.S_i.shape[0]
    activity_dim = fv.activity_feats.shape[0]
    n_levels = fv.interactions.shape[0] // N_COHORT_FEATURES

    best: tuple[float, LogisticModel] | None = None
    for l2 in l2_grid:
        w, diag = fit_logistic(X, y, l2)
        model = LogisticModel.from_weights(w, static_dim, activity_dim, n_levels,
                                           use_interactions, l2, diag)
        score = auprc(model.predict_matrix(Xv), yv) if len(valid) else auprc(
            model.predict_matrix(X), y)
        if best is None or score > best[0]:
            best = (score, model)
    return best[1]
