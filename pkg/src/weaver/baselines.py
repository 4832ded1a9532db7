"""Comparison selection strategies that need no live model calls."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .datastore import DatasetBundle, ScoreTensor
from .errors import DatasetError, FitError
from .selection import SelectionResult, argmax_first
from .ws import WSParams, fit_supervised, posterior

__all__ = [
    "first_sample",
    "majority_vote",
    "naive_ensemble",
    "single_verifier",
    "top_k_oracle_ensemble",
    "LogRegModel",
    "logreg_fit",
    "logreg_predict",
    "naive_bayes_fit",
    "naive_bayes_select",
]


def _score_array(scores) -> np.ndarray:
    if isinstance(scores, DatasetBundle):
        scores = scores.scores
    if isinstance(scores, ScoreTensor):
        return scores.scores
    s = np.asarray(scores, dtype=float)
    return s[:, :, None] if s.ndim == 2 else s


def first_sample(bundle_or_n) -> SelectionResult:
    """Always pick the first generated response."""
    n = bundle_or_n if isinstance(bundle_or_n, (int, np.integer)) else bundle_or_n.n
    return SelectionResult(np.zeros(n, dtype=int), "first_sample")


def majority_vote(answers) -> SelectionResult:
    """Pick the earliest response carrying the most frequent answer.

    Answers are compared as exact strings after trimming whitespace.  When
    several answers tie on count, the one that appears first wins.
    """
    if answers is None:
        raise DatasetError("majority vote needs extracted answers")
    if isinstance(answers, DatasetBundle):
        answers = answers.answers
    answers = np.asarray(answers, dtype=object)
    picks = np.empty(answers.shape[0], dtype=int)
    for i, row in enumerate(answers):
        counts: dict[str, list[int]] = {}
        for j, a in enumerate(row):
            if a is None:
                raise DatasetError(f"query {i}: missing answer at response {j}")
            counts.setdefault(str(a).strip(), []).append(j)
        # dict keeps insertion order, so max() keeps the earliest group on ties
        best = max(counts.values(), key=len)
        picks[i] = best[0]
    return SelectionResult(picks, "majority_vote")


def naive_ensemble(scores) -> SelectionResult:
    """Unweighted mean of normalized verifier scores, argmax per query."""
    s = _score_array(scores)
    return SelectionResult.from_scores(s.mean(axis=2), "naive_ensemble")


def single_verifier(scores, k: int) -> SelectionResult:
    s = _score_array(scores)
    return SelectionResult.from_scores(s[:, :, k], f"verifier_{k}")


def top_k_oracle_ensemble(scores, labels, k: int) -> SelectionResult:
    """Naive ensemble over the ``k`` verifiers with the best labeled selection accuracy.

    Verifiers are ranked by their own argmax success rate; ties keep the
    original column order.
    """
    s = _score_array(scores)
    y = np.asarray(labels)
    m = s.shape[2]
    if not 1 <= k <= m:
        raise DatasetError(f"k must lie in [1, {m}], got {k}")
    rows = np.arange(s.shape[0])
    acc = np.array([y[rows, argmax_first(s[:, :, c])].mean() for c in range(m)])
    order = np.argsort(-acc, kind="stable")[:k]
    cols = np.sort(order)
    res = SelectionResult.from_scores(s[:, :, cols].mean(axis=2), f"top_{k}_oracle")
    return res


@dataclass(frozen=True)
class LogRegModel:
    weights: np.ndarray
    bias: float
    trained_on: str = "continuous"
    iterations: int = 0
    grad_norm: float = 0.0

    def to_dict(self) -> dict:
        return {
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
            "trained_on": self.trained_on,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
        }


def logreg_fit(
    features,
    labels,
    l2: float = 1e-4,
    train_fraction: float = 1.0,
    seed: int = 0,
    max_iters: int = 10_000,
    gtol: float = 1e-6,
) -> LogRegModel:
    """L2-regularized logistic regression (mean log-loss) fitted with L-BFGS.

    The bias is not penalized.  When ``train_fraction < 1`` a seeded random
    subset of rows is used for training.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim == 3:
        x = x.reshape(-1, x.shape[2])
    y = np.asarray(labels, dtype=float).ravel()
    if x.shape[0] != y.shape[0]:
        raise FitError("features and labels disagree on row count")
    if l2 < 0:
        raise FitError("l2 must be non-negative")
    if train_fraction < 1.0:
        rng = np.random.default_rng(seed)
        rows = rng.choice(x.shape[0], size=max(1, int(round(train_fraction * x.shape[0]))),
                          replace=False)
        x, y = x[np.sort(rows)], y[np.sort(rows)]
    binary = bool(np.isin(x, (0.0, 1.0)).all())
    n, m = x.shape
    xa = np.hstack([x, np.ones((n, 1))])
    reg = np.r_[np.full(m, l2), 0.0]

    def objective(theta):
        z = xa @ theta
        # log(1 + e^z) - y z, written stably
        loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * np.sum(reg * theta**2)
        grad = xa.T @ (expit(z) - y) / n + reg * theta
        return loss, grad

    res = minimize(objective, np.zeros(m + 1), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iters, "gtol": gtol})
    theta = res.x
    if not np.all(np.isfinite(theta)):
        raise FitError("logistic regression diverged")
    gnorm = float(np.linalg.norm(objective(theta)[1]))
    return LogRegModel(theta[:m], float(theta[m]), "binary" if binary else "continuous",
                       int(res.nit), gnorm)


def logreg_predict(model: LogRegModel, features) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    return expit(x @ model.weights + model.bias)


def naive_bayes_fit(votes, labels) -> WSParams:
    """Supervised conditional-independence model from labeled votes."""
    return fit_supervised(votes, labels)


def naive_bayes_select(votes, params: WSParams) -> SelectionResult:
    return SelectionResult.from_scores(posterior(votes, params), "naive_bayes")
