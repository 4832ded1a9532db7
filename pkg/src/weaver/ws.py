"""Latent-variable label model over binary verifier votes.

Each response has a hidden correctness label ``Y`` with prior ``pi``.  Verifier
``k`` votes ``S_k`` with true-positive rate ``tpr[k] = Pr(S_k=1 | Y=1)`` and
true-negative rate ``tnr[k] = Pr(S_k=0 | Y=0)``, independently of the other
verifiers given ``Y``.  Accuracies are fitted without labels by matching the
empirical pairwise and marginal vote frequencies to the ones the model implies;
only the prior is taken from a small labeled dev set.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

from .datastore import DatasetBundle, LabelSet
from .errors import FitError, WeakSupervisionWarning
from .preprocess import VoteTensor
from .selection import SelectionResult

__all__ = [
    "EPS",
    "WSParams",
    "MomentMatrices",
    "FitConfig",
    "prior_matrix",
    "estimate_moments",
    "estimate_prior",
    "moment_loss",
    "fit_accuracies",
    "fit_supervised",
    "posterior",
    "select",
    "export_pseudolabels",
    "read_pseudolabels",
]

EPS = 1e-6


def _clamp(p):
    return np.clip(p, EPS, 1.0 - EPS)


def _vote_matrix(votes) -> np.ndarray:
    if isinstance(votes, VoteTensor):
        return votes.flat()
    v = np.asarray(votes)
    return v.reshape(-1, v.shape[-1]) if v.ndim > 2 else np.atleast_2d(v)


@dataclass(frozen=True)
class WSParams:
    prior: float
    tpr: np.ndarray
    tnr: np.ndarray
    ids: tuple[str, ...] = ()
    converged: bool = True
    final_loss: float = float("nan")
    iterations: int = 0

    def __post_init__(self):
        tpr = _clamp(np.asarray(self.tpr, dtype=float).ravel())
        tnr = _clamp(np.asarray(self.tnr, dtype=float).ravel())
        if tpr.shape != tnr.shape:
            raise FitError("tpr and tnr must have the same length")
        object.__setattr__(self, "tpr", tpr)
        object.__setattr__(self, "tnr", tnr)
        object.__setattr__(self, "prior", float(_clamp(self.prior)))
        if not self.ids:
            object.__setattr__(self, "ids", tuple(f"v{k}" for k in range(tpr.size)))
        elif len(self.ids) != tpr.size:
            raise FitError("ids must align with the accuracy arrays")

    @property
    def m(self) -> int:
        return self.tpr.size

    @property
    def mu(self) -> np.ndarray:
        """``(2m, 2)`` matrix with ``mu[2k + a, b] = Pr(S_k = a | Y = b)``."""
        mu = np.empty((2 * self.m, 2))
        mu[0::2, 0] = self.tnr
        mu[1::2, 0] = 1.0 - self.tnr
        mu[0::2, 1] = 1.0 - self.tpr
        mu[1::2, 1] = self.tpr
        return mu

    def to_dict(self) -> dict:
        return {
            "prior": self.prior,
            "verifiers": [
                {"id": i, "tpr": float(a), "tnr": float(b)}
                for i, a, b in zip(self.ids, self.tpr, self.tnr)
            ],
            "converged": self.converged,
            "final_loss": self.final_loss,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "WSParams":
        vs = doc["verifiers"]
        return cls(
            doc["prior"],
            np.array([v["tpr"] for v in vs], dtype=float),
            np.array([v["tnr"] for v in vs], dtype=float),
            tuple(v["id"] for v in vs),
            bool(doc.get("converged", True)),
            float(doc.get("final_loss", float("nan"))),
            int(doc.get("iterations", 0)),
        )


@dataclass(frozen=True)
class MomentMatrices:
    """Empirical second-moment matrix of one-hot encoded votes.

    ``O[2k + a, 2l + b] = Pr(S_k = a, S_l = b)``; the 2x2 diagonal blocks hold
    ``diag(Pr(S_k = 0), Pr(S_k = 1))``.
    """

    O: np.ndarray
    rows: int = 0

    @property
    def m(self) -> int:
        return self.O.shape[0] // 2

    def off_block_mask(self) -> np.ndarray:
        mask = np.ones_like(self.O, dtype=bool)
        for k in range(self.m):
            mask[2 * k : 2 * k + 2, 2 * k : 2 * k + 2] = False
        return mask


def prior_matrix(prior: float) -> np.ndarray:
    return np.diag([1.0 - prior, prior])


def estimate_moments(votes) -> MomentMatrices:
    x = _vote_matrix(votes).astype(float)
    if x.shape[0] == 0:
        raise FitError("no vote rows to estimate moments from")
    z = np.empty((x.shape[0], 2 * x.shape[1]))
    z[:, 0::2] = 1.0 - x
    z[:, 1::2] = x
    return MomentMatrices(z.T @ z / x.shape[0], x.shape[0])


def estimate_prior(labels) -> float:
    """Mean label over dev responses, clamped to ``[EPS, 1 - EPS]``.

    Accepts a :class:`LabelSet` (its dev slice is used) or a label array.
    """
    y = labels.dev_labels() if isinstance(labels, LabelSet) else np.asarray(labels).ravel()
    if y.size == 0:
        raise FitError("empty dev set: cannot estimate the class prior")
    return float(_clamp(y.mean()))


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 0.5
    max_iters: int = 2000
    tolerance: float = 1e-9
    init: str = "heuristic"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.max_iters <= 0 or self.tolerance <= 0:
            raise FitError("learning_rate, max_iters and tolerance must be positive")
        if self.init not in ("heuristic", "majority_seeded"):
            raise FitError(f"unknown init {self.init!r}")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "max_iters": self.max_iters,
            "tolerance": self.tolerance,
            "init": self.init,
            "seed": self.seed,
        }


def _mu(tpr, tnr):
    mu = np.empty((2 * tpr.size, 2))
    mu[0::2, 0] = tnr
    mu[1::2, 0] = 1.0 - tnr
    mu[0::2, 1] = 1.0 - tpr
    mu[1::2, 1] = tpr
    return mu


def _loss_and_grad(tpr, tnr, O, mask, P):
    """Moment-matching loss and its gradient w.r.t. (tpr, tnr)."""
    mu = _mu(tpr, tnr)
    resid = np.where(mask, O - mu @ P @ mu.T, 0.0)
    marg = np.diag(O) - (mu @ P).sum(axis=1)
    loss = float((resid**2).sum() + (marg**2).sum())
    g = -4.0 * resid @ mu @ P - 2.0 * marg[:, None] * np.diag(P)[None, :]
    g_tpr = g[1::2, 1] - g[0::2, 1]
    g_tnr = g[0::2, 0] - g[1::2, 0]
    return loss, g_tpr, g_tnr


def moment_loss(params: WSParams, moments: MomentMatrices) -> float:
    """Off-diagonal pairwise mismatch plus marginal mismatch for ``params``."""
    loss, _, _ = _loss_and_grad(
        params.tpr, params.tnr, moments.O, moments.off_block_mask(), prior_matrix(params.prior)
    )
    return loss


def _majority_init(votes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    maj = (votes.mean(axis=1) > 0.5).astype(int)
    pos, neg = maj == 1, maj == 0
    tpr = (votes[pos] == 1).mean(axis=0) if pos.any() else np.full(votes.shape[1], 0.7)
    tnr = (votes[neg] == 0).mean(axis=0) if neg.any() else np.full(votes.shape[1], 0.7)
    return np.clip(tpr, 0.05, 0.95), np.clip(tnr, 0.05, 0.95)


def fit_accuracies(
    moments: MomentMatrices,
    prior: float,
    cfg: FitConfig = FitConfig(),
    ids: tuple[str, ...] = (),
    votes=None,
) -> WSParams:
    """Estimate per-verifier (tpr, tnr) by moment matching.

    Minimizes ``||O_off - (mu P mu^T)_off||^2 + ||diag(O) - mu P 1||^2`` with
    full-batch gradient descent on logits of the accuracies.  A step that
    raises the loss is rejected and the step size halved.  Stops once an
    accepted step lowers the loss by less than ``cfg.tolerance``.

    The pairwise and marginal moments do not pin down which class is which;
    if the solution has mean balanced accuracy below 0.5 the class roles are
    swapped, i.e. ``(tpr, tnr) -> (1 - tnr, 1 - tpr)``.
    """
    O = np.asarray(moments.O, dtype=float)
    m = moments.m
    if O.shape != (2 * m, 2 * m) or m == 0 or not np.all(np.isfinite(O)):
        raise FitError("degenerate moment matrix")
    if not 0.0 < prior < 1.0:
        raise FitError(f"prior must lie in (0, 1), got {prior}")
    if m < 3:
        warnings.warn(
            f"only {m} verifier(s): accuracies are not identifiable from pairwise moments",
            WeakSupervisionWarning,
            stacklevel=2,
        )
    rng = np.random.default_rng(cfg.seed)
    if cfg.init == "heuristic":
        tpr0 = 0.7 + rng.uniform(-0.05, 0.05, m)
        tnr0 = 0.7 + rng.uniform(-0.05, 0.05, m)
    else:
        if votes is None:
            raise FitError("majority_seeded init needs the vote matrix")
        tpr0, tnr0 = _majority_init(_vote_matrix(votes))
    a, b = logit(tpr0), logit(tnr0)
    mask = moments.off_block_mask()
    P = prior_matrix(prior)

    def evaluate(a, b):
        tpr, tnr = expit(a), expit(b)
        loss, g_tpr, g_tnr = _loss_and_grad(tpr, tnr, O, mask, P)
        return loss, g_tpr * tpr * (1 - tpr), g_tnr * tnr * (1 - tnr)

    loss, ga, gb = evaluate(a, b)
    lr = cfg.learning_rate
    converged = False
    it = 0
    while it < cfg.max_iters:
        it += 1
        a_new, b_new = a - lr * ga, b - lr * gb
        new_loss, ga_new, gb_new = evaluate(a_new, b_new)
        if new_loss > loss:
            lr *= 0.5
            if lr < 1e-12:
                converged = True
                break
            continue
        drop = loss - new_loss
        a, b, loss, ga, gb = a_new, b_new, new_loss, ga_new, gb_new
        lr = min(lr * 1.25, cfg.learning_rate * 64)
        if drop < cfg.tolerance:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"moment matching did not converge in {cfg.max_iters} iterations",
            WeakSupervisionWarning,
            stacklevel=2,
        )
    tpr, tnr = expit(a), expit(b)
    if np.mean((tpr + tnr) / 2.0) < 0.5:
        tpr, tnr = 1.0 - tnr, 1.0 - tpr
    return WSParams(prior, tpr, tnr, tuple(ids), converged, loss, it)


def fit_supervised(votes, labels) -> WSParams:
    """Empirical TPR/TNR per verifier and the empirical prior."""
    x = _vote_matrix(votes)
    y = np.asarray(labels).ravel()
    if y.shape[0] != x.shape[0]:
        raise FitError("labels must align with vote rows")
    pos, neg = y == 1, y == 0
    if not pos.any() or not neg.any():
        raise FitError("supervised fit needs both classes in the labels")
    tpr = (x[pos] == 1).mean(axis=0)
    tnr = (x[neg] == 0).mean(axis=0)
    ids = votes.ids if isinstance(votes, VoteTensor) else ()
    return WSParams(float(pos.mean()), tpr, tnr, ids)


def posterior(votes, params: WSParams) -> np.ndarray:
    """``Pr(Y = 1 | votes)`` under conditional independence.

    ``votes`` may be a single row of length m or any array whose last axis is
    m; the result has the leading shape.  Computed in log space and
    normalized over both classes.
    """
    v = votes.votes if isinstance(votes, VoteTensor) else np.asarray(votes)
    if v.shape[-1] != params.m:
        raise FitError(f"vote rows have {v.shape[-1]} columns, params have {params.m}")
    v = v.astype(float)
    l1 = np.log(params.prior) + v @ np.log(params.tpr) + (1 - v) @ np.log1p(-params.tpr)
    l0 = np.log1p(-params.prior) + v @ np.log1p(-params.tnr) + (1 - v) @ np.log(params.tnr)
    return expit(l1 - l0)


def select(posteriors) -> SelectionResult:
    """Per-query argmax of the posterior, first index on ties."""
    return SelectionResult.from_scores(posteriors, "weaver")


def export_pseudolabels(posteriors, bundle: DatasetBundle, path: str | Path) -> int:
    """Write one JSONL record per (query, response) sorted by (query_id, index)."""
    post = np.asarray(posteriors, dtype=float)
    if post.shape != (bundle.n, bundle.K):
        raise FitError(f"posteriors must be (n, K) = {(bundle.n, bundle.K)}")
    order = sorted(range(bundle.n), key=lambda i: bundle.query_ids[i])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for i in order:
            for j in range(bundle.K):
                rec = {
                    "query_id": bundle.query_ids[i],
                    "response_index": j,
                    "posterior": float(post[i, j]),
                }
                fh.write(json.dumps(rec) + "\n")
                count += 1
    return count


def read_pseudolabels(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
