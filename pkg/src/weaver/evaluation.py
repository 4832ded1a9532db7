"""Coverage, selection metrics and verifier diagnostics."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .datastore import DatasetBundle
from .errors import DatasetError
from .selection import SelectionResult, argmax_first

__all__ = [
    "pass_at_k",
    "pass_at_k_per_query",
    "success_rate",
    "generation_verification_gap",
    "oracle_selection",
    "per_verifier_diagnostics",
    "roc_auc",
    "best_of_k_trials",
    "best_of_k_monte_carlo",
    "DiversityCorrelation",
    "answer_diversity_correlation",
    "flops_estimate",
    "MetricsReport",
]


def pass_at_k_per_query(labels, k: int) -> np.ndarray:
    """``1 - C(K - c, k) / C(K, k)`` per query, via a running product of ratios."""
    y = np.asarray(labels)
    if y.ndim != 2:
        raise DatasetError("labels must be an (n, K) array")
    K = y.shape[1]
    if not 1 <= k <= K:
        raise DatasetError(f"k must lie in [1, K={K}], got {k}")
    c = y.sum(axis=1)
    miss = np.ones(y.shape[0])
    for i in range(k):
        miss *= np.clip(K - c - i, 0, None) / (K - i)
    return 1.0 - miss


def pass_at_k(labels, k: int) -> float:
    """Expected fraction of queries with a correct response among ``k`` drawn of ``K``."""
    return float(pass_at_k_per_query(labels, k).mean())


def _indices(selection) -> np.ndarray:
    return selection.indices if isinstance(selection, SelectionResult) else np.asarray(selection)


def success_rate(selection, labels) -> float:
    y = np.asarray(labels)
    idx = _indices(selection)
    if idx.shape[0] != y.shape[0]:
        raise DatasetError("selection and labels disagree on the number of queries")
    return float(y[np.arange(y.shape[0]), idx].mean())


def generation_verification_gap(pass_k: float, success: float) -> float:
    return float(pass_k - success)


def oracle_selection(labels) -> SelectionResult:
    """First correct response of each query (index 0 when none is correct)."""
    return SelectionResult(argmax_first(np.asarray(labels, dtype=float)), "oracle")


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve (Mann-Whitney form, ties count one half)."""
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    n1 = int((y == 1).sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        return float("nan")
    ranks = stats.rankdata(s)
    return float((ranks[y == 1].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def per_verifier_diagnostics(scores, labels, votes=None, ids=None) -> dict:
    """Per-verifier selection accuracy, vote accuracy and false-positive rate.

    ``scores`` is ``(n, K, m)``; ``votes`` (same shape) defaults to
    ``scores >= 0.5``.  Also returns the spread of selection accuracies and
    the mean pairwise Pearson correlation of the flattened score columns.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    v = (s >= 0.5).astype(int) if votes is None else np.asarray(votes)
    n, K, m = s.shape
    ids = list(ids) if ids is not None else [f"v{k}" for k in range(m)]
    rows = np.arange(n)
    neg = y == 0
    per = []
    for k in range(m):
        sel = argmax_first(s[:, :, k])
        per.append(
            {
                "id": ids[k],
                "selection_accuracy": float(y[rows, sel].mean()),
                "mean_accuracy": float((v[:, :, k] == y).mean()),
                "fpr": float(v[:, :, k][neg].mean()) if neg.any() else float("nan"),
            }
        )
    flat = s.reshape(-1, m)
    corr = float("nan")
    if m > 1:
        with np.errstate(invalid="ignore", divide="ignore"):
            cm = np.corrcoef(flat, rowvar=False)
        off = cm[~np.eye(m, dtype=bool)]
        off = off[np.isfinite(off)]
        corr = float(off.mean()) if off.size else float("nan")
    accs = [p["selection_accuracy"] for p in per]
    return {"verifiers": per, "accuracy_range": float(max(accs) - min(accs)),
            "mean_pairwise_correlation": corr}


Strategy = Callable[[DatasetBundle], "SelectionResult | np.ndarray"]


def best_of_k_trials(
    strategy: Strategy, bundle: DatasetBundle, k: int, trials: int, seed: int = 0,
    queries=None,
) -> np.ndarray:
    """Success rate of ``strategy`` on ``trials`` random k-subsets of responses.

    Each trial draws ``k`` of the ``K`` responses per query without
    replacement (kept in generation order) and lets the strategy choose among
    them, so strategies that re-fit on the subset see a K-dependent ranking.
    With ``k == K`` no subsampling happens.  ``queries`` (a boolean mask)
    restricts which queries are scored; all of them are still handed to the
    strategy.
    """
    K = bundle.K
    if not 1 <= k <= K:
        raise DatasetError(f"k must lie in [1, K={K}], got {k}")
    if trials < 1:
        raise DatasetError("trials must be >= 1")
    y = bundle.y
    keep = np.ones(bundle.n, dtype=bool) if queries is None else np.asarray(queries, dtype=bool)
    if keep.shape != (bundle.n,) or not keep.any():
        raise DatasetError("query mask must be a non-empty boolean vector of length n")
    rng = np.random.default_rng(seed)
    out = np.empty(trials)
    for t in range(trials):
        if k == K:
            idx = np.broadcast_to(np.arange(K), (bundle.n, K))
        else:
            idx = np.sort(rng.random((bundle.n, K)).argsort(axis=1)[:, :k], axis=1)
        sub = bundle.take_responses(idx)
        picked = _indices(strategy(sub))
        hit = y[np.arange(bundle.n), idx[np.arange(bundle.n), picked]]
        out[t] = hit[keep].mean()
    return out


def best_of_k_monte_carlo(
    strategy: Strategy, bundle: DatasetBundle, k: int, trials: int, seed: int = 0,
    queries=None,
) -> float:
    return float(best_of_k_trials(strategy, bundle, k, trials, seed, queries).mean())


@dataclass(frozen=True)
class DiversityCorrelation:
    pearson: float
    spearman: float
    kendall: float
    degenerate: bool = False

    def as_tuple(self) -> tuple[float, float, float]:
        return self.pearson, self.spearman, self.kendall


def answer_diversity_correlation(answers, labels) -> DiversityCorrelation:
    """Correlate unique-answer count per query with its fraction of correct responses.

    Zero-variance inputs make every coefficient undefined; they are reported
    as 0 with ``degenerate=True``.
    """
    a = np.asarray(answers, dtype=object)
    y = np.asarray(labels, dtype=float)
    if a.shape[0] < 3:
        raise DatasetError("need at least 3 queries for a correlation")
    uniq = np.array([len({str(x).strip() for x in row}) for row in a], dtype=float)
    ratio = y.mean(axis=1)
    if uniq.std() == 0 or ratio.std() == 0:
        return DiversityCorrelation(0.0, 0.0, 0.0, True)
    return DiversityCorrelation(
        float(stats.pearsonr(uniq, ratio)[0]),
        float(stats.spearmanr(uniq, ratio)[0]),
        float(stats.kendalltau(uniq, ratio)[0]),
    )


def flops_estimate(
    gen_model_params: float,
    verifier_params=(),
    tokens_per_response: float = 1.0,
    k: int = 1,
) -> float:
    """Inference FLOPs per query: 2 * params * tokens per forward pass, times k."""
    per_response = 2.0 * gen_model_params * tokens_per_response
    per_response += sum(2.0 * p * tokens_per_response for p in verifier_params)
    return per_response * k


@dataclass
class MetricsReport:
    """Pass@k, per-strategy success rates and gaps, and verifier diagnostics."""

    K: int
    pass_at_k: dict[int, float]
    success_rate: dict[str, dict[int, float]]
    per_verifier: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def gap(self, strategy: str, k: int) -> float:
        return generation_verification_gap(self.pass_at_k[k], self.success_rate[strategy][k])

    def to_dict(self) -> dict:
        ks = sorted(self.pass_at_k)
        return {
            **self.meta,
            "K": self.K,
            "pass_at_k": {str(k): self.pass_at_k[k] for k in ks},
            "success_rate": {
                s: {str(k): v for k, v in sorted(d.items())} for s, d in self.success_rate.items()
            },
            "gap": {
                s: {str(k): self.gap(s, k) for k in sorted(d)} for s, d in self.success_rate.items()
            },
            "per_verifier": self.per_verifier,
            "notes": self.notes,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "strategy", "k", "value"])
        for k in sorted(self.pass_at_k):
            w.writerow(["pass_at_k", "oracle", k, repr(self.pass_at_k[k])])
        for s, d in self.success_rate.items():
            for k in sorted(d):
                w.writerow(["success_rate", s, k, repr(d[k])])
                w.writerow(["gap", s, k, repr(self.gap(s, k))])
        for p in self.per_verifier:
            for key in ("selection_accuracy", "mean_accuracy", "fpr"):
                w.writerow([key, p["id"], self.K, repr(p[key])])
        return buf.getvalue()
