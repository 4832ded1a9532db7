"""Score normalization, binarization into votes, and verifier filtering."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datastore import LabelSet, ScoreTensor
from .errors import PreprocessError

__all__ = [
    "THRESHOLD_GRID",
    "NormalizationSpec",
    "BinarizationSpec",
    "VoteTensor",
    "normalize",
    "normalize_with",
    "binarize",
    "search_threshold",
    "filter_verifiers",
    "marginal_rule",
    "precision_matrix",
]

# 0.05, 0.10, ..., 0.95 (19 values); rounded so 0.35 is exactly 0.35
THRESHOLD_GRID = np.round(np.arange(1, 20) * 0.05, 2)
STRATEGIES = ("fixed", "dev_adaptive", "class_balance", "quantile")


@dataclass(frozen=True)
class NormalizationSpec:
    lo_percentile: float = 5.0
    hi_percentile: float = 95.0

    def __post_init__(self):
        if not 0.0 <= self.lo_percentile < self.hi_percentile <= 100.0:
            raise PreprocessError("need 0 <= lo_percentile < hi_percentile <= 100")


@dataclass(frozen=True)
class BinarizationSpec:
    """How continuous scores become 0/1 votes.

    strategy
        ``fixed``: vote = s >= threshold.
        ``dev_adaptive``: per verifier, the grid value maximizing dev accuracy.
        ``class_balance``: threshold at the (1 - prior) empirical quantile.
        ``quantile``: vote = s > the q-th empirical quantile.
    """

    strategy: str = "fixed"
    threshold: float = 0.5
    quantile: float = 0.85
    grid: tuple[float, ...] = tuple(THRESHOLD_GRID)
    objective: str = "accuracy"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise PreprocessError(f"unknown binarization strategy {self.strategy!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise PreprocessError("threshold must lie in [0, 1]")
        if not 0.0 <= self.quantile <= 1.0:
            raise PreprocessError("quantile must lie in [0, 1]")
        if self.objective not in ("accuracy", "balanced_accuracy"):
            raise PreprocessError(f"unknown threshold objective {self.objective!r}")


@dataclass(frozen=True)
class VoteTensor:
    """Binary votes over kept verifiers.

    ``kept[k']`` is the column of the original score tensor that produced vote
    column ``k'``; ``thresholds`` aligns with ``kept`` (NaN for judges that
    bypass thresholding).
    """

    votes: np.ndarray
    ids: tuple[str, ...]
    kept: tuple[int, ...]
    thresholds: np.ndarray
    dropped: tuple[tuple[str, str], ...] = ()
    degenerate: frozenset[str] = frozenset()
    search: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.votes)
        if v.ndim != 3 or v.shape[2] != len(self.ids) or len(self.kept) != len(self.ids):
            raise PreprocessError("votes must be (n, K, m') aligned with ids and kept")
        if not np.isin(v, (0, 1)).all():
            raise PreprocessError("votes must be 0 or 1")
        object.__setattr__(self, "votes", v.astype(np.int8))

    @property
    def m(self) -> int:
        return self.votes.shape[2]

    def flat(self) -> np.ndarray:
        return self.votes.reshape(-1, self.m)

    def marginals(self) -> np.ndarray:
        """Positive-vote rate of every kept verifier."""
        return self.flat().mean(axis=0) if self.votes.size else np.zeros(self.m)

    def to_dict(self) -> dict:
        return {
            "kept": [
                {"id": i, "column": int(c), "threshold": None if np.isnan(t) else float(t)}
                for i, c, t in zip(self.ids, self.kept, self.thresholds)
            ],
            "dropped": [{"id": i, "reason": r} for i, r in self.dropped],
        }


def _percentiles(col: np.ndarray, spec: NormalizationSpec) -> tuple[float, float]:
    # linear interpolation between order statistics
    lo, hi = np.percentile(col, [spec.lo_percentile, spec.hi_percentile])
    return float(lo), float(hi)


def normalize(
    tensor: ScoreTensor, spec: NormalizationSpec = NormalizationSpec()
) -> tuple[ScoreTensor, np.ndarray]:
    """Percentile min-max scaling of continuous verifiers into [0, 1].

    Returns the normalized tensor and a ``(m, 2)`` array of the per-verifier
    ``(p_lo, p_hi)`` anchors (NaN for judges and degenerate columns), which
    :func:`normalize_with` reuses on new data.  A verifier with constant
    output (or ``p_hi == p_lo``) is left untouched and recorded in
    ``degenerate``.
    """
    s = tensor.scores.copy()
    anchors = np.full((tensor.m, 2), np.nan)
    degenerate = set(tensor.degenerate)
    judge = tensor.is_judge()
    for k, v in enumerate(tensor.verifiers):
        col = s[:, :, k]
        if col.min() == col.max():
            degenerate.add(v.id)
            continue
        if judge[k]:
            continue
        lo, hi = _percentiles(col, spec)
        if hi <= lo:
            degenerate.add(v.id)
            continue
        anchors[k] = lo, hi
        s[:, :, k] = np.clip((col - lo) / (hi - lo), 0.0, 1.0)
    return ScoreTensor(s, tensor.verifiers, frozenset(degenerate)), anchors


def normalize_with(tensor: ScoreTensor, anchors: np.ndarray) -> ScoreTensor:
    """Apply previously fitted ``(p_lo, p_hi)`` anchors; NaN rows pass through."""
    s = tensor.scores.copy()
    for k in range(tensor.m):
        lo, hi = anchors[k]
        if np.isnan(lo):
            continue
        s[:, :, k] = np.clip((s[:, :, k] - lo) / (hi - lo), 0.0, 1.0)
    return ScoreTensor(s, tensor.verifiers, tensor.degenerate)


def _objective(votes: np.ndarray, y: np.ndarray, kind: str) -> float:
    if kind == "accuracy":
        return float((votes == y).mean())
    pos, neg = y == 1, y == 0
    tpr = (votes[pos] == 1).mean() if pos.any() else 0.0
    tnr = (votes[neg] == 0).mean() if neg.any() else 0.0
    return float(0.5 * (tpr + tnr))


def search_threshold(
    scores: np.ndarray, labels: np.ndarray, grid=THRESHOLD_GRID, objective: str = "accuracy"
) -> tuple[float, np.ndarray]:
    """Exhaustive grid search for the vote threshold that best matches labels.

    Returns the chosen threshold and the objective value at every grid point.
    Ties go to the smallest threshold.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if scores.size == 0:
        raise PreprocessError("empty dev set for threshold search")
    grid = np.asarray(grid, dtype=float)
    values = np.array([_objective((scores >= t).astype(int), labels, objective) for t in grid])
    return float(grid[int(np.argmax(values))]), values


def binarize(
    tensor: ScoreTensor,
    spec: BinarizationSpec = BinarizationSpec(),
    labels: LabelSet | None = None,
    prior: float | None = None,
) -> VoteTensor:
    """Turn normalized scores into votes (no verifier is dropped here).

    ``labels`` (with a dev mask) is needed for ``dev_adaptive`` and ``prior``
    for ``class_balance``.  Binary judges bypass thresholding.
    """
    strategy = spec.strategy
    dev_scores = dev_y = None
    if strategy == "dev_adaptive":
        if labels is None or not labels.dev_mask.any():
            raise PreprocessError("dev_adaptive binarization needs a non-empty labeled dev set")
        dev_scores = tensor.scores[labels.dev_mask].reshape(-1, tensor.m)
        dev_y = labels.dev_labels()
    if strategy == "class_balance":
        if prior is None or not 0.0 < prior < 1.0:
            raise PreprocessError(f"class_balance needs a prior in (0, 1), got {prior}")

    judge = tensor.is_judge()
    votes = np.empty(tensor.scores.shape, dtype=np.int8)
    thresholds = np.full(tensor.m, np.nan)
    table = {}
    for k, v in enumerate(tensor.verifiers):
        col = tensor.scores[:, :, k]
        if judge[k]:
            votes[:, :, k] = col >= 0.5
            continue
        if strategy == "fixed":
            t = spec.threshold
            votes[:, :, k] = col >= t
        elif strategy == "dev_adaptive":
            t, vals = search_threshold(dev_scores[:, k], dev_y, spec.grid, spec.objective)
            table[v.id] = vals
            votes[:, :, k] = col >= t
        elif strategy == "class_balance":
            t = float(np.quantile(col, 1.0 - prior))
            votes[:, :, k] = col >= t
        else:
            t = float(np.quantile(col, spec.quantile))
            votes[:, :, k] = col > t
        thresholds[k] = t
    return VoteTensor(
        votes,
        tuple(tensor.ids),
        tuple(range(tensor.m)),
        thresholds,
        degenerate=tensor.degenerate,
        search=table,
    )


def marginal_rule(rate: float, prior: float, lo: float = 0.2, hi: float = 0.8) -> str | None:
    """Reason to drop a verifier with positive-vote ``rate``, or None to keep it.

    Boundaries are inclusive in the balanced branch.
    """
    if lo <= prior <= hi:
        if rate < lo or rate > hi:
            return "skewed marginal"
    elif prior < lo:
        if rate > hi:
            return "skewed marginal (over-predicts positives)"
    elif rate < lo:
        return "skewed marginal (under-predicts positives)"
    return None


def filter_verifiers(votes: VoteTensor, prior: float) -> VoteTensor:
    """Drop constant verifiers, then those whose vote rate fails the marginal rule."""
    if not 0.0 < prior < 1.0:
        raise PreprocessError(f"prior must lie in (0, 1), got {prior}")
    rates = votes.marginals()
    keep, dropped = [], list(votes.dropped)
    for k, vid in enumerate(votes.ids):
        col = votes.votes[:, :, k]
        if vid in votes.degenerate or col.min() == col.max():
            dropped.append((vid, "constant output"))
            continue
        reason = marginal_rule(float(rates[k]), prior)
        if reason is None:
            keep.append(k)
        else:
            dropped.append((vid, reason))
    if not keep:
        raise PreprocessError("no verifiers survive filtering")
    return VoteTensor(
        votes.votes[:, :, keep],
        tuple(votes.ids[k] for k in keep),
        tuple(votes.kept[k] for k in keep),
        votes.thresholds[keep],
        tuple(dropped),
        votes.degenerate,
        votes.search,
    )


def precision_matrix(x: np.ndarray) -> np.ndarray:
    """Ridge-regularized inverse sample covariance of the columns of ``x``.

    The ridge is ``1e-6 * trace(cov) / m``; used only for diagnostics.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 3:
        x = x.reshape(-1, x.shape[2])
    rows, m = x.shape
    if rows < m + 1:
        raise PreprocessError(f"need at least m+1={m + 1} rows, got {rows}")
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    lam = 1e-6 * np.trace(cov) / m
    if lam == 0.0:
        lam = 1e-12
    prec = np.linalg.inv(cov + lam * np.eye(m))
    return 0.5 * (prec + prec.T)
