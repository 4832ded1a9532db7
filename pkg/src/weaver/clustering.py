"""Difficulty-aware Weaver: separate label models per difficulty bin.

Difficulty is the oracle fraction of correct responses per query, so this is
an analysis tool for labeled data rather than a deployable selector.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .datastore import DatasetBundle, LabelSet
from .errors import DatasetError
from .pipeline import WeaverConfig, WeaverModel, fit_weaver
from .preprocess import THRESHOLD_GRID, binarize, normalize, search_threshold
from .selection import SelectionResult
from .ws import estimate_prior

__all__ = [
    "THRESHOLD_MODES",
    "DifficultyPartition",
    "ClusterFit",
    "ClusteredWeaver",
    "compute_difficulty",
    "partition",
    "fit_per_cluster",
]

THRESHOLD_MODES = ("global", "per_cluster", "per_model")


def compute_difficulty(labels) -> np.ndarray:
    """Fraction of correct responses per query (higher = easier)."""
    if labels is None:
        raise DatasetError("difficulty needs labels")
    if isinstance(labels, DatasetBundle):
        labels = labels.y
    elif isinstance(labels, LabelSet):
        labels = labels.require_labels()
    return np.asarray(labels, dtype=float).mean(axis=1)


@dataclass(frozen=True)
class DifficultyPartition:
    n_clusters: int
    assignment: np.ndarray
    boundaries: tuple[float, ...]

    def members(self, c: int) -> np.ndarray:
        """Query indices of cluster ``c`` in original order."""
        return np.flatnonzero(self.assignment == c)

    def sizes(self) -> list[int]:
        return np.bincount(self.assignment, minlength=self.n_clusters).tolist()


def partition(difficulties, n_clusters: int) -> DifficultyPartition:
    """Split queries sorted by difficulty into contiguous, equal-size bins.

    Ties keep query order; leftover queries go one each to the earliest bins.
    """
    d = np.asarray(difficulties, dtype=float)
    n = d.size
    if not 1 <= n_clusters <= n:
        raise DatasetError(f"n_clusters must lie in [1, n={n}], got {n_clusters}")
    order = np.argsort(d, kind="stable")
    base, extra = divmod(n, n_clusters)
    sizes = [base + (1 if c < extra else 0) for c in range(n_clusters)]
    assignment = np.empty(n, dtype=int)
    bounds = []
    start = 0
    for c, size in enumerate(sizes):
        assignment[order[start : start + size]] = c
        start += size
        if c < n_clusters - 1:
            bounds.append(float(d[order[start - 1]]))
    return DifficultyPartition(n_clusters, assignment, tuple(bounds))


@dataclass(frozen=True)
class ClusterFit:
    cluster: int
    queries: np.ndarray
    thresholds: np.ndarray
    model: WeaverModel
    evaluations: int = 0

    @property
    def params(self):
        return self.model.params


@dataclass(frozen=True)
class ClusteredWeaver:
    partition: DifficultyPartition
    threshold_mode: str
    clusters: tuple[ClusterFit, ...]

    def posteriors(self, bundle: DatasetBundle) -> np.ndarray:
        out = np.empty((bundle.n, bundle.K))
        for cf in self.clusters:
            out[cf.queries] = cf.model.posteriors(bundle.take_queries(cf.queries))
        return out

    def select(self, bundle: DatasetBundle) -> SelectionResult:
        return SelectionResult.from_scores(self.posteriors(bundle), "weaver_clustered")

    def to_dict(self, query_ids=None) -> dict:
        return {
            "n_clusters": self.partition.n_clusters,
            "threshold_mode": self.threshold_mode,
            "boundaries": list(self.partition.boundaries),
            "clusters": [
                {
                    "cluster": cf.cluster,
                    "queries": [query_ids[i] for i in cf.queries]
                    if query_ids is not None else cf.queries.tolist(),
                    "dev_evaluations": cf.evaluations,
                    "fit": cf.model.to_dict(),
                }
                for cf in self.clusters
            ],
        }


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("WEAVER_THREADS", "1")))
    except ValueError:
        return 1


def fit_per_cluster(
    bundle: DatasetBundle,
    part: DifficultyPartition,
    threshold_mode: str = "global",
    config: WeaverConfig = WeaverConfig(),
    labels: LabelSet | None = None,
    grid=THRESHOLD_GRID,
) -> ClusteredWeaver:
    """Fit one Weaver label model per difficulty cluster.

    threshold_mode
        ``global``: normalization and thresholds come from the whole dataset
        via ``config``; each cluster gets its own prior and accuracies.
        ``per_cluster``: one grid-searched threshold per cluster shared by all
        continuous verifiers (dev accuracy pooled over verifiers).
        ``per_model``: a grid-searched threshold per verifier per cluster,
        each verifier optimized independently on the cluster's dev slice.
    """
    if threshold_mode not in THRESHOLD_MODES:
        raise DatasetError(f"unknown threshold mode {threshold_mode!r}")
    labels = labels if labels is not None else bundle.labels
    if labels is None or not labels.dev_mask.any():
        raise DatasetError("clustering needs a labeled dev set")
    normed, anchors = normalize(bundle.scores, config.normalization)
    judge = bundle.scores.is_judge()
    if threshold_mode == "global":
        prior = estimate_prior(labels)
        global_thr = binarize(normed, config.binarization, labels, prior).thresholds
    for c in range(part.n_clusters):
        if not labels.dev_mask[part.members(c)].any():
            raise DatasetError(f"cluster {c} has no dev queries")

    def fit_one(c: int) -> ClusterFit:
        idx = part.members(c)
        sub = bundle.take_queries(idx)
        sub_labels = labels.take_queries(idx)
        evaluations = 0
        if threshold_mode == "global":
            thr = global_thr
        else:
            dev = sub_labels.dev_mask
            dev_scores = normed.scores[idx][dev].reshape(-1, normed.m)
            dev_y = sub_labels.dev_labels()
            thr = np.full(normed.m, np.nan)
            cont = np.flatnonzero(~judge)
            if threshold_mode == "per_model":
                for k in cont:
                    thr[k], vals = search_threshold(dev_scores[:, k], dev_y, grid)
                    evaluations += len(vals)
            elif cont.size:
                acc = np.array(
                    [((dev_scores[:, cont] >= t) == dev_y[:, None]).mean() for t in grid]
                )
                evaluations = len(grid)
                thr[cont] = float(np.asarray(grid)[int(np.argmax(acc))])
        model = fit_weaver(sub, sub_labels, config, anchors=anchors, thresholds=thr)
        return ClusterFit(c, idx, np.asarray(thr, dtype=float), model, evaluations)

    workers = min(_threads(), part.n_clusters)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fits = list(pool.map(fit_one, range(part.n_clusters)))
    else:
        fits = [fit_one(c) for c in range(part.n_clusters)]
    return ClusteredWeaver(part, threshold_mode, tuple(fits))
