"""End-to-end Weaver fit: normalize, binarize, filter, estimate prior, fit."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datastore import DatasetBundle, LabelSet, ScoreTensor
from .errors import DatasetError, PreprocessError
from .preprocess import (
    BinarizationSpec,
    NormalizationSpec,
    VoteTensor,
    binarize,
    filter_verifiers,
    normalize,
    normalize_with,
)
from .selection import SelectionResult
from .ws import FitConfig, WSParams, estimate_moments, estimate_prior, fit_accuracies, posterior

__all__ = ["WeaverConfig", "WeaverModel", "fit_weaver", "apply_thresholds"]


@dataclass(frozen=True)
class WeaverConfig:
    normalization: NormalizationSpec = NormalizationSpec()
    binarization: BinarizationSpec = BinarizationSpec()
    filtering: bool = True
    fit: FitConfig = FitConfig()

    def to_dict(self) -> dict:
        b = self.binarization
        return {
            "normalization": {
                "lo_percentile": self.normalization.lo_percentile,
                "hi_percentile": self.normalization.hi_percentile,
            },
            "binarization": {
                "strategy": b.strategy,
                "threshold": b.threshold,
                "quantile": b.quantile,
                "objective": b.objective,
            },
            "filtering": self.filtering,
            "fit": self.fit.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "WeaverConfig":
        return cls(
            NormalizationSpec(**doc.get("normalization", {})),
            BinarizationSpec(**doc.get("binarization", {})),
            bool(doc.get("filtering", True)),
            FitConfig(**doc.get("fit", {})),
        )


def apply_thresholds(
    tensor: ScoreTensor, thresholds: np.ndarray, strict: bool = False
) -> np.ndarray:
    """Votes for every column of a normalized tensor; NaN threshold = judge."""
    votes = np.empty(tensor.scores.shape, dtype=np.int8)
    for k in range(tensor.m):
        col = tensor.scores[:, :, k]
        t = thresholds[k]
        if np.isnan(t):
            votes[:, :, k] = col >= 0.5
        else:
            votes[:, :, k] = col > t if strict else col >= t
    return votes


@dataclass(frozen=True)
class WeaverModel:
    """A fitted Weaver pipeline that can score any bundle with the same verifiers."""

    verifier_ids: tuple[str, ...]
    anchors: np.ndarray
    thresholds: np.ndarray
    strict: bool
    kept: tuple[int, ...]
    params: WSParams
    dropped: tuple[tuple[str, str], ...] = ()
    threshold_search: dict = field(default_factory=dict, compare=False)

    def votes(self, bundle: DatasetBundle) -> np.ndarray:
        if tuple(bundle.scores.ids) != self.verifier_ids:
            raise DatasetError("bundle verifiers do not match the fitted model")
        normed = normalize_with(bundle.scores, self.anchors)
        all_votes = apply_thresholds(normed, self.thresholds, self.strict)
        return all_votes[:, :, list(self.kept)]

    def posteriors(self, bundle: DatasetBundle) -> np.ndarray:
        return posterior(self.votes(bundle), self.params)

    def select(self, bundle: DatasetBundle) -> SelectionResult:
        return SelectionResult.from_scores(self.posteriors(bundle), "weaver")

    def to_dict(self) -> dict:
        doc = self.params.to_dict()
        doc["preprocess"] = {
            "verifiers": [
                {
                    "id": vid,
                    "p_lo": None if np.isnan(self.anchors[k, 0]) else float(self.anchors[k, 0]),
                    "p_hi": None if np.isnan(self.anchors[k, 1]) else float(self.anchors[k, 1]),
                    "threshold": None if np.isnan(self.thresholds[k]) else float(self.thresholds[k]),
                }
                for k, vid in enumerate(self.verifier_ids)
            ],
            "strict": self.strict,
            "dropped": [{"id": i, "reason": r} for i, r in self.dropped],
        }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "WeaverModel":
        pre = doc["preprocess"]
        vs = pre["verifiers"]
        ids = tuple(v["id"] for v in vs)
        nan = float("nan")
        anchors = np.array(
            [[nan if v["p_lo"] is None else v["p_lo"], nan if v["p_hi"] is None else v["p_hi"]]
             for v in vs],
            dtype=float,
        ).reshape(len(vs), 2)
        thresholds = np.array([nan if v["threshold"] is None else v["threshold"] for v in vs])
        params = WSParams.from_dict(doc)
        kept = tuple(ids.index(i) for i in params.ids)
        dropped = tuple((d["id"], d["reason"]) for d in pre.get("dropped", []))
        return cls(ids, anchors, thresholds, bool(pre["strict"]), kept, params, dropped)


def fit_weaver(
    bundle: DatasetBundle,
    labels: LabelSet | None = None,
    config: WeaverConfig = WeaverConfig(),
    anchors: np.ndarray | None = None,
    thresholds: np.ndarray | None = None,
) -> WeaverModel:
    """Fit the full pipeline on ``bundle`` using the dev slice of ``labels``.

    ``anchors``/``thresholds`` override the normalization and binarization
    learned from this bundle (difficulty clustering passes globally fitted
    ones in).
    """
    labels = labels if labels is not None else bundle.labels
    if labels is None or not labels.dev_mask.any():
        raise DatasetError("a labeled dev set is required to estimate the class prior")
    prior = estimate_prior(labels)
    tensor = bundle.scores
    if anchors is None:
        normed, anchors = normalize(tensor, config.normalization)
    else:
        normed = normalize_with(tensor, anchors)
        # same degeneracy rule as normalize(): constant, or continuous without anchors
        judge = tensor.is_judge()
        deg = {
            v.id for k, v in enumerate(tensor.verifiers)
            if tensor.scores[:, :, k].min() == tensor.scores[:, :, k].max()
            or (not judge[k] and np.isnan(anchors[k, 0]))
        }
        normed = ScoreTensor(normed.scores, normed.verifiers, frozenset(deg))
    strict = config.binarization.strategy == "quantile"
    if thresholds is None:
        vt = binarize(normed, config.binarization, labels, prior)
    else:
        vt = VoteTensor(
            apply_thresholds(normed, thresholds, strict),
            tuple(normed.ids),
            tuple(range(normed.m)),
            np.asarray(thresholds, dtype=float),
            degenerate=normed.degenerate,
        )
    all_thresholds = vt.thresholds.copy()
    if config.filtering:
        vt = filter_verifiers(vt, prior)
    else:
        keep = [k for k, vid in enumerate(vt.ids) if vid not in vt.degenerate]
        if not keep:
            raise PreprocessError("no verifiers survive filtering")
        vt = VoteTensor(
            vt.votes[:, :, keep],
            tuple(vt.ids[k] for k in keep),
            tuple(vt.kept[k] for k in keep),
            vt.thresholds[keep],
            tuple((i, "constant output") for i in vt.ids if i in vt.degenerate),
            vt.degenerate,
            vt.search,
        )
    params = fit_accuracies(estimate_moments(vt), prior, config.fit, vt.ids, votes=vt)
    return WeaverModel(
        tuple(tensor.ids),
        np.asarray(anchors, dtype=float),
        all_thresholds,
        strict,
        vt.kept,
        params,
        vt.dropped,
        vt.search,
    )
