"""Named selection strategies with a common ``bundle -> SelectionResult`` signature.

These are what the CLI ``eval`` command and Monte-Carlo best-of-k evaluation
run.  Strategies that learn anything (weaver, naive_bayes, logreg) fit on the
bundle they are handed, using its dev slice for supervision, so a
subsampled bundle gets a K-dependent model.
"""
from __future__ import annotations

from typing import Callable


from .baselines import (
    first_sample,
    logreg_fit,
    logreg_predict,
    majority_vote,
    naive_bayes_fit,
    naive_ensemble,
)
from .datastore import DatasetBundle
from .errors import DatasetError
from .evaluation import oracle_selection
from .pipeline import WeaverConfig, fit_weaver
from .preprocess import binarize, normalize
from .selection import SelectionResult
from .ws import estimate_prior, posterior

__all__ = ["STRATEGIES", "make_strategy"]

STRATEGIES = ("weaver", "majority", "naive", "first", "oracle", "naive_bayes", "logreg")


def _dev_rows(bundle: DatasetBundle):
    ls = bundle.labels
    if ls is None or not ls.dev_mask.any():
        raise DatasetError("strategy needs a labeled dev set")
    return ls.dev_mask, ls.dev_labels()


def make_strategy(
    name: str, config: WeaverConfig = WeaverConfig()
) -> Callable[[DatasetBundle], SelectionResult]:
    if name == "weaver":
        return lambda b: fit_weaver(b, b.labels, config).select(b)
    if name == "majority":
        return lambda b: majority_vote(b.answers)
    if name == "naive":
        return lambda b: naive_ensemble(normalize(b.scores, config.normalization)[0])
    if name == "first":
        return first_sample
    if name == "oracle":
        return lambda b: oracle_selection(b.y)
    if name == "naive_bayes":
        def nb(b: DatasetBundle) -> SelectionResult:
            mask, y = _dev_rows(b)
            normed = normalize(b.scores, config.normalization)[0]
            votes = binarize(normed, config.binarization, b.labels, estimate_prior(y)).votes
            params = naive_bayes_fit(votes[mask].reshape(-1, b.m), y)
            return SelectionResult.from_scores(posterior(votes, params), "naive_bayes")
        return nb
    if name == "logreg":
        def lr(b: DatasetBundle) -> SelectionResult:
            mask, y = _dev_rows(b)
            normed = normalize(b.scores, config.normalization)[0].scores
            model = logreg_fit(normed[mask].reshape(-1, b.m), y)
            return SelectionResult.from_scores(logreg_predict(model, normed), "logreg")
        return lr
    raise DatasetError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGIES)}")
