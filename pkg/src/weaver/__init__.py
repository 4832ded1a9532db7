"""Weaver: combine many weak verifiers into one response selector.

Scores from reward models and LM judges are normalized, binarized and fed to
a weak-supervision label model whose per-verifier accuracies are fitted
without labels (only the class prior needs a small dev set).  The posterior
over "this response is correct" picks one response per query.
"""
__version__ = "0.1.0"

from .datastore import (
    DatasetBundle,
    LabelSet,
    ScoreTensor,
    VerifierMeta,
    load_dataset,
    make_bundle,
    save_dataset,
    split_dev,
    validate,
)
from .errors import DatasetError, FitError, PreprocessError, WeakSupervisionWarning, WeaverError
from .pipeline import WeaverConfig, WeaverModel, fit_weaver
from .selection import SelectionResult
from .synth import SynthSpec, generate
from .ws import FitConfig, WSParams, fit_accuracies, fit_supervised, posterior

__all__ = [
    "__version__",
    "DatasetBundle",
    "LabelSet",
    "ScoreTensor",
    "VerifierMeta",
    "load_dataset",
    "make_bundle",
    "save_dataset",
    "split_dev",
    "validate",
    "DatasetError",
    "FitError",
    "PreprocessError",
    "WeakSupervisionWarning",
    "WeaverError",
    "WeaverConfig",
    "WeaverModel",
    "fit_weaver",
    "SelectionResult",
    "SynthSpec",
    "generate",
    "FitConfig",
    "WSParams",
    "fit_accuracies",
    "fit_supervised",
    "posterior",
]
