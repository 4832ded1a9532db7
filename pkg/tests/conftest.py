import json
import warnings

import numpy as np
import pytest

from weaver.datastore import split_dev
from weaver.errors import WeakSupervisionWarning
from weaver.synth import SynthSpec, generate


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write((rec if isinstance(rec, str) else json.dumps(rec)) + "\n")
    return path


def synth_with_dev(fraction=0.1, dev_seed=0, **kw):
    bundle = generate(SynthSpec(**kw))
    return bundle.with_labels(split_dev(bundle, fraction, dev_seed))


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", WeakSupervisionWarning)
        yield


@pytest.fixture
def hetero_bundle():
    acc = tuple(np.linspace(0.55, 0.95, 5))
    return synth_with_dev(0.05, 0, n=300, K=16, m=5, prior=0.2, tpr=acc, tnr=acc, seed=3)
