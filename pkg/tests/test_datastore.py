import json

import numpy as np
import pytest

from conftest import write_jsonl
from weaver.datastore import (
    LabelSet,
    VerifierMeta,
    concat_bundles,
    load_dataset,
    make_bundle,
    manifest_path,
    save_dataset,
    split_dev,
    validate,
)
from weaver.errors import DatasetError
from weaver.synth import SynthSpec, generate


def _rec(q, j, s, label=None, answer=None, vid="rm"):
    r = {"query_id": q, "response_index": j, "scores": {vid: s}}
    if label is not None:
        r["label"] = label
    if answer is not None:
        r["answer"] = answer
    return r


def test_small_jsonl_loads(tmp_path):
    recs = [_rec("q1", 0, 0.2, 1), _rec("q1", 1, 0.7, 0), _rec("q2", 0, 0.1, 0), _rec("q2", 1, 0.9, 1)]
    b = load_dataset(write_jsonl(tmp_path / "d.jsonl", recs))
    assert (b.n, b.K, b.m) == (2, 2, 1)
    np.testing.assert_array_equal(b.y, [[1, 0], [0, 1]])


def test_rows_come_back_sorted(tmp_path):
    recs = [_rec("b", 1, 0.4), _rec("a", 1, 0.2), _rec("b", 0, 0.3), _rec("a", 0, 0.1)]
    b = load_dataset(write_jsonl(tmp_path / "d.jsonl", recs))
    assert b.query_ids == ("a", "b")
    np.testing.assert_array_equal(b.scores.scores[:, :, 0], [[0.1, 0.2], [0.3, 0.4]])


def test_ragged_k_rejected(tmp_path):
    recs = [_rec("q1", j, 0.5) for j in range(3)] + [_rec("q2", j, 0.5) for j in range(2)]
    with pytest.raises(DatasetError, match="ragged K"):
        load_dataset(write_jsonl(tmp_path / "d.jsonl", recs))


def test_nan_score_rejected(tmp_path):
    lines = ['{"query_id": "q1", "response_index": 0, "scores": {"rm": "NaN"}}']
    with pytest.raises(DatasetError, match="non-finite score"):
        load_dataset(write_jsonl(tmp_path / "d.jsonl", lines))


def test_missing_field_and_duplicate(tmp_path):
    with pytest.raises(DatasetError, match="missing field"):
        load_dataset(write_jsonl(tmp_path / "a.jsonl", [{"query_id": "q", "scores": {"rm": 1.0}}]))
    with pytest.raises(DatasetError, match="duplicate"):
        load_dataset(write_jsonl(tmp_path / "b.jsonl", [_rec("q", 0, 0.1), _rec("q", 0, 0.2)]))


def test_manifest_kinds_and_inference(tmp_path):
    recs = [_rec("q", j, float(j % 2)) for j in range(4)]
    path = write_jsonl(tmp_path / "d.jsonl", recs)
    assert load_dataset(path).scores.verifiers[0].kind == "binary_judge"
    manifest_path(path).write_text(json.dumps({"verifiers": [{"id": "rm", "kind": "continuous_reward"}]}))
    assert load_dataset(path).scores.verifiers[0].kind == "continuous_reward"


@pytest.mark.parametrize("fmt", ["jsonl", "csv"])
def test_round_trip_is_exact(tmp_path, fmt):
    b = generate(SynthSpec(n=7, K=3, m=4, score_mode="continuous", seed=11))
    path = save_dataset(b, tmp_path / f"d.{fmt}")
    back = load_dataset(path)
    np.testing.assert_array_equal(back.scores.scores, b.scores.scores)
    np.testing.assert_array_equal(back.y, b.y)
    assert list(back.answers.ravel()) == list(b.answers.ravel())
    assert back.scores.verifiers == b.scores.verifiers
    assert back.content_hash == b.content_hash


def test_split_dev_counts_and_determinism():
    b = generate(SynthSpec(n=200, K=2, m=3, seed=0))
    ls = split_dev(b, 0.01, seed=7)
    assert ls.dev_mask.sum() == 2
    again = split_dev(b, 0.01, seed=7)
    np.testing.assert_array_equal(ls.dev_mask, again.dev_mask)
    small = generate(SynthSpec(n=10, K=2, m=3, seed=0))
    assert split_dev(small, 1.0, 0).dev_mask.all()


def test_split_dev_errors():
    b = generate(SynthSpec(n=10, K=2, m=3, seed=0))
    for bad in (0.0, 1.5):
        with pytest.raises(DatasetError):
            split_dev(b, bad, 0)
    unlabeled = make_bundle(np.zeros((3, 2, 1)))
    with pytest.raises(DatasetError, match="no labels"):
        split_dev(unlabeled, 0.5, 0)


def test_partial_labels_dev_drawn_from_labeled():
    y = np.array([[1, 0], [-1, -1], [0, 1], [-1, -1]])
    b = make_bundle(np.zeros((4, 2, 1)), labels=y)
    mask = split_dev(b, 0.5, 3).dev_mask
    assert mask.sum() == 2 and not mask[1] and not mask[3]


def test_labelset_rejects_partial_query():
    with pytest.raises(DatasetError):
        LabelSet(np.array([[1, -1]]), np.zeros(1, dtype=bool))


def test_validate_flags_constant_verifier():
    scores = np.stack([np.full((4, 3), 0.7), np.linspace(0, 1, 12).reshape(4, 3)], axis=2)
    b = make_bundle(scores)
    rep = validate(b)
    assert rep.degenerate == ["v0"]
    before = b.scores.scores.copy()
    validate(b)
    np.testing.assert_array_equal(b.scores.scores, before)


def test_validate_clean_and_wide():
    b = generate(SynthSpec(n=500, K=2, m=33, score_mode="continuous", seed=1))
    rep = validate(b)
    assert rep.degenerate == []
    assert len(rep.ranges) == 33


def test_concat_and_take():
    b = generate(SynthSpec(n=6, K=3, m=2, seed=0))
    both = concat_bundles([b, b])
    assert both.n == 12 and len(set(both.query_ids)) == 12
    sub = b.take_queries(np.array([4, 1]))
    np.testing.assert_array_equal(sub.y, b.y[[4, 1]])


def test_verifier_ids_unique():
    with pytest.raises(DatasetError):
        make_bundle(np.zeros((2, 2, 2)), verifiers=[VerifierMeta("a"), VerifierMeta("a")])
