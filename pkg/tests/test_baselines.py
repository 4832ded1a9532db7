import numpy as np
import pytest

from weaver.baselines import (
    first_sample,
    logreg_fit,
    logreg_predict,
    majority_vote,
    naive_bayes_fit,
    naive_bayes_select,
    naive_ensemble,
    single_verifier,
    top_k_oracle_ensemble,
)
from weaver.errors import DatasetError
from weaver.evaluation import pass_at_k, roc_auc, success_rate
from weaver.synth import SynthSpec, generate


def test_first_sample():
    b = generate(SynthSpec(n=3, K=4, m=2, seed=0))
    sel = first_sample(b)
    assert len(sel) == 3 and not sel.indices.any()
    assert success_rate(sel, b.y) == b.y[:, 0].mean()


@pytest.mark.parametrize(
    "row, want",
    [(["a", "b", "a"], 0), (["a", "b"], 0), (["x", "y", "z"], 0),
     (["b", "a", "a"], 1), ([" 7", "3", "7 ", "3"], 0), (["3", "7", "7", "3"], 0)],
)
def test_majority_vote(row, want):
    assert majority_vote([row]).indices[0] == want


def test_majority_needs_answers():
    with pytest.raises(DatasetError):
        majority_vote(None)


def test_naive_ensemble_examples():
    s = np.array([[[0.2], [0.8], [0.5]]]).reshape(1, 3, 1)
    assert naive_ensemble(s).indices[0] == single_verifier(s, 0).indices[0] == 1
    tie = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    assert naive_ensemble(tie).indices[0] == 0
    s = np.array([[[0.5, 0.4], [0.3, 0.5], [0.9, 0.9]]])
    assert naive_ensemble(s).indices[0] == 2


def test_naive_ensemble_permutation_invariant():
    s = np.random.default_rng(0).random((20, 6, 5))
    perm = [3, 0, 4, 1, 2]
    np.testing.assert_array_equal(naive_ensemble(s).indices, naive_ensemble(s[:, :, perm]).indices)


def test_top_k_oracle():
    b = generate(SynthSpec(n=200, K=8, m=10, score_mode="continuous", seed=1))
    s, y = b.scores.scores, b.y
    np.testing.assert_array_equal(top_k_oracle_ensemble(s, y, 10).indices, naive_ensemble(s).indices)
    acc = [success_rate(single_verifier(s, c), y) for c in range(10)]
    best = int(np.argmax(acc))
    np.testing.assert_array_equal(top_k_oracle_ensemble(s, y, 1).indices, single_verifier(s, best).indices)
    with pytest.raises(DatasetError):
        top_k_oracle_ensemble(s, y, 11)


def test_top_one_with_a_perfect_verifier_reaches_pass_at_k():
    rng = np.random.default_rng(2)
    y = (rng.random((300, 8)) < 0.3).astype(int)
    s = np.concatenate([y[:, :, None].astype(float), rng.random((300, 8, 9))], axis=2)
    sel = top_k_oracle_ensemble(s, y, 1)
    assert success_rate(sel, y) == pytest.approx(pass_at_k(y, 8))


def test_logreg_separable():
    y = np.r_[np.zeros(50), np.ones(50)]
    model = logreg_fit(y[:, None], y, l2=1e-4)
    assert ((logreg_predict(model, y[:, None]) >= 0.5) == y).mean() == 1.0


def test_logreg_noise_auc_near_half():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4000, 3))
    y = (rng.random(4000) < 0.5).astype(int)
    model = logreg_fit(x[:2000], y[:2000])
    assert abs(roc_auc(logreg_predict(model, x[2000:]), y[2000:]) - 0.5) <= 0.05


def test_continuous_features_beat_binarized():
    b = generate(SynthSpec(n=400, K=10, m=5, score_mode="continuous",
                           f1=(3.0, 2.0), f0=(2.0, 3.0), seed=4))
    x = b.scores.flat()
    y = b.y.ravel()
    half = x.shape[0] // 2
    cont = logreg_fit(x[:half], y[:half])
    disc = logreg_fit((x[:half] >= 0.5).astype(float), y[:half])
    auc_c = roc_auc(logreg_predict(cont, x[half:]), y[half:])
    auc_d = roc_auc(logreg_predict(disc, (x[half:] >= 0.5).astype(float)), y[half:])
    assert auc_c >= auc_d
    assert cont.trained_on == "continuous" and disc.trained_on == "binary"


def test_logreg_monotone_in_positive_weight_feature():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(500, 2))
    y = (x[:, 0] + 0.3 * rng.normal(size=500) > 0).astype(int)
    model = logreg_fit(x, y)
    assert model.weights[0] > 0
    grid = np.c_[np.linspace(-2, 2, 50), np.zeros(50)]
    assert np.all(np.diff(logreg_predict(model, grid)) > 0)


def test_logreg_train_fraction_is_seeded():
    rng = np.random.default_rng(6)
    x, y = rng.normal(size=(200, 2)), rng.integers(0, 2, 200)
    a = logreg_fit(x, y, train_fraction=0.5, seed=1)
    b = logreg_fit(x, y, train_fraction=0.5, seed=1)
    np.testing.assert_array_equal(a.weights, b.weights)


def test_naive_bayes_matches_supervised_posterior():
    b = generate(SynthSpec(n=300, K=6, m=4, seed=7))
    votes = b.scores.scores.astype(int)
    params = naive_bayes_fit(votes.reshape(-1, 4), b.y.ravel())
    sel = naive_bayes_select(votes, params)
    assert sel.indices.shape == (300,)
    assert success_rate(sel, b.y) >= success_rate(first_sample(b), b.y)


def test_baselines_in_range_and_deterministic():
    b = generate(SynthSpec(n=50, K=5, m=3, score_mode="continuous", seed=8))
    for fn in (lambda: naive_ensemble(b.scores), lambda: majority_vote(b.answers), lambda: first_sample(b)):
        a, c = fn().indices, fn().indices
        np.testing.assert_array_equal(a, c)
        assert a.min() >= 0 and a.max() < b.K


def test_logreg_stationary_point():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(500, 4))
    y = (rng.random(500) < 1 / (1 + np.exp(-x @ [1.0, -2.0, 0.5, 0.0]))).astype(int)
    model = logreg_fit(x, y, l2=1e-2)
    p = logreg_predict(model, x)
    grad_w = x.T @ (p - y) / 500 + 1e-2 * model.weights
    assert np.abs(grad_w).max() <= 1e-5
    assert abs(np.mean(p - y)) <= 1e-5
