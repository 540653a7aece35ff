import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contagion_lens.contagion import Mechanism
from contagion_lens.forest import (
    ConfusionMatrix, Dataset, ForestConfig, ForestModel, ProvenanceError, best_subset_search, evaluate,
    feature_importance, predict, predict_batch, train,
)


def blobs(n=300, seed=0, p=8, informative=(1, 7)):
    """Three classes separated along two informative columns, noise elsewhere."""
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1, 2], n // 3)
    X = rng.normal(size=(len(y), p))
    for c, col in enumerate(informative):
        X[:, col] += 6.0 * (y == c)
    return Dataset(X, y, np.arange(len(y)))


GINI = ForestConfig(n_trees=25, criterion="gini", seed=3)


def test_separable_data_is_learned():
    train_d = blobs(seed=0)
    test_d = blobs(seed=1)
    test_d.ids = test_d.ids + 10_000
    model = train(train_d, GINI)
    cm, acc = evaluate(model, test_d)
    assert acc > 0.95
    assert cm.counts.sum() == len(test_d)


def test_training_is_deterministic_under_seed():
    d = blobs(seed=2)
    a, b = train(d, GINI), train(d, GINI)
    assert a.to_dict() == b.to_dict()
    c = train(d, ForestConfig(n_trees=25, criterion="gini", seed=4))
    assert c.to_dict() != a.to_dict()


def test_auto_criterion_is_deterministic_and_valid():
    d = blobs(seed=5)
    cfg = ForestConfig(n_trees=10, criterion="auto", seed=1, search_trees=5)
    a, b = train(d, cfg), train(d, cfg)
    assert a.criterion in ("gini", "entropy") and a.criterion == b.criterion
    assert a.to_dict() == b.to_dict()


def test_certainty_is_vote_share_of_winner():
    d = blobs(seed=6)
    model = train(d, ForestConfig(n_trees=7, criterion="gini", seed=0))
    votes = model.votes(d.X[:20])
    labels, cert, share = predict_batch(model, d.X[:20])
    assert np.array_equal(votes.sum(axis=1), np.full(20, 7))
    assert np.allclose(cert, votes.max(axis=1) / 7)
    assert np.allclose(share.sum(axis=1), 1.0)
    assert np.array_equal(labels, model.classes[np.argmax(votes, axis=1)])


def test_single_prediction_matches_batch():
    d = blobs(seed=7)
    model = train(d, GINI)
    p = predict(model, d.X[0])
    labels, cert, _ = predict_batch(model, d.X[:1])
    assert p.label == Mechanism(int(labels[0])) and p.certainty == pytest.approx(cert[0])
    assert set(p.votes) == {"Sm", "Cx", "St"}


def test_importance_points_at_informative_columns():
    model = train(blobs(seed=8), GINI)
    top = [name for name, _ in feature_importance(model)[:2]]
    assert set(top) == {model.feature_names[1], model.feature_names[7]}
    assert model.importance.sum() == pytest.approx(1.0)


def test_overlapping_rows_raise_provenance_error():
    d = blobs(seed=9)
    model = train(d, GINI)
    with pytest.raises(ProvenanceError):
        evaluate(model, d.take(np.arange(10)))


def test_model_json_round_trip(tmp_path):
    d = blobs(seed=10)
    model = train(d, GINI)
    p = tmp_path / "m.json"
    model.save(p)
    back = ForestModel.load(p)
    assert np.array_equal(back.votes(d.X), model.votes(d.X))
    assert back.feature_names == model.feature_names
    assert back.train_digest == model.train_digest


def test_bad_model_file(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        ForestModel.load(p)


def test_config_validation():
    with pytest.raises(ValueError):
        train(blobs(), ForestConfig(n_trees=0))
    with pytest.raises(ValueError):
        train(blobs(), ForestConfig(criterion="mse"))


def test_single_class_warns():
    d = Dataset(np.random.default_rng(0).normal(size=(20, 8)), np.zeros(20, dtype=np.int64))
    with pytest.warns(UserWarning):
        model = train(d, GINI)
    assert (predict_batch(model, d.X)[0] == 0).all()


def test_confusion_matrix_arithmetic():
    cm = ConfusionMatrix.from_labels([0, 0, 1, 1, 2, 2], [0, 1, 1, 1, 2, 0])
    assert cm.counts.tolist() == [[1, 1, 0], [0, 2, 0], [1, 0, 1]]
    assert cm.accuracy == pytest.approx(4 / 6)
    assert cm.balanced_accuracy == pytest.approx((0.5 + 1 + 0.5) / 3)


def test_best_subset_search_finds_informative_pair():
    tr, te = blobs(seed=11), blobs(seed=12)
    te.ids = te.ids + 10_000
    res = best_subset_search(tr, te, 2, ForestConfig(n_trees=10, criterion="gini", seed=0), sizes=[2])
    assert res[0].size == 2
    assert set(res[0].best_subset) == {tr.feature_names[1], tr.feature_names[7]}
    assert res[0].membership() == {tr.feature_names[1]: 1.0, tr.feature_names[7]: 1.0}
    assert len(res[0].scores) == 28


def test_membership_splits_weight_over_ties():
    from contagion_lens.forest import SubsetResult

    r = SubsetResult(2, ("a", "b"), 1.0, {("a", "b"): 1.0, ("a", "c"): 1.0}, (("a", "b"), ("a", "c")))
    assert r.membership() == {"a": 1.0, "b": 0.5, "c": 0.5}


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_votes_sum_to_tree_count(seed, n_trees):
    d = blobs(n=60, seed=seed)
    model = train(d, ForestConfig(n_trees=n_trees, criterion="gini", seed=seed))
    assert (model.votes(d.X).sum(axis=1) == n_trees).all()
    assert np.array_equal(train(d, ForestConfig(n_trees=n_trees, criterion="gini", seed=seed)).votes(d.X),
                          model.votes(d.X))
