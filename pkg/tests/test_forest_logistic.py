import numpy as np
import pytest

from markerloop.models import (
    HyperParams,
    deserialize_model,
    predict_proba,
    serialize_model,
    train_logistic,
    train_random_forest,
)
from markerloop.models.forest import ForestLeaf, ForestSplit
from markerloop.models.logistic import loss_gradient, loss_value
from markerloop.preprocess import ColumnInfo, DesignMatrix

from .oracles import oracle_gini_tree, sigmoid as osig


def make_matrix(values, kinds=None, sentinel=None):
    values = np.asarray(values, dtype=float)
    kinds = kinds or ["numeric"] * values.shape[1]
    cols = tuple(
        ColumnInfo(f"m{j}", f"m{j}", kinds[j]) for j in range(values.shape[1])
    )
    return DesignMatrix(values, cols, sentinel=sentinel)


def flatten_forest(node):
    if isinstance(node, ForestLeaf):
        return [("leaf", round(node.probability, 12), node.n_rows)]
    return (
        [("split", node.feature, round(node.threshold, 12))]
        + flatten_forest(node.left)
        + flatten_forest(node.right)
    )


def flatten_oracle(node):
    if node[0] == "leaf":
        return [("leaf", round(node[1], 12), node[2])]
    _, j, thr, dl, gain, left, right = node
    return [("split", j, round(thr, 12))] + flatten_oracle(left) + flatten_oracle(right)


class TestForest:
    def test_single_tree_full_columns_matches_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            n = int(rng.integers(8, 30))
            d = int(rng.integers(1, 4))
            X = rng.normal(size=(n, d)).round(1)
            y = (rng.random(n) < 0.5).astype(float)
            if y.sum() < 2 or (1 - y).sum() < 2:
                continue
            hp = HyperParams(
                family="random_forest",
                max_depth=3,
                n_estimators=1,
                bootstrap=False,
                max_features=d,
            )
            model = train_random_forest(make_matrix(X), y, hp)
            ref = oracle_gini_tree(X, y, list(range(n)), 3)
            assert flatten_forest(model.payload["trees"][0]) == flatten_oracle(ref)

    def test_separable_data_reaches_perfect_training_accuracy(self):
        rng = np.random.default_rng(1)
        X = np.concatenate([rng.normal(-3, 0.5, size=(40, 2)), rng.normal(3, 0.5, size=(40, 2))])
        y = np.array([0] * 40 + [1] * 40, dtype=float)
        hp = HyperParams(family="random_forest", max_depth=7, n_estimators=15)
        model = train_random_forest(make_matrix(X), y, hp)
        pred = (predict_proba(model, make_matrix(X)) >= 0.5).astype(float)
        assert np.mean(pred == y) == 1.0

    def test_same_seed_identical_predictions(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(100, 5))
        y = (rng.random(100) < osig(X[:, 0])).astype(float)
        hp = HyperParams(family="random_forest", max_depth=4, n_estimators=10, seed=42)
        a = train_random_forest(make_matrix(X), y, hp)
        b = train_random_forest(make_matrix(X), y, hp)
        assert serialize_model(a) == serialize_model(b)
        assert np.array_equal(
            predict_proba(a, make_matrix(X)), predict_proba(b, make_matrix(X))
        )

    def test_depth_cap_respected(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(200, 3))
        y = (rng.random(200) < 0.5).astype(float)
        hp = HyperParams(family="random_forest", max_depth=2, n_estimators=5)
        model = train_random_forest(make_matrix(X), y, hp)

        def depth(node):
            if isinstance(node, ForestLeaf):
                return 0
            return 1 + max(depth(node.left), depth(node.right))

        assert all(depth(t) <= 2 for t in model.payload["trees"])

    def test_prediction_is_mean_of_leaf_probabilities(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(60, 2))
        y = (rng.random(60) < 0.5).astype(float)
        hp = HyperParams(family="random_forest", max_depth=3, n_estimators=7, seed=1)
        model = train_random_forest(make_matrix(X), y, hp)
        from markerloop.models.forest import gini_tree_predict

        stack = np.stack(
            [gini_tree_predict(t, X, None) for t in model.payload["trees"]]
        )
        assert np.allclose(predict_proba(model, make_matrix(X)), stack.mean(axis=0))

    def test_serialization_roundtrip(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(50, 3))
        y = (rng.random(50) < 0.5).astype(float)
        hp = HyperParams(family="random_forest", max_depth=3, n_estimators=4)
        model = train_random_forest(make_matrix(X), y, hp)
        back = deserialize_model(serialize_model(model))
        assert np.array_equal(
            predict_proba(model, make_matrix(X)), predict_proba(back, make_matrix(X))
        )


class TestLogistic:
    def test_separable_direction(self):
        X = np.linspace(-2, 2, 40).reshape(-1, 1)
        y = (X[:, 0] > 0).astype(float)
        hp = HyperParams(family="logistic", l2_lambda=1.0)
        model = train_logistic(make_matrix(X), y, hp)
        assert model.payload.weights[0] > 0

    def test_strong_regularization_collapses_to_base_rate(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(200, 3))
        y = (rng.random(200) < 0.3).astype(float)
        hp = HyperParams(family="logistic", l2_lambda=1e9)
        model = train_logistic(make_matrix(X), y, hp)
        p = predict_proba(model, make_matrix(X))
        assert np.allclose(p, float(np.mean(y)), atol=1e-3)
        assert np.all(np.abs(model.payload.weights) < 1e-4)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(80, 4))
        y = (rng.random(80) < osig(X[:, 0] - X[:, 2])).astype(float)
        hp = HyperParams(family="logistic", l2_lambda=2.0)
        model = train_logistic(make_matrix(X), y, hp)
        fit = model.payload
        Xs = (X - fit.means) / fit.stds
        theta = np.concatenate([fit.weights, [fit.bias]])
        grad = loss_gradient(Xs, y, theta[:-1], theta[-1], 2.0)
        eps = 1e-6
        for k in range(len(theta)):
            up = theta.copy()
            up[k] += eps
            dn = theta.copy()
            dn[k] -= eps
            fd = (
                loss_value(Xs, y, up[:-1], up[-1], 2.0)
                - loss_value(Xs, y, dn[:-1], dn[-1], 2.0)
            ) / (2 * eps)
            assert abs(grad[k] - fd) <= 1e-4

    def test_converged_gradient_small(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(150, 3))
        y = (rng.random(150) < osig(0.8 * X[:, 1])).astype(float)
        hp = HyperParams(family="logistic", l2_lambda=1.0)
        model = train_logistic(make_matrix(X), y, hp)
        assert model.metadata["converged"]
        fit = model.payload
        Xs = (X - fit.means) / fit.stds
        g = loss_gradient(Xs, y, fit.weights, fit.bias, 1.0)
        assert float(np.linalg.norm(g)) <= 1e-6

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(60, 2))
        y = (rng.random(60) < 0.5).astype(float)
        hp = HyperParams(family="logistic")
        assert serialize_model(train_logistic(make_matrix(X), y, hp)) == serialize_model(
            train_logistic(make_matrix(X), y, hp)
        )

    def test_serialization_roundtrip(self):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(60, 3))
        y = (rng.random(60) < 0.4).astype(float)
        model = train_logistic(make_matrix(X), y, HyperParams(family="logistic"))
        back = deserialize_model(serialize_model(model))
        Xq = make_matrix(rng.normal(size=(30, 3)))
        assert np.array_equal(predict_proba(model, Xq), predict_proba(back, Xq))

    def test_indicator_columns_not_standardized(self):
        rng = np.random.default_rng(11)
        vals = np.column_stack([rng.normal(5, 2, size=80), (rng.random(80) < 0.5).astype(float)])
        m = make_matrix(vals, kinds=["numeric", "indicator"])
        y = (rng.random(80) < 0.5).astype(float)
        model = train_logistic(m, y, HyperParams(family="logistic"))
        assert model.payload.means[1] == 0.0
        assert model.payload.stds[1] == 1.0


class TestModelDocuments:
    def test_unknown_version_rejected(self):
        rng = np.random.default_rng(12)
        X = rng.normal(size=(40, 2))
        y = (rng.random(40) < 0.5).astype(float)
        model = train_logistic(make_matrix(X), y, HyperParams(family="logistic"))
        doc = serialize_model(model)
        import json

        bad = json.loads(doc)
        bad["version"] = 99
        from markerloop.models import ModelDocumentError

        with pytest.raises(ModelDocumentError, match="version"):
            deserialize_model(json.dumps(bad))

    def test_corrupted_document_rejected(self):
        from markerloop.models import ModelDocumentError

        with pytest.raises(ModelDocumentError):
            deserialize_model("{broken")
        with pytest.raises(ModelDocumentError):
            deserialize_model('{"format": "something-else"}')

    def test_metadata_preserved_verbatim(self):
        rng = np.random.default_rng(13)
        X = rng.normal(size=(40, 2))
        y = (rng.random(40) < 0.5).astype(float)
        model = train_logistic(
            make_matrix(X), y, HyperParams(family="logistic", seed=321),
            metadata={"data_fingerprint": "abc123"},
        )
        back = deserialize_model(serialize_model(model))
        assert back.metadata["seed"] == 321
        assert back.metadata["data_fingerprint"] == "abc123"
        assert back.hyperparams == model.hyperparams
