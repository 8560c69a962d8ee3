import warnings

import numpy as np
import pytest

from lidarhsi.classifiers import (
    ForestModel,
    RbfnnModel,
    SvmModel,
    TrainingSet,
    Tree,
    load_model,
    rbfnn_train,
    rf_train,
    save_model,
    svm_train,
)
from lidarhsi.classifiers.forest import grow_tree
from lidarhsi.classifiers.modelio import MAGIC, pack, unpack
from lidarhsi.classifiers.rbfnn import activations, cluster_widths, kmeans
from lidarhsi.classifiers.svm import ConvergenceWarning, fit_fixed, make_folds, train_binary
from lidarhsi.errors import DataError
from lidarhsi.seeding import rng


def blobs(n_per=20, k=2, sep=10.0, d=2, seed=0):
    gen = np.random.default_rng(seed)
    X = np.vstack([gen.normal(c * sep, 1.0, size=(n_per, d)) for c in range(k)])
    y = np.repeat(np.arange(1, k + 1), n_per)
    return TrainingSet(X, y)


def xor(n_per=15, seed=0):
    gen = np.random.default_rng(seed)
    corners = [(0, 0, 1), (5, 5, 1), (0, 5, 2), (5, 0, 2)]
    X = np.vstack([gen.normal((cx, cy), 0.4, size=(n_per, 2)) for cx, cy, _ in corners])
    y = np.repeat([c for *_, c in corners], n_per)
    return TrainingSet(X, y)


def six_class(seed=0):
    gen = np.random.default_rng(seed)
    means = gen.normal(0, 4, size=(6, 5))
    X = np.vstack([gen.normal(m, 1.0, size=(25, 5)) for m in means])
    return TrainingSet(X, np.repeat(np.arange(1, 7), 25))


class TestTrainingSet:
    def test_counts(self):
        t = TrainingSet(np.zeros((5, 2)), [1, 2, 2, 3, 3])
        assert t.counts.tolist() == [1, 2, 2] and t.n_classes == 3

    @pytest.mark.parametrize("X,y", [
        (np.zeros((3, 2)), [1, 3, 3]),
        (np.zeros((3, 2)), [0, 1, 1]),
        (np.array([[np.nan, 0]]), [1]),
        (np.zeros((3, 2)), [1, 2]),
    ])
    def test_rejects(self, X, y):
        with pytest.raises(DataError):
            TrainingSet(X, y)


class TestSvm:
    def test_blobs(self):
        train = blobs()
        model = svm_train(train)
        assert np.array_equal(model.predict(train.X), train.y)

    def test_one_sample_per_class(self):
        train = TrainingSet(np.array([[0.0, 0.0], [3.0, 3.0], [0.0, 6.0]]), [1, 2, 3])
        model = svm_train(train, C_grid=[1.0], gamma_grid=[0.5])
        assert model.predict(train.X).tolist() == [1, 2, 3]

    def test_xor(self):
        train = xor()
        model = svm_train(train)
        assert np.array_equal(model.predict(train.X), train.y)
        # the decision surface separates the quadrants on a dense grid
        gx, gy = np.meshgrid(np.linspace(-0.5, 5.5, 25), np.linspace(-0.5, 5.5, 25))
        grid = np.column_stack([gx.ravel(), gy.ravel()])
        pred = model.predict(grid)
        near = [np.hypot(grid[:, 0] - cx, grid[:, 1] - cy) < 1.0 for cx, cy in [(0, 0), (5, 5), (0, 5), (5, 0)]]
        assert np.all(pred[near[0] | near[1]] == 1) and np.all(pred[near[2] | near[3]] == 2)

    def test_support_vectors_predict_labels(self):
        train = blobs(k=3)
        model = svm_train(train)
        sv_labels = [train.y[np.flatnonzero((train.X == sv).all(axis=1))[0]] for sv in model.support_vectors]
        assert model.predict(model.support_vectors).tolist() == sv_labels

    def test_vote_tie_smallest(self):
        # pair (1,2) -> 1, pair (1,3) -> 3, pair (2,3) -> 2
        model = SvmModel(np.array([1, 2, 3]), np.array([[0, 1], [0, 2], [1, 2]]), np.zeros((1, 2)),
                         np.zeros((3, 1)), np.array([-1.0, 1.0, -1.0]), 1.0, 1.0, np.ones(3, bool))
        assert model.predict(np.zeros((4, 2))).tolist() == [1] * 4

    def test_decision_oracle(self):
        train = six_class()
        model = svm_train(train, C_grid=[4.0], gamma_grid=[0.05])
        X = np.random.default_rng(1).normal(0, 4, size=(60, 5))
        labels = []
        for x in X:
            votes = np.zeros(len(model.classes), int)
            for p, (a, b) in enumerate(model.pairs):
                f = sum(model.dual_coef[p, s] * np.exp(-model.gamma * np.sum((x - sv) ** 2))
                        for s, sv in enumerate(model.support_vectors)) - model.rho[p]
                votes[a if f > 0 else b] += 1
            labels.append(model.classes[int(np.argmax(votes))])
        assert model.predict(X).tolist() == labels

    def test_dual_feasibility(self):
        train = six_class()
        C = 2.0
        model = fit_fixed(train, C, 0.05)
        assert np.all(np.abs(model.dual_coef) <= C + 1e-12)
        assert np.allclose(model.dual_coef.sum(axis=1), 0.0, atol=1e-6)
        assert model.converged.all()

    def test_binary_kkt(self):
        gen = np.random.default_rng(2)
        X = gen.normal(size=(40, 2))
        y = np.where(X[:, 0] + 0.3 * gen.normal(size=40) > 0, 1.0, -1.0)
        K = np.exp(-0.5 * ((X[:, None] - X[None]) ** 2).sum(-1))
        C = 1.0
        alpha, rho, ok, _ = train_binary(K, y, C)
        grad = y * (K @ (alpha * y)) - 1.0
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        assert ok
        assert np.max(-y[up] * grad[up]) - np.min(-y[low] * grad[low]) <= 1e-3

    def test_iteration_cap_warns(self, monkeypatch):
        import lidarhsi.classifiers.svm as svm

        monkeypatch.setattr(svm, "KERNEL_EVAL_CAP", 2)
        with pytest.warns(ConvergenceWarning):
            model = fit_fixed(xor(), 100.0, 0.5)
        assert not model.converged.all()

    def test_cv_tie_prefers_smallest(self):
        train = blobs(sep=30.0)
        model = svm_train(train, C_grid=[4.0, 1.0, 16.0], gamma_grid=[0.25, 0.0625])
        assert (model.C, model.gamma) == (1.0, 0.0625)
        assert model.cv_accuracy == 1.0

    def test_folds_stratified_fallback(self):
        y = np.array([1] * 20 + [2] * 2)
        folds = make_folds(y, 5, seed=0)
        assert sorted(np.concatenate(folds).tolist()) == list(range(22))
        for f in folds:
            assert set(np.delete(y, f)) == {1, 2}

    def test_deterministic(self):
        a = svm_train(six_class(), seed=3).to_bytes()
        assert svm_train(six_class(), seed=3).to_bytes() == a


class TestForest:
    def test_single_class(self):
        train = TrainingSet(np.random.default_rng(0).normal(size=(10, 3)), np.ones(10))
        model = rf_train(train, trees=5)
        assert np.all(model.predict(np.random.default_rng(1).normal(size=(20, 3))) == 1)

    def test_same_seed_identical(self):
        train = six_class()
        assert rf_train(train, trees=20, seed=5).to_bytes() == rf_train(train, trees=20, seed=5).to_bytes()
        assert rf_train(train, trees=20, seed=5).to_bytes() != rf_train(train, trees=20, seed=6).to_bytes()

    def test_thread_count_irrelevant(self):
        train = six_class()
        assert rf_train(train, trees=20, seed=5, threads=3).to_bytes() == rf_train(train, trees=20, seed=5).to_bytes()

    def test_sign_problem(self):
        x = np.random.default_rng(2).uniform(-1, 1, 100)
        y = np.where(x < 0, 1, 2)
        # exhaustive depth-1 oracle: the best stump separates the data perfectly
        stump = max(np.mean(np.where(x <= t, 1, 2) == y) for t in x)
        model = rf_train(TrainingSet(x[:, None], y), trees=25)
        acc = np.mean(model.predict(x[:, None]) == y)
        assert stump == 1.0 and acc >= 0.99

    def test_single_tree_forest(self):
        train = six_class()
        model = rf_train(train, trees=1, seed=9)
        X = np.random.default_rng(3).normal(0, 4, size=(50, 5))
        assert np.array_equal(model.predict(X), model.classes[model.trees[0].predict_index(X)])

    def test_vote_tie(self):
        leaf = lambda votes: Tree(np.array([-1]), np.zeros(1), np.array([-1]), np.array([-1]), np.array([votes]))
        trees = [leaf([0, 3])] * 100 + [leaf([3, 0])] * 100
        model = ForestModel(np.array([1, 2]), trees, np.zeros(200, np.uint64), 1)
        assert model.vote_counts(np.zeros((1, 1))).tolist() == [[100, 100]]
        assert model.predict(np.zeros((1, 1))).tolist() == [1]

    def test_per_tree_replay(self):
        train = six_class()
        model = rf_train(train, trees=10, seed=4)
        y_index = np.searchsorted(model.classes, train.y)
        X = np.random.default_rng(5).normal(0, 4, size=(40, 5))
        counts = np.zeros((40, 6), int)
        for tree, s in zip(model.trees, model.seeds):
            gen = rng(int(s))
            boot = gen.integers(0, len(y_index), len(y_index))
            again = grow_tree(train.X[boot], y_index[boot], 6, 3, gen)
            assert np.array_equal(again.feature, tree.feature)
            assert np.array_equal(again.threshold, tree.threshold)
            counts[np.arange(40), again.predict_index(X)] += 1
        assert np.array_equal(model.vote_counts(X), counts)

    def test_tree_structure(self):
        model = rf_train(six_class(), trees=5)
        for tree in model.trees:
            internal = tree.feature >= 0
            assert np.all(np.isfinite(tree.threshold[internal]))
            leaves = ~internal
            assert np.all(tree.votes[leaves].sum(axis=1) > 0)
            assert np.all(tree.votes[internal].sum(axis=1)
                          == tree.votes[tree.left[internal]].sum(axis=1) + tree.votes[tree.right[internal]].sum(axis=1))

    def test_oob_sanity(self):
        train = blobs(n_per=40, k=3, sep=6.0, d=4)
        model = rf_train(train, trees=15, seed=1)
        union_acc = np.mean(model.predict(train.X) == train.y)
        for tree, s in zip(model.trees, model.seeds):
            boot = rng(int(s)).integers(0, len(train.y), len(train.y))
            oob = np.setdiff1d(np.arange(len(train.y)), boot)
            oob_acc = np.mean(model.classes[tree.predict_index(train.X[oob])] == train.y[oob])
            assert union_acc >= oob_acc

    def test_needs_two_samples(self):
        with pytest.raises(DataError):
            rf_train(TrainingSet(np.zeros((1, 2)), [1]))


class TestRbfnn:
    def test_memorise_one_per_class(self):
        train = TrainingSet(np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]]), [1, 2, 3])
        model = rbfnn_train(train, centers_per_class=1)
        assert np.array_equal(model.centers, train.X)
        assert model.predict(train.X).tolist() == [1, 2, 3]

    def test_blobs(self):
        train = blobs()
        assert np.array_equal(rbfnn_train(train).predict(train.X), train.y)

    def test_normal_equations(self):
        train = six_class()
        model = rbfnn_train(train)
        A = activations(train.X, model.centers, model.widths)
        T = (train.y[:, None] == model.classes[None]).astype(float)
        residual = np.linalg.norm(A.T @ (A @ model.weights - T))
        assert residual <= 1e-5 * np.linalg.norm(A.T @ T)

    def test_tie_smallest(self):
        model = RbfnnModel(np.array([1, 2, 3]), np.zeros((1, 2)), np.ones(1), np.array([1]), np.zeros((2, 3)))
        assert model.predict(np.ones((3, 2))).tolist() == [1, 1, 1]

    def test_activation_oracle(self):
        train = six_class()
        model = rbfnn_train(train)
        X = np.random.default_rng(6).normal(0, 4, size=(30, 5))
        expected = []
        for x in X:
            h = [np.exp(-np.sum((x - c) ** 2) / (2 * w * w)) for c, w in zip(model.centers, model.widths)]
            expected.append(model.classes[int(np.argmax(np.append(h, 1.0) @ model.weights))])
        assert model.predict(X).tolist() == expected

    def test_invariants(self):
        model = rbfnn_train(six_class(), centers_per_class=4)
        assert np.all(model.widths > 0)
        assert len(model.centers) >= 6
        assert model.weights.shape == (len(model.centers) + 1, 6)

    def test_width_rules(self):
        X = np.array([[0.0, 0.0], [2.0, 0.0], [10.0, 10.0], [10.0, 12.0], [50.0, 50.0]])
        centers = np.array([[1.0, 0.0], [10.0, 11.0], [50.0, 50.0]])
        assign = np.array([0, 0, 1, 1, 2])
        assert cluster_widths(X, centers, assign, "rms").tolist() == [1.0, 1.0, 1.0]
        # equal distances: distance std collapses to the floor
        assert cluster_widths(X, centers, assign, "distance_std")[:2].tolist() == [1e-6, 1e-6]
        with pytest.raises(DataError):
            cluster_widths(X, centers, assign, "median")

    def test_kmeans_deterministic(self):
        X = np.random.default_rng(7).normal(size=(50, 3))
        a, _ = kmeans(X, 4, rng(1))
        b, _ = kmeans(X, 4, rng(1))
        assert np.array_equal(a, b)


@pytest.mark.parametrize("train_fn", [
    lambda t: svm_train(t, seed=1),
    lambda t: rf_train(t, trees=30, seed=1),
    lambda t: rbfnn_train(t, seed=1),
], ids=["svm", "rf", "rbfnn"])
def test_permutation_invariance(train_fn):
    train = six_class(seed=4)
    perm = np.array([0, 4, 6, 1, 3, 2, 5])  # perm[old] = new
    X = train.X + np.random.default_rng(8).normal(0, 0.5, size=train.X.shape)
    base = train_fn(train).predict(X)
    relabelled = train_fn(TrainingSet(train.X, perm[train.y])).predict(X)
    agree = np.mean(perm[base] == relabelled)
    assert agree >= 0.97, agree


class TestModelIO:
    @pytest.mark.parametrize("train_fn", [
        lambda t: svm_train(t, C_grid=[1.0], gamma_grid=[0.1]),
        lambda t: rf_train(t, trees=5),
        lambda t: rbfnn_train(t),
    ], ids=["svm", "rf", "rbfnn"])
    def test_roundtrip(self, tmp_path, train_fn):
        train = six_class()
        model = train_fn(train)
        save_model(model, tmp_path / "m.bin")
        back = load_model(tmp_path / "m.bin")
        assert type(back) is type(model)
        assert back.to_bytes() == model.to_bytes()
        assert np.array_equal(back.predict(train.X), model.predict(train.X))

    def test_header_layout(self):
        blob = pack("rf", {"a": np.arange(3)})
        assert blob[:8] == MAGIC
        assert blob[8:10] == b"\x01\x00" and blob[10] == 2

    def test_bad_magic(self):
        with pytest.raises(DataError, match="magic"):
            unpack(b"NOTAMODEL" + bytes(20))

    def test_truncated(self):
        blob = pack("svm", {"a": np.arange(10.0)})
        with pytest.raises(DataError):
            unpack(blob[:-8])

    def test_wrong_kind(self):
        blob = pack("rf", {"a": np.arange(3)})
        with pytest.raises(DataError):
            SvmModel.from_bytes(blob)

    def test_missing_arrays(self, tmp_path):
        (tmp_path / "m").write_bytes(pack("rbfnn", {"classes": np.arange(3)}))
        with pytest.raises(DataError):
            load_model(tmp_path / "m")


def test_convergence_warning_is_runtime_warning():
    assert issubclass(ConvergenceWarning, RuntimeWarning)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fit_fixed(blobs(), 1.0, 0.1)
