import numpy as np
import pytest
from sklearn.base import clone

from energyssl import EnergyGatedSSLClassifier
from energyssl.data import synth_generate, synth_test_pool
from energyssl.errors import DataError


def _arrays(num_classes=3, per_class=6, size=16, seed=0, unlabeled_frac=0.5):
    pool = synth_generate(num_classes, [per_class] * num_classes, size, seed=seed)
    X = np.stack([s.pixels for s in pool])
    y = np.array([s.label for s in pool])
    rng = np.random.default_rng(seed)
    hide = rng.random(len(y)) < unlabeled_frac
    y = np.where(hide, -1, y)
    if (y != -1).sum() < num_classes:  # keep at least one label per class
        y = np.array([s.label for s in pool])
    return X, y


@pytest.fixture(scope="module")
def fitted():
    X, y = _arrays()
    est = EnergyGatedSSLClassifier(total_iters=8, eval_interval=4, seed=0)
    return est.fit(X, y), X


class TestSklearnProtocol:
    def test_get_set_params_roundtrip(self):
        est = EnergyGatedSSLClassifier(tau_e=-7.0)
        params = est.get_params()
        assert params["tau_e"] == -7.0
        est.set_params(lambda_u=2.0)
        assert est.lambda_u == 2.0

    def test_clone(self):
        est = EnergyGatedSSLClassifier(total_iters=5, tau_e=-6.0)
        cl = clone(est)
        assert cl.get_params() == est.get_params()

    def test_classes_attribute(self, fitted):
        est, _ = fitted
        np.testing.assert_array_equal(est.classes_, [0, 1, 2])


class TestFitPredict:
    def test_predict_shapes_and_range(self, fitted):
        est, X = fitted
        preds = est.predict(X)
        assert preds.shape == (len(X),)
        assert set(preds.tolist()) <= {0, 1, 2}

    def test_predict_proba_simplex(self, fitted):
        est, X = fitted
        proba = est.predict_proba(X)
        assert proba.shape == (len(X), 3)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, rtol=1e-5)
        assert (proba >= 0).all()

    def test_proba_argmax_matches_predict(self, fitted):
        est, X = fitted
        np.testing.assert_array_equal(est.predict_proba(X).argmax(axis=1), est.predict(X))

    def test_deterministic_given_seed(self):
        X, y = _arrays()
        a = EnergyGatedSSLClassifier(total_iters=4, eval_interval=2, seed=7).fit(X, y)
        b = EnergyGatedSSLClassifier(total_iters=4, eval_interval=2, seed=7).fit(X, y)
        np.testing.assert_array_equal(a.predict(X), b.predict(X))


class TestValidation:
    def test_unfitted_predict_raises(self):
        from sklearn.exceptions import NotFittedError

        X, _ = _arrays()
        with pytest.raises(NotFittedError):
            EnergyGatedSSLClassifier().predict(X)

    def test_bad_shapes(self):
        est = EnergyGatedSSLClassifier(total_iters=2)
        with pytest.raises(DataError):
            est.fit(np.zeros((4, 8, 9)), np.zeros(4))
        with pytest.raises(DataError):
            est.fit(np.zeros((4, 8, 8)), np.zeros(3))

    def test_pixel_range_enforced(self):
        est = EnergyGatedSSLClassifier(total_iters=2)
        X = np.full((4, 8, 8), 2.0)
        with pytest.raises(DataError):
            est.fit(X, np.array([0, 1, 0, 1]))

    def test_all_unlabeled_rejected(self):
        est = EnergyGatedSSLClassifier(total_iters=2)
        with pytest.raises(DataError):
            est.fit(np.zeros((4, 8, 8)), np.full(4, -1))

    def test_predict_size_mismatch(self, fitted):
        est, _ = fitted
        with pytest.raises(DataError):
            est.predict(np.zeros((2, 8, 8)))
