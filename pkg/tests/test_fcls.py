import numpy as np
import pytest

from hsiu import FclsOptions, InvalidInputError, fcls
from hsiu.fcls import clamp_to_open_simplex, simplex_qp_oracle


class TestFcls:
    def test_noiseless_interior_recovery(self, rng):
        M = rng.uniform(0.1, 1.0, size=(12, 2))
        y = 0.3 * M[:, 0] + 0.7 * M[:, 1]
        A = fcls(y, M).values
        np.testing.assert_allclose(A[:, 0], [0.3, 0.7], atol=1e-6)

    def test_vertex_recovery(self, rng):
        M = rng.uniform(0.1, 1.0, size=(10, 4))
        A = fcls(M[:, 0], M).values
        np.testing.assert_allclose(A[:, 0], [1.0, 0.0, 0.0, 0.0], atol=1e-6)

    def test_matches_projected_gradient_oracle(self):
        rng = np.random.default_rng(99)
        for trial in range(50):
            R = int(rng.integers(3, 6))
            L = int(rng.integers(8, 24))
            M = rng.uniform(0.05, 1.0, size=(L, R))
            if trial % 2 == 0:
                a_true = rng.dirichlet(np.ones(R))
                y = M @ a_true + 1e-3 * rng.standard_normal(L)
            else:
                y = rng.uniform(-0.2, 1.2, size=L)
            a_fcls = fcls(y, M).values[:, 0]
            a_qp = simplex_qp_oracle(y, M)
            assert np.max(np.abs(a_fcls - a_qp)) <= 1e-6, (trial, a_fcls, a_qp)

    def test_output_in_closed_simplex(self, rng):
        M = rng.uniform(0.05, 1.0, size=(16, 3))
        Y = rng.uniform(-0.5, 1.5, size=(16, 40))
        A = fcls(Y, M).values
        assert np.all(A >= 0.0)
        np.testing.assert_allclose(A.sum(axis=0), 1.0, atol=1e-12)

    def test_objective_not_worse_than_truth(self, rng):
        M = rng.uniform(0.05, 1.0, size=(20, 3))
        A_true = rng.dirichlet(np.ones(3), size=30).T
        Y = M @ A_true + 0.01 * rng.standard_normal((20, 30))
        A = fcls(Y, M).values
        obj = np.sum((Y - M @ A) ** 2, axis=0)
        obj_truth = np.sum((Y - M @ A_true) ** 2, axis=0)
        assert np.all(obj <= obj_truth + 1e-9)

    def test_band_mismatch_raises(self, rng):
        with pytest.raises(InvalidInputError):
            fcls(np.ones(5), np.ones((6, 2)))

    def test_bad_weight_rejected(self):
        with pytest.raises(InvalidInputError):
            FclsOptions(sum_weight=0.0)


class TestClampToOpenSimplex:
    def test_boundary_columns_pulled_inside(self):
        A = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]])
        out = clamp_to_open_simplex(A, margin=1e-6)
        assert np.all(out >= 1e-6 - 1e-15)
        np.testing.assert_allclose(out.sum(axis=0), 1.0, atol=1e-12)
        # interior column untouched
        np.testing.assert_allclose(out[:, 2], [0.5, 0.5])

    def test_margin_too_large(self):
        with pytest.raises(InvalidInputError):
            clamp_to_open_simplex(np.full((4, 1), 0.25), margin=0.3)
