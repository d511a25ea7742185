import numpy as np
import pytest

from momcorr.models import LinearSpec, MlpSpec, init_params, value_and_grad_batch
from momcorr.taylor import (
    TaylorTerm,
    z_minibatch,
    z_outer_batch,
    z_regression,
    z_td0,
    z_td_lambda,
    z_td_n,
)


class TestRegressionTerm:
    def test_outer_product_by_hand(self):
        Z = z_regression(np.array([1.0, 2.0]))
        assert np.array_equal(Z.data, [[1.0, 2.0], [2.0, 4.0]])

    def test_zero_gradient(self):
        Z = z_regression(np.zeros(3))
        assert np.all(Z.data == 0.0)

    def test_symmetric_psd(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            g = rng.normal(size=6)
            Z = z_regression(g).data
            assert np.array_equal(Z, Z.T)
            v = rng.normal(size=6)
            assert v @ Z @ v >= -1e-14

    def test_diagonal_kind(self):
        g = np.array([1.0, -2.0, 0.5])
        assert np.array_equal(z_regression(g, "diag").data, g * g)


class TestTdTerm:
    def test_hand_example(self):
        Z = z_td0(np.array([1.0, 0.0]), np.array([0.0, 1.0]), gamma=0.9)
        assert np.allclose(Z.data, [[1.0, 0.0], [-0.9, 0.0]])

    def test_gamma_zero_is_regression(self):
        rng = np.random.default_rng(1)
        g, gp = rng.normal(size=5), rng.normal(size=5)
        assert np.array_equal(z_td0(g, gp, 0.0).data, z_regression(g).data)

    def test_linear_term_independent_of_theta(self):
        # for V = theta . phi the factors are features: Z = (phi - gamma phi') phi^T
        spec = LinearSpec(4)
        rng = np.random.default_rng(2)
        s, sp = rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
        for theta in (np.zeros(4), rng.normal(size=4)):
            _, gs = value_and_grad_batch(spec, theta, s)
            _, gsp = value_and_grad_batch(spec, theta, sp)
            Z = z_td0(gs[0], gsp[0], 0.9)
            assert np.array_equal(Z.data, np.outer(s[0] - 0.9 * sp[0], s[0]))


class TestNStepAndLambda:
    def test_n1_reduces_to_td0(self):
        rng = np.random.default_rng(3)
        g, gn = rng.normal(size=4), rng.normal(size=4)
        assert np.array_equal(z_td_n(g, gn, 0.9, 1).data, z_td0(g, gn, 0.9).data)

    def test_two_step_hand_example(self):
        Z = z_td_n(np.array([1.0, 0.0]), np.array([0.0, 1.0]), gamma=0.9, n_steps=2)
        assert np.allclose(Z.data, [[1.0, 0.0], [-0.81, 0.0]])

    def test_terminal_truncation(self):
        g = np.array([0.4, -1.1])
        Z = z_td_n(g, np.zeros(2), 0.9, 3)
        assert np.array_equal(Z.data, z_regression(g).data)

    def test_lambda_zero(self):
        grads = np.random.default_rng(4).normal(size=(4, 3))
        Z = z_td_lambda(grads, gamma=0.9, lam=0.0)
        assert np.allclose(Z.data, np.outer(grads[0], grads[0]))

    def test_lambda_hand_example(self):
        Z = z_td_lambda(np.array([[1.0, 0.0], [0.0, 1.0]]), gamma=0.9, lam=0.5)
        assert np.allclose(Z.data, [[1.0, 0.0], [-0.225, 0.0]])

    def test_zero_future_grads(self):
        g = np.array([2.0, 1.0])
        grads = np.vstack([g, np.zeros((3, 2))])
        Z = z_td_lambda(grads, gamma=0.9, lam=0.7)
        assert np.allclose(Z.data, z_regression(g).data)


class TestMinibatch:
    def test_singleton_identity(self):
        Z = z_regression(np.array([1.0, 2.0]))
        assert np.array_equal(z_minibatch([Z]).data, Z.data)

    def test_mean_of_duplicates(self):
        Z = z_td0(np.array([1.0, 0.5]), np.array([0.2, 0.0]), 0.9)
        out = z_minibatch([Z, Z], scaling="mean")
        assert np.allclose(out.data, Z.data)

    def test_sum_scaling(self):
        Z = z_regression(np.array([1.0, -1.0]))
        assert np.allclose(z_minibatch([Z, Z], scaling="sum").data, 2 * Z.data)

    def test_mixed_kinds_rejected(self):
        g = np.array([1.0, 2.0])
        with pytest.raises(ValueError):
            z_minibatch([z_regression(g, "full"), z_regression(g, "diag")])

    def test_diag_of_mean_full_is_mean_diag(self):
        rng = np.random.default_rng(5)
        gs = [rng.normal(size=4) for _ in range(6)]
        full = z_minibatch([z_regression(g, "full") for g in gs])
        diag = z_minibatch([z_regression(g, "diag") for g in gs])
        assert np.allclose(full.diagonal(), diag.data)

    def test_batched_fast_path_matches(self):
        rng = np.random.default_rng(6)
        U = rng.normal(size=(8, 5))
        V = rng.normal(size=(8, 5))
        per_sample = [TaylorTerm("full", np.outer(U[j], V[j])) for j in range(8)]
        for scaling in ("mean", "sum"):
            assert np.allclose(
                z_outer_batch(U, V, "full", scaling).data,
                z_minibatch(per_sample, scaling).data,
            )
        per_diag = [TaylorTerm("diag", U[j] * V[j]) for j in range(8)]
        assert np.allclose(
            z_outer_batch(U, V, "diag").data, z_minibatch(per_diag).data
        )


class TestDirectionalDerivative:
    def test_linear_regression_exact(self):
        # linear-in-parameter models: g(theta + d) - g(theta) = Z^T d exactly
        rng = np.random.default_rng(7)
        spec = LinearSpec(6)
        x = rng.normal(size=(1, 6))
        y = rng.normal()
        theta = rng.normal(size=6)
        d = rng.normal(size=6)

        def g_at(t):
            _, grads = value_and_grad_batch(spec, t, x)
            delta = (x @ t)[0] - y
            return delta * grads[0]

        Z = z_regression(x[0])
        lhs = g_at(theta + d) - g_at(theta)
        assert np.allclose(lhs, Z.apply_T(d), atol=1e-12)

    def test_linear_td0_exact(self):
        rng = np.random.default_rng(8)
        n, gamma = 5, 0.95
        phi, phip = rng.normal(size=n), rng.normal(size=n)
        r = rng.normal()
        theta = rng.normal(size=n)
        d = rng.normal(size=n)

        def g_at(t):
            return (phi @ t - r - gamma * (phip @ t)) * phi

        Z = z_td0(phi, phip, gamma)
        assert np.allclose(g_at(theta + d) - g_at(theta), Z.apply_T(d), atol=1e-12)

    def test_mlp_error_shrinks_with_residual(self):
        # the dropped term carries a factor delta: the first-order error of
        # the outer-product Z must fall as the residual does
        rng = np.random.default_rng(9)
        spec = MlpSpec((2, 8, 8, 1))
        theta = init_params(spec, 1) + rng.normal(scale=0.3, size=spec.n_params)
        x = rng.normal(size=(1, 2))
        d = rng.normal(size=spec.n_params)
        d /= np.linalg.norm(d)
        eps = 1e-5

        def ratio(delta_target):
            v, grads = value_and_grad_batch(spec, theta, x)
            y = v[0] - delta_target
            Z = z_regression(grads[0])

            def g_at(t):
                vv, gg = value_and_grad_batch(spec, t, x)
                return (vv[0] - y) * gg[0]

            err = g_at(theta + eps * d) - g_at(theta) - eps * Z.apply_T(d)
            return np.linalg.norm(err) / eps

        big, small = ratio(10.0), ratio(1e-4)
        assert small < big / 100
        assert big < 1e4  # bounded, not exploding
