import numpy as np
import pytest
from helpers import corrected_momentum_brute_force, discounted_grad_sum_at

from momcorr.models import ConfigError, MlpSpec
from momcorr.optim import (
    CorrectedState,
    HyperParams,
    MomentumState,
    OracleState,
    corrected_step,
    corrected_step_scaled,
    effective_horizon,
    make_mask,
    momentum_step,
    oracle_step,
)
from momcorr.taylor import TaylorTerm, z_regression


def run_corrected(gs, Zs, alpha, beta, kind="full", mask=None):
    n = gs.shape[1]
    hp = HyperParams(alpha=alpha, beta=beta)
    state = CorrectedState.zeros(n, kind=kind, mask=mask)
    theta = np.zeros(n)
    out = []
    for g, Z in zip(gs, Zs):
        state, theta, mu_hat = corrected_step(state, hp, g, TaylorTerm(kind, Z), theta)
        out.append(mu_hat)
    return np.array(out), state, theta


class TestHyperParams:
    def test_validation(self):
        with pytest.raises(ConfigError):
            HyperParams(alpha=-0.1, beta=0.9)
        with pytest.raises(ConfigError):
            HyperParams(alpha=0.1, beta=1.0)
        with pytest.raises(ConfigError):
            HyperParams(alpha=0.1, beta=0.9, gamma=1.0)

    def test_effective_horizon(self):
        assert effective_horizon(0.9) == 20
        assert effective_horizon(0.99) == 200
        assert effective_horizon(0.0) == 2


class TestMomentum:
    def test_beta_zero_is_sgd(self):
        hp = HyperParams(alpha=0.1, beta=0.0)
        state = MomentumState(mu=np.array([5.0]))
        g = np.array([2.0])
        state, params = momentum_step(state, hp, g, np.array([1.0]))
        assert state.mu[0] == 2.0
        assert params[0] == 1.0 - 0.1 * 2.0

    def test_scalar_hand_example(self):
        hp = HyperParams(alpha=0.1, beta=0.5)
        state = MomentumState(mu=np.array([1.0]))
        state, params = momentum_step(state, hp, np.array([2.0]), np.array([0.0]))
        assert state.mu[0] == pytest.approx(1.5)
        assert params[0] == pytest.approx(-0.15)

    def test_zero_gradient_geometric_decay(self):
        hp = HyperParams(alpha=0.0, beta=0.8)
        state = MomentumState(mu=np.array([1.0]))
        for k in range(1, 6):
            state, _ = momentum_step(state, hp, np.zeros(1), np.zeros(1))
            assert state.mu[0] == pytest.approx(0.8**k)

    def test_nonfinite_gradient_aborts(self):
        hp = HyperParams(alpha=0.1, beta=0.9)
        with pytest.raises(FloatingPointError):
            momentum_step(MomentumState.zeros(2), hp, np.array([1.0, np.nan]), np.zeros(2))


class TestCorrectedStep:
    def test_first_call_zero_state(self):
        hp = HyperParams(alpha=0.3, beta=0.9)
        state = CorrectedState.zeros(3)
        g = np.array([1.0, -2.0, 0.5])
        state, _, mu_hat = corrected_step(state, hp, g, z_regression(g), np.zeros(3))
        assert np.allclose(mu_hat, (1 - 0.9) * g)
        assert np.all(state.eta == 0.0)

    def test_scalar_quadratic_hand_trace(self):
        # J_i(theta) = (theta - c_i)^2 / 2 with c = -1, alpha = 1, beta = 0.5, Z = 1
        hp = HyperParams(alpha=1.0, beta=0.5)
        Z = TaylorTerm("full", np.array([[1.0]]))
        theta = np.array([0.0])
        state = CorrectedState.zeros(1)
        state, theta, mh = corrected_step(state, hp, theta + 1.0, Z, theta)
        assert mh[0] == pytest.approx(0.5) and theta[0] == pytest.approx(-0.5)
        g2 = theta + 1.0
        assert g2[0] == pytest.approx(0.5)
        state, theta, mh = corrected_step(state, hp, g2, Z, theta)
        assert state.eta[0] == pytest.approx(0.125)
        assert state.mu[0] == pytest.approx(0.5)
        assert mh[0] == pytest.approx(0.375)
        assert theta[0] == pytest.approx(-0.875)

    def test_alpha_zero_keeps_eta_zero(self):
        rng = np.random.default_rng(0)
        gs = rng.normal(size=(20, 4))
        Zs = rng.normal(size=(20, 4, 4))
        mu_hats, state, _ = run_corrected(gs, Zs, alpha=0.0, beta=0.9)
        assert np.all(state.eta == 0.0)
        # and mu_hat is exactly plain momentum
        mu = np.zeros(4)
        for t, g in enumerate(gs):
            mu = 0.1 * g + 0.9 * mu
            assert np.allclose(mu_hats[t], mu)

    def test_kind_mismatch_rejected(self):
        hp = HyperParams(alpha=0.1, beta=0.9)
        state = CorrectedState.zeros(2, kind="diag")
        with pytest.raises(ValueError):
            corrected_step(state, hp, np.ones(2), TaylorTerm("full", np.eye(2)), np.zeros(2))

    def test_matches_brute_force_unrolled_sum(self):
        rng = np.random.default_rng(42)
        for trial in range(10):
            n = rng.integers(1, 8)
            T = rng.integers(2, 40)
            alpha = rng.uniform(0.01, 0.5)
            beta = rng.uniform(0.0, 0.99)
            gs = rng.normal(size=(T, n))
            Zs = rng.normal(size=(T, n, n))
            mu_hats, _, _ = run_corrected(gs, Zs, alpha, beta)
            expected = corrected_momentum_brute_force(gs, Zs, alpha, beta)
            scale = np.maximum(np.abs(expected), 1e-12)
            assert np.max(np.abs(mu_hats - expected) / scale) < 1e-10

    def test_diagonal_equals_full_with_offdiag_zeroed(self):
        rng = np.random.default_rng(7)
        n, T = 5, 30
        gs = rng.normal(size=(T, n))
        Zs = rng.normal(size=(T, n, n))
        hp = HyperParams(alpha=0.1, beta=0.9)

        diag_state = CorrectedState.zeros(n, kind="diag")
        full_state = CorrectedState.zeros(n, kind="full")
        theta_d = np.zeros(n)
        theta_f = np.zeros(n)
        for t in range(T):
            diag_state, theta_d, mh_d = corrected_step(
                diag_state, hp, gs[t], TaylorTerm("diag", np.diag(Zs[t]).copy()), theta_d
            )
            full_state, theta_f, mh_f = corrected_step(
                full_state, hp, gs[t], TaylorTerm("full", Zs[t]), theta_f
            )
            # forcibly zero the off-diagonal accumulator each step
            full_state.zeta.data[:] = np.diag(np.diag(full_state.zeta.data))
            assert np.allclose(mh_d, mh_f, atol=1e-13)
        assert np.allclose(theta_d, theta_f, atol=1e-12)

    def test_beta_zero_everything_is_sgd(self):
        rng = np.random.default_rng(3)
        n, T = 3, 15
        hp = HyperParams(alpha=0.2, beta=0.0)
        theta_sgd = np.zeros(n)
        theta_mom = np.zeros(n)
        theta_cor = np.zeros(n)
        mom = MomentumState.zeros(n)
        cor = CorrectedState.zeros(n)
        oracle = OracleState.fresh(0.0)
        theta_ora = np.zeros(n)

        def loss_grad(theta, c):
            return theta - c

        cs = rng.normal(size=(T, n))
        for t in range(T):
            g = loss_grad(theta_sgd, cs[t])
            theta_sgd = theta_sgd - hp.alpha * g
            mom, theta_mom = momentum_step(mom, hp, loss_grad(theta_mom, cs[t]), theta_mom)
            gc = loss_grad(theta_cor, cs[t])
            cor, theta_cor, _ = corrected_step(cor, hp, gc, z_regression(gc), theta_cor)
            oracle, theta_ora, _ = oracle_step(
                oracle, hp, cs[t], lambda c, th: loss_grad(th, c), theta_ora
            )
            assert np.array_equal(theta_sgd, theta_mom)
            assert np.array_equal(theta_sgd, theta_cor)
            assert np.array_equal(theta_sgd, theta_ora)


class TestMask:
    def test_all_and_none(self):
        spec = MlpSpec((1, 8, 8, 8, 1))
        assert np.all(make_mask(spec, "all"))
        assert not np.any(make_mask(spec, "none"))

    def test_bottom_layer_layout(self):
        spec = MlpSpec((1, 8, 8, 8, 1))
        mask = make_mask(spec, "bottom:1")
        assert np.all(mask[:16])
        assert not np.any(mask[16:])

    def test_top_layer_layout(self):
        spec = MlpSpec((1, 8, 8, 8, 1))
        mask = make_mask(spec, "top:1")
        assert not np.any(mask[:-9])
        assert np.all(mask[-9:])

    def test_explicit_indices(self):
        spec = MlpSpec((1, 8, 8, 8, 1))
        assert np.array_equal(make_mask(spec, [0]), make_mask(spec, "bottom:1"))

    def test_out_of_range(self):
        spec = MlpSpec((1, 8, 1))
        with pytest.raises(ConfigError):
            make_mask(spec, [5])
        with pytest.raises(ConfigError):
            make_mask(spec, "bottom:9")

    def test_empty_mask_degenerates_to_momentum(self):
        rng = np.random.default_rng(11)
        spec = MlpSpec((1, 4, 1))
        n = spec.n_params
        hp = HyperParams(alpha=0.2, beta=0.8)
        mask = make_mask(spec, "none")
        cor = CorrectedState.zeros(n, mask=mask)
        mom = MomentumState.zeros(n)
        theta_c = np.zeros(n)
        theta_m = np.zeros(n)
        for _ in range(25):
            g = rng.normal(size=n)
            Z = TaylorTerm("full", rng.normal(size=(n, n)))
            cor, theta_c, mh = corrected_step(cor, hp, g, Z, theta_c)
            mom, theta_m = momentum_step(mom, hp, g, theta_m)
            assert np.array_equal(theta_c, theta_m)
            assert np.array_equal(mh, mom.mu)

    def test_masked_coords_keep_eta_zero(self):
        rng = np.random.default_rng(12)
        spec = MlpSpec((1, 8, 8, 8, 1))
        n = spec.n_params
        mask = make_mask(spec, "bottom:2")
        hp = HyperParams(alpha=0.3, beta=0.9)
        state = CorrectedState.zeros(n, mask=mask)
        theta = np.zeros(n)
        for _ in range(10):
            g = rng.normal(size=n)
            Z = TaylorTerm("full", rng.normal(size=(n, n)) * 0.1)
            state, theta, _ = corrected_step(state, hp, g, Z, theta)
            assert np.all(state.eta[~mask] == 0.0)
        assert np.any(state.eta[mask] != 0.0)


class TestOracle:
    def test_single_batch_matches_first_momentum_step(self):
        hp = HyperParams(alpha=0.1, beta=0.9)
        theta = np.array([1.0, -1.0])
        state = OracleState.fresh(0.9)
        g = np.array([0.5, 2.0])
        state, theta2, mu_star = oracle_step(state, hp, "b0", lambda b, t: g, theta)
        assert np.allclose(mu_star, 0.1 * g)
        assert np.allclose(theta2, theta - hp.alpha * 0.1 * g)
        assert state.h == 20

    def test_window_eviction(self):
        hp = HyperParams(alpha=0.0, beta=0.5)
        state = OracleState.fresh(0.5)  # h = 4
        for i in range(10):
            state, _, _ = oracle_step(state, hp, i, lambda b, t: np.zeros(1), np.zeros(1))
        assert state.window == [6, 7, 8, 9]

    def test_frozen_params_equals_momentum_within_window(self):
        # alpha = 0: params never move, so recomputation changes nothing and
        # mu_star must equal plain momentum exactly until the window truncates
        rng = np.random.default_rng(13)
        n, beta = 3, 0.7
        h = effective_horizon(beta)  # 7
        hp = HyperParams(alpha=0.0, beta=beta)
        batches = rng.normal(size=(h + 4, n))
        oracle = OracleState.fresh(beta)
        mom = MomentumState.zeros(n)
        theta = np.zeros(n)
        for t, batch in enumerate(batches, start=1):
            oracle, theta, mu_star = oracle_step(
                oracle, hp, batch, lambda b, th: np.asarray(b), theta
            )
            mom, _ = momentum_step(mom, hp, batch, np.zeros(n))
            if t <= h:
                assert np.allclose(mu_star, mom.mu, atol=1e-15)
            else:
                assert not np.allclose(mu_star, mom.mu, atol=1e-12)

    def test_recomputes_at_current_params(self):
        # gradient depends on theta; the oracle must see the fresh theta
        hp = HyperParams(alpha=1.0, beta=0.5)
        state = OracleState.fresh(0.5)
        theta = np.array([10.0])
        calls = []

        def grad_fn(batch, th):
            calls.append(th.copy())
            return th - batch

        state, theta, _ = oracle_step(state, hp, np.array([0.0]), grad_fn, theta)
        state, theta, _ = oracle_step(state, hp, np.array([0.0]), grad_fn, theta)
        # second step recomputed both batches at the step-2 parameters
        assert np.allclose(calls[-1], calls[-2])
        expected = discounted_grad_sum_at(
            calls[-1], [lambda th: th - 0.0] * 2, beta=0.5
        )
        assert np.allclose(theta, calls[-1] - hp.alpha * expected)

    def test_deterministic(self):
        rng1 = np.random.default_rng(9)
        rng2 = np.random.default_rng(9)

        def run(rng):
            hp = HyperParams(alpha=0.05, beta=0.8)
            state = OracleState.fresh(0.8)
            theta = np.ones(2)
            for _ in range(12):
                batch = rng.normal(size=2)
                state, theta, _ = oracle_step(
                    state, hp, batch, lambda b, t: t - b, theta
                )
            return theta

        assert np.array_equal(run(rng1), run(rng2))


class TestScaledVariant:
    def test_requires_diag_and_second_moment(self):
        hp = HyperParams(alpha=0.1, beta=0.9)
        g = np.ones(2)
        Z = TaylorTerm("diag", np.ones(2))
        with pytest.raises(ValueError):
            corrected_step_scaled(CorrectedState.zeros(2, kind="diag"), hp, g, Z, np.zeros(2))
        with pytest.raises(ValueError):
            corrected_step_scaled(
                CorrectedState.zeros(2, kind="full", scaled=True), hp, g,
                TaylorTerm("full", np.eye(2)), np.zeros(2),
            )

    def test_beta2_zero_denominator_is_abs_g(self):
        hp = HyperParams(alpha=0.5, beta=0.0, beta2=0.0, epsilon=1e-8)
        state = CorrectedState.zeros(2, kind="diag", scaled=True)
        g = np.array([2.0, -3.0])
        Z = TaylorTerm("diag", np.zeros(2))
        state, params, mu_hat = corrected_step_scaled(state, hp, g, Z, np.zeros(2))
        assert np.allclose(state.second_moment, g * g)
        assert np.allclose(params, -hp.alpha * mu_hat / np.sqrt(g * g + 1e-8))

    def test_zero_gradients_keep_v_zero(self):
        hp = HyperParams(alpha=0.2, beta=0.5, beta2=0.9, epsilon=1e-4)
        state = CorrectedState.zeros(2, kind="diag", scaled=True)
        params = np.zeros(2)
        for _ in range(5):
            state, params, mu_hat = corrected_step_scaled(
                state, hp, np.zeros(2), TaylorTerm("diag", np.zeros(2)), params
            )
            assert np.all(state.second_moment == 0.0)
        # update reduces to alpha * mu_hat / sqrt(eps) scaling (here mu_hat = 0)
        assert np.all(params == 0.0)

    def test_huge_epsilon_approaches_rescaled_plain_step(self):
        eps = 1e12
        hp = HyperParams(alpha=0.1, beta=0.9, beta2=0.999, epsilon=eps)
        g = np.array([1.0, -2.0])
        Z = TaylorTerm("diag", np.array([0.3, 0.1]))
        s1 = CorrectedState.zeros(2, kind="diag", scaled=True)
        s2 = CorrectedState.zeros(2, kind="diag")
        _, p_scaled, _ = corrected_step_scaled(s1, hp, g, Z, np.zeros(2))
        _, p_plain, _ = corrected_step(s2, hp, g, Z, np.zeros(2))
        assert np.allclose(p_scaled, p_plain / np.sqrt(eps), rtol=1e-6)
