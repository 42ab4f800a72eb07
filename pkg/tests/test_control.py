import numpy as np
import pytest

from arccm import control
from arccm.control import (EstimatorState, FrozenEstimator, RateConditionError,
                           RlsEstimator, ScheduledEstimator, feedback, rho,
                           rls_step, scheduled_estimate)
from arccm.geodesic import Curve, GeodesicSolver, MetricEvaluator
from arccm.system import example_system
from tests.conftest import make_hand_certificate


class TestRho:
    def test_zero_rate_gives_lambda(self):
        assert rho(0.8, 0.2, 4, 0.0) == 0.8

    def test_critical_rate_gives_zero(self):
        lam, mu, p = 0.8, 0.2, 4
        assert rho(lam, mu, p, lam / (p * mu)) == pytest.approx(0.0)

    def test_linear_in_rate(self):
        assert rho(1.0, 0.1, 2, 0.5) == pytest.approx(1.0 - 0.1)


class TestScheduledEstimator:
    def setup_method(self):
        self.est = ScheduledEstimator([0.0, 1.0], [2.0, -1.0], 3.0, 7.0)

    def test_holds_before_and_after(self):
        np.testing.assert_allclose(self.est.theta_hat(0.0), [0.0, 1.0])
        np.testing.assert_allclose(self.est.theta_hat(3.0), [0.0, 1.0])
        np.testing.assert_allclose(self.est.theta_hat(7.0), [2.0, -1.0])
        np.testing.assert_allclose(self.est.theta_hat(11.0), [2.0, -1.0])

    def test_linear_ramp_midpoint(self):
        np.testing.assert_allclose(self.est.theta_hat(5.0), [1.0, 0.0])

    def test_rate_profile(self):
        # total L1 movement 4 over a 4-second ramp
        assert self.est.rate(1.0) == 0.0
        assert self.est.rate(5.0) == pytest.approx(1.0)
        assert self.est.rate(9.0) == 0.0

    def test_sup_rate_window(self):
        assert self.est.sup_rate(0.0, 2.0) == 0.0
        assert self.est.sup_rate(0.0, 12.0) == pytest.approx(1.0)
        assert self.est.sup_rate(8.0, 12.0) == 0.0

    def test_functional_form_matches(self):
        sched = ([0.0, 1.0], [2.0, -1.0], 3.0, 7.0)
        for t in (0.0, 4.2, 9.0):
            np.testing.assert_allclose(scheduled_estimate(sched, t),
                                       self.est.theta_hat(t))

    def test_bad_interval_rejected(self):
        with pytest.raises(ValueError):
            ScheduledEstimator([0.0], [1.0], 5.0, 5.0)


class TestFrozenEstimator:
    def test_constant(self):
        est = FrozenEstimator([0.3, -0.2])
        np.testing.assert_allclose(est.theta_hat(0.0), est.theta_hat(100.0))
        assert est.rate(1.0) == 0.0
        assert est.sup_rate(0.0, 10.0) == 0.0


class TestFeedback:
    def test_reduces_to_linear_feedback_for_constant_gain(self, sysm, hand_cert):
        # identity W, constant Y=K: u = u_d + K (x - x_d) along any curve
        metric = MetricEvaluator(hand_cert.W, hand_cert.Y)
        solver = GeodesicSolver(metric, degree=6)
        x_d = np.array([0.1, -0.2, 0.3])
        x = np.array([0.6, 0.1, -0.4])
        geo = solver.solve(x_d, x, sysm.theta_box.midpoint())
        u = feedback(hand_cert, solver, geo, [2.0], sysm.theta_box.midpoint())
        K = np.array([-1.0, 0.0, -3.0])
        assert u[0] == pytest.approx(2.0 + K @ (x - x_d), rel=1e-8)

    def test_zero_error_returns_u_d(self, sysm, hand_cert):
        metric = MetricEvaluator(hand_cert.W, hand_cert.Y)
        solver = GeodesicSolver(metric, degree=6)
        x = np.array([0.5, 0.5, 0.5])
        geo = solver.solve(x, x, sysm.theta_box.midpoint())
        u = feedback(hand_cert, solver, geo, [1.7], sysm.theta_box.midpoint())
        assert u[0] == pytest.approx(1.7, abs=1e-12)


class TestRls:
    def budget(self):
        return (0.8, 0.2, 4, 0.05)

    def test_recovers_theta_from_clean_data(self, sysm):
        # exact xdot measurements with rich regressors identify theta
        rng = np.random.default_rng(0)
        theta_true = np.array([-0.3, 0.8, -0.25, -0.75])
        state = EstimatorState(sysm.theta_box.midpoint(), window=100)
        # generous budget so the clamp never binds
        budget = (50.0, 0.2, 4, 0.05)
        for _ in range(200):
            x_prev = rng.uniform(-2, 2, size=3)
            u = rng.uniform(-1, 1, size=1)
            xdot = sysm.full_dynamics(x_prev, theta_true, u)
            x = x_prev  # xdot supplied directly
            rls_step(state, x, x_prev, u, 0.01, sysm, budget,
                     xdot_measured=xdot)
        np.testing.assert_allclose(state.theta_hat, theta_true, atol=1e-6)

    def test_step_respects_rate_clamp(self, sysm):
        state = EstimatorState(sysm.theta_box.midpoint())
        lam, mu, p, rho_min = self.budget()
        dt = 0.01
        rng = np.random.default_rng(1)
        x_prev = rng.uniform(-2, 2, size=3)
        # wildly wrong derivative forces a huge least-squares target
        rls_step(state, x_prev + 100.0, x_prev, [0.0], dt, sysm, self.budget())
        moved = float(np.sum(np.abs(state.theta_hat - state.theta_prev)))
        assert moved <= (lam - rho_min) / (p * mu) * dt + 1e-12

    def test_estimate_stays_in_box(self, sysm):
        state = EstimatorState(sysm.theta_box.hi.copy())
        rng = np.random.default_rng(2)
        for _ in range(50):
            x_prev = rng.uniform(-2, 2, size=3)
            rls_step(state, x_prev + rng.normal(size=3), x_prev,
                     rng.normal(size=1), 0.01, sysm, (50.0, 0.2, 4, 0.05))
            assert sysm.theta_box.contains(state.theta_hat, tol=1e-12)

    def test_invalid_rho_min_rejected(self, sysm):
        state = EstimatorState(sysm.theta_box.midpoint())
        with pytest.raises(RateConditionError):
            rls_step(state, [0.0] * 3, [0.1] * 3, [0.0], 0.01, sysm,
                     (0.8, 0.2, 4, 0.9))

    def test_nonpositive_dt_rejected(self, sysm):
        state = EstimatorState(sysm.theta_box.midpoint())
        with pytest.raises(ValueError):
            rls_step(state, [0.0] * 3, [0.1] * 3, [0.0], 0.0, sysm,
                     self.budget())

    def test_adapter_rate_and_sup_rate(self, sysm):
        lam, mu, p, rho_min = self.budget()
        est = RlsEstimator(sysm, sysm.theta_box.midpoint(), self.budget())
        assert est.sup_rate(0.0, 12.0) == pytest.approx((lam - rho_min) / (p * mu))
        rng = np.random.default_rng(3)
        x_prev = rng.uniform(-1, 1, size=3)
        est.update(0.01, x_prev + 0.1, x_prev, [0.2], 0.01)
        assert 0.0 <= est.rate(0.01) <= est.sup_rate(0.0, 1.0) + 1e-12
        # realized rho never drops below rho_min
        assert rho(lam, mu, p, est.rate(0.01)) >= rho_min - 1e-12
