"""Geodesic feedback law and online parameter estimators.

The feedback integrates the state-dependent gain K(x) = Y(x) M(x) along
the geodesic connecting the reference to the state.  Estimators keep
the estimate inside the parameter box and respect a rate budget so the
effective contraction rate rho(t) = lambda - p*mu*|d/dt thetahat|_1
stays positive.
"""

from collections import deque

import numpy as np


class RateConditionError(RuntimeError):
    """Estimation is too fast for the certificate: rho(t) <= 0."""


def rho(lam, mu, p, rate):
    """Effective contraction rate lambda - p*mu*rate (rate = |d/dt thetahat|_1)."""
    return lam - p * mu * rate


def feedback(cert, solver, geo, u_d, theta_hat):
    """Control u = u_d + integral of Y(gamma) M(gamma) gamma_s ds.

    Uses the same quadrature as the energy evaluation.  A non-converged
    geodesic still yields a control (flag travels with the Geodesic).
    """
    metric = solver.metric
    values = geo.curve.values
    g = solver.P @ values
    gs = solver.Pd @ values
    M, phi = metric.M_at(g, theta_hat)
    Y = metric.Y_at(phi)
    KM = np.einsum("qab,qbc,qc->qa", Y, M, gs)
    return np.asarray(u_d, dtype=float) + solver.w_q @ KM


class ScheduledEstimator:
    """Open-loop estimate schedule: hold, linear ramp, hold.

    theta_hat(t) = theta0 for t <= t_start, the componentwise linear
    interpolation on [t_start, t_end], theta_final afterwards.
    """

    def __init__(self, theta0, theta_final, t_start, t_end):
        if not t_start < t_end:
            raise ValueError("need t_start < t_end")
        self.theta0 = np.asarray(theta0, dtype=float)
        self.theta_final = np.asarray(theta_final, dtype=float)
        self.t_start = float(t_start)
        self.t_end = float(t_end)

    def theta_hat(self, t):
        if t <= self.t_start:
            return self.theta0.copy()
        if t >= self.t_end:
            return self.theta_final.copy()
        a = (t - self.t_start) / (self.t_end - self.t_start)
        return (1 - a) * self.theta0 + a * self.theta_final

    def rate(self, t):
        """L1 rate |d/dt thetahat| at time t (constant during the ramp)."""
        if self.t_start < t < self.t_end:
            return float(np.sum(np.abs(self.theta_final - self.theta0))
                         / (self.t_end - self.t_start))
        return 0.0

    def sup_rate(self, t0, t1):
        if t1 <= self.t_start or t0 >= self.t_end:
            return 0.0
        return float(np.sum(np.abs(self.theta_final - self.theta0))
                     / (self.t_end - self.t_start))

    def update(self, t, x, x_prev, u_prev, dt):
        return self.theta_hat(t)


class FrozenEstimator:
    """Constant estimate (the non-adaptive baseline controller)."""

    def __init__(self, theta0):
        self.theta0 = np.asarray(theta0, dtype=float)

    def theta_hat(self, t):
        return self.theta0.copy()

    def rate(self, t):
        return 0.0

    def sup_rate(self, t0, t1):
        return 0.0

    def update(self, t, x, x_prev, u_prev, dt):
        return self.theta0.copy()


def scheduled_estimate(schedule, t):
    """Functional form of the scheduled estimator (schedule = (theta0, thetaF, t0, t1))."""
    theta0, theta_final, t_start, t_end = schedule
    return ScheduledEstimator(theta0, theta_final, t_start, t_end).theta_hat(t)


class EstimatorState:
    """Sliding-window recursive least-squares state."""

    def __init__(self, theta0, window=50):
        self.theta_hat = np.asarray(theta0, dtype=float).copy()
        self.theta_prev = self.theta_hat.copy()
        self.window = deque(maxlen=window)
        self.last_update_time = None
        self.skipped = False


def rls_step(state, x, x_prev, u_prev, dt, sys, rate_budget, ridge=1e-6,
             xdot_measured=None):
    """One sliding-window least-squares update with projection and rate clamp.

    ``rate_budget`` is (lam, mu, p, rho_min); the emitted step satisfies
    |theta_new - theta_old|_1 / dt <= (lam - rho_min) / (p * mu), which
    guarantees rho(t) >= rho_min.  The estimate is projected onto the
    parameter box after clamping.  ``xdot_measured`` optionally replaces
    the backward-difference derivative (derivative-filter hook).
    """
    lam, mu, p, rho_min = rate_budget
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not 0 < rho_min < lam:
        raise RateConditionError("need 0 < rho_min < lambda for a positive rate budget")
    x = np.asarray(x, dtype=float).ravel()
    x_prev = np.asarray(x_prev, dtype=float).ravel()
    u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float)).ravel()
    xdot = (x - x_prev) / dt if xdot_measured is None else np.asarray(xdot_measured, float)
    target = xdot - sys.f_vec(x_prev) - sys.b_mat(x_prev) @ u_prev
    regressor = sys.delta_mat(x_prev).T  # n x p
    state.window.append((regressor, target))

    G = np.vstack([r for r, _ in state.window])
    y = np.concatenate([t for _, t in state.window])
    H = G.T @ G + ridge * np.eye(sys.p)
    try:
        theta_ls = np.linalg.solve(H, G.T @ y + ridge * state.theta_hat)
    except np.linalg.LinAlgError:
        state.skipped = True
        return state
    state.skipped = False

    step = theta_ls - state.theta_hat
    budget = (lam - rho_min) / (p * mu) * dt
    l1 = float(np.sum(np.abs(step)))
    if l1 > budget:
        step *= budget / l1
    state.theta_prev = state.theta_hat.copy()
    state.theta_hat = sys.theta_box.clip(state.theta_hat + step)
    return state


class RlsEstimator:
    """Simulation-loop adapter around :func:`rls_step`."""

    def __init__(self, sys, theta0, rate_budget, window=50, ridge=1e-6):
        self.sys = sys
        self.state = EstimatorState(theta0, window=window)
        self.rate_budget = rate_budget
        self.ridge = ridge
        self._last_rate = 0.0

    def theta_hat(self, t):
        return self.state.theta_hat.copy()

    def rate(self, t):
        return self._last_rate

    def sup_rate(self, t0, t1):
        lam, mu, p, rho_min = self.rate_budget
        return (lam - rho_min) / (p * mu)

    def update(self, t, x, x_prev, u_prev, dt):
        before = self.state.theta_hat.copy()
        rls_step(self.state, x, x_prev, u_prev, dt, self.sys, self.rate_budget,
                 ridge=self.ridge)
        self._last_rate = float(np.sum(np.abs(self.state.theta_hat - before)) / dt)
        return self.state.theta_hat.copy()
