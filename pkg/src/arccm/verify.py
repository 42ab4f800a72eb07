"""Bound certification against traces and certificates.

Implements the conservative energy bound (closed form), the integrated
model-aware bound (forward Euler of the differential energy inequality),
trace checking with violation statistics, sampled verification of the
energy log-gradient bound, and the adaptive convergent-CLF checker.
"""

from dataclasses import dataclass, field

import numpy as np

from .control import RateConditionError
from .geodesic import GeodesicSolver, MetricEvaluator

REL_SLACK = 1e-6


def sup_theta_err_l1(theta_err_box):
    """Worst-case L1 magnitude of the estimation error over its box."""
    return float(np.max(np.abs(theta_err_box.vertices()).sum(axis=1)))


def conservative_bound(E0, lam, mu, alpha, p, sup_rate, sup_theta_err, t):
    """Closed-form energy envelope E0 e^{-rho_bar t} + (alpha^2/rho_bar) w^2 (1 - e^{-rho_bar t}).

    ``sup_rate`` is the worst L1 estimation rate over the horizon and
    ``sup_theta_err`` the worst L1 estimation-error magnitude; rho_bar =
    lam - p*mu*sup_rate must be positive.
    """
    rho_bar = lam - p * mu * sup_rate
    if rho_bar <= 0:
        raise RateConditionError(
            "rate condition violated: rho_bar = %.4g <= 0 (sup rate %.4g)"
            % (rho_bar, sup_rate))
    t = np.asarray(t, dtype=float) - float(np.asarray(t).ravel()[0])
    decay = np.exp(-rho_bar * t)
    return E0 * decay + (alpha**2 / rho_bar) * sup_theta_err**2 * (1.0 - decay)


def integrated_bound(trace, cert, substeps=1):
    """Forward-Euler integration of db/dt = -rho(t) b + alpha^2 |theta_err(t)|_1^2.

    Requires the trace to carry the estimation error (simulation-only
    knowledge).  ``substeps`` refines the Euler step for convergence
    self-tests; the trace values are held over each tick.
    """
    if trace.theta_err is None or not np.all(np.isfinite(trace.theta_err)):
        raise ValueError("integrated bound needs theta_err (true parameters unknown)")
    dt = trace.dt / substeps
    w2 = np.sum(np.abs(trace.theta_err), axis=1) ** 2
    b = np.empty(trace.t.size)
    b[0] = trace.energy[0]
    for k in range(trace.t.size - 1):
        v = b[k]
        for _ in range(substeps):
            v += dt * (-trace.rho[k] * v + cert.alpha**2 * w2[k])
        b[k + 1] = max(v, 0.0)
    return b


@dataclass
class BoundReport:
    conservative: np.ndarray
    integrated: np.ndarray
    cons_violations: int
    cons_worst_rel: float
    int_violations: int
    int_worst_rel: float
    rho_min: float
    a_low: float
    a_high: float
    state_norm_bound: np.ndarray
    checked_ticks: int
    flagged_ticks: int
    certified: bool

    def to_json(self):
        return {
            "cons_violations": self.cons_violations,
            "cons_worst_rel": self.cons_worst_rel,
            "int_violations": self.int_violations,
            "int_worst_rel": self.int_worst_rel,
            "rho_min": self.rho_min,
            "a_low": self.a_low,
            "a_high": self.a_high,
            "checked_ticks": self.checked_ticks,
            "flagged_ticks": self.flagged_ticks,
            "certified": self.certified,
            "final_energy": float(self.integrated[-1]) if self.integrated is not None else None,
        }


def check_trace(trace, cert, sys, sup_theta_err=None, csv_path=None):
    """Fill both bound series on the trace and count violations.

    Checks run only at certified ticks (geodesic converged and state in
    domain); flagged ticks are counted separately.  The state-norm bound
    is sqrt(bound / a_low), the energy-level certificate pushed to norm
    level through the uniform metric lower bound.  With ``csv_path`` the
    trace is re-saved with the bound columns filled.
    """
    if sup_theta_err is None:
        sup_theta_err = sup_theta_err_l1(sys.theta_err_box)
    rho_min = float(np.min(trace.rho))
    sup_rate = (cert.lam - rho_min) / (sys.p * cert.mu)
    cons = conservative_bound(trace.energy[0], cert.lam, cert.mu, cert.alpha,
                              sys.p, sup_rate, sup_theta_err, trace.t)
    integ = integrated_bound(trace, cert)
    trace.bound_cons = cons
    trace.bound_int = integ

    mask = trace.certified_mask()
    checked = int(np.sum(mask))
    flagged = int(trace.t.size - checked)

    def _stats(bound):
        if checked == 0:
            return 0, 0.0
        excess = trace.energy[mask] - (bound[mask] + REL_SLACK * (1.0 + bound[mask]))
        rel = (trace.energy[mask] - bound[mask]) / (1.0 + bound[mask])
        nviol = int(np.sum(excess > 0))
        worst = float(np.max(rel)) if nviol else 0.0
        return nviol, worst

    cv, cw = _stats(cons)
    iv, iw = _stats(integ)
    report = BoundReport(
        conservative=cons, integrated=integ,
        cons_violations=cv, cons_worst_rel=cw,
        int_violations=iv, int_worst_rel=iw,
        rho_min=rho_min, a_low=cert.a_low, a_high=cert.a_high,
        state_norm_bound=np.sqrt(np.maximum(cons, 0.0) / cert.a_low),
        checked_ticks=checked, flagged_ticks=flagged,
        certified=checked > 0,
    )
    if csv_path is not None:
        trace.save_csv(csv_path)
    return report


@dataclass
class Prop1Report:
    num_curves: int
    mu: float
    worst_abs_log_gradient: float
    curve_violations: list
    pointwise_checked: int
    pointwise_disagreements: list

    @property
    def passed(self):
        return not self.curve_violations and not self.pointwise_disagreements


def check_prop1(cert, sys, num_curves=100, seed=0, tol=1e-3):
    """Sampled check of the energy log-gradient bound.

    Forward direction: random curves (random endpoints, perturbed
    interiors) and random estimates must satisfy |d log E / d theta_i|
    <= mu (1 + tol).  Reverse direction: at sampled points the metric
    gradient condition min-eig >= 0 must agree with the tangent-wise
    inequality |v^T dM/dtheta_i v| <= mu v^T M v, witnessed through the
    min eigenvector when the margin is negative.
    """
    from .geodesic import Curve

    rng = np.random.default_rng(seed)
    metric = MetricEvaluator(cert.W, cert.Y, n=sys.n)
    solver = GeodesicSolver(metric)
    mu = cert.mu
    worst = 0.0
    violations = []
    lo, hi = sys.domain.lo, sys.domain.hi
    for c in range(num_curves):
        a = rng.uniform(lo, hi)
        b = rng.uniform(lo, hi)
        curve = Curve.straight_line(a, b, solver.degree)
        curve.values[1:-1] += rng.normal(scale=0.1, size=curve.values[1:-1].shape)
        theta = sys.theta_box.sample(rng)[0]
        E = solver.energy(curve, theta)
        if E <= 1e-12:
            continue
        lg = solver.theta_energy_gradient(curve, theta) / E
        worst = max(worst, float(np.max(np.abs(lg))))
        bad = np.where(np.abs(lg) > mu * (1.0 + tol))[0]
        for i in bad:
            violations.append({"curve": c, "param": int(i), "log_gradient": float(lg[i])})

    # pointwise iff: condition margin sign vs tangent inequality
    disagreements = []
    npts = 50
    xs = rng.uniform(lo, hi, size=(npts, sys.n))
    checked = 0
    for q in range(npts):
        theta = sys.theta_box.sample(rng)[0]
        Wq, phi = metric.W_at(xs[q][None, :], theta)
        W = Wq[0]
        Wth = metric.Wth_at(phi)[:, 0]
        for i in range(sys.p):
            for sign in (+1.0, -1.0):
                Acond = mu * W + sign * Wth[i]
                eigval, eigvec = np.linalg.eigh(Acond)
                margin = float(eigval[0])
                # |w^T Wth_i w| <= mu w^T W w for all w iff both signed
                # matrices are PSD; test the min eigenvector as tangent
                w = eigvec[:, 0]
                lhs = sign * float(w @ Wth[i] @ w)
                rhs = mu * float(w @ W @ w)
                tangent_ok = -lhs <= rhs + 1e-12 * (1 + abs(rhs))
                checked += 1
                if (margin >= 0) != tangent_ok and abs(margin) > 1e-10:
                    disagreements.append({"point": q, "param": i, "sign": sign,
                                          "margin": margin})
    return Prop1Report(num_curves=num_curves, mu=mu,
                       worst_abs_log_gradient=worst,
                       curve_violations=violations,
                       pointwise_checked=checked,
                       pointwise_disagreements=disagreements)


class ClfCandidate:
    """Candidate convergent control Lyapunov function V_theta(x, x_d).

    Subclasses provide ``value`` and ``gradients`` (returning the value
    and the gradients with respect to x, x_d and theta).  Constants k1,
    k2, k3, a and mu define the sandwich, decrease and parameter-gradient
    conditions; sigma_slope fixes the linear comparison function sigma.
    """

    def __init__(self, k1, k2, k3, a, mu, sigma_slope=1.0, name="clf"):
        if min(k1, k2, k3, a, mu) <= 0:
            raise ValueError("k1, k2, k3, a, mu must be positive")
        self.k1, self.k2, self.k3 = float(k1), float(k2), float(k3)
        self.a = float(a)
        self.mu = float(mu)
        self.sigma_slope = float(sigma_slope)
        self.name = name

    def sigma(self, s):
        return self.sigma_slope * s

    def value(self, x, x_d, theta):
        raise NotImplementedError

    def gradients(self, x, x_d, theta):
        raise NotImplementedError


class ExpressionClf(ClfCandidate):
    """CLF given as an Expression over (x1..xn, x_{n+1}..x_{2n} = x_d, theta)."""

    def __init__(self, expr, n, p, **kw):
        super().__init__(**kw)
        self.expr = expr
        self.n = n
        self.p = p
        mx, mp = expr.max_indices()
        if mx >= 2 * n or mp >= p:
            raise ValueError("expression references variables beyond (2n, p)")

    def _point(self, x, x_d):
        return np.concatenate([np.asarray(x, float), np.asarray(x_d, float)])

    def value(self, x, x_d, theta):
        return self.expr.eval(self._point(x, x_d), np.asarray(theta, float))

    def gradients(self, x, x_d, theta):
        v, g = self.expr.eval_with_partials(self._point(x, x_d), np.asarray(theta, float))
        g = np.asarray(g)
        return v, g[: self.n], g[self.n: 2 * self.n], g[2 * self.n:]


class EnergyClf(ClfCandidate):
    """The certificate-induced candidate V = geodesic energy E_theta(x_d, x).

    Endpoint and parameter gradients use the envelope theorem: at the
    optimal curve they equal the partials of the energy functional.
    """

    def __init__(self, cert, sys, sigma_slope=1.0):
        a_low, a_high = cert.a_low, cert.a_high
        super().__init__(k1=a_low, k2=a_high, k3=a_low * cert.lam, a=2.0,
                         mu=cert.mu, sigma_slope=sigma_slope, name="geodesic-energy")
        self.cert = cert
        self.sys = sys
        # extend the metric outside the certified domain by its boundary
        # values: the uniform caps and the mu-sandwich then hold globally,
        # and geodesics between domain points cannot exploit the
        # uncertified polynomial extrapolation
        self.metric = MetricEvaluator(cert.W, cert.Y, n=sys.n,
                                      clip_box=(sys.domain.lo, sys.domain.hi))
        self.solver = GeodesicSolver(self.metric)
        self._warm = None

    def _solve(self, x, x_d, theta):
        geo = self.solver.solve(np.asarray(x_d, float), np.asarray(x, float),
                                np.asarray(theta, float), warm_start=None)
        return geo

    def value(self, x, x_d, theta):
        return self._solve(x, x_d, theta).energy

    def gradients(self, x, x_d, theta):
        geo = self._solve(x, x_d, theta)
        E, G = self.solver.energy_and_grad(geo.curve.values, np.asarray(theta, float))
        gth = self.solver.theta_energy_gradient(geo.curve, np.asarray(theta, float))
        # curve runs x_d -> x: first node is x_d, last is x
        return E, G[-1], G[0], gth


@dataclass
class ClfReport:
    samples: int
    sandwich_lo_worst: float
    sandwich_hi_worst: float
    grad_worst: float
    decrease_worst: float
    decrease_checked: int
    decrease_vacuous: int
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures


def clf_check(candidate, sys, num_samples=200, seed=0, b_tol=1e-8, tol=1e-9):
    """Sampled adaptive convergent-CLF check.

    Conditions at each sampled (x, x_d, theta_hat, theta_err, u_d):
    sandwich k1 r^a <= V <= k2 r^a; parameter-gradient |dV/dtheta_i| <=
    mu V; and the decrease condition, which binds only where the input
    cannot act (|grad_x V^T B| <= b_tol per channel) and the error is
    outside sigma of the estimation-error magnitude — elsewhere the
    infimum over unbounded inputs is -inf and the implication is vacuous.
    """
    rng = np.random.default_rng(seed)
    lo, hi = sys.domain.lo, sys.domain.hi
    cand = candidate
    s_lo = np.inf
    s_hi = np.inf
    g_w = np.inf
    d_w = np.inf
    d_checked = 0
    d_vac = 0
    failures = []
    for k in range(num_samples):
        x = rng.uniform(lo, hi)
        x_d = rng.uniform(lo, hi)
        theta_hat = sys.theta_box.sample(rng)[0]
        theta_err = sys.theta_err_box.sample(rng)[0]
        u_d = rng.uniform(-1.0, 1.0, size=sys.m)
        r = float(np.linalg.norm(x - x_d))
        try:
            V, gx, gxd, gth = cand.gradients(x, x_d, theta_hat)
        except NotImplementedError:
            V = cand.value(x, x_d, theta_hat)
            gx = gxd = gth = None
        if V < -tol:
            failures.append({"kind": "nonneg", "sample": k, "V": float(V)})
        m_lo = V - cand.k1 * r**cand.a
        m_hi = cand.k2 * r**cand.a - V
        s_lo = min(s_lo, m_lo)
        s_hi = min(s_hi, m_hi)
        if m_lo < -tol * (1 + abs(V)):
            failures.append({"kind": "sandwich_lo", "sample": k, "margin": float(m_lo)})
        if m_hi < -tol * (1 + abs(V)):
            failures.append({"kind": "sandwich_hi", "sample": k, "margin": float(m_hi)})
        if gth is not None:
            for i in range(sys.p):
                m = cand.mu * V - abs(float(gth[i]))
                g_w = min(g_w, m)
                if m < -tol * (1 + abs(V)):
                    failures.append({"kind": "param_gradient", "sample": k,
                                     "param": i, "margin": float(m)})
        if gx is None:
            continue
        # decrease condition
        if r < cand.sigma(float(np.sum(np.abs(theta_err)))):
            d_vac += 1
            continue
        gxB = np.asarray(gx) @ sys.b_mat(x)
        if np.any(np.abs(gxB) > b_tol):
            d_vac += 1  # infimum over u is -inf: vacuously satisfied
            continue
        Fx = sys.f_vec(x) + sys.delta_mat(x).T @ theta_hat
        Fxd = sys.full_dynamics(x_d, theta_hat, u_d)
        drift = float(np.asarray(gx) @ Fx + np.asarray(gxd) @ Fxd
                      - np.asarray(gx) @ (sys.delta_mat(x).T @ theta_err))
        m = -cand.k3 * r**cand.a - drift
        d_w = min(d_w, m)
        d_checked += 1
        if m < -tol * (1 + abs(drift)):
            failures.append({"kind": "decrease", "sample": k, "margin": float(m)})
    return ClfReport(samples=num_samples,
                     sandwich_lo_worst=float(s_lo), sandwich_hi_worst=float(s_hi),
                     grad_worst=float(g_w) if np.isfinite(g_w) else 0.0,
                     decrease_worst=float(d_w) if np.isfinite(d_w) else 0.0,
                     decrease_checked=d_checked, decrease_vacuous=d_vac,
                     failures=failures)
