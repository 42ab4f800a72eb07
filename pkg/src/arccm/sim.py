"""Deterministic closed-loop simulation with full trace logging.

The true plant integrates continuously (RK4 at step h) under the true
parameters while the controller runs at the control tick rate: read the
estimate, advance the model-consistent reference, solve the geodesic
(warm-started from the previous tick), apply the geodesic feedback and
hold it zero-order until the next tick.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .control import RateConditionError, feedback, rho
from .geodesic import GeodesicSolver, MetricEvaluator
from .system import ReferenceGenerator


def rk4_step(deriv, x, dt):
    """Classical fourth-order Runge-Kutta step; aborts on non-finite derivatives."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    k1 = deriv(x)
    k2 = deriv(x + 0.5 * dt * k1)
    k3 = deriv(x + 0.5 * dt * k2)
    k4 = deriv(x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite state in RK4 step")
    return out


@dataclass
class SimConfig:
    t0: float = 0.0
    t1: float = 12.0
    h: float = 1e-3
    control_period: float = 1e-2
    x0_offset: tuple = (0.5, -0.5, 0.5)
    x0: tuple = None  # overrides x0_offset when given
    theta_true: tuple = None
    geodesic_degree: int = 6
    enforce_rate_condition: bool = True

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("integrator step must be positive")
        ratio = self.control_period / self.h
        if self.control_period < self.h or abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("control period must be an integer multiple of h")


@dataclass
class Trace:
    """Uniformly ticked closed-loop record; one row per control tick."""

    t: np.ndarray
    x: np.ndarray
    x_d: np.ndarray
    u: np.ndarray
    u_d: np.ndarray
    theta_hat: np.ndarray
    theta_err: np.ndarray
    energy: np.ndarray
    rho: np.ndarray
    geo_ok: np.ndarray
    in_domain: np.ndarray
    bound_cons: np.ndarray = None
    bound_int: np.ndarray = None

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])

    def certified_mask(self):
        return self.geo_ok & self.in_domain

    def save_csv(self, path):
        n = self.x.shape[1]
        m = self.u.shape[1]
        p = self.theta_hat.shape[1]
        header = (["t"]
                  + ["x%d" % (i + 1) for i in range(n)]
                  + ["xd%d" % (i + 1) for i in range(n)]
                  + ["u%d" % (i + 1) for i in range(m)]
                  + ["ud%d" % (i + 1) for i in range(m)]
                  + ["thhat%d" % (i + 1) for i in range(p)]
                  + ["E", "rho", "bound_cons", "bound_int", "geo_ok", "in_domain"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(self.t.size):
                row = [repr(float(self.t[k]))]
                row += [repr(float(v)) for v in self.x[k]]
                row += [repr(float(v)) for v in self.x_d[k]]
                row += [repr(float(v)) for v in self.u[k]]
                row += [repr(float(v)) for v in self.u_d[k]]
                row += [repr(float(v)) for v in self.theta_hat[k]]
                row += [repr(float(self.energy[k])), repr(float(self.rho[k]))]
                row.append("" if self.bound_cons is None else repr(float(self.bound_cons[k])))
                row.append("" if self.bound_int is None else repr(float(self.bound_int[k])))
                row.append("1" if self.geo_ok[k] else "0")
                row.append("1" if self.in_domain[k] else "0")
                w.writerow(row)

    @classmethod
    def load_csv(cls, path, theta_true=None):
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            rows = list(r)
        n = sum(1 for h in header if h.startswith("x") and not h.startswith("xd"))
        m = sum(1 for h in header if h.startswith("u") and not h.startswith("ud"))
        p = sum(1 for h in header if h.startswith("thhat"))
        col = {h: i for i, h in enumerate(header)}
        N = len(rows)
        t = np.array([float(row[col["t"]]) for row in rows])
        x = np.array([[float(row[col["x%d" % (i + 1)]]) for i in range(n)] for row in rows])
        x_d = np.array([[float(row[col["xd%d" % (i + 1)]]) for i in range(n)] for row in rows])
        u = np.array([[float(row[col["u%d" % (i + 1)]]) for i in range(m)] for row in rows])
        u_d = np.array([[float(row[col["ud%d" % (i + 1)]]) for i in range(m)] for row in rows])
        th = np.array([[float(row[col["thhat%d" % (i + 1)]]) for i in range(p)] for row in rows])
        E = np.array([float(row[col["E"]]) for row in rows])
        rho_v = np.array([float(row[col["rho"]]) for row in rows])
        geo_ok = np.array([row[col["geo_ok"]] == "1" for row in rows])
        in_dom = np.array([row[col["in_domain"]] == "1" for row in rows])

        def _optional(name):
            vals = [row[col[name]] for row in rows]
            if any(v == "" for v in vals):
                return None
            return np.array([float(v) for v in vals])

        terr = th - np.asarray(theta_true, float)[None, :] if theta_true is not None \
            else np.full_like(th, np.nan)
        return cls(t, x, x_d, u, u_d, th, terr, E, rho_v, geo_ok, in_dom,
                   bound_cons=_optional("bound_cons"), bound_int=_optional("bound_int"))


def run_closed_loop(sys, cert, sim, estimator, x2d0=None):
    """Simulate the tracking loop; returns a Trace with one record per tick.

    ``estimator`` provides theta_hat/update/rate (scheduled, frozen or RLS).
    Domain excursions and non-converged geodesics are flagged, not fatal;
    a non-positive effective rate aborts when ``enforce_rate_condition``.
    """
    theta_true = np.asarray(sim.theta_true, dtype=float)
    metric = MetricEvaluator(cert.W, cert.Y, n=sys.n)
    solver = GeodesicSolver(metric, degree=sim.geodesic_degree)
    ref = ReferenceGenerator(sys, t0=sim.t0, x2d0=x2d0,
                             theta_hat0=estimator.theta_hat(sim.t0))

    nticks = int(round((sim.t1 - sim.t0) / sim.control_period)) + 1
    substeps = int(round(sim.control_period / sim.h))

    rec = {k: [] for k in ("t", "x", "x_d", "u", "u_d", "th", "terr", "E",
                           "rho", "geo_ok", "in_domain")}
    theta_hat = estimator.theta_hat(sim.t0)
    rp0 = ref.point(theta_hat)
    x = np.array(sim.x0, dtype=float) if sim.x0 is not None else rp0.x_d + np.asarray(sim.x0_offset, float)
    x_prev = None
    u_prev = None
    warm = None
    for k in range(nticks):
        t = sim.t0 + k * sim.control_period
        if x_prev is not None:
            theta_hat = estimator.update(t, x, x_prev, u_prev, sim.control_period)
        else:
            theta_hat = estimator.theta_hat(t)
        rate = estimator.rate(t)
        rho_t = rho(cert.lam, cert.mu, sys.p, rate)
        if sim.enforce_rate_condition and rho_t <= 0.0:
            raise RateConditionError(
                "rate condition violated at t=%.3f s: rho=%.4g <= 0 "
                "(estimation rate %.4g too fast for lambda=%.3g, mu=%.3g)"
                % (t, rho_t, rate, cert.lam, cert.mu))
        rp = ref.point(theta_hat)
        geo = solver.solve(rp.x_d, x, theta_hat, warm_start=warm)
        warm = geo.curve
        u = feedback(cert, solver, geo, rp.u_d, theta_hat)

        rec["t"].append(t)
        rec["x"].append(x.copy())
        rec["x_d"].append(rp.x_d.copy())
        rec["u"].append(u.copy())
        rec["u_d"].append(rp.u_d.copy())
        rec["th"].append(theta_hat.copy())
        rec["terr"].append(theta_hat - theta_true)
        rec["E"].append(geo.energy)
        rec["rho"].append(rho_t)
        rec["geo_ok"].append(geo.converged)
        rec["in_domain"].append(sys.domain.contains(x))

        if k == nticks - 1:
            break
        x_prev = x.copy()
        u_prev = u.copy()
        for _ in range(substeps):
            x = rk4_step(lambda s: sys.full_dynamics(s, theta_true, u), x, sim.h)
        ref.advance(sim.control_period, theta_hat)

    return Trace(np.array(rec["t"]), np.array(rec["x"]), np.array(rec["x_d"]),
                 np.array(rec["u"]), np.array(rec["u_d"]), np.array(rec["th"]),
                 np.array(rec["terr"]), np.array(rec["E"]), np.array(rec["rho"]),
                 np.array(rec["geo_ok"]), np.array(rec["in_domain"]))
