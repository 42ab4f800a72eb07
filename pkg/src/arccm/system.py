"""Uncertain control-affine system models and reference generation.

The model class is ``xdot = f(x) + Delta(x)^T theta + B(x) u`` with the
unknown parameter vector theta confined to a box.  The builtin
``example-ccs-3state`` instance is a three-state system with four
unmatched/matched uncertain parameters and a scalar input on the third
state; its reference trajectories are generated by inverting the first
and third rows of the model for x3d and ud while integrating the second
row for x2d.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import expr
from .expr import Expression


class DimensionError(ValueError):
    pass


class ParameterBox:
    """Axis-aligned closed box [lo_i, hi_i], i = 1..p."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float).ravel()
        self.hi = np.asarray(hi, dtype=float).ravel()
        if self.lo.shape != self.hi.shape:
            raise DimensionError("lo/hi length mismatch")
        if np.any(self.lo > self.hi):
            raise ValueError("box has lo > hi")

    @property
    def dim(self):
        return self.lo.size

    def midpoint(self):
        return 0.5 * (self.lo + self.hi)

    def vertices(self):
        """All 2^p corner points, in a fixed binary-counter order."""
        p = self.dim
        out = np.empty((2**p, p))
        for k in range(2**p):
            for i in range(p):
                out[k, i] = self.hi[i] if (k >> i) & 1 else self.lo[i]
        return out

    def contains(self, pt, tol=0.0):
        pt = np.asarray(pt, dtype=float).ravel()
        return bool(np.all(pt >= self.lo - tol) and np.all(pt <= self.hi + tol))

    def clip(self, pt):
        return np.clip(np.asarray(pt, dtype=float).ravel(), self.lo, self.hi)

    def sample(self, rng, count=1):
        return rng.uniform(self.lo, self.hi, size=(count, self.dim))

    def grid(self, counts):
        """Uniform product grid with ``counts[i]`` samples per axis."""
        axes = [np.linspace(self.lo[i], self.hi[i], int(counts[i])) for i in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def widths(self):
        return self.hi - self.lo

    def to_json(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(d["lo"], d["hi"])


@dataclass
class UncertainSystem:
    """The model quadruple (f, Delta, B, parameter box) plus domains.

    ``f`` is a list of n Expressions, ``delta`` a p-list of n-lists
    (row i is the regressor multiplying theta_i), ``b`` an n-list of
    m-lists (column j is input channel j).  None of them may reference
    parameter variables: theta enters only linearly through Delta^T theta.
    """

    n: int
    m: int
    p: int
    f: list
    delta: list
    b: list
    theta_box: ParameterBox
    theta_err_box: ParameterBox
    domain: ParameterBox
    name: str = ""

    def __post_init__(self):
        if len(self.f) != self.n:
            raise DimensionError("f must have n entries")
        if len(self.delta) != self.p or any(len(r) != self.n for r in self.delta):
            raise DimensionError("delta must be p x n")
        if len(self.b) != self.n or any(len(r) != self.m for r in self.b):
            raise DimensionError("b must be n x m")
        if self.theta_box.dim != self.p or self.theta_err_box.dim != self.p:
            raise DimensionError("parameter boxes must have dimension p")
        if self.domain.dim != self.n:
            raise DimensionError("state domain must have dimension n")
        for e in self._all_exprs():
            mx, mp = e.max_indices()
            if mx >= self.n:
                raise DimensionError("expression references state x%d beyond n=%d" % (mx + 1, self.n))
            if mp >= 0:
                raise DimensionError("f, Delta, B must not reference theta variables")

    def _all_exprs(self):
        for e in self.f:
            yield e
        for row in self.delta:
            for e in row:
                yield e
        for row in self.b:
            for e in row:
                yield e

    # -- pointwise model quantities ---------------------------------------
    def f_vec(self, x):
        return np.array([e.eval(x, ()) for e in self.f])

    def delta_mat(self, x):
        """Delta(x), shape (p, n)."""
        out = np.array([[e.eval(x, ()) for e in row] for row in self.delta])
        return out.reshape(self.p, self.n)

    def b_mat(self, x):
        """B(x), shape (n, m)."""
        out = np.array([[e.eval(x, ()) for e in row] for row in self.b])
        return out.reshape(self.n, self.m)

    def full_dynamics(self, x, theta, u):
        """f(x) + Delta(x)^T theta + B(x) u."""
        x = np.asarray(x, dtype=float).ravel()
        theta = np.asarray(theta, dtype=float).ravel()
        u = np.atleast_1d(np.asarray(u, dtype=float)).ravel()
        if x.size != self.n or theta.size != self.p or u.size != self.m:
            raise DimensionError("dimension mismatch in full_dynamics")
        return self.f_vec(x) + self.delta_mat(x).T @ theta + self.b_mat(x) @ u

    def jacobian(self, x, theta, u=None):
        """State Jacobian A_theta(x, u) of the dynamics.

        A = grad_x f + sum_i grad_x b_i u_i + sum_i grad_x Delta_i theta_i.
        With ``u=None`` the input terms are omitted (drift-only variant
        used by the metric conditions, where they are annihilated by the
        Killing condition on B).
        """
        x = np.asarray(x, dtype=float).ravel()
        theta = np.asarray(theta, dtype=float).ravel()
        A = np.zeros((self.n, self.n))
        for r in range(self.n):
            _, g = self.f[r].eval_with_partials(x, ())
            A[r, :] = g[: self.n]
        for i in range(self.p):
            for c in range(self.n):
                _, g = self.delta[i][c].eval_with_partials(x, ())
                # Delta^T theta contributes row c of (Delta_i * theta_i)
                A[c, :] += theta[i] * np.asarray(g[: self.n])
        if u is not None:
            u = np.atleast_1d(np.asarray(u, dtype=float)).ravel()
            for j in range(self.m):
                for r in range(self.n):
                    _, g = self.b[r][j].eval_with_partials(x, ())
                    A[r, :] += u[j] * np.asarray(g[: self.n])
        return A

    def constant_b(self):
        """True when no entry of B depends on the state."""
        return all(e.max_indices()[0] < 0 for row in self.b for e in row)


def example_system(domain_halfwidth=2.5):
    """The builtin three-state benchmark system.

    Dynamics:
        x1' = x3 - th1*x1
        x2' = -x2 - th2*x1^2
        x3' = tanh(x2) - th3*x3 - th4*x1^2 + u
    """
    x1, x2, x3 = expr.state(0), expr.state(1), expr.state(2)
    f = [x3, -x2, expr.tanh(x2)]
    zero = expr.const(0.0)
    delta = [
        [-x1, zero, zero],
        [zero, -(x1**2), zero],
        [zero, zero, -x3],
        [zero, zero, -(x1**2)],
    ]
    b = [[zero], [zero], [expr.const(1.0)]]
    theta_box = ParameterBox([-1.0, 0.5, -0.6, -1.75], [1.0, 1.5, 0.75, 0.5])
    err = theta_box.widths()
    theta_err_box = ParameterBox(-err, err)
    hw = float(domain_halfwidth)
    domain = ParameterBox([-hw] * 3, [hw] * 3)
    return UncertainSystem(3, 1, 4, f, delta, b, theta_box, theta_err_box, domain,
                           name="example-ccs-3state")


TRUE_THETA_EXAMPLE = np.array([-0.3, 0.8, -0.25, -0.75])


@dataclass
class ReferencePoint:
    t: float
    x_d: np.ndarray
    u_d: np.ndarray
    xdot_d: np.ndarray


class ReferenceGenerator:
    """Model-consistent reference for the builtin example system.

    x1d(t) = sin(t); x3d is obtained by inverting row 1 under the current
    estimate; x2d integrates row 2 forward (so it stays continuous across
    estimate updates); ud inverts row 3.  Every emitted point satisfies
    xdot_d = F_thetahat(x_d, u_d) exactly under the estimate active at
    that instant.
    """

    def __init__(self, sys, t0=0.0, x2d0=None, theta_hat0=None, substep=1e-3):
        if sys.name != "example-ccs-3state":
            raise ValueError("reference construction is only declared for the builtin example system")
        self.sys = sys
        self.t = float(t0)
        self.substep = float(substep)
        th0 = sys.theta_box.midpoint() if theta_hat0 is None else np.asarray(theta_hat0, float)
        if x2d0 is None:
            # periodic steady state of x2' = -x2 - th2*sin(t)^2, in closed form:
            # sin^2 t = (1 - cos 2t)/2  =>  x2 = -th2/2 + (th2/10)cos 2t + (th2/5)sin 2t
            th2 = th0[1]
            self.x2d = -th2 / 2.0 + (th2 / 10.0) * math.cos(2 * t0) \
                + (th2 / 5.0) * math.sin(2 * t0)
        else:
            self.x2d = float(x2d0)

    def point(self, theta_hat):
        """Reference point at the generator's current time under ``theta_hat``."""
        th = np.asarray(theta_hat, dtype=float)
        t = self.t
        x1d = math.sin(t)
        x3d = math.cos(t) + th[0] * math.sin(t)
        x2d = self.x2d
        x1dot = math.cos(t)
        x2dot = -x2d - th[1] * x1d**2
        x3dot = -math.sin(t) + th[0] * math.cos(t)
        ud = x3dot - math.tanh(x2d) + th[2] * x3d + th[3] * x1d**2
        return ReferencePoint(t, np.array([x1d, x2d, x3d]),
                              np.array([ud]), np.array([x1dot, x2dot, x3dot]))

    def advance(self, dt, theta_hat):
        """Integrate x2d forward by ``dt`` under a held estimate."""
        th = np.asarray(theta_hat, dtype=float)
        steps = max(1, int(round(dt / self.substep)))
        h = dt / steps
        x2 = self.x2d
        for k in range(steps):
            tk = self.t + k * h
            x2 = _rk4_scalar(lambda t, v: -v - th[1] * math.sin(t) ** 2, tk, x2, h)
        self.x2d = x2
        self.t += dt


def _rk4_scalar(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def generate_reference(sys, theta_hat_fn, t0, t1, dt, x2d0=None):
    """Sequence of ReferencePoints on [t0, t1] under a time-varying estimate.

    ``theta_hat_fn`` maps time to the active parameter estimate.  The
    estimate is sampled (and held) at each emitted point.
    """
    gen = ReferenceGenerator(sys, t0=t0, x2d0=x2d0, theta_hat0=theta_hat_fn(t0))
    out = []
    nsteps = int(round((t1 - t0) / dt))
    for k in range(nsteps + 1):
        th = np.asarray(theta_hat_fn(gen.t), dtype=float)
        out.append(gen.point(th))
        if k < nsteps:
            gen.advance(dt, th)
    return out
