"""Riemannian energy and geodesics under a parameter-dependent metric.

Curves are degree-D Chebyshev interpolants over Chebyshev-Gauss-Lobatto
nodes on [0, 1] with pinned endpoints.  Energy uses Gauss-Legendre
quadrature of gamma_s^T M(gamma) gamma_s with M = W^{-1} obtained by a
symmetric positive-definite solve at each quadrature point; the curve
derivative comes from exact differentiation of the interpolant.
"""

import numpy as np
from scipy.linalg import cho_factor, cho_solve

DEFAULT_DEGREE = 6


class MetricError(RuntimeError):
    """Raised when the dual metric fails to be positive definite."""


def cgl_nodes(degree):
    """Chebyshev-Gauss-Lobatto abscissae mapped to [0, 1], ascending."""
    k = np.arange(degree + 1)
    return 0.5 * (1.0 - np.cos(np.pi * k / degree))


def cheb_diff_matrix(degree):
    """Differentiation matrix on the [0,1] CGL nodes (d/ds at the nodes)."""
    N = degree
    k = np.arange(N + 1)
    x = np.cos(np.pi * k / N)  # standard nodes on [1, -1]
    c = np.hstack([2.0, np.ones(N - 1), 2.0]) * (-1.0) ** k
    X = np.tile(x, (N + 1, 1)).T
    dX = X - X.T
    D = np.outer(c, 1.0 / c) / (dX + np.eye(N + 1))
    D -= np.diag(D.sum(axis=1))
    # s = (1 - x)/2  =>  d/ds = -2 d/dx; node order already matches ascending s
    return -2.0 * D


def barycentric_matrix(nodes, targets):
    """Interpolation matrix from values at ``nodes`` to values at ``targets``."""
    n = len(nodes)
    w = np.ones(n)
    for j in range(n):
        for k in range(n):
            if k != j:
                w[j] /= nodes[j] - nodes[k]
    P = np.zeros((len(targets), n))
    for q, t in enumerate(targets):
        d = t - nodes
        hit = np.where(np.abs(d) < 1e-14)[0]
        if hit.size:
            P[q, hit[0]] = 1.0
        else:
            r = w / d
            P[q] = r / r.sum()
    return P


class Curve:
    """Pseudospectral curve gamma: [0,1] -> R^n with fixed endpoints."""

    def __init__(self, nodes_xy, degree=None):
        nodes_xy = np.asarray(nodes_xy, dtype=float)
        if degree is None:
            degree = nodes_xy.shape[0] - 1
        if nodes_xy.shape[0] != degree + 1:
            raise ValueError("need degree+1 node values")
        self.degree = degree
        self.values = nodes_xy.copy()
        self.abscissae = cgl_nodes(degree)

    @classmethod
    def straight_line(cls, x_start, x_end, degree=DEFAULT_DEGREE):
        s = cgl_nodes(degree)[:, None]
        a = np.asarray(x_start, dtype=float)[None, :]
        b = np.asarray(x_end, dtype=float)[None, :]
        return cls((1 - s) * a + s * b, degree)

    @property
    def start(self):
        return self.values[0]

    @property
    def end(self):
        return self.values[-1]

    def with_endpoints(self, x_start, x_end):
        """Copy with new pinned endpoints, keeping interior nodes (warm start)."""
        v = self.values.copy()
        v[0] = np.asarray(x_start, dtype=float)
        v[-1] = np.asarray(x_end, dtype=float)
        return Curve(v, self.degree)


class Geodesic:
    def __init__(self, curve, energy, iterations, optimality, converged):
        self.curve = curve
        self.energy = energy
        self.iterations = iterations
        self.optimality = optimality
        self.converged = converged


class MetricEvaluator:
    """Batched evaluation of W, its partials, and M = W^{-1} along curves.

    Built once per dual-metric family; precomputes the coefficient
    tensors of all first partials so hot loops only do monomial
    evaluation plus small matrix algebra.
    """

    def __init__(self, W, Y=None, n=None, clip_box=None):
        self.W = W
        self.Y = Y
        self.n = W.rows if n is None else n
        if clip_box is None:
            self.clip_lo = self.clip_hi = None
        else:
            self.clip_lo = np.asarray(clip_box[0], dtype=float)
            self.clip_hi = np.asarray(clip_box[1], dtype=float)
        self.p = W.basis.nvars - self.n
        basis = W.basis
        self.basis = basis
        self.cW = W.coeffs
        D = [basis.derivative_matrix(v) for v in range(basis.nvars)]
        self.cWx = np.stack([W.coeffs @ D[j].T for j in range(self.n)])
        if self.p > 0:
            self.cWth = np.stack([W.coeffs @ D[self.n + i].T for i in range(self.p)])
        else:
            self.cWth = np.zeros((0,) + W.coeffs.shape)
        self.cY = None if Y is None else Y.coeffs

    def clip_state(self, xs):
        """Clip states to the certified box, if one was given.

        Returns (clipped points, mask) where mask is 1.0 for coordinates
        inside the box (state partials pass through) and 0.0 where the
        clip is active, or None when no box is attached.  The metric is
        thereby extended outside the certified domain by its boundary
        values, which preserves positive definiteness, the uniform
        eigenvalue caps, and the parameter-sensitivity bound.
        """
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if self.clip_lo is None:
            return xs, None
        xc = np.clip(xs, self.clip_lo, self.clip_hi)
        mask = ((xs >= self.clip_lo) & (xs <= self.clip_hi)).astype(float)
        return xc, mask

    def phi(self, xs, theta):
        xs, _ = self.clip_state(xs)
        pts = np.hstack([xs, np.tile(np.asarray(theta, float), (xs.shape[0], 1))])
        return self.basis.eval_many(pts)

    def W_at(self, xs, theta):
        phi = self.phi(xs, theta)
        W = np.einsum("abk,qk->qab", self.cW, phi)
        return 0.5 * (W + W.transpose(0, 2, 1)), phi

    def M_at(self, xs, theta):
        """M = W^{-1} at each point; raises MetricError if W is not SPD."""
        Wq, phi = self.W_at(xs, theta)
        M = np.empty_like(Wq)
        for q in range(Wq.shape[0]):
            try:
                cf = cho_factor(Wq[q])
            except np.linalg.LinAlgError:
                raise MetricError("dual metric not positive definite at %r" % (xs[q],))
            M[q] = cho_solve(cf, np.eye(self.n))
        M = 0.5 * (M + M.transpose(0, 2, 1))
        return M, phi

    def Wx_at(self, phi):
        """State partials of W from precomputed monomials: (n, q, n, n)."""
        return np.einsum("jabk,qk->jqab", self.cWx, phi)

    def Wth_at(self, phi):
        return np.einsum("iabk,qk->iqab", self.cWth, phi)

    def Y_at(self, phi):
        if self.cY is None:
            raise ValueError("no gain family attached")
        return np.einsum("abk,qk->qab", self.cY, phi)


class GeodesicSolver:
    """Energy minimization over interior curve nodes (quasi-Newton + backtracking)."""

    def __init__(self, metric, degree=DEFAULT_DEGREE, quad_points=None,
                 max_iter=200, grad_tol=1e-8):
        self.metric = metric
        self.degree = degree
        Q = 2 * degree if quad_points is None else quad_points
        gl_x, gl_w = np.polynomial.legendre.leggauss(Q)
        self.s_q = 0.5 * (gl_x + 1.0)
        self.w_q = 0.5 * gl_w
        nodes = cgl_nodes(degree)
        self.P = barycentric_matrix(nodes, self.s_q)
        self.Pd = self.P @ cheb_diff_matrix(degree)
        self.max_iter = max_iter
        self.grad_tol = grad_tol

    # -- energy ------------------------------------------------------------
    def energy(self, curve, theta):
        g = self.P @ curve.values
        gs = self.Pd @ curve.values
        M, _ = self.metric.M_at(g, theta)
        integrand = np.einsum("qa,qab,qb->q", gs, M, gs)
        return float(self.w_q @ integrand)

    def energy_and_grad(self, values, theta):
        """Energy and gradient with respect to all node values."""
        g = self.P @ values
        gs = self.Pd @ values
        M, phi = self.metric.M_at(g, theta)
        Mgs = np.einsum("qab,qb->qa", M, gs)
        E = float(self.w_q @ np.einsum("qa,qa->q", gs, Mgs))
        # velocity term: 2 * w_q * Pd[q,k] * (M gs)_j
        grad = 2.0 * np.einsum("q,qk,qa->ka", self.w_q, self.Pd, Mgs, optimize=True)
        # position term: w_q * P[q,k] * gs^T dM/dx_j gs, dM/dx_j = -M Wx_j M
        Wx = self.metric.Wx_at(phi)
        _, mask = self.metric.clip_state(g)
        if mask is not None:
            Wx = Wx * mask.T[:, :, None, None]
        quad_form = -np.einsum("qa,jqab,qb->qj", Mgs, Wx, Mgs, optimize=True)
        grad += np.einsum("q,qk,qj->kj", self.w_q, self.P, quad_form, optimize=True)
        return E, grad

    def theta_energy_gradient(self, curve, theta):
        """dE/dtheta_i for all i, via dM/dtheta_i = -M dW/dtheta_i M."""
        g = self.P @ curve.values
        gs = self.Pd @ curve.values
        M, phi = self.metric.M_at(g, theta)
        Mgs = np.einsum("qab,qb->qa", M, gs)
        Wth = self.metric.Wth_at(phi)
        integrand = -np.einsum("qa,iqab,qb->qi", Mgs, Wth, Mgs, optimize=True)
        return self.w_q @ integrand

    # -- solve ---------------------------------------------------------------
    def solve(self, x_start, x_end, theta, warm_start=None):
        x_start = np.asarray(x_start, dtype=float)
        x_end = np.asarray(x_end, dtype=float)
        if warm_start is not None:
            curve = warm_start.with_endpoints(x_start, x_end)
        else:
            curve = Curve.straight_line(x_start, x_end, self.degree)
        n = x_start.size
        D = self.degree
        values = curve.values.copy()
        nfree = (D - 1) * n

        def pack(vals):
            return vals[1:-1].ravel()

        def unpack(z):
            v = values.copy()
            v[1:-1] = z.reshape(D - 1, n)
            return v

        def fg(z):
            v = unpack(z)
            E, G = self.energy_and_grad(v, theta)
            return E, G[1:-1].ravel()

        def fg_safe(z):
            # trial steps may leave the region where W is positive definite;
            # infinite energy makes the line search back off instead of dying
            try:
                return fg(z)
            except MetricError:
                return np.inf, g

        z = pack(values)
        E, g = fg(z)
        H = np.eye(nfree)  # inverse Hessian approximation (BFGS)
        iters = 0
        converged = False
        while iters < self.max_iter:
            gnorm = float(np.linalg.norm(g))
            if gnorm <= self.grad_tol * (1.0 + E):
                converged = True
                break
            d = -H @ g
            if float(d @ g) >= 0.0:
                H = np.eye(nfree)
                d = -g
            # backtracking Armijo line search; accepted iterates are monotone
            step = 1.0
            accepted = False
            for _ in range(40):
                z_new = z + step * d
                E_new, g_new = fg_safe(z_new)
                if np.isfinite(E_new) and E_new <= E + 1e-4 * step * float(g @ d):
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
            s = z_new - z
            y = g_new - g
            sy = float(s @ y)
            if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y) + 1e-300):
                Hy = H @ y
                rho = 1.0 / sy
                H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) \
                    + rho * rho * (sy + float(y @ Hy)) * np.outer(s, s)
            z, E, g = z_new, E_new, g_new
            iters += 1
        curve = Curve(unpack(z), D)
        if not converged:
            gnorm = float(np.linalg.norm(g))
            converged = gnorm <= self.grad_tol * (1.0 + E)
        return Geodesic(curve, E, iters, float(np.linalg.norm(g)), converged)


def riemannian_energy(metric, curve, theta, solver=None):
    """Riemannian energy of an explicit curve under the metric family."""
    solver = solver or GeodesicSolver(metric, degree=curve.degree)
    return solver.energy(curve, theta)


def solve_geodesic(metric, x_start, x_end, theta, warm_start=None,
                   degree=DEFAULT_DEGREE, **kw):
    return GeodesicSolver(metric, degree=degree, **kw).solve(x_start, x_end, theta,
                                                             warm_start=warm_start)


def energy_log_gradient_theta(metric, curve, theta, index, solver=None, zero_tol=1e-14):
    """(dE/dtheta_i) / E for one parameter index; undefined at zero energy."""
    solver = solver or GeodesicSolver(metric, degree=curve.degree)
    E = solver.energy(curve, theta)
    if E <= zero_tol:
        raise ValueError("log-gradient undefined at zero energy (E=%g)" % E)
    dE = solver.theta_energy_gradient(curve, theta)
    return float(dE[index] / E)
