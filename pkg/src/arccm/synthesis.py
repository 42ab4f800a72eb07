"""Offline metric synthesis by penalized eigenvalue feasibility on grids.

The decision variables are the coefficient tensors of the dual-metric
family W(x, theta) (symmetric) and the gain family Y(x, theta), plus the
squared disturbance gain alpha^2.  All conditions are affine in these,
so for fixed (lambda, mu) the smoothed max-eigenvalue penalty is convex
and a quasi-Newton descent converges to a feasible point whenever one
exists in the ansatz.

Condition blocks at a sample point (x, theta):

  C1      [[What, -Delta^T], [-Delta, alpha^2 I]]  >= 0
          What = dW/dt|_drift - A W - W A^T - B Y - Y^T B^T - 2*lambda*W
  C2      dW|_{b_i} - W grad(b_i)^T - grad(b_i) W  = 0       (per input)
  C3      mu W + dW/dtheta_i >= 0,  mu W - dW/dtheta_i >= 0  (per param)
  bounds  W - (1/a_high) I >= 0,    (1/a_low) I - W >= 0

The Schur-complement block form of C1 is what the energy decay argument
actually integrates; the factor on lambda inside What is configurable
("c1-2lambda" default, "proof-lambda" alternative).
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .poly import MonomialBasis, PolyMatrixFamily
from .system import ParameterBox


@dataclass
class GridSpec:
    """Sampling plan over the joint (x, theta) domain.

    ``gridded_params`` are theta indices covered by a uniform grid with
    the matching entry of ``grid_counts``; ``vertex_params`` are handled
    by box-vertex enumeration (sound for components the conditions are
    affine in, i.e. parameters W does not depend on).  ``random_count``
    uniform joint samples (fixed ``seed``) augment the product grid.
    """

    gridded_params: tuple = (0, 1)
    grid_counts: tuple = (11, 11)
    vertex_params: tuple = (2, 3)
    x_counts: tuple = (3, 3, 3)
    random_count: int = 4000
    seed: int = 0

    def theta_points(self, theta_box):
        """Full theta vectors: grid over gridded params x vertices of the rest."""
        p = theta_box.dim
        axes = [np.linspace(theta_box.lo[i], theta_box.hi[i], c)
                for i, c in zip(self.gridded_params, self.grid_counts)]
        mesh = np.meshgrid(*axes, indexing="ij") if axes else [np.zeros(1)]
        grid = np.stack([m.ravel() for m in mesh], axis=1) if axes else np.zeros((1, 0))
        vparams = list(self.vertex_params)
        if vparams:
            sub = ParameterBox(theta_box.lo[vparams], theta_box.hi[vparams])
            verts = sub.vertices()
        else:
            verts = np.zeros((1, 0))
        out = np.empty((grid.shape[0] * verts.shape[0], p))
        mid = theta_box.midpoint()
        k = 0
        for gv in grid:
            for vv in verts:
                th = mid.copy()
                th[list(self.gridded_params)] = gv
                if vparams:
                    th[vparams] = vv
                out[k] = th
                k += 1
        return out

    def theta_points_no_vertices(self, theta_box):
        """Gridded-parameter combinations only (for W-only conditions)."""
        p = theta_box.dim
        axes = [np.linspace(theta_box.lo[i], theta_box.hi[i], c)
                for i, c in zip(self.gridded_params, self.grid_counts)]
        if not axes:
            return theta_box.midpoint()[None, :]
        mesh = np.meshgrid(*axes, indexing="ij")
        grid = np.stack([m.ravel() for m in mesh], axis=1)
        out = np.tile(theta_box.midpoint(), (grid.shape[0], 1))
        out[:, list(self.gridded_params)] = grid
        return out

    def x_points(self, domain):
        return domain.grid(self.x_counts)

    def random_points(self, domain, theta_box):
        if self.random_count <= 0:
            return np.zeros((0, domain.dim)), np.zeros((0, theta_box.dim))
        rng = np.random.default_rng(self.seed)
        xs = domain.sample(rng, self.random_count)
        ths = theta_box.sample(rng, self.random_count)
        return xs, ths

    def describe(self):
        return {
            "gridded_params": list(self.gridded_params),
            "grid_counts": list(self.grid_counts),
            "vertex_params": list(self.vertex_params),
            "x_counts": list(self.x_counts),
            "random_count": self.random_count,
            "seed": self.seed,
        }


@dataclass
class SynthesisConfig:
    degree: int = 4
    lambdas: tuple = (0.8, 0.6, 0.4)
    mus: tuple = (0.2,)
    a_low: float = 1e-2
    a_high: float = 1e2
    tau: float = 0.01
    margin_target: float = 0.05
    max_iter: int = 1500
    alpha_reg: float = 1e-3
    alpha0_sq: float = 10.0
    c2_weight: float = 10.0
    c2_tol: float = 1e-9
    rate_convention: str = "c1-2lambda"
    w_param_subset: tuple = None  # theta indices W may depend on; default = gridded
    enforce_killing: bool = True  # structurally zero C2 when B is constant
    bound_headroom: float = 0.1   # training-only tightening of the uniform caps
    refine_rounds: int = 20       # active-sampling rounds against the probes
    refine_points: int = 300      # violating points added per round
    refine_probe: int = 20000     # fresh random probe samples per round
    refine_descents: int = 32     # local-descent starts per round
    refine_confirm: int = 2       # consecutive clean rounds required to accept
    refine_target: float = 5e-3   # probe worst margin required to accept
    verbose: bool = False
    grid: GridSpec = field(default_factory=GridSpec)

    def __post_init__(self):
        if any(l <= 0 for l in self.lambdas) or any(m <= 0 for m in self.mus):
            raise ValueError("lambda and mu candidates must be strictly positive")
        if self.a_low <= 0 or self.a_low >= self.a_high:
            raise ValueError("need 0 < a_low < a_high")
        if self.rate_convention not in ("c1-2lambda", "proof-lambda"):
            raise ValueError("rate_convention must be 'c1-2lambda' or 'proof-lambda'")


@dataclass
class ValidationReport:
    conditions: dict
    worst_margin: float
    c2_worst_abs: float
    metric_eig_range: tuple
    grid: dict
    num_points: int

    def to_json(self):
        return {
            "conditions": self.conditions,
            "worst_margin": self.worst_margin,
            "c2_worst_abs": self.c2_worst_abs,
            "metric_eig_range": list(self.metric_eig_range),
            "grid": self.grid,
            "num_points": self.num_points,
        }

    @classmethod
    def from_json(cls, d):
        return cls(d["conditions"], d["worst_margin"], d["c2_worst_abs"],
                   tuple(d["metric_eig_range"]), d["grid"], d["num_points"])


@dataclass
class MetricCertificate:
    W: PolyMatrixFamily
    Y: PolyMatrixFamily
    lam: float
    mu: float
    alpha: float
    a_low: float
    a_high: float
    rate_convention: str = "c1-2lambda"
    system_name: str = ""
    w_param_subset: tuple = ()
    validation: ValidationReport = None

    def rate_factor(self):
        return 2.0 if self.rate_convention == "c1-2lambda" else 1.0

    def to_json(self):
        d = {
            "format": "arccm-certificate-v1",
            "system": self.system_name,
            "lambda": self.lam,
            "mu": self.mu,
            "alpha": self.alpha,
            "a_low": self.a_low,
            "a_high": self.a_high,
            "rate_convention": self.rate_convention,
            "w_param_subset": list(self.w_param_subset),
            "W": self.W.to_json(),
            "Y": self.Y.to_json(),
        }
        if self.validation is not None:
            d["validation"] = self.validation.to_json()
        return d

    @classmethod
    def from_json(cls, d):
        val = ValidationReport.from_json(d["validation"]) if "validation" in d else None
        return cls(PolyMatrixFamily.from_json(d["W"]), PolyMatrixFamily.from_json(d["Y"]),
                   float(d["lambda"]), float(d["mu"]), float(d["alpha"]),
                   float(d["a_low"]), float(d["a_high"]), d["rate_convention"],
                   d.get("system", ""), tuple(d.get("w_param_subset", ())), val)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


class InfeasibleError(RuntimeError):
    def __init__(self, message, best_margins):
        super().__init__(message)
        self.best_margins = best_margins


# ---------------------------------------------------------------------------
# Pointwise reference assembly (used by tests and dense validation spot checks)
# ---------------------------------------------------------------------------

def assemble_condition_blocks(W, Y, lam, mu, alpha, sys, x, theta,
                              rate_convention="c1-2lambda", w_param_subset=None):
    """Labeled condition matrices at one point; PSD requirement per label.

    Returns a list of (label, matrix, kind) where kind is "psd" (min
    eigenvalue is the margin) or "zero" (entries must vanish).
    """
    x = np.asarray(x, dtype=float).ravel()
    theta = np.asarray(theta, dtype=float).ravel()
    n, m, p = sys.n, sys.m, sys.p
    rf = 2.0 if rate_convention == "c1-2lambda" else 1.0
    Wv = W.eval(x, theta)
    Yv = Y.eval(x, theta)
    A = sys.jacobian(x, theta)  # drift-only; u-terms annihilated by C2
    Dl = sys.delta_mat(x)
    Bv = sys.b_mat(x)
    drift = sys.f_vec(x) + Dl.T @ theta
    Wdot = W.directional_derivative(x, theta, drift)
    What = Wdot - A @ Wv - Wv @ A.T - Bv @ Yv - Yv.T @ Bv.T - rf * lam * Wv
    C1 = np.zeros((n + p, n + p))
    C1[:n, :n] = What
    C1[:n, n:] = -Dl.T
    C1[n:, :n] = -Dl
    C1[n:, n:] = alpha**2 * np.eye(p)
    out = [("C1", 0.5 * (C1 + C1.T), "psd")]
    for i in range(m):
        bi = np.array([sys.b[r][i].eval(x, ()) for r in range(n)])
        Gb = np.zeros((n, n))
        for r in range(n):
            _, g = sys.b[r][i].eval_with_partials(x, ())
            Gb[r, :] = g[:n]
        R = W.directional_derivative(x, theta, bi) - Wv @ Gb.T - Gb @ Wv
        out.append(("C2[%d]" % i, R, "zero"))
    subset = range(p) if w_param_subset is None else w_param_subset
    for i in subset:
        Wth = W.partial(n + i).eval(x, theta)
        out.append(("C3+[%d]" % i, mu * Wv + Wth, "psd"))
        out.append(("C3-[%d]" % i, mu * Wv - Wth, "psd"))
    # dual statement of a_low I <= M <= a_high I
    return out


# ---------------------------------------------------------------------------
# Vectorized penalty model
# ---------------------------------------------------------------------------

def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class PenaltyModel:
    """Vectorized penalty/gradient over a fixed sample plan.

    Precomputes, per C1 sample, the monomial vector, the drift-direction
    derivative monomial vector, the drift Jacobian, Delta and B; and per
    W-condition sample the monomial vector and its theta-derivatives.
    All decision-variable dependence is then a few einsums plus one
    batched symmetric eigendecomposition.
    """

    def __init__(self, sys, cfg, x_pts=None, theta_pts=None, theta_w_pts=None,
                 rand_x=None, rand_theta=None):
        self.sys = sys
        self.cfg = cfg
        n, m, p = sys.n, sys.m, sys.p
        self.n, self.m, self.p = n, m, p
        self.basis = MonomialBasis(n + p, cfg.degree)
        nb = self.basis.size
        grid = cfg.grid
        if x_pts is None:
            x_pts = grid.x_points(sys.domain)
        if theta_pts is None:
            theta_pts = grid.theta_points(sys.theta_box)
        if theta_w_pts is None:
            theta_w_pts = grid.theta_points_no_vertices(sys.theta_box)
        if rand_x is None:
            rand_x, rand_theta = grid.random_points(sys.domain, sys.theta_box)

        self.w_params = tuple(grid.gridded_params if cfg.w_param_subset is None
                              else cfg.w_param_subset)
        bad = set(self.w_params) & set(grid.vertex_params)
        if bad:
            raise ValueError("vertex-enforced parameters %r cannot carry W dependence" % (sorted(bad),))

        # coefficient masks
        exps = self.basis.exps
        w_mask = np.ones(nb, dtype=bool)
        for i in range(p):
            if i not in self.w_params:
                w_mask &= exps[:, n + i] == 0
        self.killing_structural = False
        if cfg.enforce_killing and sys.constant_b():
            B0 = sys.b_mat(np.zeros(n))
            for j in range(n):
                if np.any(B0[j, :] != 0.0):
                    w_mask &= exps[:, j] == 0
            self.killing_structural = True
        self.w_mono = np.where(w_mask)[0]
        self.tri = [(i, j) for i in range(n) for j in range(i, n)]
        self.nW = len(self.tri) * self.w_mono.size
        self.nY = m * n * nb
        self.nvar = self.nW + self.nY + 1

        # C1 sample plan: product grid + random joint samples
        c1_x = np.concatenate([np.repeat(x_pts, theta_pts.shape[0], axis=0), rand_x])
        c1_th = np.concatenate([np.tile(theta_pts, (x_pts.shape[0], 1)), rand_theta])
        self.c1_x, self.c1_th = c1_x, c1_th
        N1 = c1_x.shape[0]
        pts = np.hstack([c1_x, c1_th])
        self.phi1 = self.basis.eval_many(pts)
        Dmats = [self.basis.derivative_matrix(v) for v in range(n + p)]
        self.A1 = np.empty((N1, n, n))
        self.D1 = np.empty((N1, p, n))
        self.B1 = np.empty((N1, n, m))
        drift = np.empty((N1, n))
        for q in range(N1):
            xq, tq = c1_x[q], c1_th[q]
            self.A1[q] = sys.jacobian(xq, tq)
            self.D1[q] = sys.delta_mat(xq)
            self.B1[q] = sys.b_mat(xq)
            drift[q] = sys.f_vec(xq) + self.D1[q].T @ tq
        self.psi1 = np.zeros((N1, nb))
        for j in range(n):
            self.psi1 += drift[:, j:j + 1] * (self.phi1 @ Dmats[j])
        # C2 (only when not structurally enforced)
        self.c2_active = (m > 0) and not self.killing_structural
        if self.c2_active:
            self.gradb1 = np.empty((N1, m, n, n))
            self.psib1 = np.empty((N1, m, nb))
            for q in range(N1):
                xq = c1_x[q]
                for i in range(m):
                    bi = np.empty(n)
                    for r in range(n):
                        v, g = sys.b[r][i].eval_with_partials(xq, ())
                        bi[r] = v
                        self.gradb1[q, i, r] = g[:n]
                    acc = np.zeros(nb)
                    for j in range(n):
                        acc += bi[j] * (Dmats[j] @ self.phi1[q])
                    self.psib1[q, i] = acc

        # W-condition sample plan (C3 + uniform bounds): x grid x theta grid + randoms
        w_x = np.concatenate([np.repeat(x_pts, theta_w_pts.shape[0], axis=0), rand_x])
        w_th = np.concatenate([np.tile(theta_w_pts, (x_pts.shape[0], 1)), rand_theta])
        self.w_x, self.w_th = w_x, w_th
        wpts = np.hstack([w_x, w_th])
        self.phi2 = self.basis.eval_many(wpts)
        self.phi2th = np.stack([self.phi2 @ Dmats[n + i] for i in self.w_params]) \
            if self.w_params else np.zeros((0, w_x.shape[0], nb))

        self.num_c1 = N1
        self.num_w = w_x.shape[0]

    # -- packing -----------------------------------------------------------
    def initial_vector(self):
        z = np.zeros(self.nvar)
        k0 = self.basis.index_of((0,) * self.basis.nvars)
        pos = int(np.searchsorted(self.w_mono, k0))
        assert self.w_mono[pos] == k0, "constant monomial must be W-admissible"
        nmw = self.w_mono.size
        for t, (i, j) in enumerate(self.tri):
            if i == j:
                z[t * nmw + pos] = 1.0
        z[-1] = self.cfg.alpha0_sq
        return z

    def unpack(self, z):
        n, m, nb = self.n, self.m, self.basis.size
        nmw = self.w_mono.size
        cW = np.zeros((n, n, nb))
        for t, (i, j) in enumerate(self.tri):
            block = z[t * nmw:(t + 1) * nmw]
            cW[i, j, self.w_mono] = block
            cW[j, i, self.w_mono] = block
        cY = z[self.nW:self.nW + self.nY].reshape(m, n, nb)
        s = float(z[-1])
        return cW, cY, s

    def pack_grads(self, gW, gY, gs):
        nmw = self.w_mono.size
        g = np.empty(self.nvar)
        for t, (i, j) in enumerate(self.tri):
            if i == j:
                g[t * nmw:(t + 1) * nmw] = gW[i, j, self.w_mono]
            else:
                g[t * nmw:(t + 1) * nmw] = gW[i, j, self.w_mono] + gW[j, i, self.w_mono]
        g[self.nW:self.nW + self.nY] = gY.ravel()
        g[-1] = gs
        return g

    # -- block assembly ------------------------------------------------------
    def c1_blocks(self, cW, cY, s, lam):
        n, p = self.n, self.p
        rf = 2.0 if self.cfg.rate_convention == "c1-2lambda" else 1.0
        Wq = np.einsum("abk,qk->qab", cW, self.phi1)
        Wd = np.einsum("abk,qk->qab", cW, self.psi1)
        Yq = np.einsum("abk,qk->qab", cY, self.phi1)
        AW = np.einsum("qij,qjb->qib", self.A1, Wq)
        BY = np.einsum("qim,qmb->qib", self.B1, Yq)
        TL = Wd - AW - AW.transpose(0, 2, 1) - BY - BY.transpose(0, 2, 1) - rf * lam * Wq
        N1 = Wq.shape[0]
        blk = np.zeros((N1, n + p, n + p))
        blk[:, :n, :n] = 0.5 * (TL + TL.transpose(0, 2, 1))
        blk[:, :n, n:] = -self.D1.transpose(0, 2, 1)
        blk[:, n:, :n] = -self.D1
        blk[:, n:, n:] = s * np.eye(p)[None, :, :]
        return blk

    def w_blocks(self, cW, mu):
        """C3 pairs and uniform-bound pair evaluated on the W sample plan."""
        Wq = np.einsum("abk,qk->qab", cW, self.phi2)
        Wq = 0.5 * (Wq + Wq.transpose(0, 2, 1))
        eye = np.eye(self.n)[None, :, :]
        blocks = []
        for ii, _ in enumerate(self.w_params):
            Wth = np.einsum("abk,qk->qab", cW, self.phi2th[ii])
            Wth = 0.5 * (Wth + Wth.transpose(0, 2, 1))
            blocks.append(("c3+", ii, mu * Wq + Wth))
            blocks.append(("c3-", ii, mu * Wq - Wth))
        # headroom tightens the caps during training so that interpolation
        # between samples cannot cross the certified bounds
        h = self.cfg.bound_headroom
        blocks.append(("bound_high", None, Wq - ((1.0 + h) / self.cfg.a_high) * eye))
        blocks.append(("bound_low", None, (1.0 / ((1.0 + h) * self.cfg.a_low)) * eye - Wq))
        return blocks

    def c2_residuals(self, cW):
        if not self.c2_active:
            return None
        Wq = np.einsum("abk,qk->qab", cW, self.phi1)
        R = np.einsum("abk,qik->qiab", cW, self.psib1)
        GbW = np.einsum("qiab,qbc->qiac", self.gradb1, Wq)
        return R - GbW - GbW.transpose(0, 1, 3, 2)

    # -- penalty ---------------------------------------------------------------
    def penalty_and_gradient(self, z, lam, mu):
        cfg = self.cfg
        tau = cfg.tau
        n, m, p = self.n, self.m, self.p
        rf = 2.0 if cfg.rate_convention == "c1-2lambda" else 1.0
        cW, cY, s = self.unpack(z)
        gW = np.zeros_like(cW)
        gY = np.zeros_like(cY)
        gs = cfg.alpha_reg
        total = cfg.alpha_reg * s

        shift = cfg.margin_target + 2.0 * tau  # keep pressure past the target

        blk = self.c1_blocks(cW, cY, s, lam)
        if not np.all(np.isfinite(blk)):
            raise FloatingPointError("non-finite C1 block during penalty evaluation")
        evals, evecs = np.linalg.eigh(blk)
        # hinge every eigenvalue: smoother than tracking only the minimum
        total += tau * float(np.sum(_softplus((shift - evals) / tau)))
        wj = -_sigmoid((shift - evals) / tau)  # (N, n+p)
        S = np.einsum("qaj,qj,qbj->qab", evecs, wj, evecs, optimize=True)
        Sx, St = S[:, :n, :n], S[:, n:, n:]
        # tr(S dblk): dWd term via psi, (-A^T S - S A - rf*lam*S) via phi
        T = -np.einsum("qji,qjb->qib", self.A1, Sx) \
            - np.einsum("qaj,qjb->qab", Sx, self.A1) - rf * lam * Sx
        gW += np.einsum("qab,qk->abk", Sx, self.psi1, optimize=True)
        gW += np.einsum("qab,qk->abk", T, self.phi1, optimize=True)
        gY += -2.0 * np.einsum("qam,qab,qk->mbk", self.B1, Sx, self.phi1, optimize=True)
        gs += float(np.einsum("qaa->", St))

        for kind, ii, wb in self.w_blocks(cW, mu):
            ev, evec = np.linalg.eigh(wb)
            total += tau * float(np.sum(_softplus((shift - ev) / tau)))
            wwj = -_sigmoid((shift - ev) / tau)
            Su = np.einsum("qaj,qj,qbj->qab", evec, wwj, evec, optimize=True)
            if kind == "c3+":
                gW += np.einsum("qab,qk->abk", Su,
                                mu * self.phi2 + self.phi2th[ii], optimize=True)
            elif kind == "c3-":
                gW += np.einsum("qab,qk->abk", Su,
                                mu * self.phi2 - self.phi2th[ii], optimize=True)
            elif kind == "bound_high":
                gW += np.einsum("qab,qk->abk", Su, self.phi2, optimize=True)
            else:
                gW -= np.einsum("qab,qk->abk", Su, self.phi2, optimize=True)

        R = self.c2_residuals(cW)
        if R is not None:
            total += cfg.c2_weight * float(np.sum(R * R))
            dR = 2.0 * cfg.c2_weight * R
            gW += np.einsum("qiab,qik->abk", dR, self.psib1, optimize=True)
            tmp = np.einsum("qiab,qibc->qac", self.gradb1.transpose(0, 1, 3, 2), dR)
            tmp += np.einsum("qiab,qibc->qac",
                             dR.transpose(0, 1, 3, 2), self.gradb1)
            gW -= np.einsum("qac,qk->ack", tmp, self.phi1, optimize=True)

        return total, self.pack_grads(gW, gY, gs)

    def margins(self, z, lam, mu):
        """Unsmoothed per-condition minimum margins (and max |C2| residual)."""
        cW, cY, s = self.unpack(z)
        out = {}
        blk = self.c1_blocks(cW, cY, s, lam)
        ev = np.linalg.eigvalsh(blk)[:, 0]
        q = int(np.argmin(ev))
        out["C1"] = (float(ev[q]), self.c1_x[q].tolist(), self.c1_th[q].tolist())
        for kind, ii, wb in self.w_blocks(cW, mu):
            ev = np.linalg.eigvalsh(wb)[:, 0]
            q = int(np.argmin(ev))
            label = kind if ii is None else "%s[%d]" % (kind, self.w_params[ii])
            out[label] = (float(ev[q]), self.w_x[q].tolist(), self.w_th[q].tolist())
        R = self.c2_residuals(cW)
        c2 = 0.0
        if R is not None:
            c2 = float(np.max(np.abs(R)))
        elif self.m > 0:
            c2 = 0.0  # structurally zero
        out["C2_max_abs"] = c2
        return out

    def pointwise_margins(self, z, lam, mu):
        """Per-sample minimum margins: (C1 margins, combined W-block margins)."""
        cW, cY, s = self.unpack(z)
        c1 = np.linalg.eigvalsh(self.c1_blocks(cW, cY, s, lam))[:, 0]
        wmin = None
        for kind, ii, wb in self.w_blocks(cW, mu):
            ev = np.linalg.eigvalsh(wb)[:, 0]
            wmin = ev if wmin is None else np.minimum(wmin, ev)
        return c1, wmin

    def worst_margin(self, z, lam, mu):
        mg = self.margins(z, lam, mu)
        return min(v[0] for k, v in mg.items() if k != "C2_max_abs")

    def metric_eig_range(self, z):
        cW, _, _ = self.unpack(z)
        Wq = np.einsum("abk,qk->qab", cW, self.phi2)
        Wq = 0.5 * (Wq + Wq.transpose(0, 2, 1))
        ev = np.linalg.eigvalsh(Wq)
        # M = W^{-1}: eig range of M is the reciprocal range of W
        return float(1.0 / np.max(ev)), float(1.0 / np.min(ev))


# ---------------------------------------------------------------------------
# Synthesis driver
# ---------------------------------------------------------------------------

def _optimize(model, z0, lam, mu, max_iter, margin_target, c2_tol, check_every=10,
              verbose=False):
    """Quasi-Newton descent, stopping early once the unsmoothed margins clear."""
    state = {"count": 0, "z": z0.copy()}

    def _worst(z):
        mg = model.margins(z, lam, mu)
        return min(v[0] for k, v in mg.items() if k != "C2_max_abs"), mg

    def callback(xk):
        state["count"] += 1
        state["z"] = xk
        if state["count"] % check_every == 0:
            worst, mg = _worst(xk)
            if verbose and state["count"] % (5 * check_every) == 0:
                print("  iter %4d  worst margin % .5f" % (state["count"], worst),
                      flush=True)
            if worst >= margin_target and mg["C2_max_abs"] <= c2_tol:
                raise StopIteration

    try:
        res = minimize(model.penalty_and_gradient, z0, args=(lam, mu), jac=True,
                       method="L-BFGS-B", callback=callback,
                       bounds=[(None, None)] * (model.nvar - 1) + [(1e-6, None)],
                       options={"maxiter": max_iter, "ftol": 1e-14, "gtol": 1e-12,
                                "maxcor": 30})
        z = res.x
    except StopIteration:
        z = state["z"]
    mg = model.margins(z, lam, mu)
    worst = min(v[0] for k, v in mg.items() if k != "C2_max_abs")
    feasible = worst >= margin_target and mg["C2_max_abs"] <= c2_tol
    return z, state["count"], feasible, mg


def _dense_grid(g):
    """Validation plan: finer product grid and a fresh random sample."""
    return GridSpec(gridded_params=g.gridded_params,
                    grid_counts=tuple(2 * c - 1 for c in g.grid_counts),
                    vertex_params=g.vertex_params,
                    x_counts=tuple(c + 1 for c in g.x_counts),
                    random_count=max(2000, g.random_count), seed=g.seed + 1)


def _random_probe(sys, cfg, count, seed):
    """Randoms-only penalty model for probing generalization."""
    g = GridSpec(gridded_params=cfg.grid.gridded_params,
                 grid_counts=cfg.grid.grid_counts,
                 vertex_params=cfg.grid.vertex_params,
                 x_counts=cfg.grid.x_counts, random_count=count, seed=seed)
    rx, rth = g.random_points(sys.domain, sys.theta_box)
    return PenaltyModel(sys, cfg, x_pts=np.zeros((0, sys.n)),
                        theta_pts=np.zeros((0, sys.p)),
                        theta_w_pts=np.zeros((0, sys.p)),
                        rand_x=rx, rand_theta=rth)


def _pointwise_margin_fn(sys, cfg, model, z, lam, mu):
    """Scalar worst-margin function over one joint (x, theta) point."""
    cW, cY, s = model.unpack(z)
    W = PolyMatrixFamily(sys.n, sys.n, model.basis, cW, symmetric=True)
    Y = PolyMatrixFamily(sys.m, sys.n, model.basis, cY)
    alpha = float(np.sqrt(s))
    lo = np.concatenate([sys.domain.lo, sys.theta_box.lo])
    hi = np.concatenate([sys.domain.hi, sys.theta_box.hi])

    def margin(v):
        v = np.clip(v, lo, hi)
        x, theta = v[:sys.n], v[sys.n:]
        blocks = assemble_condition_blocks(W, Y, lam, mu, alpha, sys, x, theta,
                                           rate_convention=cfg.rate_convention,
                                           w_param_subset=model.w_params)
        worst = np.inf
        for _, mat, kind in blocks:
            if kind == "psd":
                worst = min(worst, float(np.linalg.eigvalsh(mat)[0]))
        ew = np.linalg.eigvalsh(W.eval(x, theta))
        worst = min(worst, float(ew[0]) - 1.0 / cfg.a_high,
                    1.0 / cfg.a_low - float(ew[-1]))
        return worst

    return margin, lo, hi


def _adversarial_starts(probes, z, lam, mu, count):
    """Worst probe points (by C1 and W margins) as joint (x, theta) rows."""
    cand = []
    for probe in probes:
        c1m, wm = probe.pointwise_margins(z, lam, mu)
        for margins, xs, ths in ((c1m, probe.c1_x, probe.c1_th),
                                 (wm, probe.w_x, probe.w_th)):
            idx = np.argsort(margins)[:count]
            for i in idx:
                cand.append((margins[i], np.concatenate([xs[i], ths[i]])))
    cand.sort(key=lambda t: t[0])
    return [v for _, v in cand[:count]]


def _refine(sys, cfg, model, dense_model, z, lam, mu):
    """Active sampling: re-optimize against violating probe points.

    Each round probes the dense validation grid plus a fresh batch of
    random (x, theta) samples (new seed per round), then runs local
    descent of the pointwise worst margin from the lowest probe points
    to find the floors of narrow violation valleys.  Violating probe
    points and all descent endpoints are appended to the training set
    and the candidate is re-optimized warm-started, until neither the
    probes nor the descent find anything under ``cfg.refine_target``.
    Returns (z, train_model, worst, accepted).
    """
    from scipy.optimize import minimize as _local_min

    g = cfg.grid
    base_rx, base_rth = g.random_points(sys.domain, sys.theta_box)
    extra_x = np.zeros((0, sys.n))
    extra_th = np.zeros((0, sys.p))
    train = model
    worst = -np.inf
    streak = 0
    for rnd in range(cfg.refine_rounds):
        probes = [dense_model,
                  _random_probe(sys, cfg, cfg.refine_probe, g.seed + 1000 + rnd)]
        worst = np.inf
        harvest_x, harvest_th = [], []
        for probe in probes:
            c1m, wm = probe.pointwise_margins(z, lam, mu)
            worst = min(worst, float(np.min(c1m)), float(np.min(wm)))
            # harvest the most-violating points from both sample families
            for margins, xs, ths in ((c1m, probe.c1_x, probe.c1_th),
                                     (wm, probe.w_x, probe.w_th)):
                idx = np.argsort(margins)[: cfg.refine_points // 4]
                idx = idx[margins[idx] < cfg.margin_target]
                harvest_x.append(xs[idx])
                harvest_th.append(ths[idx])
        # adversarial descent from the lowest points, violating or not
        margin_fn, lo, hi = _pointwise_margin_fn(sys, cfg, model, z, lam, mu)
        for v0 in _adversarial_starts(probes, z, lam, mu, cfg.refine_descents):
            res = _local_min(margin_fn, v0, method="Nelder-Mead",
                             options={"maxfev": 400, "xatol": 1e-4,
                                      "fatol": 1e-6})
            v = np.clip(res.x, lo, hi)
            worst = min(worst, float(margin_fn(v)))
            harvest_x.append(v[None, :sys.n])
            harvest_th.append(v[None, sys.n:])
        streak = streak + 1 if worst >= cfg.refine_target else 0
        if cfg.verbose:
            print("  refine round %d: probe+descent worst margin %.5f (clean x%d)"
                  % (rnd, worst, streak), flush=True)
        if streak >= cfg.refine_confirm:
            return z, train, worst, True
        if streak > 0:
            continue  # clean round: probe again with a fresh batch, no re-opt
        extra_x = np.concatenate([extra_x] + harvest_x)
        extra_th = np.concatenate([extra_th] + harvest_th)
        train = PenaltyModel(sys, cfg,
                             rand_x=np.concatenate([base_rx, extra_x]),
                             rand_theta=np.concatenate([base_rth, extra_th]))
        z, iters, feasible, mg = _optimize(train, z, lam, mu, cfg.max_iter,
                                           cfg.margin_target, cfg.c2_tol,
                                           verbose=cfg.verbose)
        if not feasible:
            return z, train, worst, False
    return z, train, worst, False


def synthesize(sys, cfg):
    """Line search over (lambda, mu); returns the certificate maximizing lambda.

    A candidate must clear the margin target on its training grid and then
    survive active-sampling refinement against the dense validation grid.
    Raises :class:`InfeasibleError` with the best margins found when no
    candidate pair gets there within the budget.
    """
    model = PenaltyModel(sys, cfg)
    dense_model = None
    best = None
    best_margins = None
    z_warm = model.initial_vector()
    for lam in sorted(cfg.lambdas, reverse=True):
        for mu in sorted(cfg.mus):
            if cfg.verbose:
                print("candidate lambda=%g mu=%g" % (lam, mu), flush=True)
            z, iters, feasible, mg = _optimize(model, z_warm, lam, mu,
                                               cfg.max_iter, cfg.margin_target,
                                               cfg.c2_tol, verbose=cfg.verbose)
            if cfg.verbose:
                worst = min(v[0] for k, v in mg.items() if k != "C2_max_abs")
                print("  -> %s after %d iters (worst margin %.5f)"
                      % ("feasible" if feasible else "infeasible", iters, worst),
                      flush=True)
            z_warm = z  # later (easier) candidates start from the hardest attempt
            if feasible and cfg.refine_rounds > 0:
                if dense_model is None:
                    dg = _dense_grid(cfg.grid)
                    drx, drth = dg.random_points(sys.domain, sys.theta_box)
                    dense_model = PenaltyModel(
                        sys, cfg,
                        x_pts=dg.x_points(sys.domain),
                        theta_pts=dg.theta_points(sys.theta_box),
                        theta_w_pts=dg.theta_points_no_vertices(sys.theta_box),
                        rand_x=drx, rand_theta=drth)
                z, train, dense_worst, feasible = _refine(sys, cfg, model,
                                                          dense_model, z, lam, mu)
                mg = train.margins(z, lam, mu)
                z_warm = z
                if cfg.verbose:
                    print("  -> refinement %s (dense worst %.5f)"
                          % ("accepted" if feasible else "rejected", dense_worst),
                          flush=True)
            if not feasible:
                if best_margins is None or \
                        min(v[0] for k, v in mg.items() if k != "C2_max_abs") > \
                        min(v[0] for k, v in best_margins.items() if k != "C2_max_abs"):
                    best_margins = mg
                continue
            alpha = float(np.sqrt(z[-1]))
            if best is None or lam > best[0] or (lam == best[0] and alpha < best[2]):
                best = (lam, mu, alpha, z.copy(), mg)
        if best is not None and best[0] == lam:
            break  # lambda list is descending: nothing larger remains
    if best is None:
        raise InfeasibleError("no feasible (lambda, mu) candidate", best_margins)
    lam, mu, alpha, z, mg = best
    cW, cY, s = model.unpack(z)
    basis = model.basis
    W = PolyMatrixFamily(sys.n, sys.n, basis, cW, symmetric=True)
    Y = PolyMatrixFamily(sys.m, sys.n, basis, cY)
    cert = MetricCertificate(W, Y, lam, mu, alpha, cfg.a_low, cfg.a_high,
                             cfg.rate_convention, sys.name, model.w_params)
    # independent dense validation: finer grid, fresh random seed
    cert.validation = validate_certificate(cert, sys, _dense_grid(cfg.grid), cfg=cfg)
    # tighten uniform bounds from validated extremes, keeping 5% slack so
    # fresh sample batches stay strictly inside the reported caps
    lo, hi = cert.validation.metric_eig_range
    cert.a_low = lo * 0.95
    cert.a_high = hi * 1.05
    return cert


def validate_certificate(cert, sys, grid, cfg=None):
    """Recompute all condition margins on an independent sample plan."""
    # margins are always reported against the true caps (no training headroom)
    if cfg is None:
        cfg = SynthesisConfig(degree=cert.W.basis.degree, grid=grid,
                              a_low=cert.a_low, a_high=cert.a_high,
                              rate_convention=cert.rate_convention,
                              w_param_subset=cert.w_param_subset,
                              bound_headroom=0.0)
    else:
        cfg = SynthesisConfig(degree=cfg.degree, grid=grid, a_low=cfg.a_low,
                              a_high=cfg.a_high, rate_convention=cfg.rate_convention,
                              w_param_subset=cert.w_param_subset,
                              enforce_killing=cfg.enforce_killing,
                              bound_headroom=0.0)
    model = PenaltyModel(sys, cfg)
    z = _pack_certificate(model, cert)
    mg = model.margins(z, cert.lam, cert.mu)
    worst = min(v[0] for k, v in mg.items() if k != "C2_max_abs")
    conditions = {k: {"margin": v[0], "x": v[1], "theta": v[2]}
                  for k, v in mg.items() if k != "C2_max_abs"}
    return ValidationReport(conditions, worst, mg["C2_max_abs"],
                            model.metric_eig_range(z), grid.describe(),
                            model.num_c1 + model.num_w)


def _pack_certificate(model, cert):
    nb = model.basis.size
    if cert.W.basis.size != nb:
        raise ValueError("certificate basis does not match validation model")
    off_mask = np.ones(nb, dtype=bool)
    off_mask[model.w_mono] = False
    if np.any(cert.W.coeffs[:, :, off_mask] != 0.0):
        raise ValueError("certificate W has coefficients outside the admissible mask")
    nmw = model.w_mono.size
    z = np.empty(model.nvar)
    for t, (i, j) in enumerate(model.tri):
        z[t * nmw:(t + 1) * nmw] = cert.W.coeffs[i, j, model.w_mono]
    z[model.nW:model.nW + model.nY] = cert.Y.coeffs.ravel()
    z[-1] = cert.alpha**2
    return z
