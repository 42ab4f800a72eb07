"""Coefficient-parameterized polynomial matrix families in (x, theta).

These represent the synthesis decision variables: the symmetric dual
metric family W(x, theta) and the rectangular gain family Y(x, theta).
Evaluation and differentiation are exact; derivative families live in
the same (superset) monomial basis with the top-degree coefficients
unused.
"""

import itertools
import math

import numpy as np


class MonomialBasis:
    """All monomials in ``nvars`` variables of total degree <= ``degree``.

    Exponent vectors are unique and sorted in graded-lexicographic order
    (total degree first, then lexicographic on the exponent tuple), so a
    basis is fully determined by (nvars, degree).
    """

    def __init__(self, nvars, degree):
        if nvars < 1 or degree < 0:
            raise ValueError("need nvars >= 1 and degree >= 0")
        self.nvars = nvars
        self.degree = degree
        exps = [e for e in itertools.product(range(degree + 1), repeat=nvars) if sum(e) <= degree]
        exps.sort(key=lambda e: (sum(e), e))
        self.exps = np.array(exps, dtype=np.int64)
        self._index = {tuple(e): k for k, e in enumerate(exps)}

    def __len__(self):
        return self.exps.shape[0]

    @property
    def size(self):
        return self.exps.shape[0]

    def expected_size(self):
        # stars and bars: C(nvars + degree, degree)
        return math.comb(self.nvars + self.degree, self.degree)

    def eval_many(self, pts):
        """Monomial values at each row of ``pts`` -> (npts, size) array."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if pts.shape[1] != self.nvars:
            raise ValueError("point dimension %d != nvars %d" % (pts.shape[1], self.nvars))
        npts = pts.shape[0]
        out = np.ones((npts, self.size))
        # per-variable power tables keep this O(npts * (size + nvars*degree))
        for j in range(self.nvars):
            table = np.ones((npts, self.degree + 1))
            for k in range(1, self.degree + 1):
                table[:, k] = table[:, k - 1] * pts[:, j]
            out *= table[:, self.exps[:, j]]
        return out

    def eval_point(self, pt):
        return self.eval_many(np.asarray(pt, dtype=float)[None, :])[0]

    def derivative_matrix(self, var):
        """Matrix D with eval(d fam/d var) = coeffs @ D.T applied to the basis.

        For a coefficient vector c, the derivative polynomial has
        coefficients c @ D.T in the same basis.
        """
        if not 0 <= var < self.nvars:
            raise ValueError("variable index out of range")
        D = np.zeros((self.size, self.size))
        for k_from, e in enumerate(self.exps):
            if e[var] == 0:
                continue
            lowered = list(e)
            lowered[var] -= 1
            k_to = self._index[tuple(lowered)]
            D[k_to, k_from] = e[var]
        return D

    def index_of(self, exponents):
        return self._index[tuple(exponents)]

    def to_json(self):
        return {"nvars": self.nvars, "degree": self.degree}

    @classmethod
    def from_json(cls, d):
        return cls(int(d["nvars"]), int(d["degree"]))


class PolyMatrixFamily:
    """An r x c matrix of polynomials sharing one monomial basis.

    ``coeffs`` has shape (r, c, len(basis)).  When ``symmetric`` is set
    the coefficient tensor satisfies ``coeffs[i, j] == coeffs[j, i]``
    exactly, so every evaluation is a symmetric matrix.
    """

    def __init__(self, rows, cols, basis, coeffs=None, symmetric=False):
        self.rows = rows
        self.cols = cols
        self.basis = basis
        self.symmetric = bool(symmetric)
        if symmetric and rows != cols:
            raise ValueError("symmetric family must be square")
        if coeffs is None:
            coeffs = np.zeros((rows, cols, basis.size))
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (rows, cols, basis.size):
            raise ValueError("coefficient tensor has shape %r, expected %r"
                             % (coeffs.shape, (rows, cols, basis.size)))
        if symmetric and not np.array_equal(coeffs, coeffs.transpose(1, 0, 2)):
            raise ValueError("symmetric flag set but coefficient tensor is not symmetric")
        self.coeffs = coeffs

    # -- constructors ----------------------------------------------------
    @classmethod
    def identity(cls, n, basis):
        """Constant identity family (degree-0 monomial only)."""
        c = np.zeros((n, n, basis.size))
        k0 = basis.index_of((0,) * basis.nvars)
        for i in range(n):
            c[i, i, k0] = 1.0
        return cls(n, n, basis, c, symmetric=True)

    # -- evaluation ------------------------------------------------------
    def eval(self, x, theta):
        pt = np.concatenate([np.asarray(x, dtype=float).ravel(),
                             np.asarray(theta, dtype=float).ravel()])
        if pt.size != self.basis.nvars:
            raise ValueError("point has %d vars, basis expects %d" % (pt.size, self.basis.nvars))
        phi = self.basis.eval_point(pt)
        M = self.coeffs @ phi
        if self.symmetric:
            M = 0.5 * (M + M.T)
        return M

    def eval_phi(self, phi):
        """Evaluate from precomputed monomial values (hot paths)."""
        return self.coeffs @ phi

    def partial(self, var):
        """Exact partial derivative family with respect to joint variable ``var``."""
        D = self.basis.derivative_matrix(var)
        return PolyMatrixFamily(self.rows, self.cols, self.basis,
                                self.coeffs @ D.T, symmetric=self.symmetric)

    def directional_derivative(self, x, theta, v):
        """Sum_i (d fam / d x_i)(x, theta) * v_i over the state block."""
        v = np.asarray(v, dtype=float).ravel()
        out = np.zeros((self.rows, self.cols))
        for i, vi in enumerate(v):
            if vi != 0.0:
                out += vi * self.partial(i).eval(x, theta)
        return out

    # -- linear structure -------------------------------------------------
    def __add__(self, other):
        self._check_compatible(other)
        return PolyMatrixFamily(self.rows, self.cols, self.basis,
                                self.coeffs + other.coeffs,
                                symmetric=self.symmetric and other.symmetric)

    def __mul__(self, a):
        return PolyMatrixFamily(self.rows, self.cols, self.basis,
                                self.coeffs * float(a), symmetric=self.symmetric)

    __rmul__ = __mul__

    def _check_compatible(self, other):
        if (self.rows, self.cols) != (other.rows, other.cols) or \
                self.basis.nvars != other.basis.nvars or self.basis.degree != other.basis.degree:
            raise ValueError("incompatible families")

    # -- serialization ----------------------------------------------------
    def to_json(self):
        return {
            "rows": self.rows,
            "cols": self.cols,
            "symmetric": self.symmetric,
            "basis": self.basis.to_json(),
            "exponents": self.basis.exps.tolist(),
            "coeffs": self.coeffs.tolist(),
        }

    @classmethod
    def from_json(cls, d):
        basis = MonomialBasis.from_json(d["basis"])
        if d.get("exponents") is not None and d["exponents"] != basis.exps.tolist():
            raise ValueError("stored exponents disagree with canonical basis ordering")
        return cls(int(d["rows"]), int(d["cols"]), basis,
                   np.array(d["coeffs"], dtype=float), symmetric=bool(d["symmetric"]))
