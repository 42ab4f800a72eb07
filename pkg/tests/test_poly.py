import numpy as np
import pytest

from arccm.poly import MonomialBasis, PolyMatrixFamily


def test_basis_size_matches_stars_and_bars():
    # the example system's joint basis: 7 variables, degree 4
    b = MonomialBasis(7, 4)
    assert b.size == 330
    assert b.expected_size() == 330
    for nvars, degree in [(1, 3), (2, 2), (3, 4), (5, 1)]:
        b = MonomialBasis(nvars, degree)
        assert b.size == b.expected_size()


def test_graded_lex_order_and_uniqueness():
    b = MonomialBasis(2, 2)
    exps = [tuple(e) for e in b.exps]
    assert exps[0] == (0, 0)
    assert len(set(exps)) == len(exps)
    degs = [sum(e) for e in exps]
    assert degs == sorted(degs)


def test_eval_many_against_direct_products():
    b = MonomialBasis(3, 3)
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(10, 3))
    phi = b.eval_many(pts)
    for q in range(10):
        for k, e in enumerate(b.exps):
            direct = np.prod(pts[q] ** e)
            assert phi[q, k] == pytest.approx(direct, rel=1e-12, abs=1e-12)


def test_derivative_matrix_matches_finite_differences():
    b = MonomialBasis(3, 4)
    rng = np.random.default_rng(1)
    c = rng.normal(size=b.size)
    h = 1e-6
    for var in range(3):
        dc = c @ b.derivative_matrix(var).T
        for _ in range(5):
            pt = rng.normal(size=3)
            pp, pm = pt.copy(), pt.copy()
            pp[var] += h
            pm[var] -= h
            fd = (c @ b.eval_point(pp) - c @ b.eval_point(pm)) / (2 * h)
            assert dc @ b.eval_point(pt) == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_index_of_roundtrip():
    b = MonomialBasis(4, 3)
    for k, e in enumerate(b.exps):
        assert b.index_of(tuple(e)) == k


class TestPolyMatrixFamily:
    def test_identity_family(self):
        b = MonomialBasis(3, 2)
        fam = PolyMatrixFamily.identity(2, b)
        np.testing.assert_allclose(fam.eval([0.3, -1.0, 2.0], ()), np.eye(2))

    def test_symmetric_eval(self):
        b = MonomialBasis(2, 2)
        rng = np.random.default_rng(2)
        c = rng.normal(size=(2, 2, b.size))
        c = 0.5 * (c + c.transpose(1, 0, 2))
        fam = PolyMatrixFamily(2, 2, b, c, symmetric=True)
        M = fam.eval([0.7, -0.2], ())
        np.testing.assert_allclose(M, M.T)

    def test_asymmetric_coeffs_rejected_when_flagged(self):
        b = MonomialBasis(2, 1)
        c = np.zeros((2, 2, b.size))
        c[0, 1, 0] = 1.0
        with pytest.raises(ValueError):
            PolyMatrixFamily(2, 2, b, c, symmetric=True)

    def test_partial_and_directional_derivative(self):
        b = MonomialBasis(3, 3)  # vars: x1, x2, th1
        rng = np.random.default_rng(3)
        c = rng.normal(size=(2, 2, b.size))
        c = 0.5 * (c + c.transpose(1, 0, 2))
        fam = PolyMatrixFamily(2, 2, b, c, symmetric=True)
        x = np.array([0.4, -0.3])
        th = np.array([0.8])
        h = 1e-6
        v = np.array([1.3, -0.7])
        dd = fam.directional_derivative(x, th, v)
        fd = (fam.eval(x + h * v, th) - fam.eval(x - h * v, th)) / (2 * h)
        np.testing.assert_allclose(dd, fd, rtol=1e-5, atol=1e-7)
        dth = fam.partial(2).eval(x, th)
        fd = (fam.eval(x, th + h) - fam.eval(x, th - h)) / (2 * h)
        np.testing.assert_allclose(dth, fd, rtol=1e-5, atol=1e-7)

    def test_linear_structure(self):
        b = MonomialBasis(2, 1)
        f1 = PolyMatrixFamily.identity(2, b)
        f2 = PolyMatrixFamily.identity(2, b)
        s = f1 + 2.0 * f2
        np.testing.assert_allclose(s.eval([0.0, 0.0], ()), 3 * np.eye(2))

    def test_json_roundtrip(self):
        b = MonomialBasis(3, 2)
        rng = np.random.default_rng(4)
        c = rng.normal(size=(1, 3, b.size))
        fam = PolyMatrixFamily(1, 3, b, c)
        back = PolyMatrixFamily.from_json(fam.to_json())
        np.testing.assert_array_equal(back.coeffs, fam.coeffs)
        assert back.basis.nvars == 3 and back.basis.degree == 2

    def test_json_rejects_reordered_exponents(self):
        b = MonomialBasis(2, 1)
        fam = PolyMatrixFamily.identity(2, b)
        d = fam.to_json()
        d["exponents"] = d["exponents"][::-1]
        with pytest.raises(ValueError):
            PolyMatrixFamily.from_json(d)
