import numpy as np
import pytest

from arccm import synthesis, system
from arccm.poly import MonomialBasis, PolyMatrixFamily


@pytest.fixture(scope="session")
def sysm():
    return system.example_system()


def make_hand_certificate(sysm, lam=1.0, mu=0.2, alpha=3.0, gains=(-1.0, 0.0, -3.0)):
    """Identity-metric certificate with a constant gain row.

    Not a validated contraction certificate; used to exercise plumbing
    (geodesics are straight lines, feedback is a linear state feedback).
    """
    basis = MonomialBasis(sysm.n + sysm.p, 4)
    cW = np.zeros((sysm.n, sysm.n, basis.size))
    cY = np.zeros((sysm.m, sysm.n, basis.size))
    i0 = basis.index_of((0,) * basis.nvars)
    for i in range(sysm.n):
        cW[i, i, i0] = 1.0
    cY[0, :, i0] = gains
    W = PolyMatrixFamily(sysm.n, sysm.n, basis, cW, symmetric=True)
    Y = PolyMatrixFamily(sysm.m, sysm.n, basis, cY)
    val = synthesis.ValidationReport(conditions={}, worst_margin=0.0,
                                     c2_worst_abs=0.0, metric_eig_range=(1.0, 1.0),
                                     grid={}, num_points=0)
    return synthesis.MetricCertificate(
        W=W, Y=Y, lam=lam, mu=mu, alpha=alpha, a_low=1.0, a_high=1.0,
        rate_convention="c1-2lambda", system_name=sysm.name,
        w_param_subset=(0, 1), validation=val)


@pytest.fixture(scope="session")
def hand_cert(sysm):
    return make_hand_certificate(sysm)
