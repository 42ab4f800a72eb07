"""Geodesics under a position-dependent metric.

Builds the 2-D metric ds^2 = dx1^2 + dx2^2 / (1 + x1^2) (cheap to move
sideways far from the x2-axis), solves the geodesic between two points
with the pseudospectral solver, and compares against the straight line.
Run:  python demos/demo_geodesic.py
"""

import numpy as np

from arccm.geodesic import MetricEvaluator, solve_geodesic
from arccm.poly import MonomialBasis, PolyMatrixFamily


def curved_metric():
    # dual metric W = M^{-1} = diag(1, 1 + x1^2), polynomial in x1
    basis = MonomialBasis(2, 2)
    c = np.zeros((2, 2, basis.size))
    c[0, 0, basis.index_of((0, 0))] = 1.0
    c[1, 1, basis.index_of((0, 0))] = 1.0
    c[1, 1, basis.index_of((2, 0))] = 1.0
    W = PolyMatrixFamily(2, 2, basis, c, symmetric=True)
    return MetricEvaluator(W, None, n=2)


def main():
    metric = curved_metric()
    a = np.array([-1.5, -1.0])
    b = np.array([1.5, 1.0])
    theta = np.zeros(0)

    geo = solve_geodesic(metric, a, b, theta, degree=8)
    straight = np.linalg.norm(b - a) ** 2 / 1.0  # energy of the segment
    # under this metric the straight segment costs less than Euclidean
    # because the metric discounts x2-motion away from x1 = 0; still the
    # optimized geodesic beats it by bowing outward.
    print("straight-line Euclidean energy :", straight)
    print("geodesic energy                :", geo.energy)
    print("converged                      :", geo.converged,
          "(%d iterations)" % geo.iterations)

    nodes = geo.curve.values
    print("\ncurve nodes (x1, x2):")
    for row in nodes:
        print("  % .4f  % .4f" % (row[0], row[1]))

    # warm start: re-solve from the previous answer after a small move
    geo2 = solve_geodesic(metric, a, b + 0.01, theta, degree=8,
                          warm_start=geo.curve)
    print("\nwarm-started re-solve after moving the endpoint by 0.01:")
    print("energy %.6f in %d iterations" % (geo2.energy, geo2.iterations))


if __name__ == "__main__":
    main()
