"""Adaptive robust control contraction metrics.

Synthesis of parameter-dependent contraction certificates for uncertain
control-affine systems, geodesic feedback tracking with online
parameter estimation, and numeric certification of exponential
input-to-state convergence bounds.
"""

from .control import (FrozenEstimator, RateConditionError, RlsEstimator,
                      ScheduledEstimator, feedback, rho)
from .expr import Expression, parse_formula
from .geodesic import (Curve, Geodesic, GeodesicSolver, MetricError,
                       MetricEvaluator, riemannian_energy, solve_geodesic)
from .poly import MonomialBasis, PolyMatrixFamily
from .sim import SimConfig, Trace, run_closed_loop
from .synthesis import (GridSpec, InfeasibleError, MetricCertificate,
                        SynthesisConfig, ValidationReport, synthesize,
                        validate_certificate)
from .system import (ParameterBox, ReferenceGenerator, UncertainSystem,
                     example_system)
from .verify import (BoundReport, ClfCandidate, EnergyClf, ExpressionClf,
                     check_prop1, check_trace, clf_check, conservative_bound,
                     integrated_bound)

__version__ = "0.1.0"
