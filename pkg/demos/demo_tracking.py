"""Closed-loop tracking: adaptive vs frozen parameter estimate.

Runs the builtin 3-state example under a synthesized certificate
(defaults to the pregenerated one shipped in artifacts/):

    python demos/demo_tracking.py [cert.json]

The adaptive run ramps the parameter estimate to the truth between
t = 3 s and 7 s; the frozen run keeps the box-midpoint estimate.  Both
stay under the certified conservative bound, and the adaptive run's
energy collapses once the estimate converges.  Outputs demo_energy.svg
next to this script.
"""

import os
import sys

import numpy as np

from arccm import control, sim, svgplot, synthesis, system, verify

THETA_TRUE = (-0.3, 0.8, -0.25, -0.75)
DEFAULT_CERT = os.path.join(os.path.dirname(os.path.abspath(__file__)),
                            os.pardir, "artifacts", "cert_example.json")


def main():
    cert_path = sys.argv[1] if len(sys.argv) > 1 else DEFAULT_CERT
    cert = synthesis.MetricCertificate.load(cert_path)
    print("certificate: lambda=%g mu=%g alpha=%.3g (from %s)"
          % (cert.lam, cert.mu, cert.alpha, os.path.relpath(cert_path)))

    sys_model = system.example_system()
    sim_cfg = sim.SimConfig(t1=12.0, theta_true=THETA_TRUE)
    mid = sys_model.theta_box.midpoint()

    adaptive = control.ScheduledEstimator(mid, np.array(THETA_TRUE), 3.0, 7.0)
    tr_a = sim.run_closed_loop(sys_model, cert, sim_cfg, adaptive)
    rep_a = verify.check_trace(tr_a, cert, sys_model)

    tr_f = sim.run_closed_loop(sys_model, cert, sim_cfg,
                               control.FrozenEstimator(mid))
    rep_f = verify.check_trace(tr_f, cert, sys_model)

    print("\n                     adaptive        frozen")
    print("final energy      %12.4g  %12.4g" % (tr_a.energy[-1], tr_f.energy[-1]))
    print("mean E on [10,12] %12.4g  %12.4g"
          % (np.mean(tr_a.energy[tr_a.t >= 10.0]),
             np.mean(tr_f.energy[tr_f.t >= 10.0])))
    print("bound violations  %12d  %12d"
          % (rep_a.cons_violations + rep_a.int_violations,
             rep_f.cons_violations + rep_f.int_violations))
    print("min rho(t)        %12.4g  %12.4g" % (rep_a.rho_min, rep_f.rho_min))

    plot = svgplot.LinePlot(title="Tracking energy, adaptive vs frozen",
                            xlabel="t [s]", ylabel="E", logy=True)
    plot.add_series(tr_a.t, tr_a.energy, label="adaptive")
    plot.add_series(tr_f.t, tr_f.energy, label="frozen")
    plot.add_series(tr_a.t, tr_a.bound_cons, label="conservative bound",
                    dash="6,3")
    plot.add_vline(3.0, "ramp start")
    plot.add_vline(7.0, "ramp end")
    out = os.path.join(os.path.dirname(os.path.abspath(__file__)),
                       "demo_energy.svg")
    plot.save(out)
    print("\nenergy plot written to", out)


if __name__ == "__main__":
    main()
