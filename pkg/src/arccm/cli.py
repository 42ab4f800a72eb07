"""Command-line entry point.

Subcommands: synthesize, validate, simulate, report, geodesic,
clf-check, repro.  Exit codes: 0 success, 2 certified negative finding
(infeasible, bound violation, rate condition), 1 usage/config/runtime
error.
"""

import argparse
import json
import os
import sys as _sys

import numpy as np

from . import control, geodesic, sim, svgplot, synthesis, system, verify
from .config import ConfigError, RunConfig

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FINDING = 2


def _build_system(cfg):
    if cfg.system.name != "example-ccs-3state":
        raise ConfigError("unknown system %r" % cfg.system.name)
    return system.example_system(domain_halfwidth=cfg.system.domain_halfwidth)


def _synthesis_config(cfg):
    s = cfg.synthesis
    grid = synthesis.GridSpec(grid_counts=tuple(s.theta_grid),
                              x_counts=tuple(s.x_grid),
                              random_count=s.random_count, seed=s.seed)
    return synthesis.SynthesisConfig(
        degree=s.degree, lambdas=tuple(s.lambdas), mus=tuple(s.mus),
        a_low=s.a_low, a_high=s.a_high, tau=s.tau,
        margin_target=s.margin_target, max_iter=s.max_iter,
        rate_convention=s.rate_convention, grid=grid)


def _build_estimator(cfg, sys_model, cert):
    e = cfg.estimator
    mid = sys_model.theta_box.midpoint()
    if e.theta_final == "true":
        theta_final = np.asarray(cfg.system.theta_true, dtype=float)
    elif e.theta_final == "midpoint":
        theta_final = mid
    else:
        theta_final = np.asarray(e.theta_final, dtype=float)
    if e.kind == "scheduled":
        return control.ScheduledEstimator(mid, theta_final, e.t_start, e.t_end)
    if e.kind == "frozen":
        return control.FrozenEstimator(mid)
    if e.kind == "rls":
        budget = (cert.lam, cert.mu, sys_model.p, e.rho_min)
        return control.RlsEstimator(sys_model, mid, budget,
                                    window=e.window, ridge=e.ridge)
    raise ConfigError("unknown estimator kind %r" % e.kind)


def _sim_config(cfg):
    s = cfg.simulation
    return sim.SimConfig(t0=s.t0, t1=s.t1, h=s.h, control_period=s.control_period,
                         x0_offset=tuple(s.x0_offset),
                         theta_true=tuple(cfg.system.theta_true),
                         geodesic_degree=s.geodesic_degree)


def _load_config(args):
    if getattr(args, "config", None):
        return RunConfig.load(args.config)
    return RunConfig.default()


def _parse_vec(text):
    return np.array([float(v) for v in text.split(",")])


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_synthesize(args):
    cfg = _load_config(args)
    sys_model = _build_system(cfg)
    out = args.out or "cert.json"
    try:
        cert = synthesis.synthesize(sys_model, _synthesis_config(cfg))
    except synthesis.InfeasibleError as e:
        print("infeasible: no certificate found; best margins per condition:")
        for k, v in sorted(e.best_margins.items()):
            print("  %s: %s" % (k, v))
        return EXIT_FINDING
    cert.save(out)
    print("certificate written to %s (lambda=%g mu=%g alpha=%g, worst margin %.3g)"
          % (out, cert.lam, cert.mu, cert.alpha, cert.validation.worst_margin))
    return EXIT_OK


def cmd_validate(args):
    cfg = _load_config(args)
    sys_model = _build_system(cfg)
    cert = synthesis.MetricCertificate.load(args.cert)
    s = cfg.synthesis
    grid = synthesis.GridSpec(grid_counts=(41, 41), x_counts=tuple(s.x_grid),
                              random_count=2000,
                              seed=args.seed if args.seed is not None else s.seed)
    report = synthesis.validate_certificate(cert, sys_model, grid)
    out = args.out or "validation.json"
    _write_json(out, report.to_json())
    print("validation worst margin: %.6g (report in %s)" % (report.worst_margin, out))
    return EXIT_OK if report.worst_margin >= -1e-6 else EXIT_FINDING


def cmd_simulate(args):
    cfg = _load_config(args)
    sys_model = _build_system(cfg)
    cert = synthesis.MetricCertificate.load(args.cert)
    estimator = _build_estimator(cfg, sys_model, cert)
    try:
        trace = sim.run_closed_loop(sys_model, cert, _sim_config(cfg), estimator)
    except control.RateConditionError as e:
        print("rate condition violated: %s" % e)
        return EXIT_FINDING
    out = args.out or "trace.csv"
    trace.save_csv(out)
    print("trace written to %s (%d ticks, final energy %.6g)"
          % (out, trace.t.size, trace.energy[-1]))
    return EXIT_OK


def _emit_plots(plots_dir, traces, cfg):
    os.makedirs(plots_dir, exist_ok=True)
    energy = svgplot.LinePlot(title="Geodesic energy and certified bounds",
                              xlabel="t [s]", ylabel="E", logy=True)
    for name, tr in traces.items():
        energy.add_series(tr.t, tr.energy, label="E (%s)" % name)
    first = next(iter(traces.values()))
    if first.bound_cons is not None:
        energy.add_series(first.t, first.bound_cons, label="conservative", dash="6,3")
    if first.bound_int is not None:
        energy.add_series(first.t, first.bound_int, label="integrated", dash="2,2")
    if cfg.estimator.kind == "scheduled":
        energy.add_vline(cfg.estimator.t_start, "ramp start")
        energy.add_vline(cfg.estimator.t_end, "ramp end")
    energy.save(os.path.join(plots_dir, "energy.svg"))
    for i, fname in ((0, "states_x1.svg"), (1, "states_x2.svg")):
        plot = svgplot.LinePlot(title="State x%d tracking" % (i + 1),
                                xlabel="t [s]", ylabel="x%d" % (i + 1))
        for name, tr in traces.items():
            plot.add_series(tr.t, tr.x[:, i], label="x%d (%s)" % (i + 1, name))
        plot.add_series(first.t, first.x_d[:, i], label="reference", dash="6,3")
        plot.save(os.path.join(plots_dir, fname))


def cmd_report(args):
    cfg = _load_config(args)
    sys_model = _build_system(cfg)
    cert = synthesis.MetricCertificate.load(args.cert)
    trace = sim.Trace.load_csv(args.trace, theta_true=cfg.system.theta_true)
    report = verify.check_trace(trace, cert, sys_model, csv_path=args.trace)
    out = args.out or "report.json"
    _write_json(out, report.to_json())
    if args.plots:
        _emit_plots(args.plots, {"trace": trace}, cfg)
    print("report written to %s (conservative violations: %d, integrated: %d)"
          % (out, report.cons_violations, report.int_violations))
    if report.cons_violations or report.int_violations:
        return EXIT_FINDING
    return EXIT_OK


def cmd_geodesic(args):
    cert = synthesis.MetricCertificate.load(args.cert)
    start = _parse_vec(args.start)
    end = _parse_vec(args.end)
    theta = _parse_vec(args.theta)
    metric = geodesic.MetricEvaluator(cert.W, cert.Y, n=start.size)
    geo = geodesic.solve_geodesic(metric, start, end, theta)
    print("energy: %r" % geo.energy)
    print("converged: %s (iterations %d, optimality %.3g)"
          % (geo.converged, geo.iterations, geo.optimality))
    if args.out:
        _write_json(args.out, {"energy": geo.energy, "converged": geo.converged,
                               "nodes": geo.curve.values.tolist()})
    return EXIT_OK if geo.converged else EXIT_FINDING


def cmd_clf_check(args):
    cfg = _load_config(args)
    sys_model = _build_system(cfg)
    cert = synthesis.MetricCertificate.load(args.cert)
    cand = verify.EnergyClf(cert, sys_model)
    report = verify.clf_check(cand, sys_model, num_samples=cfg.verify.clf_samples,
                              seed=args.seed if args.seed is not None else cfg.verify.seed)
    out = args.out or "clf_report.json"
    _write_json(out, {
        "samples": report.samples,
        "sandwich_lo_worst": report.sandwich_lo_worst,
        "sandwich_hi_worst": report.sandwich_hi_worst,
        "grad_worst": report.grad_worst,
        "decrease_checked": report.decrease_checked,
        "decrease_vacuous": report.decrease_vacuous,
        "failures": report.failures,
    })
    print("clf check: %d samples, %d failures (report in %s)"
          % (report.samples, len(report.failures), out))
    return EXIT_OK if report.passed else EXIT_FINDING


def cmd_repro(args):
    cfg = _load_config(args)
    sys_model = _build_system(cfg)
    outdir = args.out or "out"
    os.makedirs(outdir, exist_ok=True)
    cert_path = os.path.join(outdir, "cert.json")
    if args.cert:
        cert = synthesis.MetricCertificate.load(args.cert)
        cert.save(cert_path)
    else:
        try:
            cert = synthesis.synthesize(sys_model, _synthesis_config(cfg))
        except synthesis.InfeasibleError:
            print("infeasible: synthesis found no certificate")
            return EXIT_FINDING
        cert.save(cert_path)
    sim_cfg = _sim_config(cfg)
    traces = {}
    reports = {}
    for label, kind in (("adaptive", cfg.estimator.kind), ("frozen", "frozen")):
        run_cfg = RunConfig.load(args.config) if args.config else RunConfig.default()
        run_cfg.estimator.kind = kind
        estimator = _build_estimator(run_cfg, sys_model, cert)
        try:
            tr = sim.run_closed_loop(sys_model, cert, sim_cfg, estimator)
        except control.RateConditionError as e:
            print("rate condition violated (%s run): %s" % (label, e))
            return EXIT_FINDING
        path = os.path.join(outdir, "trace_%s.csv" % label)
        reports[label] = verify.check_trace(tr, cert, sys_model, csv_path=path)
        traces[label] = tr
    _write_json(os.path.join(outdir, "report.json"), {
        "adaptive": reports["adaptive"].to_json(),
        "frozen": reports["frozen"].to_json(),
        "certificate": {"lambda": cert.lam, "mu": cert.mu, "alpha": cert.alpha,
                        "a_low": cert.a_low, "a_high": cert.a_high},
    })
    if cfg.output.plots:
        _emit_plots(outdir, traces, cfg)
    viol = reports["adaptive"].cons_violations + reports["adaptive"].int_violations
    print("repro complete in %s (adaptive final energy %.6g, %d bound violations)"
          % (outdir, traces["adaptive"].energy[-1], viol))
    return EXIT_FINDING if viol else EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="arccm",
                                 description="adaptive robust control contraction metrics")
    ap.add_argument("--threads", type=int,
                    default=int(os.environ.get("ARCCM_THREADS", "0")),
                    help="thread budget for numeric kernels (0 = library default)")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, **flags):
        p = sub.add_parser(name)
        for flag, kw in flags.items():
            p.add_argument("--" + flag, **kw)
        p.set_defaults(fn=fn)
        return p

    opt = {"default": None}
    add("synthesize", cmd_synthesize, config=dict(**opt), out=dict(**opt),
        seed=dict(type=int, default=None))
    add("validate", cmd_validate, config=dict(**opt), cert=dict(required=True),
        out=dict(**opt), seed=dict(type=int, default=None))
    add("simulate", cmd_simulate, config=dict(**opt), cert=dict(required=True),
        out=dict(**opt), seed=dict(type=int, default=None))
    add("report", cmd_report, config=dict(**opt), cert=dict(required=True),
        trace=dict(required=True), out=dict(**opt), plots=dict(**opt),
        seed=dict(type=int, default=None))
    geo = add("geodesic", cmd_geodesic, cert=dict(required=True),
              theta=dict(required=True), out=dict(**opt))
    geo.add_argument("--from", "--start", dest="start", required=True,
                     help="start point, comma-separated")
    geo.add_argument("--to", "--end", dest="end", required=True,
                     help="end point, comma-separated")
    add("clf-check", cmd_clf_check, config=dict(**opt), cert=dict(required=True),
        out=dict(**opt), seed=dict(type=int, default=None))
    add("repro", cmd_repro, config=dict(**opt), cert=dict(**opt), out=dict(**opt),
        seed=dict(type=int, default=None))
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.threads:
        os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
    try:
        return args.fn(args)
    except ConfigError as e:
        print("config error: %s" % e, file=_sys.stderr)
        return EXIT_ERROR
    except FileNotFoundError as e:
        print("error: %s" % e, file=_sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
