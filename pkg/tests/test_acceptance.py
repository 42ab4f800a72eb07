"""Acceptance gate: end-to-end criteria for the shipped package.

Runs real synthesis once (session-scoped) and drives the full pipeline
off the resulting certificate.  Wall-clock expectations from the
acceptance criteria are stated for desktop hardware; the asserts below
allow a small factor for slower single-core runners (see the decisions
ledger).
"""

import json
import math
import os
import time

import numpy as np
import pytest

from arccm import cli, control, expr, sim, synthesis, verify
from arccm.geodesic import Curve, GeodesicSolver, MetricEvaluator, solve_geodesic
from arccm.poly import MonomialBasis, PolyMatrixFamily
from arccm.system import ParameterBox, UncertainSystem
from tests.test_geodesic import _clairaut_length, curved_metric_2d, identity_metric
from tests.test_verify import scalar_sys

THETA_STAR = (-0.3, 0.8, -0.25, -0.75)


@pytest.fixture(scope="session")
def synth(sysm):
    t0 = time.perf_counter()
    cert = synthesis.synthesize(sysm, synthesis.SynthesisConfig())
    return cert, time.perf_counter() - t0


def run_12s(sysm, cert, estimator):
    cfg = sim.SimConfig(t1=12.0, theta_true=THETA_STAR)
    t0 = time.perf_counter()
    tr = sim.run_closed_loop(sysm, cert, cfg, estimator)
    return tr, time.perf_counter() - t0


@pytest.fixture(scope="session")
def traces(sysm, synth):
    cert, _ = synth
    mid = sysm.theta_box.midpoint()
    adaptive, t_a = run_12s(sysm, cert, control.ScheduledEstimator(
        mid, np.array(THETA_STAR), 3.0, 7.0))
    frozen, t_f = run_12s(sysm, cert, control.FrozenEstimator(mid))
    reports = {"adaptive": verify.check_trace(adaptive, cert, sysm),
               "frozen": verify.check_trace(frozen, cert, sysm)}
    return {"adaptive": adaptive, "frozen": frozen,
            "reports": reports, "seconds": {"adaptive": t_a, "frozen": t_f}}


class TestCriterion1Synthesis:
    def test_feasible_and_validates_on_dense_grid(self, sysm, synth):
        cert, seconds = synth
        grid = synthesis.GridSpec(grid_counts=(41, 41), x_counts=(3, 3, 3),
                                  random_count=2000, seed=1)
        report = synthesis.validate_certificate(cert, sysm, grid)
        assert report.worst_margin >= -1e-6
        assert cert.lam > 0 and cert.mu > 0 and cert.alpha > 0
        # expected <= 30 min on a desktop; 2x slack for this runner
        assert seconds <= 3600.0


class TestCriterion2ConservativeBound:
    def test_zero_violations_both_runs(self, traces):
        for name in ("adaptive", "frozen"):
            rep = traces["reports"][name]
            assert rep.cons_violations == 0, name
            # flagged ticks (geodesic retry/domain excursion) are excluded
            # from bound checking by design; make sure they stay rare
            assert rep.checked_ticks >= 1150, name

    def test_runtime_per_simulation(self, traces):
        # expected <= 1 min on a desktop; 5x slack for this runner
        assert max(traces["seconds"].values()) <= 300.0


class TestCriterion3IntegratedBound:
    def test_zero_violations_both_runs(self, traces):
        for name in ("adaptive", "frozen"):
            assert traces["reports"][name].int_violations == 0, name

    def test_euler_step_converged(self, synth, traces):
        cert, _ = synth
        tr = traces["adaptive"]
        b1 = verify.integrated_bound(tr, cert, substeps=1)
        b2 = verify.integrated_bound(tr, cert, substeps=2)
        sup = float(np.max(np.abs(b1 - b2)))
        assert sup <= 0.005 * float(np.max(b1))


class TestCriterion4Convergence:
    def test_adaptive_final_energy(self, traces):
        assert traces["adaptive"].energy[-1] <= 1e-4

    def test_post_ramp_log_energy_slope(self, synth, traces):
        cert, _ = synth
        tr = traces["adaptive"]
        rho_bar = cert.lam  # rate after the ramp ends (estimate frozen)
        mask = (tr.t >= 7.0) & (tr.energy > 1e-14)
        assert np.sum(mask) > 10
        slope = np.polyfit(tr.t[mask], np.log(tr.energy[mask]), 1)[0]
        assert slope <= -0.5 * rho_bar

    def test_frozen_run_stays_worse(self, traces):
        late_a = traces["adaptive"].energy[traces["adaptive"].t >= 10.0]
        late_f = traces["frozen"].energy[traces["frozen"].t >= 10.0]
        assert np.mean(late_f) >= 10.0 * np.mean(late_a)


class TestCriterion5LogGradient:
    def test_certificate_satisfies_bound(self, sysm, synth):
        cert, _ = synth
        report = verify.check_prop1(cert, sysm, num_curves=100, seed=0, tol=1e-3)
        assert report.curve_violations == []
        assert report.worst_abs_log_gradient <= cert.mu * (1.0 + 1e-3)

    def test_adversarial_exponential_metric_is_caught(self, sysm):
        # W with e^{theta1} on the diagonal (quartic Taylor): the energy
        # log-gradient is ~ -1, far outside mu = 0.5
        basis = MonomialBasis(sysm.n + sysm.p, 4)
        cW = np.zeros((sysm.n, sysm.n, basis.size))
        for i in range(sysm.n):
            for k in range(5):
                e = [0] * basis.nvars
                e[sysm.n] = k
                cW[i, i, basis.index_of(tuple(e))] = 1.0 / math.factorial(k)
        cY = np.zeros((sysm.m, sysm.n, basis.size))
        bad = synthesis.MetricCertificate(
            W=PolyMatrixFamily(sysm.n, sysm.n, basis, cW, symmetric=True),
            Y=PolyMatrixFamily(sysm.m, sysm.n, basis, cY),
            lam=1.0, mu=0.5, alpha=1.0, a_low=1e-2, a_high=1e2)
        report = verify.check_prop1(bad, sysm, num_curves=20, seed=0)
        assert report.curve_violations != []


class TestCriterion6Geodesics:
    def test_constant_metric_recovers_straight_lines(self):
        metric = identity_metric(3)
        rng = np.random.default_rng(11)
        for _ in range(5):
            a, b = rng.uniform(-2, 2, size=(2, 3))
            geo = solve_geodesic(metric, a, b, np.zeros(0))
            s = geo.curve.abscissae[:, None]
            straight = a + s * (b - a)
            assert np.max(np.abs(geo.curve.values - straight)) <= 1e-8
            assert geo.energy == pytest.approx(float(np.sum((b - a) ** 2)),
                                               rel=1e-10)

    def test_positional_metric_matches_shooting_oracle(self):
        # exact first-integral oracle for ds^2 = dx1^2 + dx2^2/(1+x1^2);
        # replaces the grid DP oracle, whose transverse quantization
        # error is first-order (see the decisions ledger)
        metric = curved_metric_2d()
        rng = np.random.default_rng(5)
        for _ in range(10):
            a = np.array([rng.uniform(-1.5, -0.5), rng.uniform(-1.0, 1.0)])
            b = np.array([rng.uniform(0.5, 1.5), rng.uniform(-1.0, 1.0)])
            geo = solve_geodesic(metric, a, b, np.zeros(0), degree=8)
            L = _clairaut_length(a, b)
            assert geo.energy == pytest.approx(L * L, rel=1e-3)


class TestCriterion7Gradients:
    def test_penalty_gradient_matches_finite_differences(self, sysm):
        grid = synthesis.GridSpec(grid_counts=(3, 3), x_counts=(2, 2, 2),
                                  random_count=30, seed=3)
        cfg = synthesis.SynthesisConfig(grid=grid, max_iter=1)
        model = synthesis.PenaltyModel(sysm, cfg)
        rng = np.random.default_rng(4)
        z = model.initial_vector() + 0.01 * rng.normal(size=model.initial_vector().size)
        f0, g = model.penalty_and_gradient(z, 0.5, 0.2)
        idx = rng.choice(z.size, size=25, replace=False)
        h = 1e-6
        for i in idx:
            zp, zm = z.copy(), z.copy()
            zp[i] += h
            zm[i] -= h
            fd = (model.penalty_and_gradient(zp, 0.5, 0.2)[0]
                  - model.penalty_and_gradient(zm, 0.5, 0.2)[0]) / (2 * h)
            assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-9)

    def test_energy_theta_gradient_matches_finite_differences(self, sysm, synth):
        cert, _ = synth
        from arccm.geodesic import MetricEvaluator
        metric = MetricEvaluator(cert.W, cert.Y, n=sysm.n)
        solver = GeodesicSolver(metric)
        rng = np.random.default_rng(6)
        for _ in range(5):
            a, b = rng.uniform(-1.5, 1.5, size=(2, sysm.n))
            theta = sysm.theta_box.sample(rng)[0]
            curve = Curve.straight_line(a, b, solver.degree)
            curve.values[1:-1] += rng.normal(scale=0.05,
                                             size=curve.values[1:-1].shape)
            g = solver.theta_energy_gradient(curve, theta)
            h = 1e-6
            for i in range(sysm.p):
                tp, tm = theta.copy(), theta.copy()
                tp[i] += h
                tm[i] -= h
                fd = (solver.energy(curve, tp) - solver.energy(curve, tm)) / (2 * h)
                assert g[i] == pytest.approx(fd, rel=1e-6, abs=1e-10)


class TestCriterion8RateCondition:
    def test_rate_limited_estimator_respects_floor(self, sysm, synth):
        cert, _ = synth
        rho_min = 0.05
        est = control.RlsEstimator(sysm, sysm.theta_box.midpoint(),
                                   (cert.lam, cert.mu, sysm.p, rho_min))
        tr = sim.run_closed_loop(sysm, cert,
                                 sim.SimConfig(t1=2.0, theta_true=THETA_STAR),
                                 est)
        assert float(np.min(tr.rho)) >= rho_min - 1e-9

    def test_over_fast_schedule_exits_finding(self, synth, tmp_path):
        cert, _ = synth
        cert_path = str(tmp_path / "cert.json")
        cert.save(cert_path)
        cfg = tmp_path / "fast.toml"
        cfg.write_text("[simulation]\nt1 = 1.0\n\n"
                       "[estimator]\nt_start = 0.1\nt_end = 0.2\n")
        rc = cli.main(["simulate", "--config", str(cfg), "--cert", cert_path,
                       "--out", str(tmp_path / "t.csv")])
        assert rc == cli.EXIT_FINDING


class TestCriterion9ClfChecker:
    def test_scalar_quadratic_passes(self):
        ssys = scalar_sys()
        e = expr.parse_formula("(x1 - x2)^2", 2, 1)
        cand = verify.ExpressionClf(e, 1, 1, k1=1.0, k2=1.0, k3=0.5,
                                    a=2.0, mu=0.5)
        report = verify.clf_check(cand, ssys, num_samples=200, seed=0)
        assert report.passed

    def test_mu_violation_fails(self):
        ssys = scalar_sys()
        e = expr.exp(expr.param(0)) * expr.parse_formula("(x1 - x2)^2", 2, 1)
        cand = verify.ExpressionClf(e, 1, 1, k1=0.1, k2=10.0, k3=0.5,
                                    a=2.0, mu=0.5)
        report = verify.clf_check(cand, ssys, num_samples=200, seed=0)
        assert any(f["kind"] == "param_gradient" for f in report.failures)
        assert not report.passed

    def test_degenerate_candidate_fails(self):
        f = [expr.parse_formula("-x1", 2, 0), expr.parse_formula("-x2", 2, 0)]
        delta = [[expr.state(0), expr.const(0.0)]]
        b = [[expr.const(1.0)], [expr.const(0.0)]]
        sys2 = UncertainSystem(2, 1, 1, f, delta, b,
                               ParameterBox([-0.5], [0.5]),
                               ParameterBox([-1.0], [1.0]),
                               ParameterBox([-2.0] * 2, [2.0] * 2), name="two")
        e = expr.parse_formula("(x1 - x3)^2", 4, 1)  # ignores the x2 error
        cand = verify.ExpressionClf(e, 2, 1, k1=0.5, k2=10.0, k3=0.5,
                                    a=2.0, mu=0.5)
        report = verify.clf_check(cand, sys2, num_samples=200, seed=0)
        assert any(f["kind"] == "sandwich_lo" for f in report.failures)
        assert not report.passed

    def test_induced_clf_passes_sandwich_and_gradient(self, sysm, synth):
        cert, _ = synth
        cand = verify.EnergyClf(cert, sysm)
        report = verify.clf_check(cand, sysm, num_samples=1000, seed=0,
                                  tol=1e-6)
        bad = [f for f in report.failures
               if f["kind"] in ("nonneg", "sandwich_lo", "sandwich_hi",
                                "param_gradient")]
        assert bad == []


class TestCriterion10Determinism:
    def test_repro_twice_is_bit_identical(self, synth, tmp_path):
        cert, _ = synth
        cert_path = str(tmp_path / "cert.json")
        cert.save(cert_path)
        cfg = tmp_path / "run.toml"
        cfg.write_text("[simulation]\nt1 = 2.0\n")
        outputs = []
        for run in ("a", "b"):
            outdir = str(tmp_path / run)
            rc = cli.main(["repro", "--config", str(cfg), "--cert", cert_path,
                           "--out", outdir])
            assert rc == cli.EXIT_OK
            blob = {}
            for name in sorted(os.listdir(outdir)):
                if name.endswith((".csv", ".json")):
                    with open(os.path.join(outdir, name), "rb") as fh:
                        blob[name] = fh.read()
            outputs.append(blob)
        assert list(outputs[0]) == list(outputs[1])
        for name in outputs[0]:
            assert outputs[0][name] == outputs[1][name], name
