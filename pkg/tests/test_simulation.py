import numpy as np
import pytest
from numpy.testing import assert_allclose

import censindex.simulation as sim
from censindex.exceptions import HarnessError, InvalidInputError
from censindex.fitter import FitConfig
from censindex.simulation import (
    SimDesign,
    calibrate_censoring_rate,
    draw_covariates,
    generate_dataset,
    monte_carlo_report,
    rep_generator,
    summarize,
)


class TestDesign:
    @pytest.mark.parametrize("kw", [{"n": 10}, {"target_p": 0.95}, {"target_p": -0.1},
                                    {"reps": 0}, {"mixture_scale": "x"},
                                    {"theta0": (2.0, 1.0)}])
    def test_invariants(self, kw):
        with pytest.raises(InvalidInputError):
            SimDesign(**kw)

    def test_mixture_moments(self):
        design = SimDesign()
        x = draw_covariates(design, 100_000, rep_generator(1, 0))
        # 0.2 N(0, 1) + 0.8 N(0.25, 2): mean 0.2, variance 0.2 + 0.8 (2 + 0.0625) - 0.04
        var = 0.2 + 0.8 * (2 + 0.25 ** 2) - 0.2 ** 2
        se_mean = np.sqrt(var / x.shape[0])
        assert np.all(np.abs(x.mean(axis=0) - 0.2) < 3 * se_mean)
        assert var == pytest.approx(1.81)
        # fourth central moment of the mixture bounds the variance of s^2
        m4 = np.mean((x - x.mean(axis=0)) ** 4, axis=0)
        se_var = np.sqrt((m4 - var ** 2) / x.shape[0])
        assert np.all(np.abs(x.var(axis=0) - var) < 3 * se_var)

    def test_sd_reading(self):
        x = draw_covariates(SimDesign(mixture_scale="sd"), 100_000, rep_generator(1, 0))
        assert x.var() == pytest.approx(0.2 + 0.8 * 4.0625 - 0.04, rel=0.03)

    def test_noiseless_uncensored(self):
        design = SimDesign(noise=False, target_p=0.0)
        s = generate_dataset(design, 0, calibrate_censoring_rate(design))
        assert np.all(s.delta == 1)
        assert_allclose(s.z, s.x @ np.array(design.theta0), rtol=0, atol=1e-12)


class TestCalibration:
    def test_zero(self):
        assert calibrate_censoring_rate(SimDesign(target_p=0.0)) == 0.0

    @pytest.mark.parametrize("p", [0.25, 0.4])
    def test_achieved_fraction(self, p):
        design = SimDesign(n=10_000, target_p=p)
        lam = calibrate_censoring_rate(design)
        rng = rep_generator(design.seed, sim.CALIBRATION_KEY)
        y = sim.draw_responses(design, draw_covariates(design, 100_000, rng), rng)
        assert sim.censoring_fraction(y, lam) == pytest.approx(p, abs=0.005)
        s = generate_dataset(design, 0, lam)
        assert 1 - s.delta.mean() == pytest.approx(p, abs=0.02)

    def test_unreachable(self):
        from censindex.exceptions import CalibrationError

        with pytest.raises(CalibrationError):
            calibrate_censoring_rate(SimDesign(target_p=0.89))

    def test_reps_independent_streams(self):
        design = SimDesign(n=50)
        a = generate_dataset(design, 3, 0.1)
        b = generate_dataset(design, 3, 0.1)
        c = generate_dataset(design, 4, 0.1)
        assert np.array_equal(a.z, b.z) and not np.array_equal(a.z, c.z)


class TestSummaries:
    def test_mse_identity(self, rng):
        est = np.column_stack((np.ones(30), rng.normal(size=(30, 3))))
        s = summarize(est, (1.0, 0.5, 1.4, 0.2))
        assert s.mse == pytest.approx(s.bias @ s.bias + np.trace(s.covariance), abs=1e-12)

    def test_single_rep(self):
        s = summarize([[1.0, 0.7, 1.0, 0.0]], (1.0, 0.5, 1.4, 0.2))
        assert np.all(s.covariance == 0)
        assert s.mse == pytest.approx(s.bias @ s.bias)


@pytest.fixture(scope="module")
def small_report():
    design = SimDesign(n=60, target_p=0.25, reps=3, seed=11)
    cfg = FitConfig(h_grid="paper", restarts=1, max_alternations=2)
    return design, cfg, monte_carlo_report(design, "both", cfg)


class TestHarness:
    def test_report_contents(self, small_report):
        design, _, rep = small_report
        assert set(rep.summaries) == {"adaptive_tau", "fixed_tau0"}
        for s in rep.summaries.values():
            assert s.mse == pytest.approx(s.bias @ s.bias + np.trace(s.covariance), abs=1e-8)
        assert [r["rep"] for r in rep.records] == [0, 1, 2]
        assert all(r["delta_min_eig"] >= -1e-10 for r in rep.records)
        assert 0 < rep.mean_N <= design.n

    def test_order_independent(self, small_report):
        design, cfg, rep = small_report
        lam = calibrate_censoring_rate(design)
        rev = [sim.run_replication(design, r, lam, "both", cfg) for r in (2, 1, 0)]
        assert sorted(rev, key=lambda r: r["rep"]) == rep.records

    def test_single_rep_mode(self):
        design = SimDesign(n=60, target_p=0.25, reps=1, seed=11)
        rep = monte_carlo_report(design, "fixed_tau0", FitConfig(h_grid="paper", restarts=0))
        s = rep.summaries["fixed_tau0"]
        assert np.all(s.covariance == 0)

    def test_failures_recorded(self, monkeypatch):
        from censindex.exceptions import FitError

        real = sim.run_replication

        def flaky(design, rep, lam, mode, config):
            if rep == 1:
                raise FitError("boom", stage="branch")
            return real(design, rep, lam, mode, config)

        monkeypatch.setattr(sim, "run_replication", flaky)
        design = SimDesign(n=60, target_p=0.25, reps=5, seed=11)
        rep = monte_carlo_report(design, "fixed_tau0", FitConfig(h_grid="paper", restarts=0))
        assert [f["rep"] for f in rep.failures] == [1]
        assert "boom" in rep.failures[0]["failed"]
        assert rep.summaries["fixed_tau0"].n_ok == 4
        design = SimDesign(n=60, target_p=0.25, reps=2, seed=11)
        with pytest.raises(HarnessError):
            monte_carlo_report(design, "fixed_tau0", FitConfig(h_grid="paper", restarts=0))

    def test_bad_mode(self):
        with pytest.raises(InvalidInputError):
            monte_carlo_report(SimDesign(reps=1), "adaptive")
