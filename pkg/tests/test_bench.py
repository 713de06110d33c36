import numpy as np
import pytest

from bsglm.bench import bench_sampling, convergence_report, loglog_slope


class TestBenchSampling:
    def test_degenerate_small_size(self):
        # tiny run just exercises the harness end to end
        rows = bench_sampling(sizes=(1000,), k=2, deltas=(1e-6,), n_draws=2, t=40, seed=0)
        assert {r["method"] for r in rows} == {"cholesky", "pcg"}
        for r in rows:
            assert r["status"] == "ok"
            assert r["mean_seconds"] > 0

    def test_delta_ordering_iterations(self):
        rows = bench_sampling(
            sizes=(1000,), k=2, deltas=(1e-6, 1e-8), n_draws=2, t=40, seed=0,
            include_cholesky=False,
        )
        by_delta = {r["delta"]: r for r in rows}
        assert by_delta[1e-6]["mean_pcg_iters"] <= by_delta[1e-8]["mean_pcg_iters"]

    def test_loglog_slope_needs_two_points(self):
        rows = bench_sampling(sizes=(1000,), k=2, deltas=(1e-8,), n_draws=1, t=40, seed=0,
                              include_cholesky=False)
        with pytest.raises(ValueError):
            loglog_slope(rows, "pcg", delta=1e-8)


class TestConvergenceReport:
    def test_constant_trace_converges_immediately(self):
        rep = convergence_report(np.full((10, 1), 3.0))
        assert rep.first_within[0] == 1

    def test_hand_example(self):
        trace = np.array([2.0, 1.1, 1.005, 1.0])
        rep = convergence_report(trace, mode="vb", tol=0.01)
        np.testing.assert_allclose(rep.curves.ravel(), [1.0, 0.1, 0.005, 0.0])
        assert rep.first_within[0] == 3

    def test_monotone_geometric_strictly_decreasing(self):
        trace = 1.0 + 0.5 ** np.arange(1, 12)
        rep = convergence_report(trace, mode="vb", final=np.array([1.0]))
        diffs = np.diff(rep.curves.ravel())
        assert np.all(diffs < 0)

    def test_mcmc_mode_uses_cumulative_mean(self):
        trace = np.array([2.0, 0.0, 2.0, 0.0, 2.0, 0.0])
        rep = convergence_report(trace, mode="mcmc")
        cm = np.cumsum(trace) / np.arange(1, 7)
        np.testing.assert_allclose(rep.curves.ravel(), np.abs(cm / cm[-1] - 1.0))

    def test_zero_final_errors(self):
        with pytest.raises(ValueError, match="zero"):
            convergence_report(np.array([1.0, 0.5, 0.0]))

    def test_never_within_reports_zero(self):
        trace = np.array([10.0, 9.0, 8.0])
        rep = convergence_report(trace, mode="vb", final=np.array([1.0]), tol=0.01)
        assert rep.first_within[0] == 0
