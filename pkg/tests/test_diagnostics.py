import numpy as np
import pytest

from fixnet.diagnostics import (InsufficientDataError,
                                RunTrace, consensus_error,
                                dibkm_rate_condition, dikm_rate_condition,
                                fit_rate, monte_carlo_mean, read_plot_series,
                                read_summary, read_trace, running_min_residual,
                                sqrt_k_boundedness, window_contraction,
                                write_plot_series, write_summary, write_trace)
from fixnet.engine import RelaxationSchedule
from fixnet.graph import MixingAnalysis, stationary_weights
from fixnet.operators import RegularityEstimate
from fixnet.scenarios import make_preset
from fixnet.suite import _run


def synthetic_trace(residuals, **kwargs):
    r = np.asarray(residuals, dtype=float)[:, None]
    R = r.shape[0]
    fields = dict(engine="dikm", block_sizes=(1,), block_probs=None,
                  ks=np.arange(R), residuals=r, consensus=np.zeros((R, 1)),
                  distances=None, d_sq=None, wdist_sq=None,
                  err_norms=np.zeros((R, 1)), stop_reason="budget",
                  fingerprint="", sup_coord=1.0)
    fields.update(kwargs)
    return RunTrace(**fields)


def fake_mixing(xi, varpi, pi_floor):
    return MixingAnalysis(n_agents=1, k_max=0, horizon=8,
                          pi=np.ones((2, 1)), varpi=varpi, xi=xi,
                          fit_residual=0.0, degenerate_fit=False,
                          pi_floor=pi_floor, theory_floor=0.0,
                          recursion_defect=0.0)


def fake_estimate(kappa, kappa_set, nu=1.0):
    return RegularityEstimate(kappas=(kappa,), kappa_set=kappa_set,
                              kappa_max=kappa, nu=nu, radius=1.0,
                              sample_count=100, rng_seed=0)


class TestRunningMin:
    def test_monotone_series_unchanged(self):
        t = synthetic_trace([5.0, 4.0, 3.0, 2.0])
        assert np.array_equal(running_min_residual(t, 0), [5, 4, 3, 2])

    def test_prefix_minimum(self):
        t = synthetic_trace([3.0, 1.0, 2.0, 0.5])
        assert np.array_equal(running_min_residual(t, 0), [3.0, 1.0, 1.0, 0.5])

    def test_nonincreasing_and_prefix_invariant(self):
        rng = np.random.default_rng(2)
        vals = rng.random(200)
        t = synthetic_trace(vals)
        m = running_min_residual(t, 0)
        assert np.all(np.diff(m) <= 0)
        # permuting later entries cannot change the prefix minimum
        j = 50
        shuffled = vals.copy()
        rng.shuffle(shuffled[j:])
        t2 = synthetic_trace(shuffled)
        assert np.array_equal(running_min_residual(t2, 0)[:j],
                              m[:j])


class TestFitRate:
    def test_recovers_half_exponent(self):
        k = np.arange(1, 402, dtype=float)
        series = np.concatenate([[1.0], k ** -0.5])
        cert = fit_rate(series)
        assert cert.exponent == pytest.approx(0.5, abs=1e-6)

    def test_recovers_constant_and_exponent(self):
        k = np.arange(1, 402, dtype=float)
        series = np.concatenate([[5.0], 5.0 * k ** -1.2])
        cert = fit_rate(series)
        assert cert.exponent == pytest.approx(1.2, abs=1e-6)
        assert np.log(cert.constant) == pytest.approx(np.log(5.0), abs=1e-6)

    def test_recovery_grid(self):
        k = np.arange(1, 502, dtype=float)
        for C in (1e-3, 1.0, 1e3):
            for e in (0.1, 1.0, 3.0):
                series = np.concatenate([[C], C * k ** -e])
                cert = fit_rate(series)
                assert cert.exponent == pytest.approx(e, abs=1e-6)
                assert np.log(cert.constant) == pytest.approx(np.log(C), abs=1e-6)

    def test_target_pass_logic(self):
        k = np.arange(1, 402, dtype=float)
        series = np.concatenate([[1.0], k ** -1.0])
        assert fit_rate(series, target=1.05).passed       # within 0.1 slack
        assert not fit_rate(series, target=1.2).passed

    def test_insufficient_points(self):
        with pytest.raises(InsufficientDataError):
            fit_rate([1.0, 0.5, 0.25])
        # floor exclusion can also starve the fit
        series = np.full(100, 1e-16)
        with pytest.raises(InsufficientDataError):
            fit_rate(series)


class TestStepSizeConditions:
    def test_unblocked_condition_frozen_example(self):
        # kappa = kappa_set = 1, one agent, varpi = 1, xi = 1/2, floor 1,
        # relaxation floor 1/2: gamma2 = 54 and the cap bound is
        # (1/2) sqrt(1/108) = 0.04811252243246881
        mix = fake_mixing(xi=0.5, varpi=1.0, pi_floor=1.0)
        est = fake_estimate(1.0, 1.0)
        sched = RelaxationSchedule(floor=0.5, values=(0.5,))
        rep = dikm_rate_condition(est, mix, sched, n_agents=1)
        assert rep.terms["gamma2"] == pytest.approx(54.0, abs=1e-12)
        assert rep.bound == pytest.approx(0.04811252243246881, abs=1e-12)
        assert not rep.satisfied   # cap 0.5 exceeds the bound
        assert rep.margin == pytest.approx(rep.bound - 0.5, abs=1e-12)

    def test_unblocked_condition_instant_mixing_limit(self):
        mix = fake_mixing(xi=1e-12, varpi=1.0, pi_floor=1.0)
        est = fake_estimate(1.0, 1.0)
        sched = RelaxationSchedule(floor=0.5, values=(0.5,))
        rep = dikm_rate_condition(est, mix, sched, n_agents=1)
        assert rep.bound == pytest.approx(0.5)   # 1 - alpha dominates

    def test_unblocked_condition_rejects_bad_constants(self):
        mix = fake_mixing(xi=0.5, varpi=1.0, pi_floor=1.0)
        sched = RelaxationSchedule(floor=0.5, values=(0.5,))
        with pytest.raises(ValueError):
            dikm_rate_condition(fake_estimate(0.0, 1.0), mix, sched, 1)

    def test_block_condition_frozen_example(self):
        # p0 = 1, one agent, varpi = 1, xi = 1/2, floor 1, nu = 1:
        # bound term is 0.25 / sqrt(18) = 0.05892556509887896
        mix = fake_mixing(xi=0.5, varpi=1.0, pi_floor=1.0)
        sched = RelaxationSchedule(floor=0.05, values=(0.05,))
        rep = dibkm_rate_condition(1.0, mix, sched, n_agents=1, p0=1.0)
        assert rep.bound == pytest.approx(0.05892556509887896, abs=1e-12)
        assert "single-block" in rep.note

    def test_block_condition_limits_and_validation(self):
        mix = fake_mixing(xi=0.5, varpi=1.0, pi_floor=1.0)
        sched = RelaxationSchedule(floor=0.05, values=(0.05,))
        big = dibkm_rate_condition(1e9, mix, sched, 1, 1.0)
        assert big.bound < 1e-9
        with pytest.raises(ValueError):
            dibkm_rate_condition(0.0, mix, sched, 1, 1.0)
        with pytest.raises(ValueError):
            dibkm_rate_condition(1.0, mix, sched, 1, 0.0)


class TestConsensusError:
    def test_equal_agents_zero(self):
        X = np.array([[1.0, 2.0], [1.0, 2.0]])
        assert np.allclose(consensus_error(X, [0.5, 0.5]), 0.0)

    def test_symmetric_weights(self):
        X = np.array([[0.0], [2.0]])
        assert np.allclose(consensus_error(X, [0.5, 0.5]), [1.0, 1.0])

    def test_asymmetric_weights(self):
        X = np.array([[0.0], [3.0]])
        assert np.allclose(consensus_error(X, [2.0 / 3.0, 1.0 / 3.0]), [1.0, 2.0])

    def test_index_mismatch(self):
        with pytest.raises(ValueError):
            consensus_error(np.zeros((2, 1)), [1.0])


class TestSqrtKCertificate:
    def test_decaying_residual_passes(self):
        k = np.arange(0, 20001, dtype=float)
        t = synthetic_trace(1.0 / (k + 1.0))
        cert = sqrt_k_boundedness(t, 0)
        assert cert.passed

    def test_flat_residual_fails(self):
        t = synthetic_trace(np.ones(20001))
        cert = sqrt_k_boundedness(t, 0)
        assert not cert.passed

    def test_short_trace_rejected(self):
        t = synthetic_trace(np.ones(50))
        with pytest.raises(ValueError):
            sqrt_k_boundedness(t, 0)


class TestWindowContraction:
    def test_monotone_decreasing_is_contractive(self):
        d = 1.0 * 0.9 ** np.arange(200)
        assert window_contraction(d) <= 0.0

    def test_growth_is_detected(self):
        d = 1.0 * 1.05 ** np.arange(100)
        assert window_contraction(d) > 0.0


class TestRecordedAggregates:
    def test_d_sq_matches_recomputation(self):
        sc = make_preset("feasibility-2halfspace", seed=21).with_overrides(
            init_spec={"kind": "uniform-box", "low": 3.0, "high": 8.0})
        trace = _run(sc, "dikm", 910, max_iters=400, tol=0.0)
        pi = stationary_weights(sc.graph, 400)
        recomputed = (pi[:trace.n_records] * trace.distances ** 2).sum(axis=1)
        assert np.abs(recomputed - trace.d_sq).max() <= 1e-12


class TestFileFormats:
    def _trace(self):
        sc = make_preset("feasibility-2halfspace", seed=22).with_overrides(
            layout=__import__("fixnet.hilbert", fromlist=["BlockLayout"]).BlockLayout.scalar_blocks(2),
            block_probs=(0.5, 1.0),
            error_spec={"kind": "geometric", "scale": 0.1, "ratio": 0.9})
        return _run(sc, "dibkm", 911, max_iters=50, tol=0.0)

    def test_trace_round_trip(self, tmp_path):
        trace = self._trace()
        path = tmp_path / "trace.tsv"
        write_trace(trace, path)
        back = read_trace(path)
        assert back.engine == trace.engine
        assert back.stop_reason == trace.stop_reason
        assert back.block_sizes == trace.block_sizes
        assert back.block_probs == trace.block_probs
        for a, b in ((trace.residuals, back.residuals),
                     (trace.consensus, back.consensus),
                     (trace.distances, back.distances),
                     (trace.d_sq, back.d_sq),
                     (trace.wdist_sq, back.wdist_sq),
                     (trace.err_norms, back.err_norms)):
            assert np.array_equal(a, b)

    def test_trace_rewrite_is_byte_identical(self, tmp_path):
        trace = self._trace()
        p1, p2 = tmp_path / "a.tsv", tmp_path / "b.tsv"
        write_trace(trace, p1)
        write_trace(read_trace(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_column_order_prefix(self, tmp_path):
        trace = self._trace()
        path = tmp_path / "trace.tsv"
        write_trace(trace, path)
        header = path.read_text().splitlines()[1].split("\t")
        assert header[0] == "k"
        n = trace.n_agents
        assert header[1:1 + n] == [f"res_{i}" for i in range(n)]
        assert header[1 + n:1 + 2 * n] == [f"cons_{i}" for i in range(n)]
        assert "d_sq" in header and "max_res" in header
        assert header.index("d_sq") < header.index("max_res")
        # optional weighted distances trail the mandated columns
        assert header.index("max_res") < header.index("wdist_0")

    def test_summary_round_trip(self, tmp_path):
        path = tmp_path / "summary.json"
        write_summary({"alpha": 0.25, "reps": [1, 2, 3]}, path)
        back = read_summary(path)
        assert back["alpha"] == 0.25
        assert back["reps"] == [1, 2, 3]

    def test_plot_series_round_trip(self, tmp_path):
        path = tmp_path / "plot.tsv"
        ks = np.arange(5)
        vals = np.array([1.0, 0.5, 0.25, 0.0, 1e-20])
        write_plot_series(path, "demo", ks, vals)
        name, k2, v2 = read_plot_series(path)
        assert name == "demo"
        assert np.array_equal(k2, ks)
        assert np.array_equal(v2, vals)


def test_monte_carlo_mean_and_stderr():
    mean, se = monte_carlo_mean([np.array([1.0, 2.0]), np.array([3.0, 2.0])])
    assert np.allclose(mean, [2.0, 2.0])
    assert se[0] > 0 and se[1] == 0.0
