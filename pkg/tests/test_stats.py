import json
import math

import numpy as np
import pytest
from scipy.stats import chi2 as scipy_chi2
from scipy.stats import kstest, ks_2samp

from lgmm.errors import DomainError, InsufficientDataError
from lgmm.stats import (EmpiricalSample, chi2_uniformity, conditional_slice,
                        kolmogorov_sf, ks_test, ks_two_sample, pitman_transform,
                        rescale_to_dh_support, simulate_pitman_endpoints,
                        verify_conditional_dh, verify_pitman_dh)


class TestKsTest:
    def test_exact_quantiles(self):
        n = 1000
        sample = EmpiricalSample((np.arange(1, n + 1) - 0.5) / n)
        rep = ks_test(sample, lambda v: v)
        assert rep.statistic == pytest.approx(0.5 / n, abs=1e-15)

    def test_point_mass_at_median(self):
        sample = EmpiricalSample(np.full(1000, 0.5))
        rep = ks_test(sample, lambda v: v)
        assert rep.statistic == pytest.approx(0.5, abs=1e-3)

    def test_matches_scipy(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(size=2000)
        rep = ks_test(EmpiricalSample(x), lambda v: v)
        ref = kstest(x, "uniform")
        assert rep.statistic == pytest.approx(ref.statistic, abs=1e-12)
        assert rep.p_value == pytest.approx(ref.pvalue, abs=5e-3)

    def test_calibration(self):
        # under the null the test passes at threshold 0.01 in >= 98/100 seeds
        passes = 0
        for seed in range(100):
            x = np.random.default_rng(seed).uniform(size=100_000)
            rep = ks_test(EmpiricalSample(x), lambda v: v)
            passes += rep.p_value > 0.01
        assert passes >= 98

    def test_too_small(self):
        with pytest.raises(InsufficientDataError):
            ks_test(EmpiricalSample(np.arange(5.0)), lambda v: v)


class TestKolmogorovSf:
    def test_reference_values(self):
        # classical table: Q(1.36) ~ 0.049, Q(1.628) ~ 0.010
        assert kolmogorov_sf(1.36) == pytest.approx(0.0491, abs=5e-4)
        assert kolmogorov_sf(1.628) == pytest.approx(0.0100, abs=2e-4)
        assert kolmogorov_sf(0.0) == 1.0
        assert kolmogorov_sf(10.0) == pytest.approx(0.0, abs=1e-12)


class TestKsTwoSample:
    def test_matches_scipy_asymptotic(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=3000), rng.normal(size=2000)
        rep = ks_two_sample(EmpiricalSample(a), EmpiricalSample(b))
        ref = ks_2samp(a, b, method="asymp")
        assert rep.statistic == pytest.approx(ref.statistic, abs=1e-12)
        assert rep.p_value == pytest.approx(ref.pvalue, abs=2e-2)

    def test_detects_shift(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=5000)
        b = rng.normal(loc=0.2, size=5000)
        rep = ks_two_sample(EmpiricalSample(a), EmpiricalSample(b))
        assert not rep.passed


class TestChi2Uniformity:
    def test_perfectly_equal_counts(self):
        vals = np.repeat(np.linspace(0.05, 0.95, 10), 50)
        rep = chi2_uniformity(EmpiricalSample(vals), (0, 1), n_bins=10)
        assert rep.statistic == 0.0
        assert rep.p_value == 1.0

    def test_all_in_one_bin(self):
        n, k = 1000, 10
        vals = np.full(n, 0.05)
        rep = chi2_uniformity(EmpiricalSample(vals), (0, 1), n_bins=k)
        assert rep.statistic == pytest.approx((k - 1) * n, rel=1e-12)
        assert rep.p_value < 1e-12

    def test_underflow_rejected(self):
        with pytest.raises(InsufficientDataError):
            chi2_uniformity(EmpiricalSample(np.linspace(0, 1, 30)), (0, 1), n_bins=10)

    def test_calibration(self):
        passes = 0
        for seed in range(100):
            x = np.random.default_rng(1000 + seed).uniform(size=100_000)
            rep = chi2_uniformity(EmpiricalSample(x), (0, 1), n_bins=50)
            passes += rep.p_value > 0.01
        assert passes >= 98

    def test_statistic_against_scipy_tail(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(size=5000)
        rep = chi2_uniformity(EmpiricalSample(x), (0, 1), n_bins=20)
        assert rep.p_value == pytest.approx(float(scipy_chi2.sf(rep.statistic, 19)), abs=1e-12)


class TestConditionalSlice:
    def test_graph_slice(self):
        u = np.linspace(0, 1, 101)
        pairs = EmpiricalSample(np.column_stack([u, u]))
        s = conditional_slice(pairs, 0.5, 0.1)
        assert np.all(np.abs(s.values[:, 0] - 0.5) <= 0.1)
        assert s.provenance["retained_fraction"] == pytest.approx(21 / 101)

    def test_wide_slice_keeps_everything(self):
        pairs = EmpiricalSample(np.column_stack([np.arange(10.0), np.arange(10.0)]))
        s = conditional_slice(pairs, 5.0, 100.0)
        assert s.n == 10

    def test_empty_slice(self):
        pairs = EmpiricalSample(np.column_stack([np.zeros(5), np.zeros(5)]))
        with pytest.raises(InsufficientDataError):
            conditional_slice(pairs, 10.0, 0.1)

    def test_slice_support_respects_constraint(self):
        from lgmm.sde import integrate_ensemble

        ens = integrate_ensemble("s3-xy", t_end=0.5, n_steps=500, n_paths=30_000,
                                 master_seed=61)
        pairs = EmpiricalSample(ens.endpoints)
        u0 = math.cos(math.pi / 3)
        s = conditional_slice(pairs, u0, 0.02)
        limit = math.sin(math.pi / 3) + 0.02 / math.sin(math.pi / 3)
        assert np.max(np.abs(s.values[:, 1])) <= limit


class TestRescaling:
    def test_affine_invariance_of_chi2(self):
        # rescaling to canonical support makes the statistic identical
        rng = np.random.default_rng(7)
        w = np.full(5000, 1.5)
        half = math.sqrt(1.5 ** 2 - 1)
        c = rng.uniform(1.5 - half, 1.5 + half, size=5000)
        pairs = np.column_stack([w, c])
        u = rescale_to_dh_support("h3", pairs)
        rep1 = chi2_uniformity(EmpiricalSample(u), (0, 1), n_bins=10)
        rep2 = chi2_uniformity(EmpiricalSample(2.0 * u - 1.0), (-1, 1), n_bins=10)
        assert rep1.statistic == pytest.approx(rep2.statistic, rel=1e-12)

    def test_exact_null(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(-0.9, 0.9, size=20_000)
        y = rng.uniform(-1, 1, size=20_000) * np.sqrt(1 - x * x)
        u = rescale_to_dh_support("s3", np.column_stack([x, y]))
        rep = chi2_uniformity(EmpiricalSample(u), (-1, 1), n_bins=20)
        assert rep.p_value > 0.01


class TestVerifyConditionalDh:
    def test_needs_500_points(self):
        rng = np.random.default_rng(9)
        pairs = EmpiricalSample(rng.uniform(1, 2, size=(400, 2)))
        with pytest.raises(InsufficientDataError):
            verify_conditional_dh(pairs, "r3", 1.5, half_width=10.0)

    def test_r3_wiener(self):
        from lgmm.group_brownian import simulate_group_ensemble

        ens = simulate_group_ensemble("r3", "direct", 1.0, 100, 100_000, master_seed=67)
        pairs = EmpiricalSample(ens.project("rz"))
        rep = verify_conditional_dh(pairs, "r3", 1.5, half_width=0.05)
        assert rep.passed


class TestPitman:
    def test_examples(self):
        assert np.array_equal(pitman_transform([0, 1, 0.5]), [0, 1, 1.5])
        assert np.array_equal(pitman_transform([0, -1, -2]), [0, 1, 2])
        inc = np.array([0, 0.3, 0.9, 1.4])
        assert np.array_equal(pitman_transform(inc), inc)

    def test_requires_zero_start(self):
        with pytest.raises(DomainError):
            pitman_transform([1.0, 2.0])

    def test_dominates_absolute_value(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            path = np.concatenate([[0.0], rng.normal(size=200).cumsum()])
            pb = pitman_transform(path)
            assert np.all(pb >= np.abs(path))
            k = int(np.argmax(np.maximum.accumulate(path)))
            assert pb[k] == pytest.approx(abs(path[k]))

    def test_endpoint_simulation_dominance(self):
        b, pb = simulate_pitman_endpoints(10_000, 1.0, 100, master_seed=71)
        assert np.all(pb >= np.abs(b))

    def test_verify_pitman(self):
        rep = verify_pitman_dh(n_paths=100_000, t=1.0, dt=2e-3, master_seed=73)
        assert rep.passed
        assert rep.params["pb_dominates_abs_b"]
        # symmetric conditional law: mean of B in the slab is 0 within noise
        assert abs(rep.params["slice_mean_b"]) < 0.1


class TestReportSerialization:
    def test_json_roundtrip_fields(self):
        rng = np.random.default_rng(11)
        rep = chi2_uniformity(EmpiricalSample(rng.uniform(size=1000)), (0, 1), n_bins=10)
        payload = json.loads(rep.to_json())
        assert payload["name"] == "chi2-uniform"
        assert payload["passed"] == rep.passed
        assert payload["sample_sizes"] == [1000]

    def test_pass_iff_threshold(self):
        rng = np.random.default_rng(12)
        rep = chi2_uniformity(EmpiricalSample(rng.uniform(size=1000)), (0, 1), n_bins=10)
        assert rep.passed == (rep.p_value > rep.threshold)

    def test_reproducible_from_recorded_seed(self):
        rep1 = verify_pitman_dh(n_paths=20_000, t=0.5, dt=5e-3, master_seed=77,
                                half_width=0.1)
        rep2 = verify_pitman_dh(n_paths=20_000, t=0.5, dt=5e-3, master_seed=77,
                                half_width=0.1)
        assert rep1.statistic == rep2.statistic
        assert rep1.p_value == rep2.p_value
