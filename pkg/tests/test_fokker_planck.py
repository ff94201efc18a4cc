import math
from dataclasses import replace

import numpy as np
import pytest

from lgmm.errors import ConfigurationError, ResolutionError
from lgmm.fokker_planck import (FP_EQUATIONS, DensityGrid, ansatz_residual,
                                divergence_apply_point, expanded_apply_point,
                                get_equation, grid_h3_w, grid_h3_wc, grid_s3_disc,
                                grid_s3_x, interior_mask, marginal, mollified_delta,
                                solve_fp, stability_bound_2d, uniform_density)
from lgmm.verify import smooth_test_marginal, stationary_density_s3


def gaussian_derivs_1d(x, mu=0.1, s=0.5):
    f = math.exp(-0.5 * ((x - mu) / s) ** 2)
    fx = -(x - mu) / s ** 2 * f
    fxx = (((x - mu) / s ** 2) ** 2 - 1 / s ** 2) * f
    return {"f": f, "x": fx, "xx": fxx}


def gaussian_derivs_2d(x, y, mux=0.1, muy=-0.2, s=0.6):
    g = math.exp(-0.5 * (((x - mux) ** 2 + (y - muy) ** 2) / s ** 2))
    gx = -(x - mux) / s ** 2 * g
    gy = -(y - muy) / s ** 2 * g
    return {
        "f": g, "x": gx, "y": gy,
        "xx": (((x - mux) / s ** 2) ** 2 - 1 / s ** 2) * g,
        "yy": (((y - muy) / s ** 2) ** 2 - 1 / s ** 2) * g,
        "xy": (x - mux) * (y - muy) / s ** 4 * g,
    }


class TestOperatorConsistency:
    """The expanded (printed) operators equal the divergence form built from
    the drift and covariation of the matching SDE system."""

    def test_1d_equations(self):
        rng = np.random.default_rng(21)
        for eq_id, lo, hi in [("fp1-s3", -0.95, 0.95), ("fp1-h3", 1.05, 5.0)]:
            eq = get_equation(eq_id)
            for _ in range(100):
                x = float(rng.uniform(lo, hi))
                d = gaussian_derivs_1d(x)
                assert expanded_apply_point(eq, d, x) == pytest.approx(
                    divergence_apply_point(eq, d, x), abs=1e-8)

    def test_2d_equations(self):
        rng = np.random.default_rng(22)
        eq = get_equation("fp2-s3")
        for _ in range(100):
            while True:
                x, y = rng.uniform(-1, 1, size=2)
                if x * x + y * y < 0.95:
                    break
            d = gaussian_derivs_2d(x, y)
            assert expanded_apply_point(eq, d, x, y) == pytest.approx(
                divergence_apply_point(eq, d, x, y), abs=1e-8)
        eq = get_equation("fp2-h3")
        for _ in range(100):
            w = float(rng.uniform(1.1, 4.0))
            half = math.sqrt(w * w - 1)
            c = float(rng.uniform(w - 0.9 * half, w + 0.9 * half))
            d = gaussian_derivs_2d(w, c)
            assert expanded_apply_point(eq, d, w, c) == pytest.approx(
                divergence_apply_point(eq, d, w, c), abs=1e-8)


class TestMollifiedDelta:
    def test_s3_spike_location(self):
        g = grid_s3_disc(201)
        p0 = mollified_delta("s3", 0.1, g)
        marg_x = p0.values.sum(axis=1)
        spike = g.axes[0][np.argmax(marg_x)]
        # nearest resolvable node below sqrt(1 - eps^2) = sqrt(0.99)
        assert spike == pytest.approx(0.99)
        assert np.count_nonzero(marg_x) == 1

    def test_s3_strip_uniform_on_fiber(self):
        g = grid_s3_disc(201)
        p0 = mollified_delta("s3", 0.1, g)
        i0 = p0.meta["spike_node"]
        vals = p0.values[i0][p0.values[i0] > 0]
        assert np.allclose(vals, vals[0])
        eps_eff = p0.meta["epsilon_effective"]
        assert eps_eff >= 0.1
        ys = g.axes[1][p0.values[i0] > 0]
        assert np.max(np.abs(ys)) <= eps_eff + 1e-12

    def test_h3_strip(self):
        g = grid_h3_wc(201, lambda_max=3.0)
        eps = 5 * g.spacings[1]
        p0 = mollified_delta("h3", eps, g)
        w0 = p0.meta["spike_value"]
        assert w0 >= math.sqrt(1 + eps * eps)
        i0 = p0.meta["spike_node"]
        cs = g.axes[1][p0.values[i0] > 0]
        half = math.sqrt(w0 * w0 - 1)
        assert cs.min() >= w0 - half - 1e-9
        assert cs.max() <= w0 + half + 1e-9

    def test_unit_mass(self):
        g = grid_s3_disc(101)
        p0 = mollified_delta("s3", 0.1, g)
        assert p0.mass() == pytest.approx(1.0, abs=1e-14)

    def test_unresolvable_epsilon(self):
        g = grid_s3_disc(101)
        with pytest.raises(ResolutionError):
            mollified_delta("s3", 0.5 * g.spacings[0], g)

    def test_1d_spike(self):
        g = grid_h3_w(401, lambda_max=3.0)
        p0 = mollified_delta("h3", 0.2, g)
        assert np.count_nonzero(p0.values) == 1
        assert p0.meta["spike_value"] >= math.sqrt(1.04)
        assert p0.mass() == pytest.approx(1.0, abs=1e-14)


class TestSolve1d:
    def test_zero_time_identity(self):
        g = uniform_density(grid_s3_x(101))
        sol = solve_fp("fp1-s3", g, t_end=0.0)
        assert np.array_equal(sol.values, g.values)

    def test_stationary_semicircle(self):
        g = uniform_density(grid_s3_x(401))
        sol = solve_fp("fp1-s3", g, t_end=5.0, dt=2.5e-3)
        target = stationary_density_s3(sol.axes[0])
        l1 = np.sum(np.abs(sol.values - target) * sol.quadrature_weights())
        assert l1 < 0.02
        assert abs(sol.meta["mass_drift"]) < 1e-10

    def test_semicircle_is_near_discrete_fixed_point(self):
        # the discrete stationary state differs from the semicircle only by an
        # O(sqrt(h)) layer at the degenerate endpoints; L1 movement is tiny
        g = grid_s3_x(201)
        vals = stationary_density_s3(g.axes[0])
        p0 = replace(g, values=vals)
        p0 = replace(p0, values=vals / p0.mass())
        sol = solve_fp("fp1-s3", p0, t_end=0.5, dt=1e-3)
        l1 = np.sum(np.abs(sol.values - p0.values) * sol.quadrature_weights())
        assert l1 < 2e-3
        interior = slice(5, -5)
        assert np.max(np.abs(sol.values[interior] - p0.values[interior])) < 2e-3

    def test_h3_mean_growth(self):
        # E[w_t] grows like exp(3t/2); horizon short enough that the exact law
        # carries no mass beyond the lambda_max = 3 wall
        g = grid_h3_w(801, lambda_max=3.0)
        p0 = mollified_delta("h3", 0.1, g)
        w0 = p0.meta["spike_value"]
        sol = solve_fp("fp1-h3", p0, t_end=0.25, dt=5e-4)
        mean = np.sum(sol.axes[0] * sol.values * sol.quadrature_weights()) / \
            np.sum(sol.values * sol.quadrature_weights())
        assert sol.meta["leakage"] < 1e-6
        assert mean == pytest.approx(w0 * math.exp(0.375), rel=0.02)

    def test_h3_wall_absorbs_and_reports(self):
        g = grid_h3_w(201, lambda_max=1.0)
        p0 = mollified_delta("h3", 0.05, g)
        sol = solve_fp("fp1-h3", p0, t_end=1.0, dt=1e-3)
        assert sol.meta["leakage"] > 0.5  # most mass crosses lambda = 1 by t = 1
        assert sol.values[-1] == 0.0


class TestSolve2d:
    def test_mass_conservation_s3(self):
        g = grid_s3_disc(101)
        p0 = mollified_delta("s3", 5 * g.spacings[0], g)
        sol = solve_fp("fp2-s3", p0, t_end=1.0, neg_tol=1e-6)
        assert abs(sol.meta["mass_drift"]) < 1e-6
        assert sol.values.min() >= 0.0

    def test_stability_bound_enforced(self):
        g = grid_s3_disc(101)
        p0 = mollified_delta("s3", 5 * g.spacings[0], g)
        bound = stability_bound_2d(get_equation("fp2-s3"), g)
        with pytest.raises(ConfigurationError):
            solve_fp("fp2-s3", p0, t_end=0.01, dt=2 * bound)

    def test_grid_kind_mismatch(self):
        g = uniform_density(grid_s3_x(101))
        with pytest.raises(ConfigurationError):
            solve_fp("fp2-s3", g, t_end=0.1)

    def test_leak_guard_raises(self):
        from lgmm.errors import SchemeFailureError

        g = grid_h3_wc(101, lambda_max=1.0)  # wall far too close
        p0 = mollified_delta("h3", 5 * g.spacings[1], g)
        with pytest.raises(SchemeFailureError):
            solve_fp("fp2-h3", p0, t_end=0.5, leak_tol=1e-4)


class TestMarginal:
    def test_product_recovers_factor(self):
        g = grid_s3_disc(101)
        x = g.axes[0]
        margx = np.where(np.abs(x) < 0.6, np.cos(x * math.pi / 1.2) ** 2, 0.0)
        # conditional normalized against the discrete quadrature, so the
        # y-marginalization gives back the 1D factor exactly
        w = np.full(g.axes[1].size, g.spacings[1])
        w[0] = w[-1] = 0.5 * g.spacings[1]
        fiber_mass = (g.mask * w[None, :]).sum(axis=1)
        cond = np.where(g.mask, 1.0, 0.0) / np.maximum(fiber_mass, 1e-300)[:, None]
        p = replace(g, values=margx[:, None] * cond)
        m = marginal(p, axis=0)
        assert np.allclose(m.values, margx, atol=1e-10)

    def test_mass_preserved(self):
        g = grid_s3_disc(101)
        p0 = mollified_delta("s3", 5 * g.spacings[0], g)
        assert marginal(p0, axis=0).mass() == pytest.approx(p0.mass(), abs=1e-10)
        assert marginal(p0, axis=1).mass() == pytest.approx(p0.mass(), abs=1e-10)

    def test_symmetry(self):
        g = grid_s3_disc(101)
        p0 = mollified_delta("s3", 5 * g.spacings[0], g)
        my = marginal(p0, axis=1)
        assert np.allclose(my.values, my.values[::-1], atol=1e-12)

    def test_rejects_1d(self):
        with pytest.raises(ConfigurationError):
            marginal(uniform_density(grid_s3_x(11)))


class TestAnsatzResidual:
    def test_s3_second_order(self):
        res = [ansatz_residual("fp2-s3", smooth_test_marginal("fp2-s3", n))
               for n in (201, 401, 801)]
        slopes = [math.log2(res[i] / res[i + 1]) for i in range(2)]
        assert all(abs(s - 2.0) < 0.3 for s in slopes)

    def test_h3_second_order(self):
        res = [ansatz_residual("fp2-h3", smooth_test_marginal("fp2-h3", n))
               for n in (201, 401, 801)]
        slopes = [math.log2(res[i] / res[i + 1]) for i in range(2)]
        assert all(abs(s - 2.0) < 0.3 for s in slopes)

    def test_wrong_conditional_blows_up(self):
        res = [ansatz_residual("fp2-s3", smooth_test_marginal("fp2-s3", n),
                               conditional_width=0.5) for n in (201, 401)]
        assert res[0] > 1.0
        assert res[1] > res[0]  # bounded below, in fact growing, under refinement

    def test_1d_equation_rejected(self):
        with pytest.raises(ConfigurationError):
            ansatz_residual("fp1-s3", smooth_test_marginal("fp1-s3", 101))


class TestComparisonWithSde:
    def test_fp1_s3_matches_sde_histogram(self):
        # same mollified start: PDE density vs endpoint histogram at t = 0.5
        from lgmm.sde import integrate_ensemble

        g = grid_s3_x(401)
        p0 = mollified_delta("s3", 5 * g.spacings[0], g)
        x0 = p0.meta["spike_value"]
        sol = solve_fp("fp1-s3", p0, t_end=0.5, dt=1e-3)
        ens = integrate_ensemble("s3-x", x0=[x0], t_end=0.5, n_steps=500,
                                 n_paths=100_000, master_seed=83)
        counts, edges = np.histogram(ens.endpoints[:, 0], bins=200, range=(-1, 1))
        dens = counts / (100_000 * (edges[1] - edges[0]))
        centers = 0.5 * (edges[:-1] + edges[1:])
        pdf = np.interp(centers, sol.axes[0], sol.values)
        l1 = np.sum(np.abs(dens - pdf) * (edges[1] - edges[0]))
        assert l1 < 0.05
