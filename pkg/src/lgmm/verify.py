"""Named verification pipelines wiring simulators, solvers and tests together.

Each check reproduces one of the toolkit's probabilistic identities at desk
scale and returns a TestReport.  Default parameters match the acceptance
suite; all thresholds are calibration choices recorded in the report.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from . import fokker_planck as fp
from . import group_brownian as gb
from . import sde
from .errors import ConfigurationError
from .stats import (EmpiricalSample, TestReport, ks_two_sample, verify_conditional_dh,
                    verify_pitman_dh)


def _pairs_sample(values, **prov) -> EmpiricalSample:
    return EmpiricalSample(values, prov)


def check_radial_r3(n_paths=10_000, t=1.0, dt=1e-3, seed=0, threshold=0.01) -> TestReport:
    """r-projection of the flat Wiener process vs the radial Bessel SDE."""
    n = int(round(t / dt))
    ens = gb.simulate_group_ensemble("r3", "direct", t, n, n_paths, seed)
    bes = sde.integrate_ensemble("bessel3", t_end=t, n_steps=n, n_paths=n_paths,
                                 master_seed=seed + 1)
    rep = ks_two_sample(
        _pairs_sample(ens.project("r"), kind="r3-wiener-r", t=t, dt=dt, seed=seed),
        _pairs_sample(bes.endpoints[:, 0], kind="bessel3", t=t, dt=dt, seed=seed + 1),
        threshold=threshold, name="radial-r3")
    return rep


def check_radial_s3(n_paths=10_000, t=0.5, dt=1e-3, sde_dt=1e-4, seed=0,
                    threshold=0.01) -> TestReport:
    """Trace angle of the unitary-walk simulation vs the angular SDE."""
    ens = gb.simulate_group_ensemble("s3", "exp", t, int(round(t / dt)), n_paths, seed)
    ang = sde.integrate_ensemble("s3-theta", t_end=t, n_steps=int(round(t / sde_dt)),
                                 n_paths=n_paths, master_seed=seed + 1)
    return ks_two_sample(
        _pairs_sample(ens.project("theta"), kind="s3-exp-theta", t=t, dt=dt, seed=seed),
        _pairs_sample(ang.endpoints[:, 0], kind="s3-theta-sde", t=t, dt=sde_dt, seed=seed + 1),
        threshold=threshold, name="radial-s3")


def check_radial_h3(n_paths=10_000, t=0.5, dt=1e-3, sde_dt=1e-4, seed=0,
                    threshold=0.01) -> TestReport:
    """arccosh(w) of the half-space simulation vs the radial eigenvalue SDE."""
    ens = gb.simulate_group_ensemble("h3", "halfspace", t, int(round(t / dt)), n_paths, seed)
    lam = sde.integrate_ensemble("h3-lambda", t_end=t, n_steps=int(round(t / sde_dt)),
                                 n_paths=n_paths, master_seed=seed + 1)
    return ks_two_sample(
        _pairs_sample(ens.project("lambda"), kind="h3-halfspace-lambda", t=t, dt=dt, seed=seed),
        _pairs_sample(lam.endpoints[:, 0], kind="h3-lambda-sde", t=t, dt=sde_dt, seed=seed + 1),
        threshold=threshold, name="radial-h3")


def check_conditional_r3(n_paths=200_000, t=1.0, dt=5e-3, seed=0, u0=1.5,
                         half_width=0.02, n_bins=20, threshold=0.01) -> TestReport:
    ens = gb.simulate_group_ensemble("r3", "direct", t, int(round(t / dt)), n_paths, seed)
    pairs = _pairs_sample(ens.project("rz"), kind="r3-rz", t=t, dt=dt, seed=seed,
                          n_paths=n_paths)
    return verify_conditional_dh(pairs, "r3", u0, half_width, n_bins, threshold)


def check_conditional_s3(n_paths=200_000, t=0.5, dt=1e-3, seed=0, u0=None,
                         half_width=0.02, n_bins=20, threshold=0.01) -> TestReport:
    if u0 is None:
        u0 = math.cos(math.pi / 3.0)
    ens = gb.simulate_group_ensemble("s3", "exp", t, int(round(t / dt)), n_paths, seed)
    pairs = _pairs_sample(ens.project("a_xy"), kind="s3-a", t=t, dt=dt, seed=seed,
                          n_paths=n_paths)
    return verify_conditional_dh(pairs, "s3", u0, half_width, n_bins, threshold)


def check_conditional_h3(n_paths=200_000, t=0.5, dt=1e-3, seed=0, u0=None,
                         half_width=0.02, n_bins=20, threshold=0.01) -> TestReport:
    if u0 is None:
        u0 = math.cosh(0.8)
    ens = gb.simulate_group_ensemble("h3", "halfspace", t, int(round(t / dt)), n_paths, seed)
    pairs = _pairs_sample(ens.project("wc"), kind="h3-wc", t=t, dt=dt, seed=seed,
                          n_paths=n_paths)
    return verify_conditional_dh(pairs, "h3", u0, half_width, n_bins, threshold)


def check_scheme_agreement_s3(n_paths=10_000, t=0.5, dt=1e-3, seed=0,
                              threshold=0.01) -> TestReport:
    """x-marginal agreement of the Euler and unitary-walk S^3 schemes."""
    n = int(round(t / dt))
    ito = gb.simulate_group_ensemble("s3", "ito", t, n, n_paths, seed)
    exp = gb.simulate_group_ensemble("s3", "exp", t, n, n_paths, seed + 1)
    return ks_two_sample(
        _pairs_sample(ito.states[:, 0], kind="s3-ito-x", t=t, dt=dt, seed=seed),
        _pairs_sample(exp.states[:, 0], kind="s3-exp-x", t=t, dt=dt, seed=seed + 1),
        threshold=threshold, name="scheme-agreement-s3")


def check_ito_norm_s3(n_paths=200_000, t=0.5, dt=0.01, seed=0, tol=0.3) -> TestReport:
    """|E(norm^2) - 1| of the Euler scheme halves when dt halves."""
    deficits = []
    for k, step in enumerate((dt, dt / 2)):
        ens = gb.simulate_group_ensemble("s3", "ito", t, int(round(t / step)), n_paths, seed + k)
        deficits.append(abs(float(np.sum(ens.states ** 2, axis=1).mean()) - 1.0))
    ratio = deficits[0] / deficits[1]
    report = TestReport("ito-norm-s3", ratio, None, abs(ratio - 2.0), tol,
                        bool(abs(ratio - 2.0) < tol), (n_paths, n_paths),
                        {"deficits": deficits, "t": t, "dt": dt, "seed": seed})
    return report


def check_mean_decay_s3(n_paths=100_000, t=0.5, dt=1e-3, seed=0, n_sigma=3.0) -> TestReport:
    """Ensemble mean of x decays like exp(-3t/2) from the unit element."""
    ens = gb.simulate_group_ensemble("s3", "exp", t, int(round(t / dt)), n_paths, seed)
    x = ens.states[:, 0]
    target = math.exp(-1.5 * t)
    se = float(x.std(ddof=1)) / math.sqrt(n_paths)
    dev = abs(float(x.mean()) - target)
    return TestReport("mean-decay-s3", float(x.mean()), None, dev, n_sigma * se,
                      bool(dev < n_sigma * se),
                      (n_paths,), {"target": target, "stderr": se, "t": t, "dt": dt,
                                   "seed": seed})


def stationary_density_s3(x: np.ndarray) -> np.ndarray:
    """Equilibrium of the x-projection: the semicircle (2/pi) sqrt(1-x^2)."""
    return (2.0 / math.pi) * np.sqrt(np.maximum(1.0 - x * x, 0.0))


def check_stationary_s3(n_nodes=401, t=5.0, dt=2.5e-3, tol=0.02) -> TestReport:
    """fp1-s3 driven from uniform converges to the semicircle density in L1."""
    grid = fp.uniform_density(fp.grid_s3_x(n_nodes))
    sol = fp.solve_fp("fp1-s3", grid, t_end=t, dt=dt)
    target = stationary_density_s3(sol.axes[0])
    l1 = float(np.sum(np.abs(sol.values - target) * sol.quadrature_weights()))
    return TestReport("stationary-s3", l1, None, l1, tol, bool(l1 < tol), (n_nodes,),
                      {"t": t, "dt": dt, "mass_drift": sol.meta["mass_drift"]})


def check_stationary_s3_mc(n_paths=100_000, t=5.0, dt=2e-3, seed=0, n_bins=200,
                           tol=0.05) -> TestReport:
    """Long-run SDE histogram of x matches the semicircle density in L1."""
    ens = sde.integrate_ensemble("s3-x", t_end=t, n_steps=int(round(t / dt)),
                                 n_paths=n_paths, master_seed=seed)
    counts, edges = np.histogram(ens.endpoints[:, 0], bins=n_bins, range=(-1.0, 1.0))
    width = edges[1] - edges[0]
    dens = counts / (n_paths * width)
    centers = 0.5 * (edges[:-1] + edges[1:])
    l1 = float(np.sum(np.abs(dens - stationary_density_s3(centers)) * width))
    return TestReport("stationary-s3-mc", l1, None, l1, tol, bool(l1 < tol), (n_paths,),
                      {"t": t, "dt": dt, "seed": seed, "n_bins": n_bins})


def slice_uniformity(sol: fp.DensityGrid, margin: float, central_mass: float = 0.95,
                     min_nodes: int = 6) -> float:
    """Max relative deviation from uniform over interior conditional slices.

    A slice is the renormalized density at fixed first coordinate.  Nodes
    within ``margin`` (in state units) of the admissible boundary are
    excluded: the staircase boundary layer sits below the start's own
    mollification scale, so the margin is the realized mollification
    half-width.  Slices with fewer than ``min_nodes`` interior nodes are
    skipped, as are slices outside the central ``central_mass`` fraction of
    the marginal (at the expanding front the density is orders of magnitude
    below peak and the relative error there is purely numerical).
    """
    rings = max(3, int(math.ceil(margin / sol.spacings[1])))
    inner = fp.interior_mask(sol.mask, rings=rings)
    marg = sol.values.sum(axis=1)
    cum = np.cumsum(marg) / marg.sum()
    qlo, qhi = 0.5 * (1 - central_mass), 0.5 * (1 + central_mass)
    worst = 0.0
    for i in range(sol.axes[0].size):
        if not (qlo <= cum[i] <= qhi):
            continue
        idx = np.nonzero(inner[i])[0]
        if idx.size < min_nodes:
            continue
        q = sol.values[i, idx]
        worst = max(worst, float(np.max(np.abs(q / q.mean() - 1.0))))
    return worst


def smooth_test_marginal(eq_id: str, n: int, lambda_max: float = 3.0) -> fp.DensityGrid:
    """Unit-mass C^5 bump marginal for refinement tests.

    (1-u^2)^6 keeps the fourth derivative bounded and continuous up to the
    support edge, so the sup-norm truncation error is uniformly O(h^2).
    """
    if eq_id in ("fp2-s3", "fp1-s3"):
        x = np.linspace(-1.0, 1.0, n)
        u = x / 0.8
        kind = "s3-x"
    else:
        x = np.linspace(1.0, math.cosh(lambda_max), n)
        u = (x - 2.0) / 0.7
        kind = "h3-w"
    v = np.where(np.abs(u) < 1, np.maximum(1 - u * u, 0.0) ** 6, 0.0)
    g = fp.DensityGrid(kind, (x,), v)
    return replace(g, values=v / g.mass())


def _residual_slope(eq_id: str, factors=(1, 2, 4), base_nodes=201, lambda_max=3.0):
    """Log-log slope of the ansatz residual under grid refinement."""
    residuals = []
    hs = []
    for f in factors:
        n = (base_nodes - 1) * f + 1
        g = smooth_test_marginal(eq_id, n, lambda_max)
        residuals.append(fp.ansatz_residual(eq_id, g))
        hs.append(g.spacings[0])
    slope = float(np.polyfit(np.log(hs), np.log(residuals), 1)[0])
    return slope, residuals


def check_product_persistence(eq_id: str, n_nodes=201, t=None, lambda_max=3.0,
                              dev_tol=0.05, slope_tol=0.3, leak_tol=1e-4,
                              mass_tol=1e-6) -> TestReport:
    """Product-form start stays conditionally uniform; residual is O(h^2).

    The slice margin is the mollification width (epsilon = 5h on the strip
    axis), the boundary layer the discrete staircase cannot represent below
    the start's own scale.  The h3 horizon is set so the truncation wall at
    cosh(lambda_max) holds less than the leakage tolerance of genuine mass:
    at lambda_max = 3 the exact law already has ~1.3e-3 beyond the wall by
    t = 0.5, so the wall-compatible horizon is t = 0.25.
    """
    if eq_id == "fp2-s3":
        grid = fp.grid_s3_disc(n_nodes)
        t = 0.5 if t is None else t
    elif eq_id == "fp2-h3":
        # the c box stops at 13 ~ exp(2.56) rather than exp(lambda_max): the
        # high-c corner is unreachable within the wall-compatible horizon
        # (a few 1e-5 of the exact law at t = 0.25, absorbed and counted as
        # leakage), and the resolution freed up shrinks the front error
        grid = fp.grid_h3_wc(n_nodes, lambda_max=lambda_max, c_max=13.0)
        t = 0.25 if t is None else t
    else:
        raise ConfigurationError("product persistence applies to the 2D equations")
    epsilon = 5.0 * grid.spacings[-1]
    p0 = fp.mollified_delta(eq_id[-2:], epsilon, grid)
    sol = fp.solve_fp(eq_id, p0, t_end=t, leak_tol=leak_tol)
    dev = slice_uniformity(sol, margin=p0.meta["epsilon_effective"])
    slope, residuals = _residual_slope(eq_id, base_nodes=n_nodes, lambda_max=lambda_max)
    mass_ok = abs(sol.meta["mass_drift"] + sol.meta["leakage"]) < mass_tol
    passed = (dev <= dev_tol) and (abs(slope - 2.0) <= slope_tol) and mass_ok
    return TestReport(
        f"product-persistence-{eq_id[-2:]}", dev, None, dev, dev_tol, bool(passed),
        (n_nodes,),
        {"t": t, "epsilon": epsilon, "residual_slope": slope, "residuals": residuals,
         "slope_tol": slope_tol, "leakage": sol.meta["leakage"],
         "mass_drift": sol.meta["mass_drift"], "min_value": sol.meta["min_value"],
         "epsilon_effective": p0.meta.get("epsilon_effective")},
    )


def check_covariation(system_id: str, n_paths=10_000, t=1.0, dt=1e-3, seed=0,
                      n_bins=10, n_sigma=3.0) -> TestReport:
    """Per-step increment covariances match the covariation matrix in state bins.

    Pools increments over ten evenly spaced recording steps, bins by the
    first state coordinate (equal-count bins), and compares each empirical
    second moment E[du_a du_b] with the sample mean of a_ab(state) dt.
    """
    n_steps = int(round(t / dt))
    at = tuple(int(s) for s in np.linspace(n_steps // 10, n_steps - 1, 10))
    states, incr = sde.sample_increments(system_id, t_end=t, n_steps=n_steps,
                                         n_paths=n_paths, master_seed=seed, at_steps=at)
    system = sde.get_system(system_id)
    sig = system.diffusion(states)
    a_theory = np.einsum("nik,njk->nij", sig, sig) * dt
    prods = np.einsum("ni,nj->nij", incr, incr)
    order = np.argsort(states[:, 0], kind="stable")
    bins = np.array_split(order, n_bins)
    worst_z = 0.0
    entries = [(0, 0), (0, 1), (1, 1)]
    table = []
    for b in bins:
        for (i, j) in entries:
            d = prods[b, i, j] - a_theory[b, i, j]
            z = abs(float(d.mean())) / (float(d.std(ddof=1)) / math.sqrt(b.size))
            worst_z = max(worst_z, z)
            table.append(z)
    return TestReport(
        f"covariation-{system_id}", worst_z, None, worst_z, n_sigma,
        bool(worst_z < n_sigma), (states.shape[0],),
        {"system": system_id, "t": t, "dt": dt, "seed": seed, "n_bins": n_bins,
         "z_scores": table},
    )


def check_pitman(n_paths=200_000, t=1.0, dt=1e-3, seed=0, u0=1.2, half_width=0.02,
                 n_bins=20, threshold=0.01) -> TestReport:
    return verify_pitman_dh(n_paths, t, dt, seed, u0, half_width, n_bins, threshold)


CHECKS = {
    "radial-r3": check_radial_r3,
    "radial-s3": check_radial_s3,
    "radial-h3": check_radial_h3,
    "conditional-r3": check_conditional_r3,
    "conditional-s3": check_conditional_s3,
    "conditional-h3": check_conditional_h3,
    "scheme-agreement-s3": check_scheme_agreement_s3,
    "ito-norm-s3": check_ito_norm_s3,
    "mean-decay-s3": check_mean_decay_s3,
    "stationary-s3": check_stationary_s3,
    "stationary-s3-mc": check_stationary_s3_mc,
    "product-persistence-s3": lambda **kw: check_product_persistence("fp2-s3", **kw),
    "product-persistence-h3": lambda **kw: check_product_persistence("fp2-h3", **kw),
    "covariation-s3": lambda **kw: check_covariation("s3-xy", **kw),
    "covariation-h3": lambda **kw: check_covariation("h3-wc", **kw),
    "pitman": check_pitman,
}


def run_check(check_id: str, **params) -> TestReport:
    try:
        fn = CHECKS[check_id]
    except KeyError:
        raise ConfigurationError(
            f"unknown check {check_id!r}; available: {', '.join(sorted(CHECKS))}"
        ) from None
    return fn(**params)
