"""Distribution tests, conditional slicing and the Pitman path transform.

Every procedure returns a :class:`TestReport` carrying the statistic, the
p-value (or distance), the decision threshold and full provenance, so a
report can be re-run bit-exactly from its recorded seed and parameters.
Thresholds default to 0.01 and are calibration choices, not theory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri
from scipy.stats import chi2 as _chi2

from .errors import DomainError, InsufficientDataError
from .noise import uniform_increments


@dataclass(frozen=True)
class EmpiricalSample:
    """Sample values plus a record of where they came from."""

    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.size == 0:
            raise InsufficientDataError("empty sample")
        if not np.all(np.isfinite(v)):
            raise DomainError("sample contains non-finite values")

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class TestReport:
    name: str
    statistic: float
    p_value: float | None
    distance: float | None
    threshold: float
    passed: bool
    sample_sizes: tuple[int, ...]
    params: dict = field(default_factory=dict)

    def to_json(self, **kwargs) -> str:
        payload = {
            "name": self.name,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "distance": self.distance,
            "threshold": self.threshold,
            "passed": bool(self.passed),
            "sample_sizes": list(self.sample_sizes),
            "params": _jsonable(self.params),
        }
        return json.dumps(payload, **kwargs)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _p_report(name, statistic, p, threshold, sizes, params) -> TestReport:
    return TestReport(name, float(statistic), float(p), None, threshold,
                      bool(p > threshold), tuple(int(s) for s in sizes), params)


def _d_report(name, distance, threshold, sizes, params) -> TestReport:
    return TestReport(name, float(distance), None, float(distance), threshold,
                      bool(distance < threshold), tuple(int(s) for s in sizes), params)


def kolmogorov_sf(x: float, terms: int = 100) -> float:
    """P(K > x) for the Kolmogorov distribution, series truncated at ``terms``."""
    if x <= 0.0:
        return 1.0
    k = np.arange(1, terms + 1, dtype=float)
    s = 2.0 * np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * (k * x) ** 2))
    return float(min(1.0, max(0.0, s)))


def ks_test(sample: EmpiricalSample, cdf, threshold: float = 0.01,
            name: str = "ks") -> TestReport:
    """One-sample Kolmogorov-Smirnov test against a callable CDF."""
    if sample.n < 10:
        raise InsufficientDataError("KS test needs at least 10 points")
    v = np.sort(sample.values)
    f = np.asarray(cdf(v), dtype=float)
    n = v.size
    i = np.arange(1, n + 1)
    d = max(np.max(i / n - f), np.max(f - (i - 1) / n))
    p = kolmogorov_sf(math.sqrt(n) * d)
    return _p_report(name, d, p, threshold, (n,),
                     {"provenance": sample.provenance})


def ks_two_sample(a: EmpiricalSample, b: EmpiricalSample, threshold: float = 0.01,
                  name: str = "ks2") -> TestReport:
    """Two-sample KS test with the asymptotic Kolmogorov p-value."""
    x, y = np.sort(a.values), np.sort(b.values)
    pooled = np.concatenate([x, y])
    fa = np.searchsorted(x, pooled, side="right") / x.size
    fb = np.searchsorted(y, pooled, side="right") / y.size
    d = float(np.max(np.abs(fa - fb)))
    n_eff = x.size * y.size / (x.size + y.size)
    p = kolmogorov_sf(math.sqrt(n_eff) * d)
    return _p_report(name, d, p, threshold, (x.size, y.size),
                     {"provenance_a": a.provenance, "provenance_b": b.provenance})


def chi2_uniformity(sample: EmpiricalSample, interval: tuple[float, float],
                    n_bins: int = 20, threshold: float = 0.01,
                    name: str = "chi2-uniform") -> TestReport:
    """Pearson chi-square test of uniformity on ``interval``."""
    lo, hi = interval
    expected = sample.n / n_bins
    if expected < 5:
        raise InsufficientDataError(
            f"expected count per bin {expected:.2f} < 5; enlarge sample or reduce bins"
        )
    counts, _ = np.histogram(sample.values, bins=n_bins, range=(lo, hi))
    outside = sample.n - counts.sum()
    stat = float(np.sum((counts - expected) ** 2) / expected)
    p = float(_chi2.sf(stat, n_bins - 1))
    return _p_report(name, stat, p, threshold, (sample.n,),
                     {"interval": [lo, hi], "n_bins": n_bins, "outside": int(outside),
                      "provenance": sample.provenance})


def conditional_slice(pairs: EmpiricalSample, u0: float, half_width: float) -> EmpiricalSample:
    """All v with |u - u0| <= half_width from a sample of (u, v) pairs."""
    if half_width <= 0:
        raise DomainError("half_width must be positive")
    uv = pairs.values
    if uv.ndim != 2 or uv.shape[1] != 2:
        raise DomainError("conditional_slice expects a sample of (u, v) pairs")
    mask = np.abs(uv[:, 0] - u0) <= half_width
    if not np.any(mask):
        raise InsufficientDataError(f"no samples with u in [{u0 - half_width}, {u0 + half_width}]")
    prov = dict(pairs.provenance)
    prov.update({"u0": u0, "half_width": half_width,
                 "retained_fraction": float(mask.mean())})
    return EmpiricalSample(uv[mask], prov)


_CANONICAL = {"r3": (-1.0, 1.0), "s3": (-1.0, 1.0), "h3": (0.0, 1.0)}


def rescale_to_dh_support(family: str, sliced: np.ndarray) -> np.ndarray:
    """Map (u, v) pairs to the canonical DH support using each sample's own u.

    r3: z/r -> [-1, 1];  s3: y/sqrt(1-x^2) -> [-1, 1];
    h3: (c - (w - sqrt(w^2-1))) / (2 sqrt(w^2-1)) -> [0, 1].
    Conditionally on u the result is exactly uniform, so the slab half-width
    introduces no support dilation.
    """
    u, v = sliced[:, 0], sliced[:, 1]
    if family == "r3":
        return v / u
    if family == "s3":
        return v / np.sqrt(1.0 - u * u)
    if family == "h3":
        half = np.sqrt(u * u - 1.0)
        return (v - (u - half)) / (2.0 * half)
    raise DomainError(f"unknown family {family!r}")


def verify_conditional_dh(pairs: EmpiricalSample, family: str, u0: float,
                          half_width: float = 0.02, n_bins: int = 20,
                          threshold: float = 0.01) -> TestReport:
    """Chi-square uniformity of the DH-rescaled conditional slice."""
    if family not in _CANONICAL:
        raise DomainError(f"unknown family {family!r}")
    sliced = conditional_slice(pairs, u0, half_width)
    if sliced.n < 500:
        raise InsufficientDataError(f"conditional slice holds only {sliced.n} < 500 points")
    rescaled = rescale_to_dh_support(family, sliced.values)
    sub = EmpiricalSample(rescaled, sliced.provenance)
    report = chi2_uniformity(sub, _CANONICAL[family], n_bins=n_bins, threshold=threshold,
                             name=f"conditional-dh-{family}")
    report.params.update({
        "family": family,
        "slice_min": float(sliced.values[:, 1].min()),
        "slice_max": float(sliced.values[:, 1].max()),
        # slab-induced dilation of the raw (unrescaled) support, for the record
        "slab_relative_width": float(half_width / abs(u0)) if u0 else None,
    })
    return report


def pitman_transform(path) -> np.ndarray:
    """2 * running_max(path) - path for a path starting at 0; nonnegative."""
    p = np.asarray(path, dtype=float)
    if p.ndim != 1 or p.size == 0 or p[0] != 0.0:
        raise DomainError("pitman_transform expects a 1D path starting at 0")
    return 2.0 * np.maximum.accumulate(p) - p


def simulate_pitman_endpoints(n_paths: int, t: float, n_steps: int,
                              master_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """(B_t, PB_t) for seeded 1D Wiener paths, exact in law.

    The running max over each step interval is drawn from the exact
    Brownian-bridge maximum law, M = (a + b + sqrt((b-a)^2 - 2 dt log U))/2,
    so the joint law of (B_t, sup B) has no time-discretization bias; the
    plain discrete running max underestimates the supremum by O(sqrt(dt)),
    which visibly piles conditional mass near B = +-PB.
    """
    paths = np.arange(n_paths)
    dt = t / n_steps
    sqrt_dt = math.sqrt(dt)
    b = np.zeros(n_paths)
    m = np.zeros(n_paths)
    for k in range(n_steps):
        draws = uniform_increments(master_seed, paths, k, 2)
        db = ndtri(draws[:, 0]) * sqrt_dt
        b_new = b + db
        seg_max = 0.5 * (b + b_new + np.sqrt(db * db - 2.0 * dt * np.log(draws[:, 1])))
        # guard the exact invariants M >= B, M >= 0 against rounding
        np.maximum(seg_max, b_new, out=seg_max)
        np.maximum(m, seg_max, out=m)
        b = b_new
    return b, 2.0 * m - b


def verify_pitman_dh(n_paths: int = 200_000, t: float = 1.0, dt: float = 1e-3,
                     master_seed: int = 0, u0: float = 1.2, half_width: float = 0.02,
                     n_bins: int = 20, threshold: float = 0.01) -> TestReport:
    """Uniformity of B_t over [-PB_t, PB_t] in a slab PB_t ~ u0."""
    n_steps = int(round(t / dt))
    b, pb = simulate_pitman_endpoints(n_paths, t, n_steps, master_seed)
    pairs = EmpiricalSample(
        np.column_stack([pb, b]),
        {"kind": "pitman", "t": t, "dt": dt, "seed": master_seed, "n_paths": n_paths},
    )
    report = verify_conditional_dh(pairs, "r3", u0, half_width, n_bins, threshold)
    report.params["pb_dominates_abs_b"] = bool(np.all(pb >= np.abs(b)))
    report.params["slice_mean_b"] = float(np.mean(
        b[np.abs(pb - u0) <= half_width]))
    return TestReport(
        "pitman-dh", report.statistic, report.p_value, report.distance,
        report.threshold, report.passed and report.params["pb_dominates_abs_b"],
        report.sample_sizes, report.params,
    )
