"""Wiener processes on R^3, S^3 = SU(2) and H^3, with path projections.

Schemes:

    r3 / direct     p -> p + dB
    s3 / ito        Euler step of the matrix equation
                    dg = g (sum_i e_i dB_i) - (3/2) g dt on the entries (a, b);
                    the drift keeps E|g|^2 constant, the norm is not re-imposed
    s3 / exp        g -> g * exp(sum_i e_i dB_i), exactly unitary
    h3 / halfspace  x1 += y dB1, x2 += y dB2, y *= exp(dB3 - dt); the vertical
                    factor is the exact log-normal solution of its component

The ito and exp schemes consume identical (path, step, component)-keyed
Gaussians, so scheme comparisons are variance reduced but distributionally
honest.  Endpoint ensembles are vectorized over paths and reproducible
per path regardless of chunking.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .manifolds import EuclideanPoint3, HalfSpacePoint, HPoint, SU2Point, h3_from_halfspace
from .noise import normal_increments

#: orthonormal generators of su(2): e_i^2 = -identity, <e_i, e_j> = delta_ij.
SU2_E1 = np.array([[0.0, 1.0j], [1.0j, 0.0]])
SU2_E2 = np.array([[0.0, -1.0], [1.0, 0.0]])
SU2_E3 = np.array([[1.0j, 0.0], [0.0, -1.0j]])


@dataclass(frozen=True)
class Su2Generators:
    e1: np.ndarray = SU2_E1
    e2: np.ndarray = SU2_E2
    e3: np.ndarray = SU2_E3

    def as_tuple(self):
        return (self.e1, self.e2, self.e3)


SCHEMES = {"r3": ("direct",), "s3": ("ito", "exp"), "h3": ("halfspace",)}

PROJECTIONS = {
    "r3": ("r", "rz"),
    "s3": ("theta", "a_xy", "polar"),
    "h3": ("lambda", "wc"),
}

#: real state columns used for each manifold's raw ensemble arrays
STATE_COLUMNS = {
    "r3": ("x", "y", "z"),
    "s3": ("a_re", "a_im", "b_re", "b_im"),
    "h3": ("x1", "x2", "y"),
}


# ------------------------------------------------------------- single steps

def bm_step_r3(p: EuclideanPoint3, db) -> EuclideanPoint3:
    return EuclideanPoint3(p.x + db[0], p.y + db[1], p.z + db[2])


def bm_step_su2_ito(g: SU2Point, db, dt: float) -> SU2Point:
    """One Euler step of the matrix SDE on (a, b); no re-normalization."""
    a, b = g.a, g.b
    a1 = a + b * (1j * db[0] + db[1]) + 1j * a * db[2] - 1.5 * a * dt
    b1 = b + a * (1j * db[0] - db[1]) - 1j * b * db[2] - 1.5 * b * dt
    return SU2Point(a1, b1, norm_tol=math.inf)


def bm_step_su2_exp(g: SU2Point, db) -> SU2Point:
    """Right-multiply by exp(sum_i e_i db_i); exactly norm preserving.

    exp of the traceless anti-Hermitian matrix V with |V| = |db| is
    cos|db| I + (sin|db|/|db|) V, itself an SU(2) element (alpha, beta).
    """
    v = math.sqrt(db[0] * db[0] + db[1] * db[1] + db[2] * db[2])
    s = math.sin(v) / v if v > 0.0 else 1.0
    alpha = complex(math.cos(v), s * db[2])
    beta = complex(-s * db[1], s * db[0])
    a1 = g.a * alpha - g.b * beta.conjugate()
    b1 = g.a * beta + g.b * alpha.conjugate()
    return SU2Point(a1, b1, norm_tol=1e-9)


def bm_step_h3_halfspace(p: HalfSpacePoint, db, dt: float) -> HalfSpacePoint:
    """Half-space step; y stays positive by construction.

    The generator is Delta/2 with Delta = y^2 (d_x1^2 + d_x2^2 + d_y^2) - y d_y,
    whose vertical part makes log(y) a Brownian motion with drift -1, hence the
    exact update y * exp(db - dt).
    """
    return HalfSpacePoint(p.x1 + p.y * db[0], p.x2 + p.y * db[1], p.y * math.exp(db[2] - dt))


# ------------------------------------------------------- vectorized kernels

def _step_r3(states, db, dt):
    states += db


def _step_s3_ito(states, db, dt):
    a = states[:, 0] + 1j * states[:, 1]
    b = states[:, 2] + 1j * states[:, 3]
    a1 = a + b * (1j * db[:, 0] + db[:, 1]) + 1j * a * db[:, 2] - 1.5 * a * dt
    b1 = b + a * (1j * db[:, 0] - db[:, 1]) - 1j * b * db[:, 2] - 1.5 * b * dt
    states[:, 0], states[:, 1] = a1.real, a1.imag
    states[:, 2], states[:, 3] = b1.real, b1.imag


def _step_s3_exp(states, db, dt):
    a = states[:, 0] + 1j * states[:, 1]
    b = states[:, 2] + 1j * states[:, 3]
    v = np.sqrt(db[:, 0] ** 2 + db[:, 1] ** 2 + db[:, 2] ** 2)
    s = np.where(v > 0.0, np.sin(v) / np.where(v > 0.0, v, 1.0), 1.0)
    alpha = np.cos(v) + 1j * (s * db[:, 2])
    beta = -(s * db[:, 1]) + 1j * (s * db[:, 0])
    a1 = a * alpha - b * beta.conjugate()
    b1 = a * beta + b * alpha.conjugate()
    states[:, 0], states[:, 1] = a1.real, a1.imag
    states[:, 2], states[:, 3] = b1.real, b1.imag


def _step_h3_halfspace(states, db, dt):
    y = states[:, 2]
    states[:, 0] += y * db[:, 0]
    states[:, 1] += y * db[:, 1]
    states[:, 2] = y * np.exp(db[:, 2] - dt)


_KERNELS = {
    ("r3", "direct"): _step_r3,
    ("s3", "ito"): _step_s3_ito,
    ("s3", "exp"): _step_s3_exp,
    ("h3", "halfspace"): _step_h3_halfspace,
}

_BASE_POINTS = {
    "r3": (0.0, 0.0, 0.0),
    "s3": (1.0, 0.0, 0.0, 0.0),
    "h3": (0.0, 0.0, 1.0),
}


def _check_pair(manifold: str, scheme: str) -> None:
    if manifold not in SCHEMES:
        raise ConfigurationError(f"unknown manifold {manifold!r}")
    if scheme not in SCHEMES[manifold]:
        raise ConfigurationError(f"scheme {scheme!r} invalid for manifold {manifold!r}")


def _renormalize_s3(states):
    n = np.sqrt(states[:, 0] ** 2 + states[:, 1] ** 2 + states[:, 2] ** 2 + states[:, 3] ** 2)
    states /= n[:, None]


@dataclass(frozen=True)
class GroupPath:
    manifold: str
    scheme: str
    times: np.ndarray
    states: np.ndarray  # (n_steps + 1, len(STATE_COLUMNS[manifold]))
    seed: int
    path_index: int

    def point(self, k: int):
        row = self.states[k]
        if self.manifold == "r3":
            return EuclideanPoint3(*row)
        if self.manifold == "s3":
            tol = math.inf if self.scheme == "ito" else 1e-9
            return SU2Point(complex(row[0], row[1]), complex(row[2], row[3]), norm_tol=tol)
        return h3_from_halfspace(HalfSpacePoint(*row))


@dataclass(frozen=True)
class GroupEnsemble:
    manifold: str
    scheme: str
    t_end: float
    dt: float
    master_seed: int
    states: np.ndarray  # (n_paths, len(STATE_COLUMNS[manifold])) endpoints

    def project(self, projection: str) -> np.ndarray:
        return project_states(self.manifold, self.states, projection)


def _simulate_states(manifold, scheme, states, path_indices, t_end, n_steps,
                     master_seed, renormalize, trajectory=None):
    kernel = _KERNELS[(manifold, scheme)]
    dt = t_end / n_steps
    sqrt_dt = math.sqrt(dt)
    if trajectory is not None:
        trajectory[0] = states
    for k in range(n_steps):
        db = normal_increments(master_seed, path_indices, k, 3) * sqrt_dt
        kernel(states, db, dt)
        if renormalize and manifold == "s3":
            _renormalize_s3(states)
        if trajectory is not None:
            trajectory[k + 1] = states
    return states


def simulate_group_path(manifold: str, scheme: str, t_end: float, n_steps: int,
                        master_seed: int = 0, *, path_index: int = 0,
                        renormalize: bool = False) -> GroupPath:
    """Full path from the base point (origin / unit element / (0,0,1))."""
    _check_pair(manifold, scheme)
    if n_steps < 0 or t_end < 0:
        raise ConfigurationError("t_end and n_steps must be nonnegative")
    states = np.array([_BASE_POINTS[manifold]], dtype=float)
    trajectory = np.empty((n_steps + 1, 1, states.shape[1]))
    if n_steps == 0:
        trajectory[0] = states
    else:
        _simulate_states(manifold, scheme, states, np.array([path_index]), t_end,
                         n_steps, master_seed, renormalize, trajectory=trajectory)
    times = np.linspace(0.0, t_end, n_steps + 1)
    return GroupPath(manifold, scheme, times, trajectory[:, 0, :], master_seed, path_index)


def simulate_group_ensemble(manifold: str, scheme: str, t_end: float, n_steps: int,
                            n_paths: int, master_seed: int = 0, *,
                            renormalize: bool = False, threads: int = 1) -> GroupEnsemble:
    """Endpoint ensemble; bit-identical for any chunking or thread count."""
    _check_pair(manifold, scheme)
    width = len(STATE_COLUMNS[manifold])
    endpoints = np.empty((n_paths, width))

    def run_chunk(indices):
        states = np.tile(np.array(_BASE_POINTS[manifold], dtype=float), (len(indices), 1))
        _simulate_states(manifold, scheme, states, indices, t_end, n_steps,
                         master_seed, renormalize)
        endpoints[indices] = states

    chunks = np.array_split(np.arange(n_paths), max(1, min(threads, n_paths)))
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_chunk, chunks))
    else:
        run_chunk(np.arange(n_paths))
    return GroupEnsemble(manifold, scheme, t_end, t_end / max(n_steps, 1), master_seed, endpoints)


# ---------------------------------------------------------------- projections

def project_states(manifold: str, states: np.ndarray, projection: str) -> np.ndarray:
    """Pointwise projection of raw state rows; see PROJECTIONS for valid pairs."""
    if projection not in PROJECTIONS.get(manifold, ()):
        raise ConfigurationError(f"projection {projection!r} invalid for manifold {manifold!r}")
    if manifold == "r3":
        r = np.sqrt(states[:, 0] ** 2 + states[:, 1] ** 2 + states[:, 2] ** 2)
        if projection == "r":
            return r
        return np.column_stack([r, states[:, 2]])
    if manifold == "s3":
        if projection == "theta":
            return np.arccos(np.clip(states[:, 0], -1.0, 1.0))
        if projection == "a_xy":
            return states[:, :2].copy()
        rho = np.hypot(states[:, 0], states[:, 1])
        phi = np.arctan2(states[:, 1], states[:, 0])
        return np.column_stack([rho, phi])
    x1, x2, y = states[:, 0], states[:, 1], states[:, 2]
    w = (x1 * x1 + x2 * x2 + y * y + 1.0) / (2.0 * y)
    if projection == "lambda":
        return np.arccosh(np.maximum(w, 1.0))
    return np.column_stack([w, 1.0 / y])


def project_group_path(path: GroupPath, projection: str) -> np.ndarray:
    return project_states(path.manifold, path.states, projection)


def endpoints_as_points(ensemble: GroupEnsemble) -> list:
    """Typed endpoint objects (mostly for small ensembles and tests)."""
    out = []
    for row in ensemble.states:
        if ensemble.manifold == "r3":
            out.append(EuclideanPoint3(*row))
        elif ensemble.manifold == "s3":
            tol = math.inf if ensemble.scheme == "ito" else 1e-9
            out.append(SU2Point(complex(row[0], row[1]), complex(row[2], row[3]), norm_tol=tol))
        else:
            out.append(h3_from_halfspace(HalfSpacePoint(*row)))
    return out
