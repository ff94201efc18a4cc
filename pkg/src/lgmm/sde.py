"""Catalog of the projected SDE systems and a seeded Euler-Maruyama integrator.

Systems (state / noise dimensions in parentheses):

    bessel3   (1/1)  dr = dB + (1/r) dt                       r > 0
    r3-rz     (2/2)  dr = (sqrt(r^2-z^2)/r) dB1 + (z/r) dB2 + (1/r) dt,  dz = dB2
    s3-theta  (1/1)  dtheta = dB + cot(theta) dt              theta in (0, pi)
    s3-x      (1/1)  dx = sqrt(1-x^2) dB - (3/2) x dt         x in [-1, 1]
    s3-xy     (2/2)  the matrix-entry pair (x, y) on the closed unit disc
    s3-polar  (2/2)  drho = sqrt(1-rho^2) dB1 + (1-3rho^2)/(2rho) dt,  dphi = dB2/rho
    h3-lambda (1/1)  dlambda = dB + coth(lambda) dt           lambda > 0
    h3-wc     (2/2)  dw = sqrt(w^2-1) dB1 + (3/2) w dt, and the c equation

Paths are driven by the keyed noise of :mod:`lgmm.noise`, so an ensemble is
reproducible per-path and independent of evaluation order or thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, IntegrationError, SingularityError
from .noise import normal_increments

#: processes whose natural start is a singular boundary point (r=0, theta=0,
#: lambda=0) are started at this multiple of sqrt(dt) instead.  The offset
#: biases the time-t law by O(offset^2/t), so the multiplier must stay small;
#: 3 keeps the per-step drift below the noise scale without a measurable bias.
SINGULAR_START_FACTOR = 3.0


def _pos(v):
    # clamp tiny negative sqrt arguments produced by rounding at boundaries
    return np.maximum(v, 0.0)


@dataclass(frozen=True)
class SdeSystem:
    """Drift/diffusion data of one projected system, vectorized over states.

    ``drift`` maps states (n, dim) -> (n, dim); ``diffusion`` maps states
    (n, dim) -> (n, dim, noise_dim).  ``constrain`` applies the boundary
    safeguard in place after an Euler step.  ``singular`` flags states where
    a coefficient is singular and no safeguard applies.
    """

    id: str
    dimension: int
    noise_dimension: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    admissible: Callable[[np.ndarray], np.ndarray]
    constrain: Callable[[np.ndarray], None]
    singular: Callable[[np.ndarray], np.ndarray]
    default_x0: tuple[float, ...]
    singular_start: bool = False
    # components whose drift blows up at a boundary; the integrator caps the
    # per-step drift of these at the noise scale sqrt(dt)
    capped_components: tuple[int, ...] = ()
    state_names: tuple[str, ...] = ()


@dataclass(frozen=True)
class Path:
    system_id: str
    times: np.ndarray
    states: np.ndarray  # (n_steps + 1, dim)
    seed: int
    path_index: int
    noise_scale: float


@dataclass(frozen=True)
class EndpointEnsemble:
    system_id: str
    t_end: float
    dt: float
    master_seed: int
    endpoints: np.ndarray  # (n_paths, dim)
    noise_scale: float = 1.0


# ---------------------------------------------------------------- catalogue

def _bessel3():
    def drift(s):
        return 1.0 / s

    def diffusion(s):
        return np.ones(s.shape + (1,))

    def constrain(s):
        np.abs(s, out=s)

    return SdeSystem(
        "bessel3", 1, 1, drift, diffusion,
        admissible=lambda s: s[:, 0] > 0,
        constrain=constrain,
        singular=lambda s: s[:, 0] == 0.0,
        default_x0=(0.0,), singular_start=True, capped_components=(0,),
        state_names=("r",),
    )


def _r3_rz():
    def drift(s):
        out = np.zeros_like(s)
        out[:, 0] = 1.0 / s[:, 0]
        return out

    def diffusion(s):
        r, z = s[:, 0], s[:, 1]
        sig = np.zeros(s.shape[:1] + (2, 2))
        sig[:, 0, 0] = np.sqrt(_pos(r * r - z * z)) / r
        sig[:, 0, 1] = z / r
        sig[:, 1, 1] = 1.0
        return sig

    def constrain(s):
        np.abs(s[:, 0], out=s[:, 0])
        np.maximum(s[:, 0], np.abs(s[:, 1]), out=s[:, 0])

    return SdeSystem(
        "r3-rz", 2, 2, drift, diffusion,
        admissible=lambda s: (s[:, 0] > 0) & (np.abs(s[:, 1]) <= s[:, 0]),
        constrain=constrain,
        singular=lambda s: s[:, 0] == 0.0,
        default_x0=(0.0, 0.0), singular_start=True, capped_components=(0,),
        state_names=("r", "z"),
    )


def _s3_theta():
    def drift(s):
        return 1.0 / np.tan(s)

    def diffusion(s):
        return np.ones(s.shape + (1,))

    def constrain(s):
        np.abs(s, out=s)
        # reflect across pi; a single reflection suffices for steps < pi
        np.subtract(2.0 * math.pi, s, out=s, where=s > math.pi)

    return SdeSystem(
        "s3-theta", 1, 1, drift, diffusion,
        admissible=lambda s: (s[:, 0] > 0) & (s[:, 0] < math.pi),
        constrain=constrain,
        singular=lambda s: (s[:, 0] == 0.0) | (s[:, 0] == math.pi),
        default_x0=(0.0,), singular_start=True, capped_components=(0,),
        state_names=("theta",),
    )


def _s3_x():
    def drift(s):
        return -1.5 * s

    def diffusion(s):
        return np.sqrt(_pos(1.0 - s * s))[..., None]

    def constrain(s):
        np.clip(s, -1.0, 1.0, out=s)

    return SdeSystem(
        "s3-x", 1, 1, drift, diffusion,
        admissible=lambda s: np.abs(s[:, 0]) <= 1.0,
        constrain=constrain,
        singular=lambda s: np.zeros(s.shape[0], dtype=bool),
        default_x0=(1.0,),
        state_names=("x",),
    )


def _s3_xy():
    def drift(s):
        return -1.5 * s

    def diffusion(s):
        x, y = s[:, 0], s[:, 1]
        rho = np.hypot(x, y)
        vert = np.sqrt(_pos(1.0 - rho * rho)) / rho
        sig = np.empty(s.shape[:1] + (2, 2))
        sig[:, 0, 0] = y / rho
        sig[:, 0, 1] = x * vert
        sig[:, 1, 0] = -x / rho
        sig[:, 1, 1] = y * vert
        return sig

    def constrain(s):
        rho = np.hypot(s[:, 0], s[:, 1])
        over = rho > 1.0
        if np.any(over):
            s[over] /= rho[over, None]

    return SdeSystem(
        "s3-xy", 2, 2, drift, diffusion,
        admissible=lambda s: np.hypot(s[:, 0], s[:, 1]) <= 1.0,
        constrain=constrain,
        singular=lambda s: np.hypot(s[:, 0], s[:, 1]) < 1e-12,
        default_x0=(1.0, 0.0),
        state_names=("x", "y"),
    )


def _s3_polar():
    def drift(s):
        out = np.zeros_like(s)
        rho = s[:, 0]
        out[:, 0] = (1.0 - 3.0 * rho * rho) / (2.0 * rho)
        return out

    def diffusion(s):
        rho = s[:, 0]
        sig = np.zeros(s.shape[:1] + (2, 2))
        sig[:, 0, 0] = np.sqrt(_pos(1.0 - rho * rho))
        sig[:, 1, 1] = 1.0 / rho
        return sig

    def constrain(s):
        np.abs(s[:, 0], out=s[:, 0])
        np.clip(s[:, 0], None, 1.0, out=s[:, 0])

    return SdeSystem(
        "s3-polar", 2, 2, drift, diffusion,
        admissible=lambda s: (s[:, 0] > 0) & (s[:, 0] <= 1.0),
        constrain=constrain,
        singular=lambda s: s[:, 0] == 0.0,
        default_x0=(1.0, 0.0), capped_components=(0,),
        state_names=("rho", "phi"),
    )


def _h3_lambda():
    def drift(s):
        return 1.0 / np.tanh(s)

    def diffusion(s):
        return np.ones(s.shape + (1,))

    def constrain(s):
        np.abs(s, out=s)

    return SdeSystem(
        "h3-lambda", 1, 1, drift, diffusion,
        admissible=lambda s: s[:, 0] > 0,
        constrain=constrain,
        singular=lambda s: s[:, 0] == 0.0,
        default_x0=(0.0,), singular_start=True, capped_components=(0,),
        state_names=("lambda",),
    )


def _h3_wc():
    def drift(s):
        return 1.5 * s

    def diffusion(s):
        w, c = s[:, 0], s[:, 1]
        disc = _pos(w * w - 1.0)
        root = np.sqrt(disc)
        corner = root == 0.0  # only admissible at the unit element (w, c) = (1, 1)
        safe = np.where(corner, 1.0, root)
        sig = np.zeros(s.shape[:1] + (2, 2))
        sig[:, 0, 0] = root
        sig[:, 1, 0] = np.where(corner, 0.0, (c * w - 1.0) / safe)
        # 2cw - c^2 - 1 = (w^2-1) - (c-w)^2 vanishes on the support boundary
        sig[:, 1, 1] = np.where(corner, 1.0, np.sqrt(_pos(2.0 * c * w - c * c - 1.0)) / safe)
        return sig

    def constrain(s):
        np.maximum(s[:, 0], 1.0, out=s[:, 0])
        half = np.sqrt(_pos(s[:, 0] * s[:, 0] - 1.0))
        np.clip(s[:, 1], s[:, 0] - half, s[:, 0] + half, out=s[:, 1])

    return SdeSystem(
        "h3-wc", 2, 2, drift, diffusion,
        admissible=lambda s: (s[:, 0] >= 1.0)
        & (np.abs(s[:, 1] - s[:, 0]) <= np.sqrt(_pos(s[:, 0] ** 2 - 1.0))),
        constrain=constrain,
        singular=lambda s: (s[:, 0] == 1.0) & (s[:, 1] != 1.0),
        default_x0=(1.0, 1.0),
        state_names=("w", "c"),
    )


SYSTEMS: dict[str, SdeSystem] = {
    sys.id: sys
    for sys in (
        _bessel3(), _r3_rz(), _s3_theta(), _s3_x(), _s3_xy(), _s3_polar(),
        _h3_lambda(), _h3_wc(),
    )
}


def get_system(system_id: str) -> SdeSystem:
    try:
        return SYSTEMS[system_id]
    except KeyError:
        raise ConfigurationError(f"unknown SDE system {system_id!r}") from None


def evaluate_coefficients(system: SdeSystem | str, state) -> tuple[np.ndarray, np.ndarray]:
    """Drift vector and diffusion matrix at one admissible interior state."""
    if isinstance(system, str):
        system = get_system(system)
    s = np.atleast_2d(np.asarray(state, dtype=float))
    if s.shape != (1, system.dimension):
        raise ConfigurationError(f"state must have dimension {system.dimension}")
    if not bool(system.admissible(s)[0]):
        raise SingularityError(f"state {state!r} outside the admissible region of {system.id}")
    if bool(system.singular(s)[0]):
        raise SingularityError(f"coefficients of {system.id} are singular at {state!r}")
    return system.drift(s)[0], system.diffusion(s)[0]


def resolve_x0(system: SdeSystem, x0, dt: float) -> np.ndarray:
    """Starting state; singular natural starts are offset into the interior."""
    if x0 is None:
        x0 = np.asarray(system.default_x0, dtype=float)
        if system.singular_start:
            x0 = x0 + SINGULAR_START_FACTOR * math.sqrt(dt)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (system.dimension,):
        raise ConfigurationError(f"x0 must have dimension {system.dimension}")
    s = x0[None, :].copy()
    if not bool(system.admissible(s)[0]):
        raise ConfigurationError(f"x0 {x0!r} outside the admissible region of {system.id}")
    if bool(system.singular(s)[0]):
        raise ConfigurationError(
            f"x0 {x0!r} is a singular point of {system.id}; offset it into the interior"
        )
    return x0


def _integrate_states(system, states, path_indices, t_end, n_steps, master_seed,
                      noise_scale, record_at=None, trajectory=None):
    """Advance all rows of ``states`` in place.

    ``record_at`` collects {step: (state_before, increment)} snapshots;
    ``trajectory`` (shape (n_steps+1, n, dim)) records every state.  One code
    path serves single paths and ensembles so results agree bit for bit.
    """
    dt = t_end / n_steps
    sqrt_dt = math.sqrt(dt)
    cap = 1.0 / sqrt_dt
    scale = noise_scale * sqrt_dt
    recorded = {}
    record_at = set(record_at or ())
    if trajectory is not None:
        trajectory[0] = states
    for k in range(n_steps):
        bad = system.singular(states)
        if np.any(bad):
            raise IntegrationError(
                f"{system.id}: singular state with no applicable safeguard",
                step=k, path=int(path_indices[np.argmax(bad)]),
            )
        mu = system.drift(states)
        for comp in system.capped_components:
            np.clip(mu[:, comp], -cap, cap, out=mu[:, comp])
        sig = system.diffusion(states)
        db = normal_increments(master_seed, path_indices, k, system.noise_dimension) * scale
        step = mu * dt + np.einsum("nij,nj->ni", sig, db)
        if k in record_at:
            recorded[k] = (states.copy(), step.copy())
        states += step
        system.constrain(states)
        if trajectory is not None:
            trajectory[k + 1] = states
    return recorded


def integrate_path(system: SdeSystem | str, x0=None, t_end: float = 1.0,
                   n_steps: int = 1000, master_seed: int = 0, *,
                   path_index: int = 0, noise_scale: float = 1.0) -> Path:
    """One Euler-Maruyama path, recording every state."""
    if isinstance(system, str):
        system = get_system(system)
    if n_steps <= 0 or t_end <= 0:
        raise ConfigurationError("t_end and n_steps must be positive")
    dt = t_end / n_steps
    x0 = resolve_x0(system, x0, dt)
    states = x0[None, :].copy()
    trajectory = np.empty((n_steps + 1, 1, system.dimension))
    _integrate_states(system, states, np.array([path_index]), t_end, n_steps,
                      master_seed, noise_scale, trajectory=trajectory)
    times = np.linspace(0.0, t_end, n_steps + 1)
    return Path(system.id, times, trajectory[:, 0, :], master_seed, path_index, noise_scale)


def integrate_ensemble(system: SdeSystem | str, x0=None, t_end: float = 1.0,
                       n_steps: int = 1000, n_paths: int = 1, master_seed: int = 0, *,
                       noise_scale: float = 1.0, threads: int = 1) -> EndpointEnsemble:
    """Endpoint states of ``n_paths`` independent paths.

    Bit-identical for fixed (master_seed, parameters) whatever ``threads`` is:
    the noise is keyed by (master_seed, path, step, component), never drawn
    from shared mutable state.
    """
    if isinstance(system, str):
        system = get_system(system)
    if n_paths < 1:
        raise ConfigurationError("n_paths must be at least 1")
    dt = t_end / n_steps
    x0 = resolve_x0(system, x0, dt)
    endpoints = np.empty((n_paths, system.dimension))

    def run_chunk(indices):
        states = np.tile(x0, (len(indices), 1))
        _integrate_states(system, states, indices, t_end, n_steps, master_seed, noise_scale)
        endpoints[indices] = states

    chunks = np.array_split(np.arange(n_paths), max(1, min(threads, n_paths)))
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_chunk, chunks))
    else:
        run_chunk(np.arange(n_paths))
    return EndpointEnsemble(system.id, t_end, dt, master_seed, endpoints, noise_scale)


def sample_increments(system: SdeSystem | str, x0=None, t_end: float = 1.0,
                      n_steps: int = 1000, n_paths: int = 1000, master_seed: int = 0,
                      at_steps=(0,)) -> tuple[np.ndarray, np.ndarray]:
    """States and raw Euler increments at selected steps, pooled over paths.

    Returns (states, increments), each of shape (len(at_steps) * n_paths, dim);
    used by the quadratic-covariation checks.
    """
    if isinstance(system, str):
        system = get_system(system)
    dt = t_end / n_steps
    x0 = resolve_x0(system, x0, dt)
    states = np.tile(x0, (n_paths, 1))
    rec = _integrate_states(system, states, np.arange(n_paths), t_end, n_steps,
                            master_seed, 1.0, record_at=at_steps)
    pooled_states = np.concatenate([rec[k][0] for k in sorted(rec)])
    pooled_incr = np.concatenate([rec[k][1] for k in sorted(rec)])
    return pooled_states, pooled_incr
