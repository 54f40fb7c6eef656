"""Benchmark dynamical systems and noisy dataset generation.

Three generators ship with the package:

* ``rossler`` - the chaotic Rössler attractor, observed directly.
* ``duffing`` - a forced, damped Duffing oscillator (second order), a
  stand-in for the bending mode of a clamped beam resonator.
* ``reaction_diffusion`` - a lambda-omega reaction-diffusion system on a
  periodic square, discretized with a 5-point Laplacian.

Measurement noise is either multiplicative log-normal or additive Gaussian
scaled by the mean absolute signal; model noise perturbs the system
parameters per trajectory.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .numerics import NumericFailure, TimeGrid, finite_difference, integrate

logger = logging.getLogger(__name__)

ROSSLER_ALPHA = (0.2, 0.2, 5.7)

# named RNG sub-streams; combined with (root seed, trajectory index)
STREAM_IC = 11
STREAM_MODEL = 12
STREAM_MEASURE = 13


def substream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------

def rossler_rhs(z: np.ndarray, alpha=ROSSLER_ALPHA) -> np.ndarray:
    z1, z2, z3 = z
    a1, a2, a3 = alpha
    return np.array([-z2 - z3, z1 + a1 * z2, a2 + z3 * (z1 - a3)])


def duffing_rhs(state: np.ndarray, params: dict, t: float) -> np.ndarray:
    """Forced Duffing oscillator ``z'' = -w0^2 z - 2 xi w0 z' - g z^3 - a F cos(w t)``."""
    z, zd = state
    w0 = params["omega0"]
    zdd = (-w0 * w0 * z - 2.0 * params["xi"] * w0 * zd - params["gamma"] * z ** 3
           - params["forcing_gain"] * params["F"] * np.cos(params["omega"] * t))
    return np.array([zd, zdd])


def laplacian_periodic(U: np.ndarray, h: float) -> np.ndarray:
    return (np.roll(U, 1, 0) + np.roll(U, -1, 0) + np.roll(U, 1, 1) + np.roll(U, -1, 1) - 4.0 * U) / (h * h)


def rd_rhs(U: np.ndarray, V: np.ndarray, params: dict, grid_spacing: float):
    if U.ndim != 2 or U.shape[0] != U.shape[1] or V.shape != U.shape:
        raise ValueError(f"reaction-diffusion fields must be square and matching, got {U.shape}, {V.shape}")
    mu = params.get("mu", 1.0)
    r2 = U * U + V * V
    dU = (1.0 - r2) * U + mu * r2 * V + params.get("d1", 0.01) * laplacian_periodic(U, grid_spacing)
    dV = -mu * r2 * U + (1.0 - r2) * V + params.get("d2", 0.01) * laplacian_periodic(V, grid_spacing)
    return dU, dV


def rd_grid(L: float = 10.0, n_points: int = 50) -> tuple[np.ndarray, np.ndarray]:
    # periodic: the right edge coincides with the left one and is dropped
    x = np.linspace(-L, L, n_points, endpoint=False)
    return np.meshgrid(x, x, indexing="xy")


def rd_initial_condition(beta: float, L: float = 10.0, n_points: int = 50):
    """Spiral initial condition; the complex offset ``x + iy`` is read as its phase angle."""
    X, Y = rd_grid(L, n_points)
    r = np.sqrt(X * X + Y * Y)
    theta = np.arctan2(Y, X)
    U0 = np.tanh(beta * r * np.cos(theta - beta * r))
    return U0, U0.copy()


# ---------------------------------------------------------------------------
# noise models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseConfig:
    measurement_level: float = 0.0
    model_level: float = 0.0
    additive_level: float = 0.0
    seed: int = 0
    additive_snr_db: float | None = None   # if set, overrides additive_level to hit this state SNR

    def __post_init__(self):
        for name in ("measurement_level", "model_level", "additive_level"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def apply_measurement_noise(X: np.ndarray, level: float, seed=None, mode: str = "multiplicative",
                            scale: float | None = None) -> np.ndarray:
    """Corrupt ``X`` with measurement noise.

    ``multiplicative`` multiplies every entry by an independent
    ``LogNormal(0, level)`` factor. ``additive`` adds ``N(0, (level*scale)^2)``
    where ``scale`` defaults to the mean absolute value of ``X``.
    """
    if level < 0:
        raise ValueError("noise level must be nonnegative")
    X = np.asarray(X, dtype=np.float64)
    if level == 0:
        return X.copy()
    rng = _rng(seed)
    if mode == "multiplicative":
        return X * rng.lognormal(0.0, level, size=X.shape)
    if mode == "additive":
        if scale is None:
            scale = float(np.mean(np.abs(X)))
        return X + rng.normal(0.0, level * scale, size=X.shape)
    raise ValueError(f"unknown noise mode {mode!r}")


def sample_model_parameters(alpha, level: float, seed=None) -> np.ndarray:
    """Draw ``alpha_i ~ N(alpha_i, (level * alpha_i)^2)`` independently."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if level < 0:
        raise ValueError("noise level must be nonnegative")
    if level == 0:
        return alpha.copy()
    return _rng(seed).normal(alpha, level * np.abs(alpha))


def snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    err = np.sum((noisy - clean) ** 2)
    if err == 0:
        return float("inf")
    return float(10.0 * np.log10(np.sum(clean ** 2) / err))


# ---------------------------------------------------------------------------
# systems and datasets
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Stacked snapshots of several trajectories.

    Rows of every array correspond to samples; samples of one trajectory are
    contiguous and ordered in time.
    """

    X: np.ndarray
    dX: np.ndarray
    beta: np.ndarray
    times: np.ndarray
    trajectory_ids: np.ndarray
    ddX: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.X.shape[0]
        members = [self.dX, self.beta, self.times, self.trajectory_ids]
        if self.ddX is not None:
            members.append(self.ddX)
        for arr in members:
            if arr.shape[0] != n:
                raise ValueError("row counts of dataset members disagree")
        if self.dX.shape != self.X.shape or (self.ddX is not None and self.ddX.shape != self.X.shape):
            raise ValueError("derivative arrays must match the shape of X")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def second_order(self) -> bool:
        return self.ddX is not None

    def trajectory_index(self) -> list[int]:
        return [int(i) for i in dict.fromkeys(self.trajectory_ids.tolist())]

    def select(self, ids) -> "Dataset":
        rows = np.isin(self.trajectory_ids, np.asarray(list(ids)))
        return Dataset(self.X[rows], self.dX[rows], self.beta[rows], self.times[rows],
                       self.trajectory_ids[rows], None if self.ddX is None else self.ddX[rows],
                       dict(self.meta))

    def trajectory(self, traj_id: int) -> "Dataset":
        return self.select([traj_id])


@dataclass
class SystemSpec:
    """A generator: right-hand side, nominal parameters and observation map.

    ``rhs(t, state, alpha, beta)`` advances the simulated state; ``observe``
    maps the simulated state (rows) to the measured quantity ``X``.
    """

    name: str
    state_dim: int
    rhs: Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    alpha: np.ndarray
    second_order: bool = False
    observe: Callable[[np.ndarray], np.ndarray] | None = None
    settings: dict = field(default_factory=dict)

    def observed(self, states: np.ndarray) -> np.ndarray:
        return states if self.observe is None else self.observe(states)


@dataclass
class GaussianIC:
    mean: np.ndarray
    std: float

    def __call__(self, rng: np.random.Generator, beta: np.ndarray) -> np.ndarray:
        mean = np.asarray(self.mean, dtype=np.float64)
        return rng.normal(mean, self.std)


def rossler_system(alpha=ROSSLER_ALPHA) -> SystemSpec:
    return SystemSpec("rossler", 3, lambda t, z, a, b: rossler_rhs(z, a), np.asarray(alpha, float))


def beam_mode(n_dofs: int) -> np.ndarray:
    """First bending shape of a pinned beam sampled at ``n_dofs`` interior nodes, unit peak."""
    s = np.arange(1, n_dofs + 1) / (n_dofs + 1)
    phi = np.sin(np.pi * s)
    return phi / np.max(phi)


def duffing_system(omega0=1.0, xi=0.05, gamma=0.3, forcing_gain=1.0, n_dofs=None) -> SystemSpec:
    """Duffing normal form with ``beta = [omega, F]`` per trajectory.

    The measured state is the displacement ``z``; with ``n_dofs`` it is the
    displacement field ``z * phi`` of a beam vibrating in its first mode.
    """

    def rhs(t, s, a, b):
        p = {"omega0": a[0], "xi": a[1], "gamma": a[2], "forcing_gain": a[3], "omega": b[0], "F": b[1]}
        return duffing_rhs(s, p, t)

    if n_dofs:
        phi = beam_mode(int(n_dofs))
        observe = lambda S: S[:, :1] * phi[None, :]  # noqa: E731
    else:
        observe = lambda S: S[:, :1]  # noqa: E731
    return SystemSpec("duffing", 2, rhs, np.array([omega0, xi, gamma, forcing_gain]), second_order=True,
                      observe=observe, settings={"n_dofs": n_dofs})


def reaction_diffusion_system(mu=1.0, d1=0.01, d2=0.01, L=10.0, n_points=50, observe_v=False) -> SystemSpec:
    """Reaction-diffusion generator; the measured state is the ``u`` field (optionally ``u`` and ``v``)."""
    h = 2.0 * L / n_points
    npts = n_points * n_points

    def rhs(t, s, a, b):
        U = s[:npts].reshape(n_points, n_points)
        V = s[npts:].reshape(n_points, n_points)
        dU, dV = rd_rhs(U, V, {"mu": a[0], "d1": a[1], "d2": a[2]}, h)
        return np.concatenate([dU.ravel(), dV.ravel()])

    observe = None if observe_v else (lambda S: S[:, :npts])
    return SystemSpec("reaction_diffusion", 2 * npts, rhs, np.array([mu, d1, d2]), observe=observe,
                      settings={"L": L, "n_points": n_points, "grid_spacing": h})


def rd_ic(L=10.0, n_points=50):
    def ic(rng, beta):
        U0, V0 = rd_initial_condition(float(beta[0]), L, n_points)
        return np.concatenate([U0.ravel(), V0.ravel()])
    return ic


def generate_dataset(system: SystemSpec, ic, grid: TimeGrid, noise: NoiseConfig, n_trajectories: int,
                     betas=None, return_clean: bool = False):
    """Simulate ``n_trajectories`` runs of ``system`` and build a noisy Dataset.

    Parameters
    ----------
    ic : callable ``ic(rng, beta) -> state``
        Initial-condition sampler, called with the per-trajectory IC stream.
    betas : array (n_trajectories, p), optional
        Per-trajectory parameters passed to ``rhs`` and ``ic``.
    return_clean : bool
        Also return the noise-free dataset (states and derivatives computed
        from clean states).
    """
    grid_times = grid.times
    if betas is None:
        betas = np.zeros((n_trajectories, 0))
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim < 2:
        betas = betas.reshape(n_trajectories, -1) if n_trajectories else betas.reshape(0, 0)
    p = betas.shape[1]

    clean_runs, alphas = [], []
    for i in range(n_trajectories):
        alpha_i = sample_model_parameters(system.alpha, noise.model_level, substream(noise.seed, STREAM_MODEL, i))
        z0 = ic(substream(noise.seed, STREAM_IC, i), betas[i])
        try:
            traj = integrate(lambda t, s: system.rhs(t, s, alpha_i, betas[i]), z0, grid)
        except NumericFailure as exc:
            raise NumericFailure(f"trajectory {i}: {exc}", t=exc.t, step=exc.step) from exc
        clean_runs.append(system.observed(traj.states))
        alphas.append(alpha_i)

    additive_scale = None
    additive_level = noise.additive_level
    if clean_runs and (additive_level > 0 or noise.additive_snr_db is not None):
        allc = np.concatenate(clean_runs)
        additive_scale = float(np.mean(np.abs(allc)))
        if noise.additive_snr_db is not None:
            # noise std = level * scale  ->  SNR = 20 log10(rms / (level * scale))
            rms = float(np.sqrt(np.mean(allc ** 2)))
            additive_level = rms / additive_scale * 10.0 ** (-noise.additive_snr_db / 20.0)

    noisy_runs = []
    for i, Xc in enumerate(clean_runs):
        rng = substream(noise.seed, STREAM_MEASURE, i)
        Xn = apply_measurement_noise(Xc, noise.measurement_level, rng, mode="multiplicative")
        if additive_level > 0:
            Xn = apply_measurement_noise(Xn, additive_level, rng, mode="additive", scale=additive_scale)
        noisy_runs.append(Xn)

    dt = grid.dt
    n_obs = clean_runs[0].shape[1] if clean_runs else system.observed(np.zeros((1, system.state_dim))).shape[1]

    def assemble(runs):
        if not runs:
            empty = np.zeros((0, n_obs))
            return Dataset(empty, empty.copy(), np.zeros((0, p)), np.zeros(0), np.zeros(0, dtype=np.int64),
                           empty.copy() if system.second_order else None)
        X = np.concatenate(runs)
        dX = np.concatenate([finite_difference(r, dt, 1) for r in runs])
        ddX = np.concatenate([finite_difference(r, dt, 2) for r in runs]) if system.second_order else None
        ids = np.repeat(np.arange(len(runs), dtype=np.int64), grid.n_steps)
        t = np.tile(grid_times, len(runs))
        beta = np.repeat(betas, grid.n_steps, axis=0)
        return Dataset(X, dX, beta, t, ids, ddX)

    noisy = assemble(noisy_runs)
    clean = assemble(clean_runs)

    snr = {}
    if n_trajectories:
        snr = {"state": snr_db(clean.X, noisy.X), "velocity": snr_db(clean.dX, noisy.dX)}
        if system.second_order:
            snr["acceleration"] = snr_db(clean.ddX, noisy.ddX)
            ratios = [np.max(np.abs(noisy.ddX[noisy.trajectory_ids == i])) /
                      np.max(np.abs(clean.ddX[clean.trajectory_ids == i])) for i in range(n_trajectories)]
            snr["acceleration_peak_ratio"] = [float(np.mean(ratios)), float(np.std(ratios))]

    meta = {
        "system": system.name,
        "dt": dt,
        "t0": grid.t0,
        "t_end": grid.t_end,
        "n_steps": grid.n_steps,
        "n_trajectories": n_trajectories,
        "second_order": system.second_order,
        "noise": {"measurement_level": noise.measurement_level, "model_level": noise.model_level,
                  "additive_level": additive_level, "additive_scale": additive_scale,
                  "additive_snr_db": noise.additive_snr_db},
        "seeds": {"root": noise.seed, "streams": {"ic": STREAM_IC, "model": STREAM_MODEL,
                                                   "measurement": STREAM_MEASURE}},
        "alpha_nominal": system.alpha.tolist(),
        "alpha_per_trajectory": [a.tolist() for a in alphas],
        "beta_per_trajectory": betas.tolist(),
        "snr_db": snr,
        "settings": dict(system.settings),
    }
    noisy.meta = meta
    if return_clean:
        clean.meta = dict(meta, noise={"measurement_level": 0.0, "model_level": noise.model_level,
                                       "additive_level": 0.0, "additive_scale": None})
        return noisy, clean
    return noisy


def embed_linear(Z: np.ndarray, target_dim: int, seed=None, lift: np.ndarray | None = None):
    """Lift latent rows ``Z`` to ``target_dim`` with a random orthonormal map ``G``.

    Returns ``(Z @ G.T, G)``; ``G`` has orthonormal columns so ``X @ G``
    recovers ``Z``.
    """
    Z = np.asarray(Z, dtype=np.float64)
    n = Z.shape[1]
    if target_dim < n:
        raise ValueError("target_dim must be at least the latent dimension")
    if lift is None:
        A = _rng(seed).normal(size=(target_dim, n))
        Q, R = np.linalg.qr(A)
        lift = Q * np.sign(np.diag(R))
    return Z @ lift.T, lift


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def build_system(name: str, params: dict[str, Any] | None = None) -> SystemSpec:
    params = dict(params or {})
    if name == "rossler":
        return rossler_system(params.get("alpha", ROSSLER_ALPHA))
    if name == "duffing":
        keys = ("omega0", "xi", "gamma", "forcing_gain", "n_dofs")
        return duffing_system(**{k: params[k] for k in keys if k in params})
    if name == "reaction_diffusion":
        keys = ("mu", "d1", "d2", "L", "n_points", "observe_v")
        return reaction_diffusion_system(**{k: params[k] for k in keys if k in params})
    raise ValueError(f"unknown system {name!r}")
