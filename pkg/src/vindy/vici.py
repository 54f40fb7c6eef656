"""Ensemble forecasting with credibility bands.

Each member draws a latent initial condition from the encoder posterior and
a coefficient matrix from the coefficient posterior, integrates the latent
model with RK4 and decodes the trajectory with the decoder mean. Statistics
are taken over the decoded (full-space) members.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import distributions as D
from .coefficients import sample_coefficients
from .library import evaluate as library_values
from .neural import forward, forward_dual
from .numerics import NumericFailure, TimeGrid
from .training import TrainedModel

STREAM_FORECAST = 4


class InsufficientEnsemble(ValueError):
    pass


@dataclass
class EnsembleForecast:
    times: np.ndarray
    member_latent: np.ndarray     # (m, T, n) or (m, T, 2n) for second-order models
    member_full: np.ndarray       # (m, T, N)
    mean: np.ndarray              # (T, N)
    std: np.ndarray               # (T, N)
    failed: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.member_full.shape[0]


def _member_rng(seed: int, member: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, STREAM_FORECAST, member]))


def initial_latent(model: TrainedModel, x0, xdot0=None):
    """Posterior of the latent initial state (location, scale) for one full state."""
    x = model.reduce(np.atleast_2d(x0))
    n = model.latent_dim
    if model.encoder is None:
        loc = x[0]
        scale = np.zeros_like(loc)
        if model.vindy.second_order:
            v = model.reduce(np.atleast_2d(xdot0), derivative=True)[0]
            return np.concatenate([loc, v]), np.zeros(2 * n), None
        return loc, scale, None
    tangents = [model.reduce(np.atleast_2d(xdot0), derivative=True)] if model.vindy.second_order else []
    out, dout, _ = forward_dual(model.encoder.net, x, tangents)
    loc, logvar = out[0, :n], out[0, n:]
    scale = np.exp(0.5 * logvar)
    if model.vindy.second_order:
        dm, ds = dout[0, 0, :n], dout[0, 0, n:]
        return loc, scale, (dm, 0.5 * scale * ds)
    return loc, scale, None


def decode(model: TrainedModel, Z: np.ndarray) -> np.ndarray:
    """Latent rows -> full states (decoder mean, inverse standardization, POD lift)."""
    n = model.latent_dim
    Z = Z[..., :n]
    Y = forward(model.decoder.net, Z)[0] if model.decoder is not None else Z
    return model.expand(Y)


def integrate_members(model: TrainedModel, Xis: np.ndarray, Z0: np.ndarray, beta, grid: TimeGrid):
    """RK4 for all members at once; each member has its own coefficient matrix.

    Returns the stacked states ``(m, T, d)`` and the step index at which each
    member first became non-finite (-1 if it never did). Failed members are
    dropped from later right-hand-side evaluations.
    """
    lib = model.vindy.library
    n = model.latent_dim
    second = model.vindy.second_order
    m, dim = Z0.shape
    P = np.broadcast_to(beta, (m, beta.shape[-1]))

    def rhs(t, S, idx):
        acc = np.einsum("mr,mnr->mn", library_values(lib, S, P[idx], t), Xis[idx])
        return np.concatenate([S[:, n:], acc], axis=1) if second else acc

    times, dt = grid.times, grid.dt
    out = np.full((m, grid.n_steps, dim), np.nan)
    out[:, 0] = Z0
    fail = np.full(m, -1)
    alive = np.arange(m)
    S = Z0.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(grid.n_steps - 1):
            t = times[k]
            k1 = rhs(t, S, alive)
            k2 = rhs(t + 0.5 * dt, S + 0.5 * dt * k1, alive)
            k3 = rhs(t + 0.5 * dt, S + 0.5 * dt * k2, alive)
            k4 = rhs(t + dt, S + dt * k3, alive)
            S = S + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            good = np.all(np.isfinite(S), axis=1)
            if not np.all(good):
                fail[alive[~good]] = k
                alive, S = alive[good], S[good]
                if alive.size == 0:
                    break
            out[alive, k + 1] = S
    return out, fail


def forecast(model: TrainedModel, x0, beta=None, grid: TimeGrid | None = None, m: int = 100, seed: int = 0,
             xdot0=None, keep_members: bool = True) -> EnsembleForecast:
    """Integrate ``m`` sampled (initial state, coefficients) pairs over ``grid``.

    Second-order models need ``xdot0``; the latent velocity follows from the
    encoder Jacobian with the same noise draw as the latent position.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if grid is None:
        raise ValueError("a time grid is required")
    if model.vindy.second_order and xdot0 is None:
        raise ValueError("second-order forecasting needs the initial velocity xdot0")
    beta = np.zeros(model.vindy.library.n_params) if beta is None else np.atleast_1d(np.asarray(beta, float))
    train_dt = model.meta.get("dt")
    if train_dt and not np.isclose(grid.dt, train_dt, rtol=1e-6):
        warnings.warn(f"forecast step {grid.dt:g} differs from the training step {train_dt:g}", stacklevel=2)

    loc, scale, vel = initial_latent(model, x0, xdot0)
    n = model.latent_dim
    Z0, Xis = [], []
    for k in range(m):
        rng = _member_rng(seed, k)
        zeta = rng.standard_normal(loc.shape)
        Xis.append(sample_coefficients(model.vindy, D.standard_noise(model.vindy.family, model.vindy.shape, rng)))
        z0 = loc + zeta * scale
        if vel is not None:
            z0 = np.concatenate([z0, vel[0] + zeta * vel[1]])
        Z0.append(z0)
    states, fail_step = integrate_members(model, np.stack(Xis), np.stack(Z0), beta, grid)
    ok = fail_step < 0
    failed = [{"member": int(k), "step": int(fail_step[k]), "t": float(grid.times[fail_step[k]])}
              for k in np.flatnonzero(~ok)]
    if not np.any(ok):
        raise NumericFailure(f"all {m} ensemble members diverged")
    latent = states[ok]
    full = np.stack([decode(model, Z) for Z in latent])
    x0 = np.ascontiguousarray(np.asarray(x0, dtype=np.float64))
    meta = {"m": m, "seed": seed, "stream": STREAM_FORECAST, "beta": beta.tolist(),
            "x0_sha256": hashlib.sha256(x0.tobytes()).hexdigest(), "n_failed": len(failed),
            "failed_members": failed, "t0": grid.t0, "t_end": grid.t_end, "n_steps": grid.n_steps,
            "latent_dim": n}
    fc = EnsembleForecast(grid.times, latent, full, full.mean(axis=0), full.std(axis=0), failed, meta)
    if not keep_members:
        fc.member_latent = fc.member_latent[:0]
    return fc


def credibility_bands(fc: EnsembleForecast, levels=(0.5, 0.9)) -> dict:
    """Quantile bands per level plus mean +- k std for k = 1, 2.

    Returns ``{name: (lower, upper)}`` with names ``q<level>`` and ``std<k>``.
    """
    if fc.m < 2:
        raise InsufficientEnsemble("credibility bands need at least two ensemble members")
    bands = {}
    for lev in levels:
        if not 0 < lev < 1:
            raise ValueError(f"band level {lev} must lie in (0, 1)")
        lo, hi = np.quantile(fc.member_full, [(1 - lev) / 2, 1 - (1 - lev) / 2], axis=0)
        bands[f"q{lev:g}"] = (lo, hi)
    for k in (1, 2):
        bands[f"std{k}"] = (fc.mean - k * fc.std, fc.mean + k * fc.std)
    return bands


def relative_error(pred, ref) -> tuple[float, np.ndarray]:
    """Space-time mean of ``|pred - ref| / |ref|`` (norms over components), and its per-step curve."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    num = np.linalg.norm(pred - ref, axis=-1)
    den = np.linalg.norm(ref, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        curve = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, 0.0))
    return float(np.mean(curve)), curve


def evaluate_arrays(mean, reference, bands: dict) -> dict:
    """Error and band coverage of a forecast mean against a reference of the same shape."""
    reference = np.asarray(reference, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    if reference.shape != mean.shape:
        raise ValueError(f"reference shape {reference.shape} does not match forecast {mean.shape}")
    err, curve = relative_error(mean, reference)
    coverage = {name: float(np.mean((reference >= lo) & (reference <= hi))) for name, (lo, hi) in bands.items()}
    return {"mean_relative_error": err, "error_curve": curve.tolist(), "coverage": coverage}


def evaluate(fc: EnsembleForecast, reference, ref_times=None, bands: dict | None = None) -> dict:
    """Space-time mean relative error, per-step error curve and coverage of every band."""
    if ref_times is not None and (len(ref_times) != len(fc.times) or not np.allclose(ref_times, fc.times)):
        raise ValueError("reference and forecast time grids differ")
    if bands is None:
        bands = credibility_bands(fc) if fc.m >= 2 else {}
    out = evaluate_arrays(fc.mean, reference, bands)
    out.update({"n_members": fc.m, "n_failed": len(fc.failed)})
    return out
