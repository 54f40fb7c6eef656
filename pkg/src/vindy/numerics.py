"""Fixed-step time integration and finite-difference derivatives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Rhs = Callable[[float, np.ndarray], np.ndarray]


class NumericFailure(ArithmeticError):
    """Raised when a right-hand side produces non-finite values."""

    def __init__(self, message: str, t: float | None = None, step: int | None = None):
        super().__init__(message)
        self.t = t
        self.step = step


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 2:
            raise ValueError(f"n_steps must be >= 2, got {self.n_steps}")
        if not self.t_end > self.t0:
            raise ValueError(f"t_end ({self.t_end}) must exceed t0 ({self.t0})")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t0) / (self.n_steps - 1)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.t_end, self.n_steps)

    @classmethod
    def from_dt(cls, t0: float, dt: float, n_steps: int) -> "TimeGrid":
        return cls(t0, t0 + dt * (n_steps - 1), n_steps)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        if self.states.shape[0] != self.times.shape[0]:
            raise ValueError("row count of states must equal number of time stamps")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


def _checked(rhs: Rhs, t: float, z: np.ndarray) -> np.ndarray:
    out = np.asarray(rhs(t, z), dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise NumericFailure(f"non-finite right-hand side at t={t:.6g}", t=t)
    return out


def rk4_step(rhs: Rhs, t: float, state: np.ndarray, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step of size ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    state = np.asarray(state, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        k1 = _checked(rhs, t, state)
        k2 = _checked(rhs, t + 0.5 * dt, state + 0.5 * dt * k1)
        k3 = _checked(rhs, t + 0.5 * dt, state + 0.5 * dt * k2)
        k4 = _checked(rhs, t + dt, state + dt * k3)
        new = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(new)):
        raise NumericFailure(f"non-finite state after step at t={t:.6g}", t=t)
    return new


def integrate(rhs: Rhs, z0: np.ndarray, grid: TimeGrid) -> Trajectory:
    """Integrate ``rhs`` from ``z0`` with fixed-step RK4 over ``grid``.

    The right-hand side has signature ``rhs(t, z)``. Failures are re-raised
    as :class:`NumericFailure` with ``step`` set to the offending index.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    if not np.all(np.isfinite(z0)):
        raise ValueError("initial state must be finite")
    times = grid.times
    dt = grid.dt
    states = np.empty((grid.n_steps,) + z0.shape)
    states[0] = z0
    for k in range(grid.n_steps - 1):
        try:
            states[k + 1] = rk4_step(rhs, times[k], states[k], dt)
        except NumericFailure as exc:
            raise NumericFailure(f"integration failed at step {k}: {exc}", t=times[k], step=k) from exc
    return Trajectory(times, states)


# interior: 4th-order central; boundary rows: 2nd-order one-sided
_D1_CENTRAL = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D2_CENTRAL = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_D1_FORWARD = np.array([-3.0, 4.0, -1.0]) / 2.0
_D2_FORWARD = np.array([2.0, -5.0, 4.0, -1.0])


def finite_difference(states: np.ndarray, dt: float, order: int = 1) -> np.ndarray:
    """Time derivative of uniformly sampled rows of ``states``.

    Interior rows use 4th-order central stencils, the two rows at each end
    use 2nd-order one-sided stencils. ``order`` selects first or second
    derivative.
    """
    x = np.asarray(states, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    n = x.shape[0]
    if n < 5:
        raise ValueError(f"finite_difference needs at least 5 rows, got {n}")
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    out = np.empty_like(x)
    if order == 1:
        c, edge, scale = _D1_CENTRAL, _D1_FORWARD, dt
    else:
        c, edge, scale = _D2_CENTRAL, _D2_FORWARD, dt * dt
    out[2:-2] = c[0] * x[:-4] + c[1] * x[1:-3] + c[2] * x[2:-2] + c[3] * x[3:-1] + c[4] * x[4:]
    m = len(edge)
    for i in (0, 1):
        out[i] = edge @ x[i:i + m]
        # mirrored stencil for the trailing rows; odd derivative flips sign
        sign = -1.0 if order == 1 else 1.0
        out[n - 1 - i] = sign * (edge @ x[n - 1 - i - np.arange(m)])
    out /= scale
    return out[:, 0] if squeeze else out
