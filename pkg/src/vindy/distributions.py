"""Diagonal Gaussian and Laplace distributions.

Scales are held as log-scales so that any real raw parameter maps to a
valid distribution; ``scale`` is exponentiated on read.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

GAUSSIAN = "gaussian"
LAPLACE = "laplace"
FAMILIES = (GAUSSIAN, LAPLACE)

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class UnsupportedPair(ValueError):
    """KL requested between distributions of different families."""


def _family(name: str) -> str:
    name = name.lower()
    if name in ("normal", "n"):
        name = GAUSSIAN
    if name in ("l",):
        name = LAPLACE
    if name not in FAMILIES:
        raise ValueError(f"unknown distribution family {name!r}")
    return name


@dataclass(frozen=True)
class DiagonalDistribution:
    family: str
    location: np.ndarray
    log_scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "family", _family(self.family))
        loc = np.asarray(self.location, dtype=np.float64)
        ls = np.asarray(self.log_scale, dtype=np.float64)
        if loc.shape != ls.shape:
            raise ValueError(f"location {loc.shape} and scale {ls.shape} shapes differ")
        object.__setattr__(self, "location", loc)
        object.__setattr__(self, "log_scale", ls)

    @classmethod
    def from_scale(cls, family: str, location, scale) -> "DiagonalDistribution":
        scale = np.asarray(scale, dtype=np.float64)
        if np.any(scale <= 0):
            raise ValueError("scale entries must be positive")
        loc = np.asarray(location, dtype=np.float64)
        loc, scale = np.broadcast_arrays(loc, scale)
        return cls(family, loc.copy(), np.log(scale))

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def shape(self):
        return self.location.shape

    @property
    def variance(self) -> np.ndarray:
        s2 = self.scale ** 2
        return 2.0 * s2 if self.family == LAPLACE else s2

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        u = (x - self.location) / self.scale
        if self.family == GAUSSIAN:
            return ndtr(u)
        return np.where(u < 0, 0.5 * np.exp(np.minimum(u, 0)), 1.0 - 0.5 * np.exp(-np.maximum(u, 0)))


def kl_elementwise(q: DiagonalDistribution, p: DiagonalDistribution) -> np.ndarray:
    """Per-dimension closed-form ``KL(q || p)``."""
    if q.family != p.family:
        raise UnsupportedPair(f"KL between {q.family} and {p.family} is not supported")
    s1, s2 = q.scale, p.scale
    d = q.location - p.location
    log_ratio = p.log_scale - q.log_scale
    if q.family == GAUSSIAN:
        return log_ratio + (s1 * s1 + d * d) / (2.0 * s2 * s2) - 0.5
    ad = np.abs(d)
    return log_ratio + (s1 * np.exp(-ad / s1) + ad) / s2 - 1.0


def kl_divergence(q: DiagonalDistribution, p: DiagonalDistribution) -> float:
    return float(np.sum(kl_elementwise(q, p)))


def kl_grad(q: DiagonalDistribution, p: DiagonalDistribution) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the elementwise KL with respect to ``q.location`` and ``q.scale``."""
    if q.family != p.family:
        raise UnsupportedPair(f"KL between {q.family} and {p.family} is not supported")
    s1, s2 = q.scale, p.scale
    d = q.location - p.location
    if q.family == GAUSSIAN:
        return d / (s2 * s2), -1.0 / s1 + s1 / (s2 * s2)
    ad = np.abs(d)
    e = np.exp(-ad / s1)
    g_loc = np.sign(d) * (1.0 - e) / s2
    g_scale = -1.0 / s1 + e * (1.0 + ad / s1) / s2
    return g_loc, g_scale


def standard_noise(family: str, shape, seed=None) -> np.ndarray:
    """I.i.d. draws from the standard member of ``family``.

    Laplace draws use the inverse CDF, ``-sign(u) * log(1 - 2|u|)`` with
    ``u ~ U(-1/2, 1/2)``.
    """
    family = _family(family)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if isinstance(shape, int):
        if shape < 1:
            raise ValueError("dim must be >= 1")
        shape = (shape,)
    if family == GAUSSIAN:
        return rng.standard_normal(shape)
    u = rng.random(shape) - 0.5
    return -np.sign(u) * np.log1p(-2.0 * np.abs(u))


def reparam_sample(d: DiagonalDistribution, noise) -> np.ndarray:
    """``location + noise * scale``; ``noise`` may carry extra leading sample axes."""
    return d.location + np.asarray(noise) * d.scale


def log_pdf(d: DiagonalDistribution, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    s = d.scale
    if d.family == GAUSSIAN:
        u = (x - d.location) / s
        return -0.5 * u * u - d.log_scale - _LOG_SQRT_2PI
    return -np.abs(x - d.location) / s - d.log_scale - np.log(2.0)


def pdf_at(d: DiagonalDistribution, x) -> np.ndarray:
    return np.exp(log_pdf(d, x))


def log_pdf_grad(d: DiagonalDistribution, x) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``log_pdf`` with respect to location and scale."""
    x = np.asarray(x, dtype=np.float64)
    s = d.scale
    r = x - d.location
    if d.family == GAUSSIAN:
        return r / (s * s), r * r / s ** 3 - 1.0 / s
    return np.sign(r) / s, np.abs(r) / (s * s) - 1.0 / s
