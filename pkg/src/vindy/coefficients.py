"""Variational coefficient layer for sparse latent dynamics.

Each entry of the ``(n, r)`` coefficient matrix has its own posterior
(location, log-scale) of a single family, and a prior of the same family.
Entries switched off in ``mask`` are exactly zero in every sample and are
excluded from the KL term.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from . import distributions as D
from .library import CandidateLibrary, evaluate


@dataclass
class VindyModel:
    library: CandidateLibrary
    n_latent: int
    W_location: np.ndarray
    W_logscale: np.ndarray
    prior_location: np.ndarray
    prior_scale: np.ndarray
    mask: np.ndarray
    family: str = D.LAPLACE
    second_order: bool = False

    def __post_init__(self):
        shape = (self.n_latent, self.library.r)
        self.family = D._family(self.family)
        if self.W_location.shape != shape or self.W_logscale.shape != shape or self.mask.shape != shape:
            raise ValueError(f"coefficient arrays must have shape {shape}")
        expected = 2 * self.n_latent if self.second_order else self.n_latent
        if self.library.n_latent != expected:
            raise ValueError(f"library is over {self.library.n_latent} variables, expected {expected}")
        self.prior_location = np.broadcast_to(np.asarray(self.prior_location, float), shape).copy()
        self.prior_scale = np.broadcast_to(np.asarray(self.prior_scale, float), shape).copy()
        self.mask = self.mask.astype(bool)

    @property
    def shape(self):
        return self.W_location.shape

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.W_logscale)

    def posterior(self) -> D.DiagonalDistribution:
        return D.DiagonalDistribution(self.family, self.W_location, self.W_logscale)

    def prior(self) -> D.DiagonalDistribution:
        return D.DiagonalDistribution.from_scale(self.family, self.prior_location, self.prior_scale)

    def mean(self) -> np.ndarray:
        return np.where(self.mask, self.W_location, 0.0)

    def params(self) -> list[np.ndarray]:
        return [self.W_location, self.W_logscale]

    def copy(self) -> "VindyModel":
        return replace(self, W_location=self.W_location.copy(), W_logscale=self.W_logscale.copy(),
                       mask=self.mask.copy(), prior_location=self.prior_location.copy(),
                       prior_scale=self.prior_scale.copy())


def init_vindy(library: CandidateLibrary, n_latent: int, prior=(D.LAPLACE, 0.0, 1.0), seed=None,
               init_scale: float = 0.1, second_order: bool = False) -> VindyModel:
    """Locations ``~ N(0, 0.01^2)``, scales ``init_scale``, everything active."""
    family, loc, scale = prior
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shape = (n_latent, library.r)
    return VindyModel(library, n_latent, rng.normal(0.0, 0.01, size=shape), np.full(shape, np.log(init_scale)),
                      loc, scale, np.ones(shape, dtype=bool), family, second_order)


def sample_coefficients(model: VindyModel, noise) -> np.ndarray:
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape[-2:] != model.shape:
        raise ValueError(f"noise shape {noise.shape} does not match coefficients {model.shape}")
    return np.where(model.mask, model.W_location + noise * model.scale, 0.0)


def predict_derivative(Xi: np.ndarray, library: CandidateLibrary, z, beta=None, t=None) -> np.ndarray:
    """``Xi @ Theta(z, beta, t)`` for one state or for rows."""
    theta = evaluate(library, z, beta, t)
    if Xi.shape[-1] != library.r:
        raise ValueError(f"coefficient matrix has {Xi.shape[-1]} columns, library has {library.r} terms")
    return theta @ Xi.T


def coefficient_kl(model: VindyModel) -> float:
    kl = D.kl_elementwise(model.posterior(), model.prior())
    return float(np.sum(kl[model.mask]))


def coefficient_kl_grad(model: VindyModel):
    """Gradient of :func:`coefficient_kl` w.r.t. ``W_location`` and ``W_logscale``."""
    g_loc, g_scale = D.kl_grad(model.posterior(), model.prior())
    m = model.mask
    return np.where(m, g_loc, 0.0), np.where(m, g_scale * model.scale, 0.0)


def pdf_at_zero(model: VindyModel) -> np.ndarray:
    return D.pdf_at(model.posterior(), 0.0)


def pdf_threshold(model: VindyModel, tau: float):
    """Switch off entries whose posterior density at zero exceeds ``tau``.

    Returns the updated model (a copy) and a report with one record per
    entry: equation, term, location, scale, density at zero, and whether it
    was pruned by this call.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    dens = pdf_at_zero(model)
    prune = model.mask & (dens > tau)
    new = model.copy()
    new.mask = model.mask & ~prune
    report = []
    for i in range(model.n_latent):
        for j, name in enumerate(model.library.names):
            report.append({"equation": i, "term": name, "location": float(model.W_location[i, j]),
                           "scale": float(model.scale[i, j]), "pdf_at_zero": float(dens[i, j]),
                           "pruned": bool(prune[i, j]), "active": bool(new.mask[i, j])})
    return new, report


def active_terms(model: VindyModel) -> list[set[str]]:
    names = model.library.names
    return [{names[j] for j in np.flatnonzero(model.mask[i])} for i in range(model.n_latent)]


def second_order_rhs(model: VindyModel, state, beta=None, t=None, Xi=None) -> np.ndarray:
    """Augmented first-order field ``[z_dot, Xi Theta(z, z_dot, beta, t)]``."""
    n = model.n_latent
    state = np.asarray(state, dtype=np.float64)
    if state.shape[-1] != 2 * n:
        raise ValueError(f"state must have {2 * n} entries")
    Xi = model.mean() if Xi is None else Xi
    acc = predict_derivative(Xi, model.library, state, beta, t)
    return np.concatenate([state[..., n:], acc], axis=-1)


def latent_rhs(model: VindyModel, Xi: np.ndarray, beta=None):
    """Right-hand side ``f(t, z)`` for integration with a fixed coefficient sample."""
    beta = None if beta is None else np.asarray(beta, dtype=np.float64)
    n = model.n_latent
    lib = model.library

    if model.second_order:
        def rhs(t, s):
            return np.concatenate([s[n:], evaluate(lib, s, beta, t) @ Xi.T])
    else:
        def rhs(t, s):
            return evaluate(lib, s, beta, t) @ Xi.T
    return rhs


def export_posterior_csv(model: VindyModel, path) -> None:
    dens = pdf_at_zero(model)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["equation", "term", "location", "scale", "pdf_at_zero", "masked"])
        for i in range(model.n_latent):
            for j, name in enumerate(model.library.names):
                w.writerow([i, name, repr(float(model.W_location[i, j])), repr(float(model.scale[i, j])),
                            repr(float(dens[i, j])), int(not model.mask[i, j])])
