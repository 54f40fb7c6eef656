"""Candidate feature libraries Theta(z, beta, t) with analytic z-Jacobians."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np


class NameCollision(ValueError):
    pass


@dataclass(frozen=True)
class Term:
    """One candidate function.

    ``monomial`` terms carry an exponent per variable (latent dims first, then
    parameter dims). ``trig`` applies ``sin``/``cos`` to one latent coordinate.
    ``forced`` evaluates ``beta[amplitude] * cos(beta[frequency] * t)``.
    """

    kind: str
    name: str
    exponents: tuple[int, ...] = ()
    target: int = -1
    func: str = ""
    amplitude: int = -1
    frequency: int = -1

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "name": self.name}
        if self.kind == "monomial":
            d["exponents"] = list(self.exponents)
        elif self.kind == "trig":
            d.update(target=self.target, func=self.func)
        else:
            d.update(amplitude=self.amplitude, frequency=self.frequency)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Term":
        if d["kind"] == "monomial":
            return cls("monomial", d["name"], exponents=tuple(int(e) for e in d["exponents"]))
        if d["kind"] == "trig":
            return cls("trig", d["name"], target=int(d["target"]), func=d["func"])
        if d["kind"] == "forced":
            return cls("forced", d["name"], amplitude=int(d["amplitude"]), frequency=int(d["frequency"]))
        raise ValueError(f"unknown term kind {d['kind']!r}")


def _monomial_name(exps, names) -> str:
    parts = []
    for e, v in zip(exps, names):
        if e == 1:
            parts.append(v)
        elif e > 1:
            parts.append(f"{v}^{e}")
    return "*".join(parts) if parts else "1"


@dataclass(frozen=True)
class CandidateLibrary:
    terms: tuple[Term, ...]
    n_latent: int
    n_params: int = 0
    latent_names: tuple[str, ...] = ()
    param_names: tuple[str, ...] = ()
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not self.latent_names:
            object.__setattr__(self, "latent_names", tuple(f"z{i + 1}" for i in range(self.n_latent)))
        if not self.param_names:
            object.__setattr__(self, "param_names", tuple(f"b{i + 1}" for i in range(self.n_params)))
        names = [t.name for t in self.terms]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise NameCollision(f"duplicate term names: {dup}")
        nv = self.n_latent + self.n_params
        for t in self.terms:
            if t.kind == "monomial":
                if len(t.exponents) != nv or min(t.exponents, default=0) < 0:
                    raise ValueError(f"bad exponent vector for {t.name}")
            elif t.kind == "trig":
                if not 0 <= t.target < self.n_latent or t.func not in ("sin", "cos"):
                    raise ValueError(f"bad trig term {t.name}")
            elif t.kind == "forced":
                if not (0 <= t.amplitude < self.n_params and 0 <= t.frequency < self.n_params):
                    raise ValueError(f"forced term {t.name} indexes outside the parameter vector")
            else:
                raise ValueError(f"unknown term kind {t.kind!r}")

    @property
    def r(self) -> int:
        return len(self.terms)

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.terms]

    def _monomials(self):
        if "mono" not in self._cache:
            idx = [i for i, t in enumerate(self.terms) if t.kind == "monomial"]
            E = np.array([self.terms[i].exponents for i in idx], dtype=np.int64).reshape(
                len(idx), self.n_latent + self.n_params)
            self._cache["mono"] = (np.array(idx, dtype=np.int64), E)
        return self._cache["mono"]

    def to_json(self) -> dict:
        return {"n_latent": self.n_latent, "n_params": self.n_params, "latent_names": list(self.latent_names),
                "param_names": list(self.param_names), "terms": [t.to_dict() for t in self.terms]}

    @classmethod
    def from_json(cls, d: dict) -> "CandidateLibrary":
        return cls(tuple(Term.from_dict(t) for t in d["terms"]), int(d["n_latent"]), int(d["n_params"]),
                   tuple(d.get("latent_names", ())), tuple(d.get("param_names", ())))


def build_polynomial(n_latent: int, n_params: int = 0, degree: int = 2, include_bias: bool = True,
                     include_interactions: bool = True, include_params: bool = False,
                     latent_names=None, param_names=None) -> CandidateLibrary:
    """Polynomial library in graded lexicographic order.

    Parameters enter the monomials only when ``include_params`` is set;
    otherwise ``n_params`` just fixes the width of the parameter vector.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    lat = tuple(latent_names) if latent_names else tuple(f"z{i + 1}" for i in range(n_latent))
    par = tuple(param_names) if param_names else tuple(f"b{i + 1}" for i in range(n_params))
    nv = n_latent + n_params
    variables = list(range(nv if include_params else n_latent))
    names = lat + par
    terms = []
    if include_bias:
        terms.append(Term("monomial", "1", exponents=(0,) * nv))
    for d in range(1, degree + 1):
        for combo in combinations_with_replacement(variables, d):
            if not include_interactions and len(set(combo)) > 1:
                continue
            exps = [0] * nv
            for v in combo:
                exps[v] += 1
            terms.append(Term("monomial", _monomial_name(exps, names), exponents=tuple(exps)))
    return CandidateLibrary(tuple(terms), n_latent, n_params, lat, par)


def add_forced_harmonic(lib: CandidateLibrary, amplitude_param_index: int,
                        frequency_param_index: int) -> CandidateLibrary:
    a, w = lib.param_names[amplitude_param_index], lib.param_names[frequency_param_index]
    term = Term("forced", f"{a}*cos({w}*t)", amplitude=amplitude_param_index, frequency=frequency_param_index)
    return CandidateLibrary(lib.terms + (term,), lib.n_latent, lib.n_params, lib.latent_names, lib.param_names)


def add_trig(lib: CandidateLibrary, target: int, func: str) -> CandidateLibrary:
    term = Term("trig", f"{func}({lib.latent_names[target]})", target=target, func=func)
    return CandidateLibrary(lib.terms + (term,), lib.n_latent, lib.n_params, lib.latent_names, lib.param_names)


def _prepare(lib: CandidateLibrary, z, beta, t):
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    B = Z.shape[0]
    if Z.shape[1] != lib.n_latent:
        raise ValueError(f"expected {lib.n_latent} latent coordinates, got {Z.shape[1]}")
    if beta is None:
        beta = np.zeros(lib.n_params)
    beta = np.asarray(beta, dtype=np.float64)
    P = np.broadcast_to(beta, (B, beta.shape[-1])) if beta.ndim <= 1 else beta
    if P.shape != (B, lib.n_params):
        raise ValueError(f"expected {lib.n_params} parameters per sample, got shape {beta.shape}")
    T = np.broadcast_to(np.asarray(0.0 if t is None else t, dtype=np.float64), (B,))
    return Z, P, T, single


def evaluate(lib: CandidateLibrary, z, beta=None, t=None) -> np.ndarray:
    """Library values, shape ``(r,)`` for one state or ``(B, r)`` for rows."""
    Z, P, T, single = _prepare(lib, z, beta, t)
    out = np.empty((Z.shape[0], lib.r))
    idx, E = lib._monomials()
    if idx.size:
        V = np.concatenate([Z, P], axis=1)
        out[:, idx] = np.prod(V[:, None, :] ** E[None, :, :], axis=2)
    for i, term in enumerate(lib.terms):
        if term.kind == "trig":
            fn = np.sin if term.func == "sin" else np.cos
            out[:, i] = fn(Z[:, term.target])
        elif term.kind == "forced":
            out[:, i] = P[:, term.amplitude] * np.cos(P[:, term.frequency] * T)
    return out[0] if single else out


def jacobian_z(lib: CandidateLibrary, z, beta=None, t=None) -> np.ndarray:
    """``d Theta_i / d z_j``, shape ``(r, n)`` or ``(B, r, n)``."""
    Z, P, T, single = _prepare(lib, z, beta, t)
    B, n = Z.shape
    J = np.zeros((B, lib.r, n))
    idx, E = lib._monomials()
    if idx.size:
        V = np.concatenate([Z, P], axis=1)
        for j in range(n):
            ej = E[:, j]
            active = ej > 0
            if not np.any(active):
                continue
            Ered = E[active].copy()
            Ered[:, j] -= 1
            vals = ej[active][None, :] * np.prod(V[:, None, :] ** Ered[None, :, :], axis=2)
            J[:, idx[active], j] = vals
    for i, term in enumerate(lib.terms):
        if term.kind == "trig":
            zj = Z[:, term.target]
            J[:, i, term.target] = np.cos(zj) if term.func == "sin" else -np.sin(zj)
    return J[0] if single else J
