"""Proper orthogonal decomposition by the method of snapshots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PodBasis:
    modes: np.ndarray             # (N, k), orthonormal columns
    singular_values: np.ndarray   # all singular values of the centered snapshots, nonincreasing
    mean: np.ndarray              # (N,)

    @property
    def k(self) -> int:
        return self.modes.shape[1]

    def energy(self, k: int | None = None) -> float:
        """Fraction of squared singular values captured by the leading ``k`` modes."""
        s2 = self.singular_values ** 2
        total = s2.sum()
        k = self.k if k is None else k
        return float(s2[:k].sum() / total) if total > 0 else 1.0


def _complete_basis(Q: np.ndarray, N: int, k: int) -> np.ndarray:
    """Extend orthonormal columns ``Q`` to ``k`` columns with an orthonormal complement."""
    have = Q.shape[1]
    if have >= k:
        return Q[:, :k]
    full, _ = np.linalg.qr(np.concatenate([Q, np.eye(N)], axis=1))
    extra = full[:, have:]
    # remove residual overlap, keep the best-conditioned complement directions
    extra -= Q @ (Q.T @ extra)
    norms = np.linalg.norm(extra, axis=0)
    order = np.argsort(-norms)[: k - have]
    extra, _ = np.linalg.qr(extra[:, order])
    return np.concatenate([Q, extra], axis=1)


def pod_fit(X: np.ndarray, k: int) -> PodBasis:
    """Leading ``k`` POD modes of the rows of ``X`` (samples x N).

    The eigenproblem is solved on whichever Gram matrix of the mean-centered
    data is smaller; with fewer samples than dofs the modes are recovered
    from the temporal eigenvectors.
    """
    X = np.asarray(X, dtype=np.float64)
    ns, N = X.shape
    if not 1 <= k <= min(ns, N):
        raise ValueError(f"k={k} must lie in [1, {min(ns, N)}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    if N <= ns:
        evals, evecs = np.linalg.eigh(Xc.T @ Xc)
        order = np.argsort(evals)[::-1]
        evals, evecs = np.clip(evals[order], 0.0, None), evecs[:, order]
        modes = evecs[:, :k]
    else:
        evals, evecs = np.linalg.eigh(Xc @ Xc.T)
        order = np.argsort(evals)[::-1]
        evals, evecs = np.clip(evals[order], 0.0, None), evecs[:, order]
        sv = np.sqrt(evals)
        keep = sv > sv[0] * 1e-7 if sv[0] > 0 else np.zeros_like(sv, dtype=bool)
        n_ok = int(min(k, keep.sum()))
        modes = Xc.T @ evecs[:, :n_ok] / sv[:n_ok]
        # one re-orthonormalization pass; signs follow the snapshot construction
        Q, R = np.linalg.qr(modes)
        modes = Q * np.sign(np.diag(R)) if n_ok else Q
        modes = _complete_basis(modes, N, k)
    # deterministic sign convention: largest-magnitude entry of each mode positive
    idx = np.argmax(np.abs(modes), axis=0)
    modes = modes * np.sign(modes[idx, np.arange(modes.shape[1])])
    # C order so that reloaded bases reproduce projections bit for bit
    return PodBasis(np.ascontiguousarray(modes), np.sqrt(evals), mean)


def pod_project(basis: PodBasis, X: np.ndarray, center: bool = True) -> np.ndarray:
    """Reduced coordinates ``(X - mean) @ modes``; derivatives use ``center=False``."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != basis.modes.shape[0]:
        raise ValueError(f"expected {basis.modes.shape[0]} columns, got {X.shape[-1]}")
    return ((X - basis.mean) if center else X) @ basis.modes


def pod_lift(basis: PodBasis, Z: np.ndarray, center: bool = True) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape[-1] != basis.k:
        raise ValueError(f"expected {basis.k} reduced coordinates, got {Z.shape[-1]}")
    out = Z @ basis.modes.T
    return out + basis.mean if center else out
