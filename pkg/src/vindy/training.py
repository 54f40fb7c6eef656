"""Joint offline training of the variational autoencoder and coefficient layer.

The objective per mini-batch is

    l1 * mean ||x - x_hat||^2                 reconstruction
  + l2 * mean KL(q(z|x) || p(z))              latent posterior
  + l3 * mean ||z_dot - Xi Theta(z)||^2       latent dynamics
  + l4 * KL(q(Xi) || p(Xi))                   coefficient posterior (once per batch)
  + l5 * mean ||x_dot - J_dec(z) Xi Theta||^2 full dynamics

with one latent noise draw per sample and one coefficient draw per batch.
For second-order models the dynamics targets are accelerations and the
library is evaluated on ``[z, z_dot]``.

Without encoder/decoder (``latent_dim=None``) the coefficient layer is fit
directly on the (optionally POD-reduced) states.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import distributions as D
from .coefficients import VindyModel, coefficient_kl, coefficient_kl_grad, init_vindy
from .library import CandidateLibrary, add_forced_harmonic, add_trig, build_polynomial, evaluate, jacobian_z
from .neural import adam_step, backward_dual, forward_dual, init_adam
from .pod import PodBasis, pod_fit, pod_lift, pod_project
from .systems import Dataset
from .veni import Decoder, Encoder, make_decoder, make_encoder

logger = logging.getLogger(__name__)

TERM_NAMES = ("reconstruction", "latent_kl", "latent_dynamics", "coefficient_kl", "full_dynamics")

# named sub-streams of the root seed
STREAM_INIT = 2
STREAM_TRAIN = 3
STREAM_SPLIT = 5
STREAM_VALID = 6


class TrainingDiverged(ArithmeticError):
    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainingConfig:
    lambdas: tuple = (0.0, 0.0, 1.0, 1e-3, 0.0)
    epochs: int = 500
    batch_size: int = 256
    learning_rate: float = 1e-3
    validation_fraction: float = 0.1
    seed: int = 0
    second_order: bool = False
    latent_dim: int | None = None
    encoder_layers: tuple = ()
    decoder_layers: tuple = ()
    activation: str = "elu"
    latent_prior: tuple = (D.GAUSSIAN, 0.0, 1.0)
    coefficient_prior: tuple = (D.LAPLACE, 0.0, 1.0)
    library: dict = field(default_factory=lambda: {"degree": 2, "include_bias": True,
                                                   "include_interactions": True})
    pod_dim: int | None = None
    standardize: bool = True
    init_scale: float = 0.1

    def __post_init__(self):
        self.lambdas = tuple(float(v) for v in self.lambdas)
        if len(self.lambdas) != 5 or min(self.lambdas) < 0:
            raise ValueError("lambdas must be five nonnegative weights")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        self.encoder_layers = tuple(int(v) for v in self.encoder_layers)
        self.decoder_layers = tuple(int(v) for v in self.decoder_layers)
        self.latent_prior = tuple(self.latent_prior)
        self.coefficient_prior = tuple(self.coefficient_prior)

    @property
    def autoencoder(self) -> bool:
        return self.latent_dim is not None

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("lambdas", "encoder_layers", "decoder_layers", "latent_prior", "coefficient_prior"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


def lint_config(cfg: TrainingConfig) -> list[str]:
    """Weight-balance warnings; the reconstruction and latent-dynamics weights should dominate."""
    l1, l2, l3, l4, l5 = cfg.lambdas
    msgs = []
    dominant = [v for v in (l1 if cfg.autoencoder else 0.0, l3) if v > 0]
    if not dominant:
        msgs.append("neither reconstruction (l1) nor latent dynamics (l3) is weighted")
        return msgs
    floor = min(dominant)
    for name, v in (("l2", l2), ("l4", l4), ("l5", l5)):
        if v > floor:
            msgs.append(f"{name}={v:g} exceeds the dominant weight {floor:g}; regularizers are usually "
                        f"kept orders of magnitude smaller")
    return msgs


@dataclass
class LossBreakdown:
    reconstruction: float
    latent_kl: float
    latent_dynamics: float
    coefficient_kl: float
    full_dynamics: float
    total: float
    lambdas: tuple = (0.0,) * 5

    def terms(self) -> tuple:
        return tuple(getattr(self, n) for n in TERM_NAMES)

    def weighted(self) -> tuple:
        return tuple(l * t for l, t in zip(self.lambdas, self.terms()))


@dataclass
class Batch:
    x: np.ndarray
    dx: np.ndarray
    beta: np.ndarray
    t: np.ndarray
    ddx: np.ndarray | None = None
    theta: np.ndarray | None = None   # cached library values (coefficient-only mode)

    def __len__(self):
        return self.x.shape[0]

    def rows(self, idx) -> "Batch":
        return Batch(self.x[idx], self.dx[idx], self.beta[idx], self.t[idx],
                     None if self.ddx is None else self.ddx[idx],
                     None if self.theta is None else self.theta[idx])


def build_library(spec: dict, n_state: int, n_params: int, second_order: bool) -> CandidateLibrary:
    """Library from a config fragment: polynomial part plus optional forced/trig terms."""
    if second_order:
        n = n_state
        names = ([f"z{i + 1}" for i in range(n)] + [f"dz{i + 1}" for i in range(n)]) if n > 1 else ["z", "dz"]
        lib = build_polynomial(2 * n, n_params, spec.get("degree", 3), spec.get("include_bias", True),
                               spec.get("include_interactions", True), spec.get("include_params", False),
                               latent_names=names, param_names=spec.get("param_names"))
    else:
        lib = build_polynomial(n_state, n_params, spec.get("degree", 2), spec.get("include_bias", True),
                               spec.get("include_interactions", True), spec.get("include_params", False),
                               param_names=spec.get("param_names"))
    for amp, freq in spec.get("forced_harmonic", []) or []:
        lib = add_forced_harmonic(lib, amp, freq)
    for target, func in spec.get("trig", []) or []:
        lib = add_trig(lib, target, func)
    return lib


# ---------------------------------------------------------------------------
# loss and gradients
# ---------------------------------------------------------------------------

def loss_and_grads(batch: Batch, encoder: Encoder | None, decoder: Decoder | None, vindy: VindyModel,
                   lambdas, zeta_z: np.ndarray | None, zeta_xi: np.ndarray, need_grads: bool = True,
                   residual_scale: float = 1.0):
    """Loss breakdown and gradients for one batch.

    ``zeta_z`` (B, n) pairs the latent sample with its chain-rule velocity;
    ``zeta_xi`` (n, r) is the coefficient noise shared by the batch.
    ``residual_scale`` multiplies the reconstruction and full-dynamics
    residuals, so that with standardized network inputs/outputs those terms
    are still measured in the units of the reduced data.
    Gradients are returned as ``{"encoder": [...], "decoder": [...], "vindy": [gW_loc, gW_logscale]}``
    with network gradients in :meth:`Network.params` order.
    """
    l1, l2, l3, l4, l5 = lambdas
    B = len(batch)
    n = vindy.n_latent
    lib = vindy.library
    second = vindy.second_order
    if second and batch.ddx is None:
        raise ValueError("second-order training needs accelerations (ddx) in the batch")

    scale_xi = np.exp(vindy.W_logscale)
    Xi = np.where(vindy.mask, vindy.W_location + zeta_xi * scale_xi, 0.0)

    rec = lkl = full = 0.0
    if encoder is None:
        if second:
            state, target = np.concatenate([batch.x, batch.dx], axis=1), batch.ddx
        else:
            state, target = batch.x, batch.dx
    else:
        tangents = [batch.dx] + ([batch.ddx] if second else [])
        out, dout, enc_cache = forward_dual(encoder.net, batch.x, tangents)
        m, s = out[:, :n], out[:, n:]
        delta = np.exp(0.5 * s)
        dm = dout[:, :, :n]
        ds = dout[:, :, n:]
        z = m + zeta_z * delta
        zd = dm + zeta_z * (0.5 * delta) * ds          # (K, B, n): velocities (and accelerations)
        if second:
            state, target = np.concatenate([z, zd[0]], axis=1), zd[1]
        else:
            state, target = z, zd[0]
        post = D.DiagonalDistribution(D.GAUSSIAN, m, 0.5 * s)
        prior = encoder.prior
        prior_b = D.DiagonalDistribution(prior.family, np.broadcast_to(prior.location, m.shape),
                                         np.broadcast_to(prior.log_scale, m.shape))
        lkl = float(np.sum(D.kl_elementwise(post, prior_b))) / B

    theta = batch.theta if batch.theta is not None else evaluate(lib, state, batch.beta, batch.t)
    pred = theta @ Xi.T
    r3 = target - pred
    dyn = float(np.sum(r3 * r3)) / B

    if decoder is not None:
        full_target = batch.ddx if second else batch.dx
        xhat, dxhat, dec_cache = forward_dual(decoder.net, z, [pred])
        r1 = residual_scale * (batch.x - xhat)
        r5 = residual_scale * (full_target - dxhat[0])
        rec = float(np.sum(r1 * r1)) / B
        full = float(np.sum(r5 * r5)) / B

    ckl = coefficient_kl(vindy)
    total = l1 * rec + l2 * lkl + l3 * dyn + l4 * ckl + l5 * full
    breakdown = LossBreakdown(rec, lkl, dyn, ckl, full, total, tuple(lambdas))
    if not need_grads:
        return breakdown, None

    grads = {"encoder": None, "decoder": None}
    g_pred = (-2.0 * l3 / B) * r3
    g_target = -g_pred
    g_state = None
    if decoder is not None:
        g_xhat = (-2.0 * l1 * residual_scale / B) * r1
        g_dxhat = ((-2.0 * l5 * residual_scale / B) * r5)[None]
        wg, bg, g_z_dec, g_tan = backward_dual(decoder.net, dec_cache, g_xhat, g_dxhat)
        grads["decoder"] = [g for pair in zip(wg, bg) for g in pair]
        g_pred = g_pred + g_tan[0]

    g_Xi = g_pred.T @ theta
    if encoder is not None:
        g_theta = g_pred @ Xi
        J = jacobian_z(lib, state, batch.beta, batch.t)
        g_state = np.einsum("br,brk->bk", g_theta, J)
        g_z = g_z_dec + g_state[:, :n]
        if second:
            g_zd = np.stack([g_state[:, n:], g_target])
        else:
            g_zd = g_target[None]
        # z = m + zeta*delta ; zd_k = dm_k + zeta*0.5*delta*ds_k ; delta = exp(s/2)
        g_m = g_z.copy()
        g_delta = g_z * zeta_z + np.sum(g_zd * zeta_z * 0.5 * ds, axis=0)
        g_dm = g_zd
        g_ds = g_zd * zeta_z * 0.5 * delta
        g_s = g_delta * 0.5 * delta
        kl_loc, kl_scale = D.kl_grad(post, prior_b)
        g_m += (l2 / B) * kl_loc
        g_s += (l2 / B) * kl_scale * 0.5 * delta
        g_out = np.concatenate([g_m, g_s], axis=1)
        g_dout = np.concatenate([g_dm, g_ds], axis=2)
        wg, bg, _, _ = backward_dual(encoder.net, enc_cache, g_out, g_dout)
        grads["encoder"] = [g for pair in zip(wg, bg) for g in pair]

    kl_gl, kl_gls = coefficient_kl_grad(vindy)
    g_loc = np.where(vindy.mask, g_Xi, 0.0) + l4 * kl_gl
    g_ls = np.where(vindy.mask, g_Xi * zeta_xi * scale_xi, 0.0) + l4 * kl_gls
    grads["vindy"] = [g_loc, g_ls]
    return breakdown, grads


def compute_loss(batch: Batch, encoder, decoder, vindy, lambdas, zeta_z, zeta_xi,
                 residual_scale: float = 1.0) -> LossBreakdown:
    return loss_and_grads(batch, encoder, decoder, vindy, lambdas, zeta_z, zeta_xi, need_grads=False,
                          residual_scale=residual_scale)[0]


# ---------------------------------------------------------------------------
# trained model and data pipeline
# ---------------------------------------------------------------------------

@dataclass
class TrainedModel:
    config: TrainingConfig
    vindy: VindyModel
    encoder: Encoder | None = None
    decoder: Decoder | None = None
    pod: PodBasis | None = None
    shift: np.ndarray | None = None    # standardization of reduced states
    scale: float = 1.0
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def latent_dim(self) -> int:
        return self.vindy.n_latent

    # full state -> encoder input space
    def reduce(self, X, derivative: bool = False) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        Z = pod_project(self.pod, X, center=not derivative) if self.pod is not None else X
        if self.shift is not None:
            Z = Z / self.scale if derivative else (Z - self.shift) / self.scale
        return Z

    def expand(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=np.float64)
        if self.shift is not None:
            Y = Y * self.scale + self.shift
        return pod_lift(self.pod, Y) if self.pod is not None else Y

    def parameter_groups(self) -> list[list[np.ndarray]]:
        groups = []
        if self.encoder is not None:
            groups.append(self.encoder.net.params())
        if self.decoder is not None:
            groups.append(self.decoder.net.params())
        groups.append(self.vindy.params())
        return groups

    def snapshot(self) -> list[np.ndarray]:
        return [p.copy() for g in self.parameter_groups() for p in g]

    def restore(self, saved) -> None:
        flat = [p for g in self.parameter_groups() for p in g]
        for p, s in zip(flat, saved):
            p[...] = s


def make_batch(model: TrainedModel, data: Dataset) -> Batch:
    x = model.reduce(data.X)
    dx = model.reduce(data.dX, derivative=True)
    ddx = model.reduce(data.ddX, derivative=True) if data.ddX is not None else None
    batch = Batch(x, dx, data.beta, data.times, ddx)
    if model.encoder is None:
        state = np.concatenate([x, dx], axis=1) if model.vindy.second_order else x
        batch.theta = evaluate(model.vindy.library, state, data.beta, data.times)
    return batch


def split_trajectories(data: Dataset, fraction: float, seed: int):
    ids = np.array(data.trajectory_index())
    if fraction <= 0 or len(ids) < 2:
        return ids, np.array([], dtype=ids.dtype)
    n_val = min(len(ids) - 1, max(1, int(round(fraction * len(ids)))))
    perm = np.random.default_rng(np.random.SeedSequence([seed, STREAM_SPLIT])).permutation(len(ids))
    val = np.sort(ids[perm[:n_val]])
    train = np.sort(ids[perm[n_val:]])
    return train, val


def setup_model(data: Dataset, cfg: TrainingConfig, train_ids=None) -> TrainedModel:
    """Fit POD / standardization on the training trajectories and initialize all weights."""
    train = data if train_ids is None else data.select(train_ids)
    pod = None
    if cfg.pod_dim:
        pod = pod_fit(train.X, cfg.pod_dim)
    Xr = pod_project(pod, train.X) if pod is not None else train.X
    shift, scale = None, 1.0
    if cfg.autoencoder and cfg.standardize:
        shift = Xr.mean(axis=0)
        scale = float(np.std(Xr - shift)) or 1.0
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, STREAM_INIT]))
    n_params = data.beta.shape[1]
    if cfg.autoencoder:
        n = cfg.latent_dim
        enc = make_encoder(Xr.shape[1], cfg.encoder_layers, n, cfg.activation, rng)
        fam, loc, sc = cfg.latent_prior
        enc.prior = D.DiagonalDistribution.from_scale(fam, np.full(n, loc), np.full(n, sc))
        dec = make_decoder(n, cfg.decoder_layers or tuple(reversed(cfg.encoder_layers)), Xr.shape[1],
                           cfg.activation, rng)
    else:
        n = Xr.shape[1]
        enc = dec = None
    lib = build_library(cfg.library, n, n_params, cfg.second_order)
    vindy = init_vindy(lib, n, cfg.coefficient_prior, rng, cfg.init_scale, cfg.second_order)
    return TrainedModel(cfg, vindy, enc, dec, pod, shift, scale)


def _draws(rng, model: TrainedModel, B: int):
    zeta_z = rng.standard_normal((B, model.latent_dim)) if model.encoder is not None else None
    zeta_xi = D.standard_noise(model.vindy.family, model.vindy.shape, rng)
    return zeta_z, zeta_xi


def evaluate_split(model: TrainedModel, batch: Batch, seed: int, chunk: int = 4096) -> LossBreakdown:
    """Loss over a whole split with a fixed noise stream (comparable across epochs)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, STREAM_VALID]))
    zeta_xi = D.standard_noise(model.vindy.family, model.vindy.shape, rng)
    acc = np.zeros(5)
    N = len(batch)
    for start in range(0, N, chunk):
        sl = slice(start, min(N, start + chunk))
        sub = batch.rows(sl)
        zeta_z = rng.standard_normal((len(sub), model.latent_dim)) if model.encoder is not None else None
        lb = compute_loss(sub, model.encoder, model.decoder, model.vindy, model.config.lambdas, zeta_z, zeta_xi,
                          model.scale)
        acc += np.array(lb.terms()) * len(sub)
    terms = acc / N
    terms[3] = coefficient_kl(model.vindy)
    lam = model.config.lambdas
    return LossBreakdown(*terms, float(np.dot(lam, terms)), lam)


def mean_latent_norm(model: TrainedModel, batch: Batch) -> float:
    if model.encoder is None:
        return float(np.mean(np.linalg.norm(batch.x, axis=1)))
    from .veni import encode
    return float(np.mean(np.linalg.norm(encode(model.encoder, batch.x).location, axis=1)))


def train(data: Dataset, cfg: TrainingConfig, model: TrainedModel | None = None,
          callback=None) -> TrainedModel:
    """Mini-batch Adam over all parameter groups.

    Passing ``model`` continues training it (resume or fine-tuning after
    pruning); the epoch counter continues from ``model.meta['epochs_done']``.
    The returned model carries the weights with the best validation total.
    """
    if data.n_samples == 0:
        raise ValueError("cannot train on an empty dataset")
    if cfg.second_order and data.ddX is None:
        raise ValueError("second-order training needs a dataset with accelerations")
    for msg in lint_config(cfg):
        warnings.warn(msg, stacklevel=2)

    train_ids, val_ids = split_trajectories(data, cfg.validation_fraction, cfg.seed)
    if model is None:
        model = setup_model(data, cfg, train_ids)
    else:
        model.config = cfg
    start_epoch = int(model.meta.get("epochs_done", 0))
    model.meta.update({"seed": cfg.seed, "dt": data.meta.get("dt"), "train_trajectories": train_ids.tolist(),
                       "validation_trajectories": val_ids.tolist(),
                       "noise_sharing": "one coefficient draw per batch, one latent draw per sample"})

    tr = make_batch(model, data.select(train_ids))
    va = make_batch(model, data.select(val_ids)) if len(val_ids) else None

    params = [p for g in model.parameter_groups() for p in g]
    adam = init_adam(params)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, STREAM_TRAIN, start_epoch]))
    best = (math.inf, model.snapshot(), start_epoch)
    N = len(tr)
    for epoch in range(start_epoch + 1, start_epoch + cfg.epochs + 1):
        perm = rng.permutation(N)
        acc = np.zeros(5)
        for b, start in enumerate(range(0, N, cfg.batch_size)):
            sub = tr.rows(perm[start:start + cfg.batch_size])
            zeta_z, zeta_xi = _draws(rng, model, len(sub))
            lb, grads = loss_and_grads(sub, model.encoder, model.decoder, model.vindy, cfg.lambdas,
                                       zeta_z, zeta_xi, residual_scale=model.scale)
            if not math.isfinite(lb.total):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}", epoch, b)
            flat = (grads["encoder"] or []) + (grads["decoder"] or []) + grads["vindy"]
            adam_step(params, flat, adam, cfg.learning_rate)
            acc += np.array(lb.terms()) * len(sub)
        terms = acc / N
        terms[3] = coefficient_kl(model.vindy)
        tl = LossBreakdown(*terms, float(np.dot(cfg.lambdas, terms)), cfg.lambdas)
        model.history.append({"epoch": epoch, "split": "train", **_row(tl)})
        vl = evaluate_split(model, va, cfg.seed) if va is not None else tl
        if va is not None:
            model.history.append({"epoch": epoch, "split": "validation", **_row(vl)})
        if not math.isfinite(vl.total):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}", epoch)
        if vl.total < best[0]:
            best = (vl.total, model.snapshot(), epoch)
        if callback is not None:
            callback(epoch, tl, vl)
    model.restore(best[1])
    model.meta["epochs_done"] = start_epoch + cfg.epochs
    model.meta["best_epoch"] = best[2]
    if model.encoder is not None and mean_latent_norm(model, tr) < 1e-3:
        warnings.warn("latent coordinates collapsed (mean |z| < 1e-3); the identified dynamics may be "
                      "trivial, consider increasing the full-dynamics weight l5", stacklevel=2)
    return model


def _row(lb: LossBreakdown) -> dict:
    d = {n: float(v) for n, v in zip(TERM_NAMES, lb.terms())}
    d["total"] = float(lb.total)
    return d


def history_csv(history, path) -> None:
    import csv
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "split", *TERM_NAMES, "total"])
        for h in history:
            w.writerow([h["epoch"], h["split"], *(repr(h[k]) for k in TERM_NAMES), repr(h["total"])])
