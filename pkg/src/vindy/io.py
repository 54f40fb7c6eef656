"""On-disk formats for datasets, checkpoints and forecasts.

All arrays are raw little-endian float64 in row-major order; their shapes
are stored only in the accompanying JSON document.

Checkpoint ``weights.bin`` layout (concatenated, in this order):
encoder W0, b0, W1, b1, ...; decoder W0, b0, ...; coefficient locations
(n x r); coefficient log-scales (n x r). Weight matrices are (out, in).
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from . import distributions as D
from .coefficients import VindyModel
from .library import CandidateLibrary
from .neural import Network
from .pod import PodBasis
from .systems import Dataset
from .training import TrainedModel, TrainingConfig
from .veni import Decoder, Encoder

SCHEMA_VERSION = 1
_LE = "<f8"


class FormatError(ValueError):
    """A directory does not follow the expected layout."""


def _write_bin(path, arr) -> None:
    np.ascontiguousarray(arr, dtype=_LE).tofile(path)


def _read_bin(path, shape) -> np.ndarray:
    path = Path(path)
    count = int(np.prod(shape)) if len(shape) else 1
    data = np.fromfile(path, dtype=_LE)
    if data.size != count:
        raise FormatError(f"{path.name}: expected {count} values, found {data.size}")
    return data.astype(np.float64).reshape(shape)


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def _check_version(doc: dict, what: str) -> None:
    v = doc.get("schema_version")
    if v != SCHEMA_VERSION:
        raise FormatError(f"{what} has schema version {v!r}, expected {SCHEMA_VERSION}")


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def save_dataset(data: Dataset, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    ids = data.trajectory_ids
    order = data.trajectory_index()
    lengths = [int(np.sum(ids == i)) for i in order]
    arrays = {"X": data.X, "dX": data.dX, "beta": data.beta, "t": data.times}
    if data.ddX is not None:
        arrays["ddX"] = data.ddX
    meta = {"schema_version": SCHEMA_VERSION, "kind": "dataset",
            "shapes": {k: list(v.shape) for k, v in arrays.items()},
            "trajectory_ids": [int(i) for i in order], "trajectory_lengths": lengths,
            "meta": data.meta}
    for k, v in arrays.items():
        _write_bin(path / f"{k}.bin", v)
    _write_json(path / "meta.json", meta)
    return path


def load_dataset(path) -> Dataset:
    path = Path(path)
    doc = _read_json(path / "meta.json")
    _check_version(doc, "dataset")
    shapes = doc["shapes"]
    arr = {k: _read_bin(path / f"{k}.bin", tuple(s)) for k, s in shapes.items()}
    ids = np.repeat(np.asarray(doc["trajectory_ids"], dtype=np.int64), doc["trajectory_lengths"])
    if ids.size != arr["X"].shape[0]:
        raise FormatError("trajectory lengths do not add up to the number of rows")
    return Dataset(arr["X"], arr["dX"], arr["beta"], arr["t"], ids, arr.get("ddX"), doc.get("meta", {}))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _dist_json(d: D.DiagonalDistribution) -> dict:
    return {"family": d.family, "location": np.asarray(d.location).tolist(),
            "log_scale": np.asarray(d.log_scale).tolist()}


def save_checkpoint(model: TrainedModel, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    v = model.vindy
    nets = {}
    flat = []
    for name, part in (("encoder", model.encoder), ("decoder", model.decoder)):
        if part is None:
            nets[name] = None
            continue
        nets[name] = {"layer_sizes": part.net.layer_sizes, "activation": part.net.activation}
        flat += part.net.params()
    if model.encoder is not None:
        nets["encoder"]["prior"] = _dist_json(model.encoder.prior)
    if model.decoder is not None:
        nets["decoder"]["sigma2"] = model.decoder.sigma2
    flat += [v.W_location, v.W_logscale]
    doc = {
        "schema_version": SCHEMA_VERSION, "kind": "checkpoint",
        "networks": nets,
        "coefficients": {"n_latent": v.n_latent, "family": v.family, "second_order": v.second_order,
                         "library": v.library.to_json(), "term_names": v.library.names,
                         "mask": v.mask.astype(int).tolist(),
                         "prior_location": v.prior_location.tolist(), "prior_scale": v.prior_scale.tolist()},
        "standardization": None if model.shift is None else {"shift": model.shift.tolist(), "scale": model.scale},
        "pod": None if model.pod is None else {"n_full": int(model.pod.modes.shape[0]), "k": model.pod.k,
                                               "n_singular_values": int(model.pod.singular_values.size)},
        "weights_layout": "encoder (W0, b0, ...), decoder (W0, b0, ...), coefficient location, coefficient log-scale",
        "config": model.config.to_dict(),
        "meta": model.meta,
    }
    _write_bin(path / "weights.bin", np.concatenate([p.ravel() for p in flat]))
    if model.pod is not None:
        _write_bin(path / "pod.bin", np.concatenate([model.pod.modes.ravel(), model.pod.singular_values,
                                                     model.pod.mean]))
    elif (path / "pod.bin").exists():
        os.remove(path / "pod.bin")
    _write_json(path / "model.json", doc)
    return path


def _take(flat, pos, shape):
    n = int(np.prod(shape))
    if pos + n > flat.size:
        raise FormatError("weights.bin is shorter than the architecture requires")
    return flat[pos:pos + n].reshape(shape).copy(), pos + n


def _net_from(spec, flat, pos):
    sizes = spec["layer_sizes"]
    Ws, bs = [], []
    for a, b in zip(sizes[:-1], sizes[1:]):
        W, pos = _take(flat, pos, (b, a))
        bias, pos = _take(flat, pos, (b,))
        Ws.append(W)
        bs.append(bias)
    return Network(list(sizes), spec["activation"], Ws, bs), pos


def load_checkpoint(path) -> TrainedModel:
    path = Path(path)
    if not (path / "model.json").is_file():
        raise FileNotFoundError(f"no checkpoint at {path}")
    doc = _read_json(path / "model.json")
    _check_version(doc, "checkpoint")
    flat = np.fromfile(path / "weights.bin", dtype=_LE).astype(np.float64)
    pos = 0
    enc = dec = None
    nets = doc["networks"]
    if nets.get("encoder"):
        net, pos = _net_from(nets["encoder"], flat, pos)
        p = nets["encoder"]["prior"]
        prior = D.DiagonalDistribution(p["family"], np.asarray(p["location"], float), np.asarray(p["log_scale"], float))
        enc = Encoder(net, net.n_out // 2, prior)
    if nets.get("decoder"):
        net, pos = _net_from(nets["decoder"], flat, pos)
        dec = Decoder(net, nets["decoder"].get("sigma2", 1.0))
    c = doc["coefficients"]
    lib = CandidateLibrary.from_json(c["library"])
    shape = (c["n_latent"], lib.r)
    W_loc, pos = _take(flat, pos, shape)
    W_ls, pos = _take(flat, pos, shape)
    if pos != flat.size:
        raise FormatError("weights.bin is longer than the architecture requires")
    vindy = VindyModel(lib, c["n_latent"], W_loc, W_ls, np.asarray(c["prior_location"], float),
                       np.asarray(c["prior_scale"], float), np.asarray(c["mask"], dtype=bool), c["family"],
                       c["second_order"])
    pod = None
    if doc.get("pod"):
        N, k, ns = doc["pod"]["n_full"], doc["pod"]["k"], doc["pod"]["n_singular_values"]
        raw = _read_bin(path / "pod.bin", (N * k + ns + N,))
        pod = PodBasis(raw[:N * k].reshape(N, k).copy(), raw[N * k:N * k + ns].copy(), raw[N * k + ns:].copy())
    st = doc.get("standardization")
    shift = None if st is None else np.asarray(st["shift"], dtype=np.float64)
    scale = 1.0 if st is None else float(st["scale"])
    cfg = TrainingConfig.from_dict(_config_from_json(doc["config"]))
    return TrainedModel(cfg, vindy, enc, dec, pod, shift, scale, [], doc.get("meta", {}))


def _config_from_json(d: dict) -> dict:
    d = dict(d)
    for k in ("latent_prior", "coefficient_prior"):
        if k in d:
            d[k] = tuple(d[k])
    return d


# ---------------------------------------------------------------------------
# history and forecasts
# ---------------------------------------------------------------------------

def save_forecast(fc, bands: dict, path, members: bool = True, csv_components: int = 16) -> Path:
    """Forecast directory; the plot CSV covers the first ``csv_components`` components."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    T, N = fc.mean.shape
    _write_bin(path / "t.bin", fc.times)
    _write_bin(path / "mean.bin", fc.mean)
    _write_bin(path / "std.bin", fc.std)
    band_files = {}
    for name, (lo, hi) in bands.items():
        fname = f"q_{name[1:]}.bin" if name.startswith("q") else f"{name}.bin"
        _write_bin(path / fname, np.stack([lo, hi]))
        band_files[name] = fname
    shapes = {"t": [T], "mean": [T, N], "std": [T, N], "bands": [2, T, N]}
    if members:
        _write_bin(path / "members.bin", fc.member_full)
        shapes["members"] = list(fc.member_full.shape)
    meta = {"schema_version": SCHEMA_VERSION, "kind": "forecast", "shapes": shapes, "bands": band_files,
            "meta": fc.meta, "failed": fc.failed}
    _write_json(path / "forecast_meta.json", meta)
    k = min(N, csv_components)
    with open(path / "forecast.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = ["t"]
        for j in range(k):
            header += [f"mean_{j}", f"std_{j}"] + [f"{name}_{side}_{j}" for name in bands for side in ("lo", "hi")]
        w.writerow(header)
        for i in range(T):
            row = [repr(float(fc.times[i]))]
            for j in range(k):
                row += [repr(float(fc.mean[i, j])), repr(float(fc.std[i, j]))]
                for lo, hi in bands.values():
                    row += [repr(float(lo[i, j])), repr(float(hi[i, j]))]
            w.writerow(row)
    return path


def load_forecast(path):
    """Returns ``(meta, arrays)``; arrays has t, mean, std, members (if stored) and bands."""
    path = Path(path)
    doc = _read_json(path / "forecast_meta.json")
    _check_version(doc, "forecast")
    sh = doc["shapes"]
    out = {"t": _read_bin(path / "t.bin", tuple(sh["t"])),
           "mean": _read_bin(path / "mean.bin", tuple(sh["mean"])),
           "std": _read_bin(path / "std.bin", tuple(sh["std"]))}
    if "members" in sh:
        out["members"] = _read_bin(path / "members.bin", tuple(sh["members"]))
    out["bands"] = {name: tuple(_read_bin(path / f, tuple(sh["bands"]))) for name, f in doc["bands"].items()}
    return doc, out


def save_metrics(metrics: dict, path, times=None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _write_json(path / "metrics.json", metrics)
    if times is not None:
        with open(path / "error_curve.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "relative_error"])
            for t, e in zip(times, metrics["error_curve"]):
                w.writerow([repr(float(t)), repr(float(e))])
