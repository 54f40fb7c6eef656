"""Command-line front end.

Subcommands: generate, train, prune, forecast, eval. Exit codes are a stable
contract: 0 success, 2 configuration/usage error, 3 I/O error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import config as C
from . import io
from .coefficients import export_posterior_csv, pdf_threshold
from .numerics import NumericFailure, TimeGrid
from .systems import generate_dataset
from .training import TrainingDiverged, history_csv, train
from .vici import InsufficientEnsemble, credibility_bands, evaluate_arrays, forecast

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("vindy")


class UsageError(Exception):
    pass


def _out(args, cfg, key) -> Path:
    target = args.out or cfg["paths"].get(key)
    if not target:
        raise UsageError(f"no output directory: pass --out or set paths.{key}")
    return Path(target)


def _input(value, cfg, key, what) -> Path:
    target = value or cfg["paths"].get(key)
    if not target:
        raise UsageError(f"no {what} given")
    return Path(target)


def _say(args, msg) -> None:
    if not args.quiet:
        print(msg)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(args, cfg) -> int:
    out = _out(args, cfg, "dataset")
    system, ic = C.system_and_ic(cfg)
    n = cfg["dataset"]["n_trajectories"]
    data = generate_dataset(system, ic, C.dataset_grid(cfg), C.noise_config(cfg), n, C.betas(cfg))
    data.meta["root_seed"] = cfg["seed"]
    io.save_dataset(data, out)
    snr = data.meta.get("snr_db", {})
    _say(args, f"wrote {n} trajectories, X shape {list(data.X.shape)} -> {out}")
    for key in ("state", "velocity", "acceleration"):
        if key in snr:
            _say(args, f"  SNR {key:<12s} {snr[key]:8.2f} dB")
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    data = io.load_dataset(_input(args.dataset, cfg, "dataset", "dataset directory"))
    out = _out(args, cfg, "checkpoint")
    tcfg = C.training_config(cfg)
    model = io.load_checkpoint(args.resume) if args.resume else None
    if model is not None and args.resume:
        prev = Path(args.resume) / "history.csv"
        model.history = _read_history(prev) if prev.exists() else []

    def progress(epoch, tl, vl):
        if not args.quiet and (epoch % max(1, tcfg.epochs // 10) == 0):
            print(f"epoch {epoch:5d}  train {tl.total:.6g}  validation {vl.total:.6g}")

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = train(data, tcfg, model=model, callback=progress)
    for w in caught:
        log.warning("%s", w.message)
    model.meta["root_seed"] = cfg["seed"]
    io.save_checkpoint(model, out)
    history_csv(model.history, out / "history.csv")
    export_posterior_csv(model.vindy, out / "posterior.csv")
    _say(args, f"trained {tcfg.epochs} epochs (best epoch {model.meta.get('best_epoch')}) -> {out}")
    return EXIT_OK


def _read_history(path):
    import csv
    rows = []
    with open(path, encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            rows.append({k: (r[k] if k == "split" else int(r[k]) if k == "epoch" else float(r[k])) for k in r})
    return rows


def cmd_prune(args, cfg) -> int:
    src = _input(args.checkpoint, cfg, "checkpoint", "checkpoint directory")
    model = io.load_checkpoint(src)
    tau = args.tau if args.tau is not None else cfg["thresholding"]["tau"]
    if not tau > 0:
        raise UsageError("tau must be positive")
    model.vindy, report = pdf_threshold(model.vindy, tau)
    n_pruned = sum(r["pruned"] for r in report)
    model.meta.setdefault("pruning", []).append({"tau": tau, "pruned": n_pruned})
    fine_tune = args.fine_tune or cfg["thresholding"].get("fine_tune", False)
    if fine_tune:
        data = io.load_dataset(_input(args.dataset, cfg, "dataset", "dataset directory for fine-tuning"))
        tcfg = C.training_config(cfg)
        tcfg.epochs = cfg["thresholding"].get("fine_tune_epochs", 100)
        model = train(data, tcfg, model=model)
    out = Path(args.out) if args.out else src
    io.save_checkpoint(model, out)
    export_posterior_csv(model.vindy, out / "posterior.csv")
    _write_report(report, out / "pruning_report.csv")
    _say(args, f"tau={tau:g}: pruned {n_pruned} coefficients, {int(model.vindy.mask.sum())} active -> {out}")
    return EXIT_OK


def _write_report(report, path) -> None:
    import csv
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(report[0].keys()) if report else ["equation"])
        w.writeheader()
        for r in report:
            w.writerow(r)


def _initial_state(args, cfg, model):
    f = cfg["forecast"]
    ds_path = args.dataset or cfg["paths"].get("reference") or cfg["paths"].get("dataset")
    if f.get("x0") is not None:
        x0 = np.asarray(f["x0"], dtype=np.float64)
        xdot0 = np.asarray(f["xdot0"], dtype=np.float64) if f.get("xdot0") is not None else None
        beta = np.asarray(f.get("beta", []), dtype=np.float64)
        return x0, xdot0, beta, None
    if not ds_path:
        raise UsageError("forecast needs forecast.x0 or a dataset (--dataset) to take the initial state from")
    data = io.load_dataset(ds_path)
    k = args.trajectory if args.trajectory is not None else f.get("trajectory", 0)
    if k not in data.trajectory_index():
        raise UsageError(f"trajectory {k} not in dataset")
    tr = data.trajectory(k)
    grid = TimeGrid(float(tr.times[0]), float(tr.times[-1]), len(tr.times))
    return tr.X[0], tr.dX[0], tr.beta[0], grid


def cmd_forecast(args, cfg) -> int:
    model = io.load_checkpoint(_input(args.checkpoint, cfg, "checkpoint", "checkpoint directory"))
    out = _out(args, cfg, "forecast")
    x0, xdot0, beta, ds_grid = _initial_state(args, cfg, model)
    grid = C.forecast_grid(cfg, ds_grid)
    m = args.m if args.m is not None else cfg["forecast"]["m"]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fc = forecast(model, x0, beta, grid, m=m, seed=cfg["seed"],
                      xdot0=xdot0 if model.vindy.second_order else None)
    for w in caught:
        log.warning("%s", w.message)
    fc.meta["root_seed"] = cfg["seed"]
    bands = credibility_bands(fc, cfg["forecast"]["levels"]) if fc.m >= 2 else {}
    io.save_forecast(fc, bands, out, members=cfg["forecast"].get("members", True),
                     csv_components=cfg["forecast"].get("csv_components", 16))
    _say(args, f"forecast with m={m} ({len(fc.failed)} members failed) -> {out}")
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    fdir = _input(args.forecast, cfg, "forecast", "forecast directory")
    doc, arr = io.load_forecast(fdir)
    data = io.load_dataset(_input(args.reference, cfg, "reference", "reference dataset"))
    k = args.trajectory if args.trajectory is not None else cfg["forecast"].get("trajectory", 0)
    if k not in data.trajectory_index():
        raise UsageError(f"trajectory {k} not in reference dataset")
    ref = data.trajectory(k)
    if ref.X.shape != arr["mean"].shape or not np.allclose(ref.times, arr["t"], rtol=0, atol=1e-9):
        raise UsageError(f"grid mismatch: forecast {list(arr['mean'].shape)} vs reference {list(ref.X.shape)}")

    metrics = evaluate_arrays(arr["mean"], ref.X, arr["bands"])
    n_failed = len(doc.get("failed", []))
    n_members = arr["members"].shape[0] if "members" in arr else doc["meta"].get("m", 0) - n_failed
    metrics.update({"n_members": int(n_members), "n_failed": n_failed})
    metrics["seed"] = doc["meta"].get("root_seed", doc["meta"].get("seed"))
    metrics["reference_trajectory"] = int(k)
    out = _out(args, cfg, "metrics") if (args.out or cfg["paths"].get("metrics")) else fdir
    io.save_metrics(metrics, out, times=arr["t"])
    _say(args, f"mean relative error {metrics['mean_relative_error']:.4g}; coverage "
               + ", ".join(f"{k}={v:.3f}" for k, v in metrics["coverage"].items()))
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "prune": cmd_prune, "forecast": cmd_forecast,
            "eval": cmd_eval}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration, or a preset name "
                                         f"({', '.join(C.PRESETS)})")
    common.add_argument("--seed", type=int, help="override the root seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    p = argparse.ArgumentParser(prog="vindy", description="Variational sparse identification of latent dynamics.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="simulate a dataset")
    t = sub.add_parser("train", parents=[common], help="train a model on a dataset")
    t.add_argument("--dataset")
    t.add_argument("--resume", help="checkpoint to continue training from")
    r = sub.add_parser("prune", parents=[common], help="threshold coefficients by posterior density at zero")
    r.add_argument("--checkpoint")
    r.add_argument("--tau", type=float)
    r.add_argument("--fine-tune", action="store_true")
    r.add_argument("--dataset")
    f = sub.add_parser("forecast", parents=[common], help="ensemble forecast from a checkpoint")
    f.add_argument("--checkpoint")
    f.add_argument("--dataset", help="dataset providing the initial state and parameters")
    f.add_argument("--trajectory", type=int)
    f.add_argument("-m", type=int, help="ensemble size")
    e = sub.add_parser("eval", parents=[common], help="compare a forecast with a reference trajectory")
    e.add_argument("--forecast")
    e.add_argument("--reference")
    e.add_argument("--trajectory", type=int)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(levelname)s: %(message)s")
    try:
        cfg = C.load(args.config, args.seed) if args.config else C.resolve({"system": {"name": "rossler"}}, args.seed)
        return COMMANDS[args.command](args, cfg)
    except (OSError, io.FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingDiverged, NumericFailure) as exc:
        ctx = f" (epoch {exc.epoch})" if getattr(exc, "epoch", None) is not None else ""
        print(f"numeric failure{ctx}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, InsufficientEnsemble, ValueError) as exc:
        # ConfigError and argument checks inside the library are ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
