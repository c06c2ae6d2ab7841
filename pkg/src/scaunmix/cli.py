"""Command-line entry point: ``scaunmix {synth,train,eval,export,tail,sweep}``.

Exit codes: 0 success, 1 bad input (contract or file format), 2 numerical
failure.  Training settings resolve as flags > ``--config`` JSON > defaults
and the resolved values are echoed into ``manifest.json``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    DegenerateInputError,
    GroundTruth,
    HsxFormatError,
    NoiseConfig,
    OutlierConfig,
    SeedError,
    add_noise,
    add_outliers,
    load,
    load_ground_truth,
    read_hsx,
    save,
    save_ground_truth,
    scale,
    scale_endmembers,
    synth_generate,
    unscale_endmembers,
    write_hsx,
)
from .export import write_abundance_maps, write_simplex_csvs, write_spectra_csv
from .linalg import ContractError, SingularMatrixError, tail_energy
from .metrics import (
    EvalReport,
    EvaluationError,
    align_endmembers,
    detect_null_members,
    evaluate,
    evaluate_without_truth,
)
from .model import ScaWeights, forward, loss
from .optim import TrainConfig, TrainingDivergedError, gt_init, init_weights, train

log = logging.getLogger("scaunmix")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2
WEIGHTS_KIND = "sca-weights"

INPUT_ERRORS = (ContractError, HsxFormatError, DegenerateInputError, OSError, json.JSONDecodeError)
NUMERIC_ERRORS = (TrainingDivergedError, SingularMatrixError, EvaluationError, SeedError, FloatingPointError)


# -- helpers --------------------------------------------------------------------

def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_weights(path, w: ScaWeights) -> None:
    """Encoder (transposed) stacked over decoder: a 2K x F matrix."""
    write_hsx(path, np.vstack([w.encoder.T, w.decoder]), kind=WEIGHTS_KIND)


def load_weights(path) -> ScaWeights:
    header, m = read_hsx(path)
    if header.get("kind") != WEIGHTS_KIND or m.shape[0] % 2:
        raise HsxFormatError(f"{path}: not a weights file (kind {header.get('kind')!r}, {m.shape[0]} rows)")
    k = m.shape[0] // 2
    return ScaWeights(m[:k].T.copy(), m[k:].copy())


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _threads() -> str | None:
    return os.environ.get("OMP_NUM_THREADS")


def resolve_train_config(args, k_default: int | None = None) -> TrainConfig:
    """Defaults, then ``--config`` JSON, then explicit flags."""
    values: dict = {}
    if getattr(args, "config", None):
        raw = json.loads(Path(args.config).read_text())
        if not isinstance(raw, dict):
            raise ContractError(f"{args.config}: config must be a JSON object")
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(raw) - known
        if unknown:
            raise ContractError(f"{args.config}: unknown config keys {sorted(unknown)}")
        values.update(raw)
    flag_map = {
        "k": "k",
        "lam": "lam",
        "epochs": "epochs",
        "steps": "steps_per_epoch",
        "batch": "batch_size",
        "lr": "lr",
        "epsilon": "epsilon",
        "seed": "seed",
        "log_every": "log_every",
    }
    for flag, key in flag_map.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    if "k" not in values:
        if k_default is None:
            raise ContractError("--k is required")
        values["k"] = k_default
    return TrainConfig(**values)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, help="number of members to extract")
    p.add_argument("--lambda", dest="lam", type=float, help="volume weight (default 0.001)")
    p.add_argument("--epochs", type=int, help="default 20")
    p.add_argument("--steps", type=int, help="steps per epoch (default 1000)")
    p.add_argument("--batch", type=int, help="batch rows (default: all pixels)")
    p.add_argument("--lr", type=float, help="default 1e-4")
    p.add_argument("--epsilon", type=float, help="activation guard (default 1e-8)")
    p.add_argument("--seed", type=int, help="init and batch seed (default 0)")
    p.add_argument("--log-every", dest="log_every", type=int, help="history interval (default 100)")
    p.add_argument("--config", help="JSON file of TrainConfig fields")


# -- commands -------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.k > args.f:
        raise ContractError(f"k exceeds f ({args.k} > {args.f})")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data, gt = synth_generate(args.k, args.f, args.n, args.seed, purity=args.purity)
    outliers: list[int] = []
    if args.snr is not None:
        data = add_noise(data, NoiseConfig(args.snr, args.noise_seed))
    if args.outliers:
        data, idx = add_outliers(data, OutlierConfig(args.outliers, args.outlier_seed))
        outliers = [int(i) for i in idx]
    save(data, out / "dataset.hsx")
    paths = save_ground_truth(gt, out, width=data.width, height=data.height)
    manifest = {
        "command": "synth",
        "version": __version__,
        "params": {
            "k": args.k,
            "f": args.f,
            "n": args.n,
            "seed": args.seed,
            "purity": args.purity,
            "snr_db": args.snr,
            "noise_seed": args.noise_seed,
            "outliers": args.outliers,
            "outlier_seed": args.outlier_seed,
        },
        "outlier_indices": outliers,
        "artifacts": {"dataset": str(out / "dataset.hsx"), **paths},
        "sha256": {"dataset": sha256_file(out / "dataset.hsx")},
    }
    write_json(out / "manifest.json", manifest)
    print(f"wrote {data.n_pixels}x{data.n_bands} dataset ({data.width}x{data.height}) to {out}")
    return EXIT_OK


def _gt_from_args(args, n_pixels: int) -> GroundTruth | None:
    if not getattr(args, "gt", None):
        return None
    abund = getattr(args, "abundances", None)
    if abund is None:
        guess = Path(args.gt).with_name("abundances.hsx")
        abund = guess if guess.exists() else None
    gt = load_ground_truth(args.gt, abund)
    if gt.abundances.shape[0] not in (0, n_pixels):
        raise ContractError(f"ground truth has {gt.abundances.shape[0]} abundance rows, data has {n_pixels}")
    return gt


def _mask_from_args(args):
    if not getattr(args, "mask", None):
        return None
    text = Path(args.mask).read_text()
    try:
        obj = json.loads(text)
        if isinstance(obj, dict):
            obj = obj.get("outlier_indices", [])
        return [int(i) for i in obj]
    except json.JSONDecodeError:
        return [int(tok) for tok in text.replace(",", " ").split()]


def cmd_train(args) -> int:
    data = load(args.data)
    gt_e = None
    if args.gt:
        gt_e = load_ground_truth(args.gt).endmembers
    cfg = resolve_train_config(args, k_default=gt_e.shape[0] if gt_e is not None else None)
    if cfg.k > data.n_bands:
        raise ContractError(f"k exceeds f ({cfg.k} > {data.n_bands})")
    scaled = scale(data)
    if args.init == "gt":
        if gt_e is None:
            raise ContractError("--init gt needs --gt endmembers.csv")
        if gt_e.shape != (cfg.k, data.n_bands):
            raise ContractError(f"ground-truth endmembers are {gt_e.shape}, expected {(cfg.k, data.n_bands)}")
        init = gt_init(scale_endmembers(gt_e, scaled.scale))
    else:
        init = init_weights(data.n_bands, cfg.k, cfg.seed)

    tail = tail_energy(scaled.y, min(cfg.k, *scaled.y.shape))
    t0 = time.perf_counter()
    w, history = train(scaled, cfg, init, tail=tail)
    wall = time.perf_counter() - t0

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_weights(out / "weights.hsx", w)
    history.to_csv(out / "history.csv")
    final = loss(scaled.y, w, cfg.lam, cfg.epsilon)
    a, _ = forward(scaled.y, w, cfg.epsilon)
    drift = float(max(np.abs(w.encoder - init.encoder).max(), np.abs(w.decoder - init.decoder).max()))
    manifest = {
        "command": "train",
        "version": __version__,
        "config": asdict(cfg),
        "init": args.init,
        "data": {"path": str(args.data), "sha256": sha256_file(args.data), "scale": asdict(scaled.scale)},
        "gt": str(args.gt) if args.gt else None,
        "threads": _threads(),
        "artifacts": {"weights": str(out / "weights.hsx"), "history": str(out / "history.csv")},
        "final_loss": final.as_dict(),
        "tail_energy": tail,
        "eym_margin": history.eym_margin(),
        "max_weight_drift": drift,
        "simplex": {
            "max_negative_abundance": history.max_negative_abundance,
            "max_row_sum_error": history.max_row_sum_error,
        },
        "null_members": detect_null_members(a),
        "wall_seconds": wall,
    }
    if gt_e is not None:
        gt = _gt_from_args(args, data.n_pixels)
        if gt is not None and gt.abundances.shape[0] == data.n_pixels:
            try:
                manifest["report"] = json.loads(evaluate(w, data, gt, cfg.epsilon).to_json())
            except (EvaluationError, ContractError) as exc:
                manifest["report"] = {"error": str(exc)}
    write_json(out / "manifest.json", manifest)
    print(
        "final loss: recon {recon:.6e} biorth {biorth:.6e} volume {volume:.6e} total {total:.6e}".format(
            **final.as_dict()
        )
    )
    print(f"tail energy bound: {tail:.6e}")
    if manifest["null_members"]:
        print(f"null members: {manifest['null_members']}")
    return EXIT_OK


def _write_report_csv(path, report: EvalReport) -> None:
    row = report.csv_row()
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(EvalReport.CSV_FIELDS))
        w.writeheader()
        w.writerow(row)


def cmd_eval(args) -> int:
    data = load(args.data)
    w = load_weights(args.weights)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gt = _gt_from_args(args, data.n_pixels)
    if gt is None or gt.abundances.shape[0] == 0:
        print(
            "no ground truth given: pass --gt endmembers.csv (with abundances.hsx beside it or --abundances) "
            "for SAD/RMSE scores; reporting data fit only",
            file=sys.stderr,
        )
        summary = evaluate_without_truth(w, data, args.epsilon)
        write_json(out / "report.json", summary)
        print(json.dumps(summary))
        return EXIT_OK
    report = evaluate(w, data, gt, args.epsilon, mask=_mask_from_args(args), reference=args.reference)
    (out / "report.json").write_text(report.to_json() + "\n")
    _write_report_csv(out / "report.csv", report)
    print(f"sad_mean {report.sad_mean:.6e} rmse_a {report.rmse_a:.6e} rmse_e {report.rmse_e:.6e} rmse_y {report.rmse_y:.6e}")
    return EXIT_OK


def cmd_export(args) -> int:
    data = load(args.data)
    w = load_weights(args.weights)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scaled = scale(data)
    a, _ = forward(scaled.y, w, args.epsilon)
    e_hat = unscale_endmembers(w.decoder, scaled.scale)
    gt = _gt_from_args(args, data.n_pixels)
    perm = None
    if gt is not None:
        live = [i for i in range(w.n_members) if i not in detect_null_members(a)]
        cand = live if len(live) >= gt.endmembers.shape[0] else list(range(w.n_members))
        perm = [cand[i] for i in align_endmembers(e_hat[cand], gt.endmembers)]
    if data.has_geometry:
        a_true = gt.abundances if gt is not None and gt.abundances.shape[0] == data.n_pixels else None
        write_abundance_maps(out, a, data.width, data.height, a_true, perm if a_true is not None else None)
    else:
        print("warning: dataset has no raster geometry, skipping abundance maps", file=sys.stderr)
    write_spectra_csv(
        out / "spectra.csv",
        e_hat,
        gt.endmembers if gt is not None else None,
        perm,
        data.wavelengths,
    )
    write_simplex_csvs(out, a)
    print(f"exported to {out}")
    return EXIT_OK


def cmd_tail(args) -> int:
    data = scale(load(args.data))
    k = args.k
    if not 1 <= k <= min(data.y.shape):
        raise ContractError(f"k must be in [1, {min(data.y.shape)}], got {k}")
    t = tail_energy(data.y, k)
    print(f"tail_energy {t:.12e}")
    if args.weights:
        w = load_weights(args.weights)
        _, recon = forward(data.y, w, args.epsilon)
        r = float(np.linalg.norm(data.y - recon))
        print(f"recon {r:.12e}")
        print(f"margin {r - t:.12e}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    """Noise (SNR x lambda) or outlier-count grid on one synthetic scene."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base, gt = synth_generate(args.k, args.f, args.n, args.seed)
    rows = []
    if args.kind == "noise":
        cells = [(snr, lam, 0) for snr in args.snr for lam in args.lambdas]
    else:
        cells = [(None, args.lambdas[0], count) for count in args.counts]
    for snr, lam, count in cells:
        data, mask = base, None
        if snr is not None:
            data = add_noise(data, NoiseConfig(snr, args.seed + 1))
        if count:
            data, mask = add_outliers(data, OutlierConfig(count, args.seed + 2))
        k_fit = args.k + (1 if args.kind == "outliers" else 0)
        cfg = TrainConfig(k=k_fit, lam=lam, epochs=args.epochs, steps_per_epoch=args.steps, seed=args.seed)
        scaled = scale(data)
        w, _ = train(scaled, cfg, init_weights(data.n_bands, k_fit, args.seed))
        report = evaluate(w, data, gt, mask=mask)
        rows.append({"snr_db": snr, "lambda": lam, "outliers": count, **report.csv_row()})
        print(json.dumps(rows[-1]))
    with open(out / f"sweep_{args.kind}.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    # usage errors are input errors, not numerical ones
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scaunmix", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic scene with ground truth")
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--f", type=int, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--purity", type=float, default=1.0)
    s.add_argument("--snr", type=float, help="add white noise at this SNR (dB)")
    s.add_argument("--noise-seed", dest="noise_seed", type=int, default=1)
    s.add_argument("--outliers", type=int, default=0)
    s.add_argument("--outlier-seed", dest="outlier_seed", type=int, default=2)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train on a dataset")
    t.add_argument("--data", required=True)
    _add_train_flags(t)
    t.add_argument("--init", choices=("random", "gt"), default="random")
    t.add_argument("--gt", help="ground-truth endmembers CSV (original units)")
    t.add_argument("--abundances", help="ground-truth abundances HSX")
    t.add_argument("--out", default=".")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score trained weights")
    e.add_argument("--data", required=True)
    e.add_argument("--weights", required=True)
    e.add_argument("--gt")
    e.add_argument("--abundances")
    e.add_argument("--mask", help="outlier indices (JSON list, manifest, or whitespace list)")
    e.add_argument("--reference", choices=("samson", "jasper", "urban"))
    e.add_argument("--epsilon", type=float, default=1e-8)
    e.add_argument("--out", default=".")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="write abundance maps, spectra and simplex CSVs")
    x.add_argument("--data", required=True)
    x.add_argument("--weights", required=True)
    x.add_argument("--gt")
    x.add_argument("--abundances")
    x.add_argument("--epsilon", type=float, default=1e-8)
    x.add_argument("--out", default=".")
    x.set_defaults(func=cmd_export)

    b = sub.add_parser("tail", help="rank-K tail energy of the scaled data")
    b.add_argument("--data", required=True)
    b.add_argument("--k", type=int, required=True)
    b.add_argument("--weights")
    b.add_argument("--epsilon", type=float, default=1e-8)
    b.set_defaults(func=cmd_tail)

    w = sub.add_parser("sweep", help="noise or outlier grid on a synthetic scene")
    w.add_argument("--kind", choices=("noise", "outliers"), required=True)
    w.add_argument("--k", type=int, default=3)
    w.add_argument("--f", type=int, default=60)
    w.add_argument("--n", type=int, default=2000)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--snr", type=float, nargs="+", default=[100, 50, 40, 30, 20])
    w.add_argument("--lambdas", type=float, nargs="+", default=[0.05, 0.1, 0.5, 1.0, 10.0])
    w.add_argument("--counts", type=int, nargs="+", default=[5, 10, 20, 50, 100])
    w.add_argument("--epochs", type=int, default=20)
    w.add_argument("--steps", type=int, default=1000)
    w.add_argument("--out", default=".")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"error: training diverged at step {exc.step} (last good step {exc.step - 1}): {exc.terms}", file=sys.stderr)
        return EXIT_NUMERIC
    except NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
