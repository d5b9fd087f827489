"""Command-line entry point.

Subcommands: calibrate, train, perturb, transform, attack, verify-dp,
energy, metrics. Every subcommand honors --seed (default from
FREQDP_SEED), and --json switches reports to machine-readable output.
Option precedence: CLI flags > --config JSON file > built-in defaults.
Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import attacks, image_io, synthetic
from .bdct import extract_dc, remove_dc, energy_profile, DC_CHANNELS
from .dataset import load_transformed_dataset, transform_dataset
from .dp import (
    BudgetAllocation,
    SensitivityMap,
    calibrate_sensitivity,
    derive_rng,
    perturb,
    verify_dp_bound,
)
from .pipeline import image_to_tensor
from .recognizer import ToyRecognizer, TrainConfig, evaluate, train_budgets
from .storage import (
    load_checkpoint,
    load_sensitivity,
    save_checkpoint,
    save_history_csv,
    save_sensitivity,
    write_tensor_file,
    read_tensor_file,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_seed() -> int:
    return int(os.environ.get("FREQDP_SEED", "0"))


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset options from --config JSON; flags always win."""
    if not getattr(args, "config", None):
        return args
    try:
        overrides = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read config {args.config}: {e}") from e
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if getattr(args, attr, None) is None:
            setattr(args, attr, value)
    return args


def _emit(report: dict, as_json: bool, lines) -> None:
    if as_json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        for line in lines:
            print(line)


def _load_images_dir(path):
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"{path}: not a directory")
    files = sorted(
        p for p in path.rglob("*") if p.suffix.lower() in (".png", ".ppm", ".pnm")
    )
    if not files:
        raise DataError(f"{path}: no images found")
    return [(p, image_io.load_image(p)) for p in files]


def _labeled_tensors(images_dir, factor):
    """Clean 189-channel tensors + labels from a class-per-subdir tree."""
    from .dataset import list_labeled_images

    items = list_labeled_images(images_dir)
    if not items:
        raise DataError(f"{images_dir}: no labeled images (class subdirs) found")
    class_names = sorted({label for _, label in items})
    index = {c: i for i, c in enumerate(class_names)}
    tensors, labels = [], []
    for path, label in items:
        t = remove_dc(image_to_tensor(image_io.load_image(path), factor))
        tensors.append(t.values)
        labels.append(index[label])
    return np.stack(tensors), np.asarray(labels), class_names


def _theta_and_epsilon(args, s: SensitivityMap):
    """Resolve theta (checkpoint or uniform zeros) and epsilon."""
    if getattr(args, "checkpoint", None):
        theta, _model, cfg, _hdr = load_checkpoint(args.checkpoint)
        eps = args.epsilon if args.epsilon is not None else cfg.epsilon_total
        return theta.reshape(s.shape), float(eps)
    if args.epsilon is None:
        raise UsageError("--epsilon is required without a checkpoint")
    return np.zeros(s.shape), float(args.epsilon)


def cmd_calibrate(args) -> int:
    images = _load_images_dir(args.images)
    tensors = (
        remove_dc(image_to_tensor(img, args.factor)).values for _p, img in images
    )
    s = calibrate_sensitivity(tensors, dataset_id=str(args.images))
    save_sensitivity(s, args.out)
    degenerate = int(np.count_nonzero(~s.support))
    lines = [f"calibrated {s.image_count} images -> {args.out}"]
    if degenerate == s.r_min.size:
        lines.append(
            "warning: every position has zero range; all budgets will be redistributed"
        )
    elif degenerate:
        lines.append(f"warning: {degenerate} zero-range positions get no budget")
    _emit(
        {
            "command": "calibrate",
            "images": s.image_count,
            "out": str(args.out),
            "zero_range_positions": degenerate,
            "seed": args.seed,
        },
        args.json,
        lines,
    )
    return EXIT_OK


def cmd_train(args) -> int:
    s = load_sensitivity(args.sensitivity)
    tensors, labels, class_names = _labeled_tensors(args.images, args.factor)
    cfg = TrainConfig(
        epsilon_total=args.epsilon,
        epochs=args.epochs,
        batch_size=args.batch_size,
        loss=args.loss,
        s=args.scale,
        m=args.margin,
        lr_model=args.lr,
        lr_theta=args.lr_theta if args.lr_theta is not None else args.lr,
        hidden_dim=args.hidden_dim,
        embed_dim=args.embed_dim,
        seed=args.seed,
        learn_theta=not args.uniform,
    )
    prior_history = []
    if args.resume:
        theta0, model0, cfg0, header = load_checkpoint(args.resume)
        prior_history = header.get("history", [])
    result = train_budgets(tensors, labels, s, cfg)
    if result.diverged:
        raise DataError("training diverged (non-finite loss)")
    history = prior_history + result.history
    final = history[-1] if history else {}
    save_checkpoint(
        args.out,
        result.theta,
        result.model,
        cfg,
        epoch=len(history),
        metrics=final,
    )
    if args.history:
        save_history_csv(args.history, history)
    _emit(
        {
            "command": "train",
            "epochs": len(history),
            "final": final,
            "classes": class_names,
            "checkpoint": str(args.out),
            "seed": args.seed,
            "epsilon_total": cfg.epsilon_total,
        },
        args.json,
        [f"trained {len(history)} epochs, final {final}", f"checkpoint -> {args.out}"],
    )
    return EXIT_OK


def cmd_perturb(args) -> int:
    s = load_sensitivity(args.sensitivity)
    theta, eps = _theta_and_epsilon(args, s)
    img = image_io.load_image(args.input)
    t = remove_dc(image_to_tensor(img, args.factor))
    allocation = BudgetAllocation(theta, eps, support=s.support)
    noisy = perturb(t.values, s, allocation, derive_rng(args.seed, 0))
    write_tensor_file(args.out, noisy.astype(np.float32))
    _emit(
        {
            "command": "perturb",
            "out": str(args.out),
            "epsilon_total": eps,
            "seed": args.seed,
        },
        args.json,
        [f"perturbed tensor -> {args.out} (epsilon={eps})"],
    )
    return EXIT_OK


def cmd_transform(args) -> int:
    s = load_sensitivity(args.sensitivity)
    theta, eps = _theta_and_epsilon(args, s)
    manifest = transform_dataset(
        args.images, s, theta, eps, args.seed, args.out, args.factor
    )
    _emit(
        {
            "command": "transform",
            "images": manifest.image_count,
            "skipped": manifest.skipped,
            "out": str(args.out),
            "epsilon_total": eps,
            "seed": args.seed,
        },
        args.json,
        [
            f"transformed {manifest.image_count} images -> {args.out} "
            f"(skipped {manifest.skipped})"
        ],
    )
    return EXIT_OK


def cmd_attack(args) -> int:
    s = load_sensitivity(args.sensitivity)
    theta, eps = _theta_and_epsilon(args, s)
    images = _load_images_dir(args.images)
    allocation = BudgetAllocation(theta, eps, support=s.support)
    report = attacks.AttackReport(
        kind=args.mode,
        params={"epsilon_total": eps, "dc": args.dc, "denoise": args.denoise},
        seed=args.seed,
    )
    out_dir = Path(args.out_images) if args.out_images else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    if args.mode == "whitebox":
        for i, (path, img) in enumerate(images):
            full = image_to_tensor(img, args.factor)
            t = remove_dc(full)
            noisy = perturb(t.values, s, allocation, derive_rng(args.seed, i))
            dc = extract_dc(full) if args.dc == "true" else None
            recon = attacks.whitebox_attack(
                dataclasses.replace(t, values=noisy.astype(np.float32)),
                dc_guess=dc,
                upsample_factor=args.factor,
                denoise=args.denoise,
            )
            report.psnrs.append(attacks.psnr(img, recon))
            if out_dir:
                image_io.save_image(recon, out_dir / f"recon_{i:04d}.png")
    elif args.mode == "blackbox":
        tensors, originals = [], []
        for i, (_path, img) in enumerate(images):
            t = remove_dc(image_to_tensor(img, args.factor))
            noisy = perturb(t.values, s, allocation, derive_rng(args.seed, i))
            tensors.append(noisy)
            originals.append(img)
        half = max(2, len(images) // 2)
        decoder = attacks.train_decoder(
            tensors[:half], originals[:half], args.ridge_lambda
        )
        for i in range(half, len(images)):
            recon = attacks.decode(decoder, tensors[i])
            report.psnrs.append(attacks.psnr(originals[i], recon))
            if out_dir:
                image_io.save_image(recon, out_dir / f"recon_{i:04d}.png")
    else:
        raise UsageError(f"unknown attack mode {args.mode}")

    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    agg = report.to_dict()["psnr_aggregate"]
    _emit(
        report.to_dict(),
        args.json,
        [f"{args.mode} attack over {len(report.psnrs)} images: mean PSNR "
         f"{agg.get('mean', float('nan')):.3f} dB"],
    )
    return EXIT_OK


def cmd_verify_dp(args) -> int:
    rng = np.random.default_rng(args.seed)
    total_violations = 0
    worst_margin = -np.inf
    draws_per_pair = max(1, args.draws // args.pairs)
    for _ in range(args.pairs):
        r_min = rng.uniform(-2.0, 0.0, size=args.size)
        r_max = r_min + rng.uniform(0.0, 2.0, size=args.size)
        s = SensitivityMap(r_min, r_max)
        if not np.any(s.support):
            continue
        theta = rng.normal(size=args.size)
        b = BudgetAllocation(theta, args.epsilon, support=s.support)
        t1 = rng.uniform(r_min, r_max)
        t2 = rng.uniform(r_min, r_max)
        rep = verify_dp_bound(t1, t2, s, b, draws_per_pair, rng)
        total_violations += rep.violations
        worst_margin = max(worst_margin, rep.max_log_ratio - rep.bound)
    report = {
        "command": "verify-dp",
        "pairs": args.pairs,
        "draws_per_pair": draws_per_pair,
        "epsilon_total": args.epsilon,
        "violations": total_violations,
        "worst_margin": worst_margin,
        "seed": args.seed,
    }
    _emit(
        report,
        args.json,
        [f"bound violations: {total_violations} "
         f"({args.pairs} pairs x {draws_per_pair} draws)"],
    )
    return EXIT_OK if total_violations == 0 else EXIT_DATA


def cmd_energy(args) -> int:
    images = _load_images_dir(args.images)
    profile = energy_profile(
        image_to_tensor(img, args.factor) for _p, img in images
    )
    dc_fraction = float(profile[list(DC_CHANNELS)].sum())
    _emit(
        {
            "command": "energy",
            "images": len(images),
            "dc_fraction": dc_fraction,
            "per_channel": profile.tolist(),
            "seed": args.seed,
        },
        args.json,
        [f"DC energy fraction over {len(images)} images: {dc_fraction:.4f}"],
    )
    return EXIT_OK


def cmd_metrics(args) -> int:
    a = image_io.load_image(args.a)
    b = image_io.load_image(args.b)
    value = attacks.psnr(a, b)
    report = {
        "command": "metrics",
        "psnr": "inf" if np.isinf(value) else value,
        "seed": args.seed,
    }
    lines = [f"PSNR: {value:.3f} dB" if np.isfinite(value) else "PSNR: inf (identical)"]
    if args.checkpoint:
        _theta, model, _cfg, _hdr = load_checkpoint(args.checkpoint)
        sim = attacks.feature_similarity(model, a, b, args.factor)
        report["feature_similarity"] = sim
        lines.append(f"feature similarity: {sim:.4f}")
    _emit(report, args.json, lines)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="freqdp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--json", action="store_true")
        p.add_argument("--config", default=None)
        p.add_argument("--factor", type=int, default=None, help="upsampling factor")
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("calibrate", help="compute per-position sensitivity bounds")
    common(p)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("train", help="train recognizer + budget parameters")
    common(p)
    p.add_argument("--images", required=True)
    p.add_argument("--sensitivity", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None)
    p.add_argument("--resume", default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--loss", choices=["arcface", "cosface"], default=None)
    p.add_argument("--scale", type=float, default=None)
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--lr-theta", type=float, default=None)
    p.add_argument("--hidden-dim", type=int, default=None)
    p.add_argument("--embed-dim", type=int, default=None)
    p.add_argument("--uniform", action="store_true", help="freeze theta at uniform")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("perturb", help="perturb one image into a tensor file")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--sensitivity", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("transform", help="batch-transform a labeled image dir")
    common(p)
    p.add_argument("--images", required=True)
    p.add_argument("--sensitivity", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("attack", help="run reconstruction attacks")
    common(p)
    p.add_argument("--mode", choices=["whitebox", "blackbox"], required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--sensitivity", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--dc", choices=["zero", "true"], default="zero")
    p.add_argument("--denoise", action="store_true")
    p.add_argument("--ridge-lambda", type=float, default=1e-3)
    p.add_argument("--out", default=None, help="report JSON path")
    p.add_argument("--out-images", default=None, help="dir for reconstructions")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("verify-dp", help="empirical DP bound check")
    common(p)
    p.add_argument("--draws", type=int, default=10000)
    p.add_argument("--pairs", type=int, default=20)
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.set_defaults(func=cmd_verify_dp)

    p = sub.add_parser("energy", help="per-channel energy profile")
    common(p)
    p.add_argument("--images", required=True)
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("metrics", help="PSNR / feature similarity of two images")
    common(p)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_metrics)

    return parser


_DEFAULTS = {
    "seed": _default_seed,
    "factor": lambda: 8,
    "epochs": lambda: 20,
    "batch_size": lambda: 32,
    "loss": lambda: "arcface",
    "scale": lambda: 64.0,
    "margin": lambda: 0.4,
    "lr": lambda: 0.1,
    "hidden_dim": lambda: 32,
    "embed_dim": lambda: 64,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args = _merge_config(args)
        for name, default in _DEFAULTS.items():
            if getattr(args, name, 0) is None:
                setattr(args, name, default())
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, image_io.ImageIoError, FileNotFoundError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # pragma: no cover
        print(f"internal error: {e!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
