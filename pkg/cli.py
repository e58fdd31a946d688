"""
Command-line entry point.

    python cli.py gen-scene --out data/town --seed 0 --views 24 --preset town
    python cli.py train --data data/town --case A --out runs/a
    python cli.py render --ckpt runs/a/final.snrf --view 90,70 --sun 150,50 --day-frac 0.5 --out view.png
    python cli.py render-seasons --ckpt runs/a/final.snrf --out seasons/
    python cli.py eval --ckpt runs/a/final.snrf --data data/town --out report.csv
    python cli.py stability --ckpt runs/a/final.snrf --out stability.csv
    python cli.py tune --data data/town --trials 8 --out tuning/

Exit codes: 0 ok, 2 invalid input, 3 numeric failure, 4 file error. Failures
print one line ``error code=<n> kind=<kind> message=<text>`` to stderr.
"""

import argparse
import csv
import logging
import math
import sys
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from dataset import CameraSpec, load_dataset, parse_angle_pair, sun_vector, write_png
from evaluation import (
    TuneBaselines,
    contact_sheet,
    evaluate_model,
    render_view,
    season_grid,
    stability_sweep,
    tune_score,
    write_report_csv,
)
from run_config import CASES, RunConfig, load_config_file
from scene_sim import PRESETS, NoiseSpec, emit_dataset, make_scene
from siren_net import load_checkpoint
from trainer import Trainer
from utils import EXIT_OK, EXIT_VALIDATION, DatasetIOError, InvalidArgument, SeasonFieldError, configure_torch, setup_logging

logger = logging.getLogger(__name__)

MIN_VIEWS = 8

# log10 learning rate, weights, class count and shadow/sky/albedo thresholds
TUNE_RANGES = {
    "log10_learning_rate": (-5.0, -4.0),
    "lambda_sc": (0.01, 0.5),
    "lambda_ds": (0.5, 3.0),
    "n_season_classes": (2, 8),
    "kappa": (20.0, 40.0),
    "mu": (-0.3, -0.05),
    "s_max": (0.3, 0.8),
    "a_min": (0.1, 0.3),
}
TRIAL_COLUMNS = ("trial", "score", "ssim", "mae", "em_max") + tuple(
    k if k != "log10_learning_rate" else "learning_rate" for k in TUNE_RANGES
)


def _run_settings(meta: Dict) -> RunConfig:
    return RunConfig(**meta.get("run_config", {}))


def _camera_from_view(text: str, size: int) -> CameraSpec:
    """``az,el`` of the camera as seen from the scene; elevation 90 is nadir."""
    az, el = parse_angle_pair(text)
    return CameraSpec(off_nadir_deg=90.0 - el, azimuth_deg=az, width=size, height=size)


def _sun_from_text(text: str) -> np.ndarray:
    az, el = parse_angle_pair(text)
    if not 0.0 < el <= 90.0:
        raise InvalidArgument(f"sun elevation must lie in (0, 90] degrees, got {el}")
    return sun_vector(az, el)


def cmd_gen_scene(args) -> int:
    if args.views < MIN_VIEWS:
        raise InvalidArgument(f"--views must be at least {MIN_VIEWS} (4 are held out for testing), got {args.views}")
    rng = np.random.default_rng(args.seed)
    scene = make_scene(args.preset, rng)
    noise = NoiseSpec(sigma=args.noise_sigma, n_blobs=args.blobs, blob_height=args.blob_height)
    dataset = emit_dataset(scene, args.out, n_views=args.views, n_times=args.times, noise=noise, rng=rng,
                           image_size=args.size, seed=args.seed)
    print(f"✓ Wrote {len(dataset.records)} views of preset {args.preset!r} to {dataset.root}")
    return EXIT_OK


def build_run_config(args) -> RunConfig:
    overrides = {"seed": args.seed, "total_steps": args.steps, "data_dir": args.data, "out_dir": args.out}
    config = load_config_file(args.config, **overrides)
    return config.for_case(args.case or config.case)


def cmd_train(args) -> int:
    config = build_run_config(args)
    dataset = load_dataset(args.data)
    out_dir = Path(args.out)
    config.snapshot(out_dir / "config.json")
    trainer = Trainer(config, dataset, out_dir)
    if args.resume:
        trainer.resume(args.resume)
    history = trainer.run()
    last = history[-1] if history else None
    summary = f" last L_IR={last.L_IR:.5f}" if last else ""
    print(f"✓ Trained case {config.case} for {config.total_steps} steps into {out_dir}{summary}")
    return EXIT_OK


def _load_model(path):
    model, meta = load_checkpoint(path)
    model.eval()
    return model, _run_settings(meta)


def cmd_render(args) -> int:
    model, config = _load_model(args.ckpt)
    camera = _camera_from_view(args.view, args.size)
    sun = _sun_from_text(args.sun)
    view = render_view(model, camera, sun, args.day_frac, config.shadow(), config.shading, args.samples)
    write_png(args.out, view.col_sa)
    print(f"✓ Rendered {args.out}")
    return EXIT_OK


def cmd_render_seasons(args) -> int:
    model, config = _load_model(args.ckpt)
    camera = _camera_from_view(args.view, args.size)
    sun = _sun_from_text(args.sun)
    images = season_grid(model, camera, sun, config.shadow(), args.times, config.shading, args.samples)
    out = Path(args.out)
    labels = []
    for k, image in enumerate(images):
        write_png(out / f"season_{k:03d}.png", image)
        labels.append(f"t={k / args.times:.3f}")
    contact_sheet(images, labels, out / "contact_sheet.png")
    print(f"✓ Rendered {len(images)} seasonal views into {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, config = _load_model(args.ckpt)
    dataset = load_dataset(args.data)
    report = evaluate_model(model, dataset, config.shadow(), config.shading, args.samples, args.align_times)
    rows = report.rows(dataset.manifest.name, config.case)
    if args.out:
        write_report_csv(rows, args.out)
    for row in rows:
        print(f"{row['metric']:<32} {row['value']:.4f}")
    print(f"✓ Evaluated {len(report.views)} held-out views")
    return EXIT_OK


def cmd_stability(args) -> int:
    model, config = _load_model(args.ckpt)
    report = stability_sweep(model, config.shadow(), config.shading, args.views, args.suns, args.times,
                             args.size, args.samples)
    rows = [{"region": "sweep", "case": config.case, "metric": name, "value": getattr(report, name)}
            for name in ("median", "q95", "max", "baseline_min", "baseline_median", "baseline_max", "n_renders")]
    if args.out:
        write_report_csv(rows, args.out)
    flag = " (degenerate: no pairs)" if report.degenerate else ""
    print(f"✓ {report.n_renders} renders, median EMD {report.median:.3f}, "
          f"baseline min {report.baseline_min:.3f}{flag}")
    return EXIT_OK


def sample_trial(base: RunConfig, rng: np.random.Generator) -> RunConfig:
    """Draw one configuration uniformly from the tuning ranges."""
    values = {}
    for key, (low, high) in TUNE_RANGES.items():
        if key == "log10_learning_rate":
            values["learning_rate"] = float(10.0 ** rng.uniform(low, high))
        elif key == "n_season_classes":
            values[key] = int(rng.integers(low, high + 1))
        else:
            values[key] = float(rng.uniform(low, high))
    return RunConfig(**{**base.model_dump(), **values})


def measure(config: RunConfig, dataset, out_dir: Path, stability_views: int, stability_suns: int,
            stability_times: int) -> Dict[str, float]:
    """Train and score one configuration: mean held-out SSIM, height MAE and worst stability EMD."""
    config.snapshot(out_dir / "config.json")
    trainer = Trainer(config, dataset, out_dir)
    trainer.run()
    model = trainer.model
    report = evaluate_model(model, dataset, config.shadow(), config.shading, config.samples_per_ray)
    size = dataset.records[0].camera.width
    sweep = stability_sweep(model, config.shadow(), config.shading, stability_views, stability_suns,
                            stability_times, size, config.samples_per_ray)
    mae = report.height.mae if report.height is not None else float("nan")
    return {"ssim": report.mean("ssim"), "mae": mae, "em_max": sweep.max}


def cmd_tune(args) -> int:
    if args.trials < 1:
        raise InvalidArgument(f"need at least one trial, got {args.trials}")
    base = load_config_file(args.config, seed=args.seed, total_steps=args.steps, data_dir=args.data)
    dataset = load_dataset(args.data)
    out = Path(args.out)
    sweep = (args.stability_views, args.stability_suns, args.stability_times)

    measured = measure(base, dataset, out / "baseline", *sweep)
    baselines = TuneBaselines(ssim=measured["ssim"], mae=measured["mae"], emd=measured["em_max"])
    logger.info("tuning baselines: %s", baselines)

    rng = np.random.default_rng(args.seed)
    best_score, best_config = -math.inf, None
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trials.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=TRIAL_COLUMNS)
        writer.writeheader()
        for trial in range(args.trials):
            config = sample_trial(base, rng)
            result = measure(config, dataset, out / f"trial_{trial:03d}", *sweep)
            score = tune_score(result["ssim"], result["mae"], result["em_max"], baselines)
            row = {"trial": trial, "score": score, **result}
            row.update({k: getattr(config, k) for k in TRIAL_COLUMNS if hasattr(config, k)})
            writer.writerow(row)
            handle.flush()
            logger.info("trial %d score %.4f", trial, score)
            if best_config is None or score > best_score:
                best_score, best_config = score, config
    best_config.snapshot(out / "best_config.json")
    best_config.save_text(out / "best_config.cfg", header=f"best of {args.trials} trials, score {best_score:.4f}")
    logger.info("best trial score %.4f", best_score)
    print(f"✓ Best of {args.trials} trials scored {best_score:.4f}; saved {out / 'best_config.cfg'}")
    return EXIT_OK


class CliParser(argparse.ArgumentParser):
    """Argument parser whose usage errors raise instead of printing usage and exiting."""

    def error(self, message):
        raise InvalidArgument(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(prog="season-field", description="Seasonal neural radiance fields for satellite scenes")
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="Render a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--views", type=int, default=24)
    p.add_argument("--preset", choices=PRESETS, default="town")
    p.add_argument("--times", type=int, default=8, help="Distinct days of the year among training views")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--noise-sigma", type=float, default=0.02)
    p.add_argument("--blobs", type=int, default=0, help="Spurious bumps injected into the prior height")
    p.add_argument("--blob-height", type=float, default=0.3)
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("train", help="Train a field on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--case", choices=CASES, help="Ablation case; the config file value or A by default")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="Checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    for name, func, help_text in (("render", cmd_render, "Render one view"),
                                  ("render-seasons", cmd_render_seasons, "Render a view across the year")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--ckpt", required=True)
        p.add_argument("--view", default="0,90", help="Camera azimuth,elevation in degrees")
        p.add_argument("--sun", default="150,50", help="Sun azimuth,elevation in degrees")
        p.add_argument("--size", type=int, default=64)
        p.add_argument("--samples", type=int, default=96)
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)
        if name == "render":
            p.add_argument("--day-frac", type=float, default=0.5)
        else:
            p.add_argument("--times", type=int, default=180)

    p = sub.add_parser("eval", help="Score a checkpoint on held-out views")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--samples", type=int, default=96)
    p.add_argument("--align-times", type=int, default=90)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stability", help="EMD sweep over views, suns and times")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--views", type=int, default=11)
    p.add_argument("--suns", type=int, default=5)
    p.add_argument("--times", type=int, default=12)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--samples", type=int, default=96)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("tune", help="Random search maximizing the combined score")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--trials", type=int, default=8)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stability-views", type=int, default=3)
    p.add_argument("--stability-suns", type=int, default=2)
    p.add_argument("--stability-times", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tune)
    return parser


def error_line(code: int, kind: str, message: str) -> str:
    flat = " ".join(str(message).split())
    return f"error code={code} kind={kind} message={flat}"


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except InvalidArgument as exc:
        print(error_line(exc.exit_code, exc.kind, exc), file=sys.stderr)
        return exc.exit_code
    setup_logging(args.log_level)
    try:
        configure_torch()
        return args.func(args)
    except SeasonFieldError as exc:
        print(error_line(exc.exit_code, exc.kind, exc), file=sys.stderr)
        return exc.exit_code
    except ValidationError as exc:
        print(error_line(EXIT_VALIDATION, "validation", exc), file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        io_error = DatasetIOError(getattr(exc, "filename", None) or "?", exc.strerror or str(exc))
        print(error_line(io_error.exit_code, io_error.kind, io_error), file=sys.stderr)
        return io_error.exit_code


if __name__ == "__main__":
    sys.exit(main())
