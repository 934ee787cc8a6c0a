"""Command-line entry point: ``cyclet {gen-data,train,translate,grad-check}``.

Exit codes are fixed for scripting: 0 success, 1 runtime failure, 2 validation.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import gradcheck, synthdata
from .config import ConfigError, dump_config, load_config
from .losses import cycle_loss_pixel
from .nets import generator_forward
from .tensor import Tensor
from .trainer import CheckpointError, TrainerConfig, TrainingDivergedError, load_checkpoint, train_loop

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2
MODES = ("baseline", "modified", "no-quality")
SEED_ENV = "CYCLET_SEED"

log = logging.getLogger("cyclet.cli")


class ValidationError(ValueError):
    pass


def apply_mode(cfg: TrainerConfig, mode: str) -> TrainerConfig:
    """Rewrite the loss/schedule settings for one of the three comparison modes.

    baseline drops all three modifications (pixel-only cycle loss, constant
    cycle weight, no quality weighting); no-quality keeps the first two.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}")
    if mode == "baseline":
        s = cfg.schedule
        s.gamma_start = s.gamma_end = 0.0
        s.lambda_end = s.lambda_start
        cfg.loss.quality_mode = "off"
    elif mode == "no-quality":
        cfg.loss.quality_mode = "off"
    return cfg


def _seed_override(cfg: TrainerConfig) -> None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return
    try:
        seed = int(raw, 0)
    except ValueError:
        raise ValidationError(f"{SEED_ENV}={raw!r} is not an integer") from None
    log.info("%s=%d overrides config seed %d", SEED_ENV, seed, cfg.seed)
    cfg.seed = seed


# ------------------------------------------------------------------ commands


def cmd_gen_data(args) -> int:
    if args.count < 1:
        raise ValidationError("--count must be >= 1")
    if args.seed < 0:
        raise ValidationError("--seed must be >= 0")
    counts = synthdata.generate_dataset(args.out, args.count, args.seed)
    for name, n in counts.items():
        print(f"{name}: {n}")
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config)
        apply_mode(cfg, args.mode)
        _seed_override(cfg)
        cfg.validate()
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.resolved.json")
    log.info("mode=%s output_dir=%s", args.mode, out)
    resume = args.resume
    if resume is not None and not Path(resume).is_file():
        raise ValidationError(f"checkpoint not found: {resume}")
    t0 = time.monotonic()
    state = train_loop(cfg, resume_from=resume)
    log.info("finished %d epochs in %.1fs", state.epoch, time.monotonic() - t0)
    print(f"metrics: {out / 'metrics.csv'}")
    return EXIT_OK


def _read_input(path, size: int) -> np.ndarray:
    try:
        img = synthdata.read_ppm(path)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    except synthdata.PPMError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    if img.shape != (size, size, 3):
        raise ValidationError(f"{path} is {img.shape[1]}x{img.shape[0]}, the networks take {size}x{size}")
    return img


def cmd_translate(args) -> int:
    try:
        state = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError) as exc:
        raise ValidationError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc
    forward, back = ("G", "F") if args.direction == "AtoB" else ("F", "G")
    size = state.nets[forward].image_size
    img = _read_input(args.input, size)

    x = Tensor(synthdata.to_model_range(img[None]))
    fake = generator_forward(state.nets[forward], x, frozen=True)
    fake_u8 = synthdata.from_model_range(fake.data)[0]
    synthdata.write_ppm(fake_u8, args.out)
    if not args.cycle:
        return EXIT_OK

    # reconstruct from the image as written, so the printed loss is reproducible from files alone
    rec = generator_forward(state.nets[back], Tensor(synthdata.to_model_range(fake_u8[None])), frozen=True)
    rec_path = Path(args.cycle_out) if args.cycle_out else _rec_path(Path(args.out))
    synthdata.write_ppm(synthdata.from_model_range(rec.data)[0], rec_path)
    loss = file_cycle_loss(args.input, rec_path)
    print(f"{loss:.17g}")
    return EXIT_OK


def _rec_path(out: Path) -> Path:
    return out.with_name(out.stem + "_rec" + (out.suffix or ".ppm"))


def file_cycle_loss(original, reconstruction) -> float:
    """Pixel cycle loss between two PPM files, in model range."""
    a = synthdata.to_model_range(synthdata.read_ppm(original)[None])
    b = synthdata.to_model_range(synthdata.read_ppm(reconstruction)[None])
    return cycle_loss_pixel(Tensor(a), Tensor(b)).item()


def cmd_grad_check(args) -> int:
    t0 = time.monotonic()
    results = gradcheck.run(args.scope, args.seed, samples=None if args.exhaustive else args.samples)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{args.scope}: {len(results) - len(failed)}/{len(results)} components passed "
          f"(tolerance {gradcheck.TOLERANCE:g}) in {time.monotonic() - t0:.1f}s")
    for r in failed:
        print(f"FAILED {r.component} worst_index={r.worst_index} max_rel_err={r.max_rel_err:.3e}",
              file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cyclet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic unpaired dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, required=True, help="images per split and domain")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train from a JSON run config")
    t.add_argument("--config", required=True)
    t.add_argument("--mode", choices=MODES, default="modified")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    tr = sub.add_parser("translate", help="translate one PPM with a checkpoint")
    tr.add_argument("--checkpoint", required=True)
    tr.add_argument("--input", required=True)
    tr.add_argument("--direction", choices=("AtoB", "BtoA"), required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--cycle", action="store_true", help="also write the reconstruction and print its pixel cycle loss")
    tr.add_argument("--cycle-out", help="reconstruction path (default: <out>_rec.ppm)")
    tr.set_defaults(func=cmd_translate)

    c = sub.add_parser("grad-check", help="finite-difference gradient verification")
    c.add_argument("--scope", choices=gradcheck.SCOPES, required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--samples", type=int, default=12, help="sampled elements per large tensor")
    c.add_argument("--exhaustive", action="store_true", help="check every element (slow)")
    c.set_defaults(func=cmd_grad_check)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors, which matches the validation code
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ValidationError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, FloatingPointError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
