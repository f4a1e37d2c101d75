"""Command line: init, stylize, interpolate, train, bench.

Every failure prints one ``error: ...`` line on stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import encoder as enc_mod
from . import tensor as T
from . import weightstore
from .config import TrainConfig, load_config
from .decoder import to_image
from .encoder import encode
from .images import load_dir, pad_to_multiple, read_image, to_unit, write_image
from .model import align, blend, init_model, render
from .skg import GroupPermutation, flops_dynamic, flops_vanilla, init_skg
from .tensor import Tensor
from .trainer import CSV_HEADER, Trainer, load_checkpoint, load_generator, save_checkpoint

log = logging.getLogger("stylekernel")

BENCH_HEADER = ("size", "k", "time_mean_s", "time_std_s", "flops_dynamic", "flops_vanilla", "ratio")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message.replace("\n", " "))


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _load_input(path, pad: bool) -> tuple[Tensor, tuple[int, int]]:
    pixels = read_image(path)
    h, w = pixels.shape[:2]
    if pad:
        pixels, _ = pad_to_multiple(pixels, 16)
    elif h % 16 or w % 16:
        raise CliError(f"{path}: extents {h}x{w} are not divisible by 16 (use --pad-to-16)")
    return Tensor(to_unit(pixels)), (h, w)


def _perm(seed: int | None) -> GroupPermutation:
    return GroupPermutation.identity() if seed is None or seed < 0 else GroupPermutation.from_seed(seed)


def _write_output(path, img: Tensor, size: tuple[int, int]) -> None:
    h, w = size
    write_image(path, to_image(img)[:h, :w])


def cmd_init(args) -> None:
    rng = np.random.default_rng(args.seed)
    encoder = enc_mod.load_weights(args.encoder) if args.encoder else enc_mod.random_init(args.seed)
    model = init_model(rng, encoder.widths[-1], k=args.k, heads=args.heads, alpha=args.alpha)
    arrays = dict(encoder.to_arrays())
    arrays.update(model.to_arrays())
    weightstore.save(arrays, args.out)
    print(f"wrote {args.out}")


def cmd_stylize(args) -> None:
    encoder, model = load_generator(args.weights)
    content, size = _load_input(args.content, args.pad_to_16)
    style, _ = _load_input(args.style, args.pad_to_16)
    with T.no_grad():
        zc = encode(content, encoder, upto="relu4_1").main
        zs = encode(style, encoder, upto="relu4_1").main
        img = render(model, zc, align(model, zc, zs), _perm(args.shuffle_seed))
    _write_output(args.out, img, size)


def cmd_interpolate(args) -> None:
    bad = [a for a in args.alpha if not 0.0 <= a <= 1.0]
    if bad:
        raise CliError(f"interpolation alpha must lie in [0, 1], got {bad[0]}")
    encoder, model = load_generator(args.weights)
    content, size = _load_input(args.content, args.pad_to_16)
    style_a, _ = _load_input(args.style_a, args.pad_to_16)
    style_b, _ = _load_input(args.style_b, args.pad_to_16)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    perm = _perm(args.shuffle_seed)
    with T.no_grad():
        zc = encode(content, encoder, upto="relu4_1").main
        za = align(model, zc, encode(style_a, encoder, upto="relu4_1").main)
        zb = align(model, zc, encode(style_b, encoder, upto="relu4_1").main)
        for a in args.alpha:
            img = render(model, zc, blend(za, zb, a), perm)
            path = out_dir / f"alpha_{a:.3f}.png"
            _write_output(path, img, size)
            print(path)


def _csv_log(path: Path, append: bool):
    fresh = not (append and path.exists())
    fh = path.open("a" if not fresh else "w", newline="")
    writer = csv.writer(fh)
    if fresh:
        writer.writerow(CSV_HEADER)
    return fh, writer


def cmd_train(args) -> None:
    overrides = {"seed": args.seed, "iterations": args.iterations, "out_dir": args.out, "resume": args.resume}
    cfg = load_config(args.config, **overrides) if args.config else TrainConfig(
        **{k: v for k, v in overrides.items() if v is not None})
    if not cfg.content_dir or not cfg.style_dir:
        raise CliError("config must set content_dir and style_dir")
    contents, styles = load_dir(cfg.content_dir), load_dir(cfg.style_dir)
    if not contents:
        raise CliError(f"no content images in {cfg.content_dir}")
    if not styles:
        raise CliError(f"no style images in {cfg.style_dir}")
    if cfg.resume:
        trainer = load_checkpoint(cfg.resume, cfg)
    else:
        encoder = enc_mod.load_weights(cfg.encoder_weights) if cfg.encoder_weights else enc_mod.random_init(cfg.seed)
        trainer = Trainer(cfg, encoder)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fh, writer = _csv_log(out / "loss.csv", append=bool(cfg.resume))
    last = None
    try:
        def on_step(r):
            nonlocal last
            writer.writerow(["" if v is None else v for v in r.as_row().values()])
            fh.flush()
            done = trainer.step
            if done % cfg.checkpoint_every == 0:
                save_checkpoint(trainer, out / f"ckpt_{done:06d}.skw")
                last = done
            log.info("step %d total %.4f", r.step, r.total)
        trainer.fit(contents, styles, cfg.iterations, on_step)
    finally:
        fh.close()
    if last != trainer.step:
        save_checkpoint(trainer, out / f"ckpt_{trainer.step:06d}.skw")
    print(f"trained to step {trainer.step}; outputs in {out}")


def cmd_bench(args) -> None:
    if args.weights:
        encoder, base = load_generator(args.weights)
    else:
        encoder, base = enc_mod.random_init(args.seed), None
    C = encoder.widths[-1]
    rows = []
    for k in args.k:
        rng = np.random.default_rng(args.seed)
        model = base if base is not None and base.k == k else init_model(rng, C, k=k)
        if base is not None and base.k != k:
            model.sae, model.decoder = base.sae, base.decoder
            model.skg = init_skg(rng, C, k)
        for size in args.sizes:
            if size % 16:
                raise CliError(f"bench size {size} is not divisible by 16")
            img = Tensor(np.random.default_rng(args.seed).random((size, size, 3)).astype(np.float32))
            times = []
            with T.no_grad():
                for _ in range(args.repeats):
                    t0 = time.perf_counter()
                    zc = encode(img, encoder, upto="relu4_1").main
                    render(model, zc, align(model, zc, zc))
                    times.append(time.perf_counter() - t0)
            h = size // 8
            fd, fv = flops_dynamic(h, h, C, k), flops_vanilla(h, h, C, C, k)
            rows.append((size, k, float(np.mean(times)), float(np.std(times)), fd, fv, fd / fv))
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(fh)
        writer.writerow(BENCH_HEADER)
        for r in rows:
            writer.writerow([r[0], r[1], f"{r[2]:.6f}", f"{r[3]:.6f}", r[4], r[5], repr(r[6])])
    finally:
        if fh is not sys.stdout:
            fh.close()


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stylekernel", description="Style transfer with predicted per-pixel style kernels.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("init", help="write freshly initialised weights")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--encoder", help="encoder weight file (default: seeded random encoder)")
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--heads", type=int, default=8)
    s.add_argument("--alpha", type=float, default=10.0)
    s.set_defaults(func=cmd_init)

    def image_flags(s):
        s.add_argument("--weights", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--pad-to-16", action="store_true", help="reflect-pad inputs, crop the output back")
        s.add_argument("--shuffle-seed", type=int, default=None, help="random channel-group order (default identity)")
        s.add_argument("--config", help="accepted for symmetry; inference reads settings from the weights")
        s.add_argument("--seed", type=int, default=None)

    s = sub.add_parser("stylize", help="stylize one content image with one style image")
    s.add_argument("content")
    s.add_argument("style")
    image_flags(s)
    s.set_defaults(func=cmd_stylize)

    s = sub.add_parser("interpolate", help="blend two styles at several weights")
    s.add_argument("content")
    s.add_argument("style_a")
    s.add_argument("style_b")
    s.add_argument("--alpha", type=_floats, default=[0.0, 0.25, 0.5, 0.75, 1.0])
    image_flags(s)
    s.set_defaults(func=cmd_interpolate)

    s = sub.add_parser("train", help="train from a key=value config")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--iterations", type=int)
    s.add_argument("--out", help="output directory (overrides out_dir)")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--weights", help="alias of --resume")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("bench", help="time the generator and report analytic FLOPs")
    s.add_argument("--weights")
    s.add_argument("--sizes", type=_ints, default=[64, 128, 256])
    s.add_argument("--k", type=_ints, default=[1, 3, 5])
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="CSV path (default stdout)")
    s.add_argument("--config")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        if getattr(args, "weights", None) and args.command == "train" and not args.resume:
            args.resume = args.weights
        args.func(args)
    except (CliError, ValueError, KeyError, OSError, FloatingPointError) as e:
        msg = str(e).strip().replace("\n", " ") or type(e).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
