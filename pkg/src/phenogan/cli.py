"""Command-line entry point: ``phenogan <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric abort.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from dataclasses import replace
from datetime import date
from pathlib import Path

import numpy as np
from PIL import Image

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

logger = logging.getLogger("phenogan")


class UsageError(Exception):
    pass


def _run_config(args):
    from .config import apply_overrides, load_config, load_preset

    try:
        cfg = load_config(args.config) if args.config else load_preset(args.preset)
        return apply_overrides(cfg, args.set)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad run configuration: {exc}") from exc


def _model_mask(path, size):
    from .data import load_mask
    from .indices import resize_mask_half

    mask = load_mask(path)
    if mask.shape == tuple(size):
        return mask
    if mask.shape == (2 * size[0], 2 * size[1]):
        return resize_mask_half(mask)
    raise UsageError(f"mask {path} is {mask.shape}, model works at {tuple(size)}")


def _load_split(path):
    from .data import DatasetSplit

    return DatasetSplit.load(path)


def cmd_toygen(args) -> int:
    from .toy import generate_toy_archive

    h, w = args.size
    arc = generate_toy_archive(args.out, n_days=args.n_days, image_size=(h, w), seed=args.seed,
                               site_id=args.site_id, day_stride=args.day_stride, full_day=args.full_day)
    for roi_id, m in arc.manifests.items():
        print(f"{roi_id}: {len(m.rows)} images, manifest {arc.manifest_paths[roi_id]}, mask {arc.mask_paths[roi_id]}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    from .data import dataset_stats, filter_midday, ingest_archive, parse_window, read_manifest, read_roistats, split_by_date

    try:
        window = parse_window(args.window)
        cutoff = date.fromisoformat(args.cutoff_date)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    manifest = read_roistats(args.manifest) if args.format == "roistats" else read_manifest(args.manifest)
    samples = ingest_archive(args.images_dir, manifest, args.site_id, args.roi_id)
    samples = filter_midday(samples, window)
    split = split_by_date(samples, cutoff, mask_path=Path(args.mask).resolve() if args.mask else None)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    split.save(out)
    stats = dataset_stats(split)
    out.with_suffix(".stats.json").write_text(json.dumps(stats.to_dict(), indent=1))
    print(f"train {stats.n_train}, test {stats.n_test}, GCC range {split.gcc_range[0]:.4f}-{split.gcc_range[1]:.4f}, "
          f"{stats.unique_test_gcc} unique test GCC values ({stats.test_gcc_with_multiple} shared)")
    return EXIT_OK


def _training_set(split, cfg, mask_path=None):
    from .data import load_mask, prepare_training_set

    mask = load_mask(mask_path) if mask_path else None
    return prepare_training_set(split, mask, half=cfg.data.half)


def _train_loop(model, data, cfg, out: Path, train_fn=None, **kwargs):
    from .model.checkpoint import save_checkpoint
    from .training import LossLog, train

    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "run_config.ini")
    log = LossLog(out / "losses.csv")
    try:
        fn = train_fn or (lambda m, d, c, **kw: train(m, d, c.train, **kw))
        model, records = fn(model, data, cfg, checkpoint_dir=out / "checkpoints", on_record=log, **kwargs)
    finally:
        log.close()
    final = save_checkpoint(out / "final.pt", model)
    print(f"{len(records)} steps, final checkpoint {final}")
    return model


def cmd_train(args) -> int:
    from .model.gan import ModelMetadata, build_gan

    cfg = _run_config(args)
    split = _load_split(args.split)
    data = _training_set(split, cfg, args.mask)
    model = build_gan(cfg.generator, cfg.discriminator, seed=cfg.train.seed,
                      metadata=ModelMetadata(split.site_id, split.roi_id, split.gcc_range))
    _train_loop(model, data, cfg, Path(args.out))
    return EXIT_OK


def cmd_finetune(args) -> int:
    from .model.checkpoint import load_checkpoint
    from .training import finetune_cross_site, finetune_cross_vegetation

    cfg = _run_config(args)
    base, _ = load_checkpoint(args.checkpoint)
    cfg = replace(cfg, generator=base.gen_cfg, discriminator=base.disc_cfg)
    split = _load_split(args.split)
    data = _training_set(split, cfg, args.mask)
    ft = cfg.finetune
    if args.mode == "cross-site":
        fraction = args.fraction if args.fraction is not None else ft.cross_site_fraction
        epochs = args.epochs if args.epochs is not None else ft.cross_site_epochs
        lr_scale = ft.cross_site_lr_scale
        fn = finetune_cross_site
    else:
        fraction = args.fraction if args.fraction is not None else ft.cross_vegetation_fraction
        epochs = args.epochs if args.epochs is not None else ft.cross_vegetation_epochs
        lr_scale = ft.cross_vegetation_lr_scale
        fn = finetune_cross_vegetation
    try:
        _train_loop(base, data, cfg, Path(args.out),
                    train_fn=lambda m, d, c, **kw: fn(m, d, c.train, fraction=fraction, epochs=epochs,
                                                         lr_scale=lr_scale, **kw))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return EXIT_OK


def cmd_generate(args) -> int:
    from .indices import adjust_gcc, roi_indices
    from .model.checkpoint import load_checkpoint

    if not 0 < args.gcc < 1:
        raise UsageError(f"--gcc must lie strictly between 0 and 1, got {args.gcc}")
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    model, _ = load_checkpoint(args.checkpoint)
    lo, hi = model.metadata.gcc_range
    if not lo <= args.gcc <= hi:
        warnings.warn(f"GCC {args.gcc} is outside the trained range [{lo:.4f}, {hi:.4f}]", stacklevel=1)
    mask = _model_mask(args.mask, model.image_size)
    adjusted = adjust_gcc(args.gcc)
    images = model.synthesize(np.full(args.count, adjusted), mask, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "generated.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["filename", "input_gcc", "roi_gcc", "roi_rcc"])
        for i, img in enumerate(images):
            name = f"synthetic_{adjusted:05.2f}_{i:03d}.png"
            Image.fromarray(img, mode="RGB").save(out / name)
            g, r = roi_indices(img, mask)
            w.writerow([name, adjusted / 100, repr(g), repr(r)])
    print(f"wrote {len(images)} images to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .data import load_images
    from .evaluation import evaluate_model, unseen_gcc_subset
    from .model.checkpoint import load_checkpoint
    from .plots import plot_gcc_scatter, plot_index_distributions, plot_ssim_histograms

    model, _ = load_checkpoint(args.checkpoint)
    split = _load_split(args.split)
    mask_path = args.mask or split.mask_path
    if mask_path is None:
        raise UsageError("no mask given and the split does not record one")
    mask = _model_mask(mask_path, model.image_size)
    samples = unseen_gcc_subset(split) if args.subset == "unseen" else list(split.test)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not samples:
        (out / "eval_aggregates.json").write_text(json.dumps({"n": 0}))
        print("no samples in the requested subset")
        return EXIT_OK
    size, native = tuple(model.image_size), _native_size(samples[0])
    if native not in (size, (2 * size[0], 2 * size[1])):
        raise UsageError(f"test images are {native}, model works at {size}")
    images = load_images(samples, half=native != size)
    report = evaluate_model(model, samples, mask, images, seed=args.seed, conventional=args.conventional)
    report.save(out)
    plot_ssim_histograms(report.aggregates, out / "ssim_hist.png")
    plot_index_distributions(report.aggregates, out / "index_distributions.png")
    plot_gcc_scatter(report, out / "gcc_scatter.png")
    a = report.aggregates
    print(f"n={a['n']} rmspe_gcc={a['rmspe_gcc']:.3f}% rmspe_rcc={a['rmspe_rcc']:.3f}% ({a['rmspe_mode']}) "
          f"mean SSIM {a['mean_ssim']:.3f}, adjusted {a['mean_adjusted_ssim']:.3f}")
    return EXIT_OK


def _native_size(sample) -> tuple[int, int]:
    with Image.open(sample.image_path) as im:
        return im.height, im.width


def cmd_plot(args) -> int:
    from .plots import plot_index_distributions, plot_ssim_histograms, plot_train_histogram

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.report:
        agg = json.loads(Path(args.report).read_text())
        if "histograms" not in agg:
            raise UsageError(f"{args.report} has no histograms")
        plot_ssim_histograms(agg, out / "ssim_hist.png")
        plot_index_distributions(agg, out / "index_distributions.png")
    if args.stats:
        stats = json.loads(Path(args.stats).read_text())
        plot_train_histogram(stats["train_histogram"], out / "train_gcc_hist.png")
    if not (args.report or args.stats):
        raise UsageError("give --report and/or --stats")
    print(f"figures written to {out}")
    return EXIT_OK


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"size must look like 128x128, got {text!r}") from exc
    return h, w


def _add_run_options(p):
    from .config import PRESETS

    p.add_argument("--preset", choices=PRESETS, default="toy")
    p.add_argument("--config", help="INI run config; replaces --preset")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config value")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phenogan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toygen", help="write a procedural toy archive")
    p.add_argument("--out", required=True)
    p.add_argument("--n-days", type=int, default=200)
    p.add_argument("--size", type=_size, default=(128, 128))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--site-id", default="toysite")
    p.add_argument("--day-stride", type=int, default=9)
    p.add_argument("--full-day", action="store_true")
    p.set_defaults(func=cmd_toygen)

    p = sub.add_parser("ingest", help="filter and split an archive into train/test")
    p.add_argument("--manifest", required=True)
    p.add_argument("--images-dir", required=True)
    p.add_argument("--site-id", required=True)
    p.add_argument("--roi-id", required=True)
    p.add_argument("--mask", help="ROI image (black = region)")
    p.add_argument("--cutoff-date", default="2021-01-01")
    p.add_argument("--window", default="10:00-14:00")
    p.add_argument("--format", choices=("csv", "roistats"), default="csv")
    p.add_argument("--out", required=True, help="split file (JSON)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model from scratch")
    p.add_argument("--split", required=True)
    p.add_argument("--mask")
    p.add_argument("--out", required=True)
    _add_run_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="adapt a trained model to another site or ROI")
    p.add_argument("--mode", choices=("cross-site", "cross-vegetation"), required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--mask")
    p.add_argument("--fraction", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True)
    _add_run_options(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("generate", help="synthesize images at a GCC value")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--gcc", type=float, required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score a model against the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--mask")
    p.add_argument("--subset", choices=("all", "unseen"), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--conventional", action="store_true", help="use sqrt(mean) RMSPE")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="render figures from saved reports")
    p.add_argument("--report", help="eval aggregates JSON")
    p.add_argument("--stats", help="split stats JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    from .data import DataError
    from .indices import EmptyMaskError
    from .model.checkpoint import CheckpointError
    from .model.networks import ConfigError
    from .training import NumericAbort

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"phenogan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, EmptyMaskError, CheckpointError, FileNotFoundError) as exc:
        print(f"phenogan: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericAbort as exc:
        print(f"phenogan: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
