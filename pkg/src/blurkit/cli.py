"""Command-line entry point: train, eval, predict, ablate, export-curves.

Every run directory receives the resolved config and seed that produced it.
Exit codes: 0 success, 1 runtime failure, 2 configuration/validation failure.
"""

import os
import sys
import time
import logging
import argparse
from pathlib import Path

import numpy as np
import torch

from . import data, metrics, plots
from .checkpoint import load_checkpoint
from .config import RunConfig
from .errors import ConfigError
from .model import VARIANTS, build_model, parameter_count
from .train import train

log = logging.getLogger(__name__)

OUT_ROOT_ENV = "BLURKIT_OUT_ROOT"

ABLATION_NOTES = """\
Desk-scale ablation: a short run on a small fixture that checks the harness
end to end, not a benchmark. Expected ordering after full-scale training
(complete datasets, default 100-epoch recipe):
  - full and dense5x5 land within ~0.01 F of each other; dense5x5 may edge
    ahead slightly while spending ~1.8x the weights per extractor.
  - both clearly beat plain_unet (multi-scale texture extractors matter).
  - no_skip trails full by roughly 0.1 F (skip connections matter most).
"""


def _add_common(parser):
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                        help="override one config key (repeatable)")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--workers", type=int, help="parallel preprocessing workers")
    parser.add_argument("--deterministic", action="store_true",
                        help="single-threaded, fully seeded execution")
    parser.add_argument("--print-config", action="store_true",
                        help="print the resolved config and exit")


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    cfg.apply_overrides(args.set)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.deterministic:
        cfg.deterministic = True
    return cfg.validate()


def _resolve_out_dir(cfg: RunConfig, command: str) -> Path:
    if cfg.out_dir:
        return Path(cfg.out_dir)
    root = os.environ.get(OUT_ROOT_ENV, "runs")
    return Path(root) / f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"


def _setup_run_dir(cfg: RunConfig, command: str) -> Path:
    out = _resolve_out_dir(cfg, command)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    return out


def _apply_determinism(cfg: RunConfig):
    if cfg.deterministic:
        torch.manual_seed(cfg.seed)
        torch.set_num_threads(1)


def _load_partition(cfg: RunConfig, partition: str, out_dir=None):
    """Samples for one side of the split: cuhk re-derives the seeded split,
    dut uses its directory split."""
    if not cfg.data_root:
        raise ConfigError("data_root is not set")
    if cfg.layout == "dut":
        return data.load_dataset(cfg.data_root, "dut", invert_mask=cfg.invert_mask,
                                 subset=partition)
    samples = data.load_dataset(cfg.data_root, "cuhk", invert_mask=cfg.invert_mask,
                                motion_prefix=cfg.motion_prefix,
                                motion_list=cfg.motion_list or None)
    split = data.split_cuhk(samples, cfg.train_n, cfg.seed)
    if out_dir is not None:
        data.write_manifest(split, out_dir)
    return split.train if partition == "train" else split.test


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    if args.print_config:
        print(cfg.to_text(), end="")
        return 0
    if not cfg.data_root:
        raise ConfigError("data_root is not set")
    out = _setup_run_dir(cfg, "train")
    train_samples = _load_partition(cfg, "train", out_dir=out)
    train_samples = data.augment(train_samples, cfg.augment_policy)
    images, masks, _ = data.preprocess_many(train_samples, cfg.input_size, cfg.workers)
    _apply_determinism(cfg)
    model = build_model(cfg.model_config(), seed=cfg.seed)
    train_log = train(model, images, masks, cfg.schedule(), out_dir=out,
                      checkpoint_every=cfg.checkpoint_every,
                      deterministic=cfg.deterministic)
    train_log.to_csv(out / "trainlog.csv")
    if train_log.records:
        plots.save_loss_curve(train_log, out / "loss_curve.png")
    print(f"trained {cfg.variant} for {cfg.epochs} epochs on {len(train_samples)} "
          f"samples; final loss {train_log.final_loss}; outputs in {out}")
    return 0


def _export_eval(report, out: Path, save_figures=True):
    paths = metrics.export_report(report, out)
    if save_figures:
        paths.append(plots.save_pr_curve(report, out / "pr_curve.png"))
        paths.append(plots.save_f_curve(report, out / "f_curve.png"))
    return paths


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    if args.print_config:
        print(cfg.to_text(), end="")
        return 0
    model, epoch, _ = load_checkpoint(args.checkpoint)
    samples = _load_partition(cfg, "test")
    out = _setup_run_dir(cfg, "eval")
    map_dir = out / "maps" if cfg.save_maps else None
    report = metrics.evaluate(model, samples, aggregation=cfg.aggregation,
                              map_dir=map_dir)
    _export_eval(report, out)
    status = " (partial)" if report.partial else ""
    print(f"evaluated checkpoint at epoch {epoch} on {len(samples)} samples{status}: "
          f"max_f {report.max_f:.4f}, f@{metrics.FIXED_THRESHOLD} "
          f"{report.f_at_fixed:.4f}, mae {report.mae:.4f}; outputs in {out}")
    return 0


def cmd_predict(args) -> int:
    cfg = _resolve_config(args)
    if args.print_config:
        print(cfg.to_text(), end="")
        return 0
    model, _, _ = load_checkpoint(args.checkpoint)
    source = Path(args.input)
    if source.is_dir():
        inputs = sorted(p for p in source.iterdir()
                        if p.suffix.lower() in data.IMAGE_EXTENSIONS)
    elif source.exists():
        inputs = [source]
    else:
        raise ConfigError(f"input path {source} does not exist")
    out = Path(args.out) if args.out else _resolve_out_dir(cfg, "predict")
    out.mkdir(parents=True, exist_ok=True)

    failures = 0
    rows = []
    for path in inputs:
        try:
            from PIL import Image
            image = np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)
            sample = data.BlurSample(path.stem, image,
                                     np.zeros(image.shape[:2], dtype=np.uint8))
            blur_map = metrics.predict_map(model, sample)
            map_path = out / f"{path.stem}.png"
            metrics.save_map_png(blur_map.values, map_path)
            rows.append((path.stem, str(path), str(map_path),
                         image.shape[0], image.shape[1]))
        except Exception as exc:
            log.warning("skipping %s: %s", path, exc)
            failures += 1
    with open(out / "manifest.csv", "w") as fh:
        fh.write("id,source,map,height,width\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    print(f"wrote {len(rows)} blur maps to {out}" +
          (f" ({failures} inputs failed)" if failures else ""))
    return 1 if failures else 0


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    if args.print_config:
        print(cfg.to_text(), end="")
        return 0
    if not cfg.data_root:
        raise ConfigError("data_root is not set")
    out = _setup_run_dir(cfg, "ablate")
    train_samples = _load_partition(cfg, "train", out_dir=out)
    test_samples = _load_partition(cfg, "test")
    train_samples = data.augment(train_samples, cfg.augment_policy)
    images, masks, _ = data.preprocess_many(train_samples, cfg.input_size, cfg.workers)

    rows = []
    for variant in VARIANTS:
        variant_dir = out / variant
        variant_dir.mkdir(parents=True, exist_ok=True)
        _apply_determinism(cfg)
        model = build_model(cfg.model_config(variant=variant), seed=cfg.seed)
        train_log = train(model, images, masks, cfg.schedule(), out_dir=variant_dir,
                          checkpoint_every=cfg.checkpoint_every,
                          deterministic=cfg.deterministic)
        train_log.to_csv(variant_dir / "trainlog.csv")
        report = metrics.evaluate(model, test_samples, aggregation=cfg.aggregation)
        _export_eval(report, variant_dir)
        rows.append((variant, report.max_f, report.f_at_fixed, report.mae,
                     parameter_count(model)))
        print(f"{variant}: max_f {report.max_f:.4f}, mae {report.mae:.4f}, "
              f"{rows[-1][4]} parameters")

    with open(out / "comparison.csv", "w") as fh:
        fh.write("variant,max_f,f_at_fixed,mae,parameter_count\n")
        for variant, max_f, f_fixed, mae_val, count in rows:
            fh.write(f"{variant},{max_f!r},{f_fixed!r},{mae_val!r},{count}\n")
    (out / "comparison_notes.txt").write_text(ABLATION_NOTES)
    plots.save_variant_comparison(rows, out / "comparison.png")
    print(f"ablation comparison written to {out}")
    return 0


def _read_curve_csv(path, columns):
    rows = []
    with open(path) as fh:
        header = next(fh).strip().split(",")
        if header != columns:
            raise ConfigError(f"{path}: expected columns {columns}, got {header}")
        for line in fh:
            rows.append([float(v) for v in line.strip().split(",")])
    return np.asarray(rows)


def cmd_export_curves(args) -> int:
    report_dir = Path(args.report_dir)
    pr = _read_curve_csv(report_dir / "pr_curve.csv", ["threshold", "precision", "recall"])
    fm = _read_curve_csv(report_dir / "f_curve.csv", ["threshold", "f"])
    out = Path(args.out) if args.out else report_dir
    out.mkdir(parents=True, exist_ok=True)
    paths = plots.save_curves_from_arrays(pr[:, 0], pr[:, 1], pr[:, 2], fm[:, 1], out)
    print("rendered " + ", ".join(str(p) for p in paths))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blurkit",
        description="Blur-detection toolkit: train, evaluate and run the "
                    "multi-scale dilated segmentation network.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model per the config")
    _add_common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="threshold-sweep evaluation of a checkpoint")
    _add_common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_pred = sub.add_parser("predict", help="export blur maps for images")
    _add_common(p_pred)
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--input", required=True, help="image file or directory")
    p_pred.add_argument("--out", help="output directory")
    p_pred.set_defaults(func=cmd_predict)

    p_abl = sub.add_parser("ablate", help="train/evaluate all architecture variants")
    _add_common(p_abl)
    p_abl.set_defaults(func=cmd_ablate)

    p_exp = sub.add_parser("export-curves", help="render figures from exported curves")
    p_exp.add_argument("--report-dir", required=True)
    p_exp.add_argument("--out", help="output directory (default: report dir)")
    p_exp.set_defaults(func=cmd_export_curves)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure contract: exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
