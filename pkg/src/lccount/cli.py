"""Command-line surface: generate / train / eval / predict / inspect-splits / ablation.

Exit codes form a stable scripting contract:

* 0 — success,
* 1 — usage error (bad flags, malformed option values),
* 2 — data error (missing/corrupt files, inconsistent datasets),
* 3 — numeric failure (non-finite training loss).

Every flag can also be supplied through ``--config FILE`` holding flat
``key=value`` lines (underscores or dashes, ``#`` comments allowed);
explicit command-line flags override the file.  ``LCCOUNT_THREADS``
bounds the worker pool used for evaluation, prediction, and dataset
generation; training itself stays single-threaded for determinism.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .blobs import assign_points, label_blobs
from .data import (
    DatasetManifest,
    ManifestError,
    SyntheticSpec,
    generate_synthetic,
    load_image,
    load_manifest,
    map_across_images,
    render_overlay,
    save_rgb,
)
from .fcn import FcnConfig, FcnParams, forward, load_checkpoint, predict_counts, save_checkpoint
from .grid import foreground_mask, softmax
from .loss import LossConfig
from .metrics import fscore, game, mae, mrmse_family, record_from_prediction
from .splits import line_split, watershed_split
from .train import NumericError, TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    """Bad flags or option values; maps to exit code 1."""


class DataError(Exception):
    """Missing or inconsistent input artifacts; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); keep our contract
        raise UsageError(message)


# ---------------------------------------------------------------------------
# option plumbing
# ---------------------------------------------------------------------------

_LOSS_TOKENS = {
    "li": "include_image",
    "lp": "include_point",
    "ls": "include_split",
    "lf": "include_false_positive",
}
DEFAULT_ABLATION_VARIANTS = "li+lp,li+lp+ls,li+lp+lf,full"

_STORE_TRUE_FLAGS = {"--no-flip-augment", "--normalize-loss", "--no-overlay"}
_TRUTHY = {"1", "true", "yes", "on"}
_FALSY = {"0", "false", "no", "off"}


def parse_loss_terms(text: str) -> dict:
    """'full' or '+'-joined tokens among li/lp/ls/lf -> LossConfig toggles."""
    label = text.strip().lower()
    if label == "full":
        return {field: True for field in _LOSS_TOKENS.values()}
    toggles = {field: False for field in _LOSS_TOKENS.values()}
    tokens = [tok.strip() for tok in label.split("+")]
    if not any(tokens):
        raise UsageError(f"--loss {text!r} enables no terms")
    for tok in tokens:
        field = _LOSS_TOKENS.get(tok)
        if field is None:
            raise UsageError(
                f"unknown loss term {tok!r} in --loss {text!r} "
                f"(expected 'full' or '+'-joined li/lp/ls/lf)")
        toggles[field] = True
    return toggles


@dataclass(frozen=True)
class RunConfig:
    """Everything a train/eval-style command needs, resolved from flags."""

    command: str
    manifest: str
    out: str
    train_cfg: TrainConfig
    loss_cfg: LossConfig
    game_level: int = 3
    seed: int = 0

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        toggles = parse_loss_terms(getattr(args, "loss", "full"))
        try:
            train_cfg = TrainConfig(
                learning_rate=args.lr,
                weight_decay=args.weight_decay,
                beta1=args.beta1,
                beta2=args.beta2,
                adam_epsilon=args.adam_epsilon,
                max_epochs=args.max_epochs,
                patience=args.patience,
                seed=args.seed,
                flip_augment=not args.no_flip_augment,
                split_method=args.split_method,
            )
            loss_cfg = LossConfig(
                split_method=args.split_method,
                epsilon=args.epsilon,
                normalize=args.normalize_loss,
                **toggles,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        return cls(
            command=args.command,
            manifest=args.manifest,
            out=args.out,
            train_cfg=train_cfg,
            loss_cfg=loss_cfg,
            game_level=getattr(args, "game_level", 3),
            seed=args.seed,
        )


def _config_tokens(path: str) -> list:
    """Flat key=value config file -> argv tokens (flags win by coming later)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    tokens = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not eq or not key:
            raise DataError(f"{path}:{lineno}: expected key=value, got {line!r}")
        if key == "config":
            raise DataError(f"{path}:{lineno}: config files cannot nest")
        flag = "--" + key.replace("_", "-")
        if flag in _STORE_TRUE_FLAGS:
            low = value.lower()
            if low in _TRUTHY:
                tokens.append(flag)
            elif low not in _FALSY:
                raise DataError(
                    f"{path}:{lineno}: {key} expects a boolean, got {value!r}")
        else:
            tokens.extend([flag, value])
    return tokens


def _strip_config(argv: list) -> list:
    out = []
    skip = False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok == "--config":
            skip = True
            continue
        if tok.startswith("--config="):
            continue
        out.append(tok)
    return out


def _ensure_outdir(path) -> Path:
    """Create the directory and prove it is writable before any real output."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        raise DataError(f"output directory {out} is not writable: {exc}") from exc
    return out


def _load_params(path) -> FcnParams:
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    except (ValueError, OSError) as exc:
        raise DataError(f"cannot load checkpoint {path}: {exc}") from exc


def _load_dataset(path) -> DatasetManifest:
    try:
        return load_manifest(path)
    except ManifestError as exc:
        raise DataError(str(exc)) from exc


def _split_samples(manifest: DatasetManifest, split: str) -> list:
    entries = manifest.for_split(split)
    if not entries:
        raise DataError(f"manifest has no {split!r} records")
    try:
        return manifest.load_samples(split)
    except ManifestError as exc:
        raise DataError(str(exc)) from exc


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="lccount",
                     description="Localization-based counting from point annotations.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", default=None, metavar="FILE",
                       help="flat key=value file mirroring the flags")
        return p

    p = add("generate", "Render a synthetic dot-counting dataset.")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", type=int, default=None,
                   help="total image budget (split roughly 70/15/15)")
    p.add_argument("--train", type=int, default=None)
    p.add_argument("--val", type=int, default=None)
    p.add_argument("--test", type=int, default=None)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--count-min", type=int, default=1)
    p.add_argument("--count-max", type=int, default=8)
    p.add_argument("--radius-min", type=float, default=2.0)
    p.add_argument("--radius-max", type=float, default=4.0)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--overlap", type=float, default=0.5,
                   help="probability that a new dot is placed touching an earlier one")
    p.add_argument("--classes", type=int, default=1,
                   help="number of object classes (background excluded)")

    def add_train_opts(p):
        p.add_argument("--manifest", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--split-method", choices=("watershed", "line"),
                       default="watershed")
        p.add_argument("--lr", type=float, default=1e-5)
        p.add_argument("--weight-decay", type=float, default=5e-5)
        p.add_argument("--beta1", type=float, default=0.9)
        p.add_argument("--beta2", type=float, default=0.999)
        p.add_argument("--adam-epsilon", type=float, default=1e-8)
        p.add_argument("--max-epochs", type=int, default=100)
        p.add_argument("--patience", type=int, default=10)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--no-flip-augment", action="store_true")
        p.add_argument("--normalize-loss", action="store_true")
        p.add_argument("--epsilon", type=float, default=1e-12)

    p = add("train", "Train a counting FCN and keep the best-validation checkpoint.")
    add_train_opts(p)
    p.add_argument("--loss", default="full",
                   help="'full' or '+'-joined subset of li/lp/ls/lf")

    p = add("eval", "Evaluate a checkpoint on one manifest split.")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--game-level", type=int, default=3,
                   help="report GAME(0..L)")
    p.add_argument("--out", default=None, help="optional report directory")

    p = add("predict", "Predict per-class counts (and overlays) for images.")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("images", nargs="+", metavar="IMAGE")
    p.add_argument("--out", default=None,
                   help="overlay directory (default: next to each input)")
    p.add_argument("--no-overlay", action="store_true")

    p = add("inspect-splits", "Render blob colors and split boundaries for one sample.")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="val")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--method", choices=("watershed", "line", "both"), default="both")
    p.add_argument("--out", default=".")

    p = add("ablation", "Train loss-term variants and tabulate MAE/F-Score.")
    add_train_opts(p)
    p.add_argument("--variants", default=DEFAULT_ABLATION_VARIANTS,
                   help="comma-separated --loss values")

    return parser


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _resolve_split_sizes(args) -> tuple:
    sizes = [args.train, args.val, args.test]
    if args.images is not None:
        if args.images < 3:
            raise UsageError("--images must be >= 3 to cover all three splits")
        side = max(1, round(0.15 * args.images))
        derived = [args.images - 2 * side, side, side]
        sizes = [d if s is None else s for s, d in zip(sizes, derived)]
    if any(s is None for s in sizes):
        raise UsageError("give --images or all of --train/--val/--test")
    if any(s < 0 for s in sizes):
        raise UsageError("split sizes must be >= 0")
    return tuple(sizes)


def cmd_generate(args) -> int:
    n_train, n_val, n_test = _resolve_split_sizes(args)
    try:
        spec = SyntheticSpec(
            size=args.size,
            count_range=(args.count_min, args.count_max),
            radius_range=(args.radius_min, args.radius_max),
            noise_level=args.noise,
            overlap_fraction=args.overlap,
            seed=args.seed,
            num_object_classes=args.classes,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _ensure_outdir(args.out)
    manifest, stats = generate_synthetic(spec, out, train=n_train, val=n_val,
                                         test=n_test)
    print(f"generated {stats['images']} images under {out}")
    print(f"manifest={out / 'manifest.txt'} classes={manifest.num_classes}")
    print(f"multi_dot_images={stats['multi_dot_images']} "
          f"touching_multi_fraction={stats['touching_multi_fraction']:.3f}")
    return EXIT_OK


def _write_log_csv(path, history) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "image_level", "point_level", "split_level",
                         "false_positive", "total", "val_mae", "val_fscore"])
        for row in history:
            writer.writerow([row.epoch, f"{row.image_level:.6f}",
                             f"{row.point_level:.6f}", f"{row.split_level:.6f}",
                             f"{row.false_positive:.6f}", f"{row.total:.6f}",
                             f"{row.val_mae:.6f}", f"{row.val_fscore:.6f}"])


def _train_once(run: RunConfig, manifest: DatasetManifest, out: Path):
    train_samples = _split_samples(manifest, "train")
    val_samples = _split_samples(manifest, "val")
    fcn_cfg = FcnConfig(num_classes=manifest.num_classes)
    result = train(train_samples, val_samples, run.train_cfg,
                   loss_cfg=run.loss_cfg, fcn_cfg=fcn_cfg)
    save_checkpoint(result.params, out / "checkpoint.ckpt")
    _write_log_csv(out / "log.csv", result.history)
    return result


def cmd_train(args) -> int:
    run = RunConfig.from_args(args)
    manifest = _load_dataset(run.manifest)
    out = _ensure_outdir(run.out)
    result = _train_once(run, manifest, out)
    print(f"checkpoint={out / 'checkpoint.ckpt'}")
    print(f"log={out / 'log.csv'}")
    print(f"epochs_run={len(result.history)} best_epoch={result.best_epoch} "
          f"best_val_mae={result.best_val_mae:.4f}")
    return EXIT_OK


def _predict_record(params: FcnParams, image, annotations):
    counts, labeling = predict_counts(params, image)
    return record_from_prediction(annotations, counts, labeling)


def _eval_records(params: FcnParams, samples: list) -> list:
    return map_across_images(lambda s: _predict_record(params, s[0], s[1]), samples)


def _metric_lines(records: list, game_level: int) -> list:
    num_classes = records[0].num_classes
    lines = [("images", f"{len(records)}"), ("num_classes", f"{num_classes}")]
    if num_classes == 2:
        lines.append(("mae", f"{mae(records):.6f}"))
    for level in range(game_level + 1):
        lines.append((f"game{level}", f"{game(records, level):.6f}"))
    lines.append(("fscore", f"{fscore(records):.6f}"))
    if num_classes > 2:
        for key, value in mrmse_family(records).items():
            lines.append((key, f"{value:.6f}"))
    return lines


def cmd_eval(args) -> int:
    if args.game_level < 0:
        raise UsageError("--game-level must be >= 0")
    params = _load_params(args.checkpoint)
    manifest = _load_dataset(args.manifest)
    if manifest.num_classes != params.config.num_classes:
        raise DataError(
            f"checkpoint expects {params.config.num_classes} classes but the "
            f"manifest defines {manifest.num_classes}")
    samples = _split_samples(manifest, args.split)
    records = _eval_records(params, samples)
    lines = [("split", args.split)] + _metric_lines(records, args.game_level)
    for key, value in lines:
        print(f"{key}={value}")
    if args.out is not None:
        out = _ensure_outdir(args.out)
        report = "".join(f"{k}={v}\n" for k, v in lines)
        (out / "report.txt").write_text(report, encoding="utf-8")
        with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([k for k, _ in lines])
            writer.writerow([v for _, v in lines])
    return EXIT_OK


def cmd_predict(args) -> int:
    params = _load_params(args.checkpoint)
    out_dir = _ensure_outdir(args.out) if args.out is not None else None

    def handle(path_str):
        path = Path(path_str)
        try:
            image = load_image(path)
        except ManifestError as exc:
            return path, None, str(exc)
        counts, labeling = predict_counts(params, image)
        if not args.no_overlay:
            target = (out_dir or path.parent) / f"{path.stem}_overlay.png"
            save_rgb(render_overlay(image, labeling), target)
        return path, counts, None

    results = map_across_images(handle, args.images)
    failures = 0
    for path, counts, error in results:
        if error is not None:
            print(f"warning: skipping {path}: {error}", file=sys.stderr)
            failures += 1
            continue
        for cls in range(1, len(counts)):
            print(f"image={path} class={cls} count={counts[cls]}")
    return EXIT_DATA if failures else EXIT_OK


def cmd_inspect_splits(args) -> int:
    params = _load_params(args.checkpoint)
    manifest = _load_dataset(args.manifest)
    entries = manifest.for_split(args.split)
    if not 0 <= args.index < len(entries):
        raise DataError(
            f"--index {args.index} out of range: split {args.split!r} has "
            f"{len(entries)} records")
    entry = entries[args.index]
    image = load_image(Path(manifest.root) / entry.image)
    annotations = entry.annotations
    probs = softmax(forward(params, image))
    labeling = assign_points(label_blobs(probs), annotations)
    out = _ensure_outdir(args.out)
    methods = ("watershed", "line") if args.method == "both" else (args.method,)
    print(f"image={entry.image} blobs={labeling.num_blobs} "
          f"points={len(annotations)} "
          f"multi_point_blobs={len(labeling.multi_point_blob_ids())} "
          f"unmatched_blobs={len(labeling.unmatched_blob_ids())}")
    for method in methods:
        if method == "watershed":
            boundary = watershed_split(foreground_mask(probs), labeling, annotations)
        else:
            boundary = line_split(probs, labeling)
        target = out / f"inspect_{method}.png"
        save_rgb(render_overlay(image, labeling, annotations, boundary), target)
        print(f"method={method} boundary_pixels={len(boundary)} overlay={target}")
    return EXIT_OK


def cmd_ablation(args) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    if not variants:
        raise UsageError("--variants must name at least one loss configuration")
    manifest = _load_dataset(args.manifest)
    out = _ensure_outdir(args.out)
    rows = []
    for variant in variants:
        args.loss = variant
        run = RunConfig.from_args(args)
        sub_out = _ensure_outdir(out / variant.replace("+", "_"))
        result = _train_once(run, manifest, sub_out)
        params = result.params
        test_records = _eval_records(params, _split_samples(manifest, "test"))
        test_mae = mae(test_records) if manifest.num_classes == 2 else \
            game(test_records, 0)
        rows.append({
            "variant": variant,
            "best_epoch": result.best_epoch,
            "val_mae": result.best_val_mae,
            "test_mae": test_mae,
            "test_fscore": fscore(test_records),
        })
        print(f"done variant={variant} test_mae={test_mae:.4f} "
              f"test_fscore={rows[-1]['test_fscore']:.4f}")
    header = f"{'variant':<14} {'best_epoch':>10} {'val_mae':>9} " \
             f"{'test_mae':>9} {'test_fscore':>12}"
    print(header)
    print("-" * len(header))
    for row in rows:
        print(f"{row['variant']:<14} {row['best_epoch']:>10d} "
              f"{row['val_mae']:>9.4f} {row['test_mae']:>9.4f} "
              f"{row['test_fscore']:>12.4f}")
    with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["variant", "best_epoch", "val_mae", "test_mae",
                            "test_fscore"])
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "val_mae": f"{row['val_mae']:.6f}",
                             "test_mae": f"{row['test_mae']:.6f}",
                             "test_fscore": f"{row['test_fscore']:.6f}"})
    print(f"table={out / 'ablation.csv'}")
    return EXIT_OK


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "inspect-splits": cmd_inspect_splits,
    "ablation": cmd_ablation,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            stripped = _strip_config(argv)
            if not stripped or stripped[0] != args.command:
                raise UsageError("--config requires the command as the first token")
            tokens = _config_tokens(args.config)
            args = parser.parse_args([stripped[0]] + tokens + stripped[1:])
        return _COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse --help
        return int(exc.code) if exc.code else EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ManifestError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
