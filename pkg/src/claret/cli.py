"""Command-line surface: synth, train, eval, predict and gradcheck.

Config files are plain ``key=value`` lines with ``#`` comments; keys mirror
the architecture and training config fields and unknown keys are rejected.
Exit codes partition failures: 1 configuration, 2 I/O or file format,
3 shape/class mismatch, 4 verification.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checks import FAMILIES, TOLERANCE, run_gradcheck
from .checkpoint import import_backbone, load_checkpoint, save_checkpoint
from .data import adapt_channels, load_dataset, read_image, resize_nearest, save_dataset_tree, synth_dataset
from .errors import ClaRetError, ClassCountMismatch, ConfigError, VerificationError
from .model import ClaRetConfig, build_claret, freeze_backbone, predict
from .rng import derive_seed
from .training import TrainConfig, Metrics, evaluate, records_to_csv, split_dataset, train

# the block counts explored in the reference experiments
_ALLOWED_CONV_BLOCKS = (3, 5, 7)


def _parse_int(text: str) -> int:
    return int(text)


def _parse_float(text: str) -> float:
    return float(text)


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _parse_float_tuple(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _parse_str(text: str) -> str:
    return text


def _parse_optional_int(text: str):
    return None if text.strip().lower() == "none" else int(text)


# key -> (config target, parser); "seed" feeds both configs
_MODEL_KEYS = {
    "n_conv_blocks": _parse_int,
    "filter_exponent_lo": _parse_int,
    "filter_exponent_hi": _parse_int,
    "kernel_size": _parse_int,
    "dense_units": _parse_int_tuple,
    "dropout_rate": _parse_float,
    "n_classes": _parse_int,
    "input_shape": _parse_int_tuple,
    "backbone": _parse_str,
    "freeze_depth": _parse_optional_int,
    "seed": _parse_int,
}
_TRAIN_KEYS = {
    "learning_rate": _parse_float,
    "momentum": _parse_float,
    "batch_size": _parse_int,
    "epochs": _parse_int,
    "split": _parse_float_tuple,
    "seed": _parse_int,
}


def load_config_file(path) -> tuple[ClaRetConfig, TrainConfig]:
    """Parse a key=value config file into the two config objects."""
    model_kwargs: dict = {}
    train_kwargs: dict = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        known = False
        if key in _MODEL_KEYS:
            known = True
            try:
                model_kwargs[key] = _MODEL_KEYS[key](value)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad value for key {key!r}: {value!r}") from None
        if key in _TRAIN_KEYS:
            known = True
            try:
                train_kwargs[key] = _TRAIN_KEYS[key](value)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad value for key {key!r}: {value!r}") from None
        if not known:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
    if "n_conv_blocks" in model_kwargs and model_kwargs["n_conv_blocks"] not in _ALLOWED_CONV_BLOCKS:
        raise ConfigError(
            f"{path}: key 'n_conv_blocks' must be one of {_ALLOWED_CONV_BLOCKS}, "
            f"got {model_kwargs['n_conv_blocks']}")
    return ClaRetConfig(**model_kwargs), TrainConfig(**train_kwargs)


def _format_metrics(metrics: Metrics, class_names) -> str:
    width = max(12, max((len(n) for n in class_names), default=0) + 2)
    lines = [
        f"accuracy {metrics.accuracy:.4f}",
        f"macro F1 {metrics.macro_f1:.4f}",
        f"{'class':<{width}}{'precision':>10}{'recall':>10}{'f1':>10}",
    ]
    for i, name in enumerate(class_names):
        lines.append(
            f"{name:<{width}}{metrics.per_class_precision[i]:>10.4f}"
            f"{metrics.per_class_recall[i]:>10.4f}{metrics.per_class_f1[i]:>10.4f}")
    return "\n".join(lines)


def _format_confusion(confusion: np.ndarray, class_names) -> str:
    width = max(8, max(len(n) for n in class_names) + 2)
    lines = ["confusion matrix (rows = true, cols = predicted):"]
    lines.append(" " * width + "".join(f"{n:>{width}}" for n in class_names))
    for i, name in enumerate(class_names):
        lines.append(f"{name:<{width}}" + "".join(f"{int(v):>{width}}" for v in confusion[i]))
    return "\n".join(lines)


def cmd_synth(args) -> int:
    dataset = synth_dataset(args.per_class, args.size, args.seed)
    count = save_dataset_tree(dataset, args.out)
    print(f"wrote {count} samples across {len(dataset.class_names)} classes to {args.out}")
    for name in dataset.class_names:
        print(f"  {name}: {args.per_class}")
    return 0


def cmd_train(args) -> int:
    model_cfg, train_cfg = load_config_file(args.config)
    dataset = load_dataset(args.data, model_cfg.input_shape)
    if len(dataset.class_names) != model_cfg.n_classes:
        raise ClassCountMismatch(
            f"dataset has {len(dataset.class_names)} classes, config says {model_cfg.n_classes}")
    model_cfg = replace(model_cfg, class_names=dataset.class_names)
    model = build_claret(model_cfg)
    if args.backbone:
        import_backbone(model, args.backbone, freeze=False)
    if args.freeze is not None:
        freeze_backbone(model, args.freeze)
    print(f"loaded {len(dataset.samples)} samples in {len(dataset.class_names)} classes from {args.data}")

    model, records = train(model, dataset, train_cfg)
    for r in records:
        print(f"epoch {r.epoch:3d}  train_loss {r.train_loss:.6f}  "
              f"train_acc {r.train_accuracy:.4f}  val_acc {r.val_accuracy:.4f}")

    _, _, test_set = split_dataset(dataset, train_cfg.split, derive_seed(train_cfg.seed, "split"))
    if test_set.samples:
        print("test slice:")
        print(_format_metrics(evaluate(model, test_set), dataset.class_names))
    else:
        print("test slice is empty")

    save_checkpoint(model, args.out)
    print(f"checkpoint written to {args.out}")
    if args.curves:
        Path(args.curves).write_bytes(records_to_csv(records).encode("ascii"))
        print(f"curves written to {args.curves}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    dataset = load_dataset(args.data, model.config.input_shape)
    metrics = evaluate(model, dataset)
    print(_format_confusion(metrics.confusion, dataset.class_names))
    print(_format_metrics(metrics, dataset.class_names))
    return 0


def cmd_predict(args) -> int:
    model = load_checkpoint(args.model)
    h, w, c = model.config.input_shape
    image = resize_nearest(read_image(args.image), h, w)
    pixels = adapt_channels(image.pixels, c)
    probs = predict(model, pixels[None, ...])[0]
    index = int(np.argmax(probs))
    print(f"class index: {index}")
    if model.config.class_names:
        print(f"class name: {model.config.class_names[index]}")
    print("probabilities: " + " ".join(f"{p:.6f}" for p in probs))
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradcheck(args.seed)
    print(f"gradient checks (seed {args.seed}, double precision, tolerance {TOLERANCE:.0e}):")
    for family in FAMILIES:
        err = results[family]
        verdict = "ok" if err < TOLERANCE else "FAIL"
        print(f"  {family:<14}{err:>12.3e}  {verdict}")
    failures = [f for f in FAMILIES if not results[f] < TOLERANCE]
    if failures:
        raise VerificationError(
            f"gradient check failed for {failures[0]}: max relative error {results[failures[0]]:.3e}")
    print("all layer families passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="claret", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic 4-class PGM dataset tree")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--per-class", type=int, default=100, dest="per_class")
    p.add_argument("--size", type=int, default=32, help="image side in pixels")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a class-per-directory image tree")
    p.add_argument("--data", required=True, help="dataset root directory")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--out", required=True, help="output checkpoint (.clrt)")
    p.add_argument("--backbone", help="checkpoint to import backbone weights from")
    p.add_argument("--freeze", type=int, help="freeze the first N backbone layers")
    p.add_argument("--curves", help="write per-epoch CSV here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset tree")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify a single PGM/PPM image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer family")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ClaRetError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: IO: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    raise SystemExit(main())
