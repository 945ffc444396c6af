"""Command line: gen-data, train, eval, detect, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
failure.  Every command writes its fully resolved settings as ``key = value``
lines next to its outputs; passing that file back through ``--config``
repeats the run.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .autodiff import NonFiniteError
from .checks import CHECKS, run_check
from .config import ConfigError, TrainConfig, dump_config, format_value, parse_config_text
from .dataset import (AnnotationError, PPMFormatError, SceneSpec, boxes_and_labels, generate_dataset,
                      load_split, read_ppm, write_ppm)
from .detection import Detection
from .evaluator import EvaluationError, evaluate, format_table, write_csv
from .model import Detector, detect
from .trainer import (CheckpointFormatError, CheckpointShapeError, TrainItem, checkpoint_from, load_checkpoint,
                      load_into, save_checkpoint, train)

logger = logging.getLogger("vssanet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# command-specific keys accepted in a config file next to the TrainConfig keys
GEN_KEYS = {"out": "", "train": 100, "test": 20, "seed": 0, "pole_rate": 1.0, "distractors": "0-2",
            "signs": "1-3", "size": 300, "classes": 3, "clutter": 12, "noise": 6.0}
TRAIN_KEYS = {"data": "", "out": ""}
EVAL_KEYS = {"ckpt": "", "data": "", "split": "test", "iou": 0.5, "score_thresh": 0.01, "out": ""}
DETECT_KEYS = {"ckpt": "", "image": "", "out": "", "score_thresh": 0.5}

CLASS_COLORS = ((255, 0, 255), (0, 255, 255), (255, 255, 0), (0, 255, 0), (255, 128, 0), (255, 255, 255))


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _run_dir(command: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    path = Path("runs") / f"{stamp}-{command}"
    n = 1
    while path.exists():
        n += 1
        path = Path("runs") / f"{stamp}-{command}-{n}"
    path.mkdir(parents=True)
    return path


def _range(text: str, name: str) -> tuple[int, int]:
    parts = str(text).replace(":", "-").split("-")
    try:
        lo, hi = (int(parts[0]), int(parts[-1]))
    except ValueError:
        raise UsageError(f"{name} must be K or LO-HI, got {text!r}") from None
    if lo < 0 or hi < lo or len(parts) > 2:
        raise UsageError(f"{name} must be K or LO-HI with 0 <= LO <= HI, got {text!r}")
    return lo, hi


def _resolve(args, keys: dict[str, Any], train_keys: bool) -> tuple[TrainConfig, dict[str, Any]]:
    """Merge config file values with flags; flags win.  Missing keys take defaults."""
    file_train, file_extra = {}, {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise DataError(f"config file {path} does not exist")
        file_train, file_extra = parse_config_text(path.read_text(), keys, str(path))
    extra = {**keys, **file_extra}
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            extra[k] = v
    train = dict(file_train)
    if train_keys:
        for k in TrainConfig.__dataclass_fields__:
            v = getattr(args, k, None)
            if v is not None:
                train[k] = v
        defaulted = [k for k in TrainConfig.__dataclass_fields__ if k not in train]
        if defaulted:
            logger.info("config keys not given, defaults applied: %s", ", ".join(defaulted))
    return TrainConfig(**train).validate(), extra


def _write_resolved(path: Path, cfg: Optional[TrainConfig], extra: dict[str, Any]) -> None:
    if cfg is None:
        path.write_text("".join(f"{k} = {format_value(v)}\n" for k, v in extra.items()))
    else:
        path.write_text(dump_config(cfg, extra))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    _, opts = _resolve(args, GEN_KEYS, train_keys=False)
    out = Path(opts["out"]) if opts["out"] else _run_dir("data")
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"{out} exists and is not empty; pass --force to overwrite")
    if int(opts["train"]) < 0 or int(opts["test"]) < 0:
        raise UsageError("--train and --test must be non-negative")
    if not 0.0 <= float(opts["pole_rate"]) <= 1.0:
        raise UsageError("--pole-rate must lie in [0, 1]")
    spec = SceneSpec(image_size=int(opts["size"]), sign_count=_range(opts["signs"], "--signs"),
                     num_classes=int(opts["classes"]), pole_rate=float(opts["pole_rate"]),
                     distractor_count=_range(opts["distractors"], "--distractors"), clutter=int(opts["clutter"]),
                     noise=float(opts["noise"]), seed=int(opts["seed"]))
    out.mkdir(parents=True, exist_ok=True)
    if args.force:
        for old in (out / "images").glob("*.ppm"):
            old.unlink()
    generate_dataset(out, int(opts["train"]), int(opts["test"]), spec)
    opts["out"] = str(out)
    _write_resolved(out / "gen-data.cfg", None, opts)
    print(f"wrote {opts['train']} train and {opts['test']} test images to {out}")
    return EXIT_OK


def _dataset_classes(data: Path) -> Optional[int]:
    cfg = data / "gen-data.cfg"
    if not cfg.exists():
        return None
    for line in cfg.read_text().splitlines():
        key, _, value = line.partition("=")
        if key.strip() == "classes":
            return int(value)
    return None


def _train_items(data: Path, split: str, num_classes: int) -> list[TrainItem]:
    declared = _dataset_classes(data)
    if declared is not None and declared != num_classes:
        raise DataError(f"dataset {data} has {declared} classes but the config sets num_classes = {num_classes}")
    items = []
    for s in load_split(data, split):
        boxes, labels = boxes_and_labels(s.objects)
        if len(labels) and labels.max() > num_classes:
            raise DataError(f"{s.path}: class {labels.max()} exceeds num_classes = {num_classes}")
        items.append(TrainItem(s.image, boxes, labels))
    return items


def cmd_train(args) -> int:
    cfg, opts = _resolve(args, TRAIN_KEYS, train_keys=True)
    if not opts["data"]:
        raise UsageError("train needs --data DIR")
    data = Path(opts["data"])
    if not data.is_dir():
        raise DataError(f"dataset directory {data} does not exist")
    out = Path(opts["out"]) if opts["out"] else _run_dir("train") / "model.ckpt"
    out.parent.mkdir(parents=True, exist_ok=True)
    items = _train_items(data, "train", cfg.num_classes)
    if not items:
        raise DataError(f"{data}/train.txt lists no images")
    model = Detector(cfg)
    logger.info("training %d parameters on %d images", model.num_parameters(), len(items))
    result = train(model, items, cfg)
    opts["out"] = str(out)
    ckpt = checkpoint_from(model, result.iteration, cfg, result.optimizer)
    ckpt.extra = opts
    save_checkpoint(ckpt, out)
    hist = out.with_name(out.name + ".loss.txt")
    with open(hist, "w") as f:
        f.write("# iteration size loss classification regression\n")
        for i, (l, c, r, s) in enumerate(zip(result.losses, result.cls_losses, result.reg_losses, result.sizes), 1):
            f.write(f"{i} {s} {l!r} {c!r} {r!r}\n")
    print(f"final loss {result.losses[-1]:.5f} after {result.iteration} iterations; checkpoint {out}")
    return EXIT_OK


def _load_model(ckpt_path: str, config: Optional[str]) -> tuple[Detector, TrainConfig]:
    path = Path(ckpt_path)
    if not path.exists():
        raise DataError(f"checkpoint {path} does not exist")
    ckpt = load_checkpoint(path)
    if config:
        cfg, _ = _resolve(argparse.Namespace(config=config), {**TRAIN_KEYS, **EVAL_KEYS, **DETECT_KEYS},
                          train_keys=True)
    elif ckpt.config is not None:
        cfg = ckpt.config
    else:
        raise DataError(f"{path} has no config sidecar; pass --model-config")
    model = Detector(cfg)
    load_into(model, ckpt)
    return model, cfg


def cmd_eval(args) -> int:
    _, opts = _resolve(args, EVAL_KEYS, train_keys=False)
    if not opts["ckpt"] or not opts["data"]:
        raise UsageError("eval needs --ckpt and --data")
    model, cfg = _load_model(opts["ckpt"], args.model_config)
    out = Path(opts["out"]) if opts["out"] else _run_dir("eval")
    out.mkdir(parents=True, exist_ok=True)
    samples = load_split(Path(opts["data"]), opts["split"])
    dets = [detect(model, s.image, cfg.base_size, score_thresh=float(opts["score_thresh"])) for s in samples]
    report = evaluate(dets, [s.objects for s in samples], cfg.num_classes, iou_threshold=float(opts["iou"]))
    table = format_table(report)
    (out / "report.txt").write_text(table)
    write_csv(report, out / "report.csv")
    with open(out / "matches.txt", "w") as f:
        f.write("# image class score tp gt_index iou\n")
        for m in report.matches:
            f.write(f"{samples[m.image].path} {m.class_id} {m.score!r} {int(m.true_positive)} {m.gt_index} {m.iou!r}\n")
    opts["out"] = str(out)
    _write_resolved(out / "eval.cfg", None, opts)
    print(table, end="")
    return EXIT_OK


def draw_boxes(image: np.ndarray, dets: list[Detection], thickness: int = 2) -> np.ndarray:
    out = image.copy()
    H, W = out.shape[:2]
    for d in dets:
        color = CLASS_COLORS[(d.class_id - 1) % len(CLASS_COLORS)]
        x0, y0 = int(np.clip(np.floor(d.box.xmin), 0, W - 1)), int(np.clip(np.floor(d.box.ymin), 0, H - 1))
        x1, y1 = int(np.clip(np.ceil(d.box.xmax) - 1, 0, W - 1)), int(np.clip(np.ceil(d.box.ymax) - 1, 0, H - 1))
        t = thickness
        out[y0:min(y0 + t, y1 + 1), x0:x1 + 1] = color
        out[max(y1 - t + 1, y0):y1 + 1, x0:x1 + 1] = color
        out[y0:y1 + 1, x0:min(x0 + t, x1 + 1)] = color
        out[y0:y1 + 1, max(x1 - t + 1, x0):x1 + 1] = color
    return out


def cmd_detect(args) -> int:
    _, opts = _resolve(args, DETECT_KEYS, train_keys=False)
    if not opts["ckpt"] or not opts["image"]:
        raise UsageError("detect needs --ckpt and --image")
    model, cfg = _load_model(opts["ckpt"], args.model_config)
    image = read_ppm(opts["image"])
    out = Path(opts["out"]) if opts["out"] else _run_dir("detect") / "overlay.ppm"
    out.parent.mkdir(parents=True, exist_ok=True)
    dets = detect(model, image, cfg.base_size, score_thresh=float(opts["score_thresh"]))
    write_ppm(out, draw_boxes(image, dets))
    lines = [f"{d.class_id} {d.score!r} {d.box.xmin!r} {d.box.ymin!r} {d.box.xmax!r} {d.box.ymax!r}\n" for d in dets]
    out.with_suffix(".txt").write_text("".join(lines))
    opts["out"] = str(out)
    _write_resolved(out.with_name(out.name + ".cfg"), None, opts)
    print(f"{len(dets)} detections written to {out.with_suffix('.txt')}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    names = sorted(CHECKS) if args.op == "all" else [args.op]
    if args.op != "all" and args.op not in CHECKS:
        raise UsageError(f"unknown op {args.op!r}; choose from: all, {', '.join(sorted(CHECKS))}")
    failed = 0
    for name in names:
        rep = run_check(name, seed=args.seed)
        status = "PASS" if rep.passed else "FAIL"
        extra = f"  {rep.message}" if rep.message else ""
        print(f"{status}  {name:28s} max rel err {rep.max_rel_error:.3e} over {rep.n_checked} partials{extra}")
        failed += not rep.passed
    print(f"{len(names) - failed}/{len(names)} checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--orientation", choices=("vertical", "horizontal", "none"))
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--width", type=float)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--base-size", dest="base_size", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--num-classes", dest="num_classes", type=int)
    p.add_argument("--scales", type=lambda s: tuple(float(v) for v in s.replace(",", " ").split()))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vssanet", description="Traffic sign detector with vertical spatial sequence attention.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic pole/sign dataset")
    g.add_argument("--config")
    g.add_argument("--out")
    g.add_argument("--train", type=int)
    g.add_argument("--test", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--pole-rate", dest="pole_rate", type=float)
    g.add_argument("--distractors", help="count K or range LO-HI per image")
    g.add_argument("--signs", help="count K or range LO-HI per image")
    g.add_argument("--size", type=int)
    g.add_argument("--classes", type=int)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a detector")
    t.add_argument("--config")
    t.add_argument("--data")
    t.add_argument("--out", help="checkpoint path")
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--config")
    e.add_argument("--ckpt")
    e.add_argument("--model-config", dest="model_config", help="model config overriding the checkpoint sidecar")
    e.add_argument("--data")
    e.add_argument("--split")
    e.add_argument("--iou", type=float)
    e.add_argument("--score-thresh", dest="score_thresh", type=float)
    e.add_argument("--out", help="report directory")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("detect", help="detect signs in one PPM image")
    d.add_argument("--config")
    d.add_argument("--ckpt")
    d.add_argument("--model-config", dest="model_config")
    d.add_argument("--image")
    d.add_argument("--out", help="overlay PPM path")
    d.add_argument("--score-thresh", dest="score_thresh", type=float)
    d.set_defaults(func=cmd_detect)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    c.add_argument("--op", default="all", help="check name or 'all'")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ConfigError, PPMFormatError, AnnotationError, CheckpointFormatError,
            CheckpointShapeError, EvaluationError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
