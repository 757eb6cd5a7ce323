"""Command-line surface: synth, train, eval, gradcam, report.

Exit codes are a stable contract: 0 success, 2 usage/layout problems,
3 numerical abort during training, 4 checkpoint errors. Randomized commands
take --seed and are bit-reproducible at worker count 1. No command leaves a
partial output file on failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import trainer as trainer_mod
from .errors import (CheckpointError, ConfigError, InputError, LayoutError,
                     LesionForgeError, NumericalAbort)
from .fileio import atomic_write_bytes, atomic_write_text
from .gradcam import grad_cam, overlay
from .metrics import MetricsReport, comparison_table

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_CHECKPOINT = 4

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _as_bool(text):
    try:
        return _BOOL[text.strip().lower()]
    except KeyError:
        raise ConfigError(f"expected a boolean, got {text!r}") from None


CONFIG_KEYS = {
    "epochs": int,
    "batch_size": int,
    "lr": float,
    "seed": int,
    "image_size": int,
    "val_fraction": float,
    "plateau_patience": int,
    "plateau_factor": float,
    "plateau_min_delta": float,
    "min_lr": float,
    "early_stop_patience": int,
    "augment": _as_bool,
    "rescale": float,
    "shear_deg": float,
    "hflip": _as_bool,
    "vflip": _as_bool,
    "zoom": float,
    "workers": int,
}

TRAIN_DEFAULTS = {
    "epochs": 60,
    "batch_size": 32,
    "lr": 1e-4,
    "seed": 0,
    "image_size": 176,
    "val_fraction": 0.2,
    "plateau_patience": 5,
    "plateau_factor": 0.1,
    "plateau_min_delta": 1e-4,
    "min_lr": 1e-7,
    "early_stop_patience": 10,
    "augment": True,
    "rescale": 1.0 / 255.0,
    "shear_deg": 0.2,
    "hflip": True,
    "vflip": True,
    "zoom": 0.2,
    "workers": None,  # falls back to LESIONFORGE_THREADS, then 1
}


def load_config_file(path):
    """Parse a flat key=value overlay; unknown keys are rejected by name."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = CONFIG_KEYS[key](value.strip())
    return out


def _merged_train_settings(args):
    """Precedence: flag > config file > default."""
    settings = dict(TRAIN_DEFAULTS)
    if args.config:
        settings.update(load_config_file(args.config))
    for key in TRAIN_DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag
    return settings


def _train_config(settings):
    aug = None
    if settings["augment"]:
        aug = data_mod.AugmentParams(rescale=settings["rescale"],
                                     shear_deg=settings["shear_deg"],
                                     hflip=settings["hflip"], vflip=settings["vflip"],
                                     zoom=settings["zoom"])
    return trainer_mod.TrainConfig(
        epochs=settings["epochs"], batch_size=settings["batch_size"],
        lr0=settings["lr"], image_size=settings["image_size"], seed=settings["seed"],
        val_fraction=settings["val_fraction"],
        plateau=trainer_mod.PlateauConfig(patience=settings["plateau_patience"],
                                          factor=settings["plateau_factor"],
                                          min_delta=settings["plateau_min_delta"],
                                          min_lr=settings["min_lr"]),
        early_stop=trainer_mod.EarlyStopConfig(patience=settings["early_stop_patience"]),
        augment=aug, workers=settings["workers"])


def cmd_synth(args):
    if args.n < 1:
        print(f"error: --n must be >= 1, got {args.n}", file=sys.stderr)
        return EXIT_USAGE
    if args.size < 1:
        print(f"error: --size must be >= 1, got {args.size}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        ds = data_mod.synth_dataset(args.n, args.size, args.seed)
        data_mod.write_dataset_png(ds, out)
    except OSError as exc:
        print(f"error: cannot write dataset to {out}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    counts = ds.class_counts()
    print(f"wrote {len(ds)} images to {out} "
          f"(benign={counts['benign']}, malignant={counts['malignant']}, "
          f"size={args.size}, seed={args.seed})")
    return EXIT_OK


def cmd_train(args):
    settings = _merged_train_settings(args)
    cfg = _train_config(settings)
    data_root = Path(args.data)
    full = data_mod.load_dataset(data_root / "train")
    train_ds, val_ds = data_mod.train_val_split(full, cfg.val_fraction, cfg.seed)
    print("config: " + " ".join(f"{k}={settings[k]}" for k in sorted(settings)))
    print(f"dataset: {len(full)} images ({full.class_counts()}), "
          f"train={len(train_ds)} val={len(val_ds)}, skipped={full.skipped}")

    model = trainer_mod.build_lesionnet(cfg.image_size, cfg.seed)
    history = trainer_mod.train(model, train_ds, val_ds, cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer_mod.save_checkpoint(model, out / "checkpoint.lsnf",
                                image_size=cfg.image_size, seed=cfg.seed,
                                config=cfg.as_dict())
    atomic_write_text(out / "history.jsonl", history.to_jsonl())
    report, cm, mean_loss = trainer_mod.evaluate(model, val_ds, cfg.batch_size,
                                                 cfg.image_size, workers=cfg.workers)
    summary = {"model": "lesionnet", "config": cfg.as_dict(),
               "history": history.summary(),
               "val": {**report.as_dict(), "confusion": cm.as_dict(),
                       "mean_loss": mean_loss}}
    atomic_write_text(out / "summary.json", json.dumps(summary, indent=2) + "\n")
    print(f"val: accuracy={report.accuracy:.5f} precision={report.precision:.5f} "
          f"recall={report.recall:.5f} f1={report.f1:.5f}")
    print(f"artifacts written to {out}")
    return EXIT_OK


def _model_rescale(model):
    """Pixel rescale the checkpointed model was trained with (default 1/255)."""
    config = model.meta.get("config") or {}
    aug = config.get("augment")
    return aug["rescale"] if aug else 1.0 / 255.0


def cmd_eval(args):
    model = trainer_mod.load_checkpoint(args.checkpoint)
    image_size = model.meta.get("image_size")
    if image_size is None:
        print("error: checkpoint does not record an image size", file=sys.stderr)
        return EXIT_USAGE
    ds = data_mod.load_dataset(Path(args.data) / "test")
    report, cm, mean_loss = trainer_mod.evaluate(model, ds, args.batch_size, image_size,
                                                 rescale=_model_rescale(model))
    name = args.name or Path(args.checkpoint).stem
    payload = {"model": name, **report.as_dict(), "confusion": cm.as_dict(),
               "mean_loss": mean_loss}
    atomic_write_text(args.out, json.dumps(payload, indent=2) + "\n")
    print(f"accuracy={report.accuracy:.5f} precision={report.precision:.5f} "
          f"recall={report.recall:.5f} f1={report.f1:.5f}")
    return EXIT_OK


def cmd_gradcam(args):
    if not 0.0 <= args.alpha <= 1.0:
        print(f"error: --alpha must be in [0, 1], got {args.alpha}", file=sys.stderr)
        return EXIT_USAGE
    model = trainer_mod.load_checkpoint(args.checkpoint)
    image_size = model.meta.get("image_size")
    if image_size is None:
        print("error: checkpoint does not record an image size", file=sys.stderr)
        return EXIT_USAGE
    try:
        img = data_mod.decode_image(args.image)
    except OSError as exc:
        print(f"error: cannot decode image {args.image}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    img = data_mod.resize(img, image_size)
    x = np.ascontiguousarray((img * _model_rescale(model)).transpose(2, 0, 1),
                             dtype=np.float32)[None, ...]
    model.set_mode("eval")
    probs = model.forward(x)[0]
    class_names = data_mod.CLASS_NAMES
    if args.class_name == "auto":
        class_index = int(probs.argmax())
    else:
        class_index = class_names.index(args.class_name)
    hm = grad_cam(model, x, class_index, target_layer=args.layer)
    blended = overlay(hm, img, alpha=args.alpha)

    from PIL import Image as PILImage
    import io
    buf = io.BytesIO()
    PILImage.fromarray(blended, mode="RGB").save(buf, format="PNG")
    atomic_write_bytes(args.out, buf.getvalue())
    print(" ".join(f"p({name})={probs[i]:.5f}" for i, name in enumerate(class_names)))
    print(f"class={class_names[class_index]} layer={hm.source_layer} overlay={args.out}")
    return EXIT_OK


def cmd_report(args):
    results = []
    for path in args.inputs:
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
            rep = MetricsReport(accuracy=payload["accuracy"], precision=payload["precision"],
                                recall=payload["recall"], f1=payload["f1"])
        except (json.JSONDecodeError, KeyError, TypeError, OSError) as exc:
            print(f"error: malformed eval summary {path}: {exc}", file=sys.stderr)
            return EXIT_USAGE
        results.append((payload.get("model", ""), rep))
    table = comparison_table(results)
    base = Path(args.out)
    if base.suffix in (".csv", ".json"):
        base = base.with_suffix("")
    atomic_write_text(base.with_suffix(".csv"), table.render_csv())
    atomic_write_text(base.with_suffix(".json"), table.render_json())
    print(f"wrote {base.with_suffix('.csv')} and {base.with_suffix('.json')} "
          f"({len(table.models)} models)")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lesionforge",
        description="Train, evaluate, and explain a from-scratch CNN lesion classifier.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic two-class dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, required=True, help="images per class")
    p.add_argument("--size", type=int, default=32, help="image size in pixels")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on <data>/train/{benign,malignant}")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="directory for checkpoint/history/summary")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--no-augment", dest="augment", action="store_const", const=False,
                   help="disable the randomized augmentation pipeline")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on <data>/test")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="metrics JSON output path")
    p.add_argument("--name", help="model name recorded in the report")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=32)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcam", help="write a class-activation overlay PNG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--class", dest="class_name", default="auto",
                   choices=["benign", "malignant", "auto"])
    p.add_argument("--out", required=True)
    p.add_argument("--layer", help="target convolutional layer (default: last)")
    p.add_argument("--alpha", type=float, default=0.4)
    p.set_defaults(func=cmd_gradcam)

    p = sub.add_parser("report", help="merge eval summaries into a comparison table")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True, help="output path prefix (.csv/.json added)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LayoutError, ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LesionForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
