"""Command-line surface tying the pipeline together: dataset synthesis,
stratified splitting, training, evaluation, and report rendering.

Determinism contract: every command with identical flags, seeds, and
inputs produces byte-identical primary outputs (split manifests, history
CSVs, checkpoints, reports).  The per-run JSON manifest records the
resolved configuration and carries the only timestamp, so it sits
outside that contract.

Exit codes are stable for scripting: 0 success, 2 usage or invalid
input, 3 numeric failure during training, 4 unreadable checkpoint or
failed output write, 5 model/data class disagreement.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .architecture import ArchConfig, reference_cnn_config
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    FULL_CATALOG,
    ClassCatalog,
    LesionDataset,
    SplitSpec,
    class_weights,
    count_classes,
    load_metadata,
    stratified_split,
    write_synth_dataset,
)
from .exceptions import (
    CheckpointError,
    ClassMismatchError,
    DataError,
    LesionCnnError,
    NumericsError,
    TrainingDiverged,
)
from .metrics import (
    MetricsReport,
    confusion_matrix,
    read_counts_csv,
    render_report,
    write_counts_csv,
)
from .model import init_params, replace_head, run_forward
from .preprocessing import AugmentRanges
from .training import TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_IO = 4
EXIT_MISMATCH = 5

SPLIT_NAMES = ("train", "val", "test")

# Inference streams fixed chunks of this size, matching the trainer's
# validation pass, so eval on a fresh checkpoint reproduces the final
# val_acc row of the history file exactly.
EVAL_CHUNK = 64

_SPLIT_DEFAULTS = {"train": 0.7, "val": 0.15, "test": 0.15, "seed": 0,
                   "group_by": "image_id"}
_TRAIN_DEFAULTS = {"arch": "reference", "input_side": 64, "classes": 7,
                   "epochs": 50, "batch_size": 32, "lr": 1e-3, "dropout": 0.5,
                   "width": 1.0, "seed": 0, "freeze": None, "augment": None,
                   "equalize": "per-channel"}
_EVAL_DEFAULTS = {"format": "text,csv,svg", "equalize": "per-channel"}
_SYNTH_DEFAULTS = {"n_per_class": 100, "classes": 7, "side": 64, "seed": 0}
_REPORT_DEFAULTS = {"format": "text,csv,svg"}

_OPTION_TYPES = {
    "train": float, "val": float, "test": float, "seed": int, "group_by": str,
    "arch": str, "input_side": int, "classes": int, "epochs": int,
    "batch_size": int, "lr": float, "dropout": float, "width": float,
    "freeze": float, "augment": bool, "equalize": str,
    "n_per_class": int, "side": int, "format": str,
}

_FORMAT_FILES = {"text": "report.txt", "csv": "report.csv", "svg": "heatmap.svg"}


def _parse_config_file(path):
    """Load a config file: a JSON object, or ``key = value`` lines where
    values parse as JSON scalars when possible and strings otherwise."""
    try:
        with open(path, encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise DataError("cannot read config file %s: %s" % (path, exc)) from exc
    if text.lstrip().startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError("config file %s is not valid JSON: %s" % (path, exc)) from exc
        if not isinstance(obj, dict):
            raise DataError("config file %s must hold a JSON object" % (path,))
        return obj
    out = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError("config file %s line %d has no '='" % (path, ln))
        key, _, value = line.partition("=")
        value = value.strip()
        try:
            out[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            out[key.strip()] = value.strip("\"'")
    return out


def _coerce(key, value):
    kind = _OPTION_TYPES[key]
    if kind is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise DataError("config key %r must be true or false, got %r" % (key, value))
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise DataError("config key %r has an invalid value %r" % (key, value)) from None


def _resolve(args, defaults):
    """Merge tunables: CLI flag over config file over built-in default.

    Returns (resolved dict, per-key source dict); both go into the run
    manifest so every effective setting is auditable.
    """
    cfg = _parse_config_file(args.config) if getattr(args, "config", None) else {}
    for key in cfg:
        if key not in _OPTION_TYPES:
            raise DataError("unknown config key %r" % (key,))
    resolved = {}
    sources = {}
    for key, default in defaults.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
            sources[key] = "flag"
        elif key in cfg:
            resolved[key] = _coerce(key, cfg[key])
            sources[key] = "config"
        else:
            resolved[key] = default
            sources[key] = "default"
    return resolved, sources


def _require_out_dir(args):
    if not args.out_dir:
        raise DataError("--out-dir is required")
    os.makedirs(args.out_dir, exist_ok=True)
    return args.out_dir


def _data_paths(args, need_images=True):
    """Resolve the metadata CSV and image directory from --metadata /
    --image-dir, falling back to the --data-dir layout
    (<dir>/metadata.csv, <dir>/images)."""
    metadata = getattr(args, "metadata", None)
    image_dir = getattr(args, "image_dir", None)
    if getattr(args, "data_dir", None):
        metadata = metadata or os.path.join(args.data_dir, "metadata.csv")
        image_dir = image_dir or os.path.join(args.data_dir, "images")
    if metadata is None:
        raise DataError("a metadata CSV is required: pass --metadata or --data-dir")
    if need_images and image_dir is None:
        raise DataError("an image directory is required: pass --image-dir or --data-dir")
    return metadata, image_dir


def _read_manifest(path, name, allow_empty=False):
    try:
        with open(path, encoding="utf-8") as handle:
            ids = [line.strip() for line in handle]
    except OSError as exc:
        raise DataError("cannot read %s manifest %s: %s" % (name, path, exc)) from exc
    ids = [i for i in ids if i]
    if not ids and not allow_empty:
        raise DataError("%s manifest %s lists no image ids" % (name, path))
    return ids


def _records_for_ids(records, ids, name):
    by_id = {r.image_id: r for r in records}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DataError(
            "%s manifest names %d image id(s) absent from the metadata, "
            "first: %r" % (name, len(missing), missing[0])
        )
    return [by_id[i] for i in ids]


def _check_codes(records, catalog, context):
    bad = sorted({r.dx for r in records} - set(catalog.codes))
    if bad:
        raise ClassMismatchError(
            "%s holds class code(s) %s outside the model catalog %s"
            % (context, ", ".join(bad), "/".join(catalog.codes))
        )


def _parse_formats(text):
    tokens = []
    for token in text.replace(" ", "").split(","):
        if not token:
            continue
        if token not in _FORMAT_FILES:
            raise DataError(
                "unknown report format %r (expected text, csv, or svg)" % (token,)
            )
        if token not in tokens:
            tokens.append(token)
    if not tokens:
        raise DataError("--format lists no formats")
    return tokens


def _write_run_manifest(out_dir, command, resolved, sources, inputs, outputs,
                        extras=None):
    manifest = {
        "tool": "lesioncnn",
        "version": __version__,
        "command": command,
        # informational only; the timestamp keeps this file outside the
        # byte-identical contract that covers the primary outputs
        "created_unix": round(time.time(), 3),
        "config": {k: resolved[k] for k in sorted(resolved)},
        "config_sources": {k: sources[k] for k in sorted(sources)},
        "inputs": inputs,
        "outputs": outputs,
    }
    if extras:
        manifest.update(extras)
    path = os.path.join(out_dir, "run_%s.json" % command)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return path


def _emit_report(report, cm, out_dir, formats):
    paths = []
    counts_path = os.path.join(out_dir, "confusion.csv")
    write_counts_csv(cm, counts_path)
    paths.append(counts_path)
    for fmt in formats:
        path = os.path.join(out_dir, _FORMAT_FILES[fmt])
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write(render_report(report, cm, fmt))
        paths.append(path)
    return paths


def cmd_synth(args):
    resolved, sources = _resolve(args, _SYNTH_DEFAULTS)
    out_dir = _require_out_dir(args)
    csv_path, image_dir = write_synth_dataset(
        out_dir,
        n_per_class=resolved["n_per_class"],
        classes=resolved["classes"],
        side=resolved["side"],
        seed=resolved["seed"],
    )
    total = resolved["n_per_class"] * resolved["classes"]
    _write_run_manifest(
        out_dir, "synth", resolved, sources,
        inputs={},
        outputs={"metadata": csv_path, "image_dir": image_dir},
        extras={"images_written": total},
    )
    print("wrote %d images under %s" % (total, image_dir))
    print("wrote %s" % csv_path)
    return EXIT_OK


def cmd_split(args):
    resolved, sources = _resolve(args, _SPLIT_DEFAULTS)
    metadata_path, _ = _data_paths(args, need_images=False)
    out_dir = _require_out_dir(args)
    spec = SplitSpec(train=resolved["train"], val=resolved["val"],
                     test=resolved["test"], seed=resolved["seed"])
    records = load_metadata(metadata_path)
    parts = stratified_split(records, spec, group_by=resolved["group_by"])
    outputs = {}
    for name, part in zip(SPLIT_NAMES, parts):
        path = os.path.join(out_dir, name + ".txt")
        with open(path, "w", encoding="utf-8", newline="") as handle:
            for record in part:
                handle.write(record.image_id + "\n")
        outputs[name] = path
    counts = [count_classes(part, FULL_CATALOG) for part in parts]
    counts_path = os.path.join(out_dir, "counts.csv")
    with open(counts_path, "w", encoding="utf-8", newline="") as handle:
        handle.write("class,train,val,test,total\n")
        for ci, code in enumerate(FULL_CATALOG.codes):
            row = [int(c[ci]) for c in counts]
            handle.write("%s,%d,%d,%d,%d\n" % (code, row[0], row[1], row[2], sum(row)))
        totals = [len(part) for part in parts]
        handle.write("total,%d,%d,%d,%d\n" % (totals[0], totals[1], totals[2],
                                              sum(totals)))
    outputs["counts"] = counts_path
    _write_run_manifest(
        out_dir, "split", resolved, sources,
        inputs={"metadata": metadata_path},
        outputs=outputs,
        extras={"records": len(records)},
    )
    print("%-8s %7s %7s %7s %7s" % ("class", "train", "val", "test", "total"))
    for ci, code in enumerate(FULL_CATALOG.codes):
        row = [int(c[ci]) for c in counts]
        print("%-8s %7d %7d %7d %7d" % (code, row[0], row[1], row[2], sum(row)))
    totals = [len(part) for part in parts]
    print("%-8s %7d %7d %7d %7d" % ("total", totals[0], totals[1], totals[2],
                                    sum(totals)))
    for name in SPLIT_NAMES:
        print("wrote %s" % outputs[name])
    return EXIT_OK


def _build_fresh_model(resolved):
    catalog = ClassCatalog.subset(resolved["classes"])
    if resolved["arch"] == "reference":
        config = reference_cnn_config(
            resolved["input_side"],
            num_classes=resolved["classes"],
            dropout_rate=resolved["dropout"],
            width=resolved["width"],
        )
    else:
        try:
            with open(resolved["arch"], encoding="utf-8") as handle:
                described = json.load(handle)
        except OSError as exc:
            raise DataError("cannot read architecture file %s: %s"
                            % (resolved["arch"], exc)) from exc
        except json.JSONDecodeError as exc:
            raise DataError("architecture file %s is not valid JSON: %s"
                            % (resolved["arch"], exc)) from exc
        config = ArchConfig.from_dict(described)
        if config.num_classes != resolved["classes"]:
            raise ClassMismatchError(
                "architecture file emits %d classes but --classes asks for %d"
                % (config.num_classes, resolved["classes"])
            )
    return init_params(config, resolved["seed"], classes=catalog)


def cmd_train(args):
    resolved, sources = _resolve(args, _TRAIN_DEFAULTS)
    metadata_path, image_dir = _data_paths(args)
    out_dir = _require_out_dir(args)
    if not args.train_manifest:
        raise DataError("--train-manifest is required")
    train_ids = _read_manifest(args.train_manifest, "train")
    val_ids = (_read_manifest(args.val_manifest, "val", allow_empty=True)
               if args.val_manifest else [])
    records = load_metadata(metadata_path)
    train_records = _records_for_ids(records, train_ids, "train")
    val_records = _records_for_ids(records, val_ids, "val")
    head_note = None
    if args.init_from:
        model = load_checkpoint(args.init_from)
        # the checkpoint carries its architecture; arch/width/input-side
        # flags apply to fresh models only, --classes triggers head surgery
        if sources["classes"] != "default" and resolved["classes"] != len(model.classes):
            catalog = ClassCatalog.subset(resolved["classes"])
            head_note = ("replaced the %d-class head with a fresh %d-class head"
                         % (len(model.classes), resolved["classes"]))
            model = replace_head(model, resolved["classes"], resolved["seed"],
                                 classes=catalog)
    else:
        model = _build_fresh_model(resolved)
    catalog = model.classes
    _check_codes(train_records + val_records, catalog, "the split data")
    input_side = model.config.input_shape[1]
    train_data = LesionDataset(train_records, image_dir, input_side, catalog,
                               equalize_mode=resolved["equalize"])
    val_data = LesionDataset(val_records, image_dir, input_side, catalog,
                             equalize_mode=resolved["equalize"])
    weights = class_weights(np.maximum(train_data.class_counts(), 1))
    cfg = TrainConfig(
        epochs=resolved["epochs"],
        batch_size=resolved["batch_size"],
        lr=resolved["lr"],
        dropout_rate=resolved["dropout"],
        seed=resolved["seed"],
        freeze_fraction=resolved["freeze"],
        augment=AugmentRanges() if resolved["augment"] else None,
    )
    print("training %d parameters on %d images (%d classes, input %dx%d)"
          % (model.parameter_count(), len(train_data), len(catalog),
             input_side, input_side), flush=True)
    if head_note:
        print(head_note, flush=True)

    def progress(epoch, history):
        print("epoch %d/%d train_loss %.6g train_acc %.6g val_loss %.6g "
              "val_acc %.6g"
              % (epoch + 1, cfg.epochs, history.train_loss[-1],
                 history.train_acc[-1], history.val_loss[-1],
                 history.val_acc[-1]), flush=True)

    model, history = train(model, train_data, val_data, cfg, progress=progress)
    ckpt_path = os.path.join(out_dir, "checkpoint.ckpt")
    save_checkpoint(model, ckpt_path)
    history_path = os.path.join(out_dir, "history.csv")
    history.write_csv(history_path)
    _write_run_manifest(
        out_dir, "train", resolved, sources,
        inputs={
            "metadata": metadata_path,
            "image_dir": image_dir,
            "train_manifest": args.train_manifest,
            "val_manifest": args.val_manifest,
            "init_from": args.init_from,
        },
        outputs={"checkpoint": ckpt_path, "history": history_path},
        extras={
            "architecture": model.config.to_dict(),
            "classes": list(catalog.codes),
            "class_weights": [float(w) for w in weights],
            "frozen": list(model.frozen),
        },
    )
    print("wrote %s" % ckpt_path)
    print("wrote %s" % history_path)
    return EXIT_OK


def cmd_eval(args):
    resolved, sources = _resolve(args, _EVAL_DEFAULTS)
    formats = _parse_formats(resolved["format"])
    out_dir = _require_out_dir(args)
    inputs = {}
    if args.oracle_cm:
        # metrics-only replay of a published or previously saved count
        # matrix; no checkpoint or images involved
        cm = read_counts_csv(args.oracle_cm)
        inputs["oracle_cm"] = args.oracle_cm
    else:
        if not args.checkpoint:
            raise DataError("--checkpoint is required unless --oracle-cm is given")
        if not args.manifest:
            raise DataError("--manifest is required unless --oracle-cm is given")
        metadata_path, image_dir = _data_paths(args)
        model = load_checkpoint(args.checkpoint)
        ids = _read_manifest(args.manifest, "eval")
        records = load_metadata(metadata_path)
        eval_records = _records_for_ids(records, ids, "eval")
        _check_codes(eval_records, model.classes, "the evaluation split")
        data = LesionDataset(eval_records, image_dir, model.config.input_shape[1],
                             model.classes, equalize_mode=resolved["equalize"])
        y_true = []
        y_pred = []
        for inputs_batch, targets in data.batches(EVAL_CHUNK):
            probs, _ = run_forward(model, inputs_batch)
            y_pred.extend(np.argmax(probs, axis=1).tolist())
            y_true.extend(np.argmax(targets, axis=1).tolist())
        cm = confusion_matrix(y_true, y_pred, len(model.classes),
                              labels=model.classes.display_names)
        inputs.update({"checkpoint": args.checkpoint, "manifest": args.manifest,
                       "metadata": metadata_path, "image_dir": image_dir})
    report = MetricsReport.from_confusion(cm)
    paths = _emit_report(report, cm, out_dir, formats)
    _write_run_manifest(
        out_dir, "eval", resolved, sources,
        inputs=inputs,
        outputs={os.path.basename(p): p for p in paths},
        extras={"total": cm.total, "accuracy": report.aggregates.accuracy},
    )
    print("accuracy %.4f" % report.aggregates.accuracy)
    for path in paths:
        print("wrote %s" % path)
    return EXIT_OK


def cmd_report(args):
    resolved, sources = _resolve(args, _REPORT_DEFAULTS)
    formats = _parse_formats(resolved["format"])
    out_dir = _require_out_dir(args)
    if not args.counts:
        raise DataError("--counts is required")
    cm = read_counts_csv(args.counts)
    report = MetricsReport.from_confusion(cm)
    paths = _emit_report(report, cm, out_dir, formats)
    _write_run_manifest(
        out_dir, "report", resolved, sources,
        inputs={"counts": args.counts},
        outputs={os.path.basename(p): p for p in paths},
        extras={"total": cm.total, "accuracy": report.aggregates.accuracy},
    )
    print("accuracy %.4f" % report.aggregates.accuracy)
    for path in paths:
        print("wrote %s" % path)
    return EXIT_OK


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="seed for every random choice")
    common.add_argument("--data-dir", help="dataset directory holding "
                                           "metadata.csv and images/")
    common.add_argument("--out-dir", help="directory for the command's outputs")
    common.add_argument("--config", help="config file (JSON object or "
                                         "key=value lines); flags override it")

    parser = argparse.ArgumentParser(
        prog="lesioncnn",
        description="Skin-lesion CNN pipeline: synthesize or split datasets, "
                    "train, evaluate, and render metric reports.",
    )
    parser.add_argument("--version", action="version",
                        version="lesioncnn " + __version__)
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("synth", parents=[common],
                       help="write a deterministic synthetic dataset")
    p.add_argument("--n-per-class", type=int, help="images per class (default 100)")
    p.add_argument("--classes", type=int, help="number of classes, 1-7 (default 7)")
    p.add_argument("--side", type=int, help="square image side (default 64)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", parents=[common],
                       help="stratified train/val/test split of a metadata CSV")
    p.add_argument("--metadata", help="metadata CSV path (overrides --data-dir)")
    p.add_argument("--train", type=float, help="train fraction (default 0.7)")
    p.add_argument("--val", type=float, help="val fraction (default 0.15)")
    p.add_argument("--test", type=float, help="test fraction (default 0.15)")
    p.add_argument("--group-by", choices=("image_id", "lesion_id"),
                   help="split unit; lesion_id keeps all images of a lesion "
                        "in one split (default image_id)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[common],
                       help="train a model and write checkpoint + history")
    p.add_argument("--metadata", help="metadata CSV path (overrides --data-dir)")
    p.add_argument("--image-dir", help="image directory (overrides --data-dir)")
    p.add_argument("--train-manifest", help="file listing training image ids")
    p.add_argument("--val-manifest", help="file listing validation image ids")
    p.add_argument("--arch", help="'reference' for the built-in CNN, or a "
                                  "JSON architecture file (default reference)")
    p.add_argument("--input-side", type=int,
                   help="square input side for the reference CNN (default 64)")
    p.add_argument("--classes", type=int,
                   help="class count; with --init-from an explicit value "
                        "swaps in a fresh head (default 7)")
    p.add_argument("--epochs", type=int, help="training epochs (default 50)")
    p.add_argument("--batch-size", type=int, help="mini-batch size (default 32)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default 1e-3)")
    p.add_argument("--dropout", type=float,
                   help="dropout rate of the reference CNN head (default 0.5)")
    p.add_argument("--width", type=float,
                   help="channel/unit scale of the reference CNN, in (0, 1] "
                        "(default 1.0)")
    p.add_argument("--freeze", type=float,
                   help="freeze the first FRACTION of parameterized layers")
    p.add_argument("--init-from", help="checkpoint to fine-tune; carries its "
                                       "own architecture")
    p.add_argument("--augment", action="store_true", default=None,
                   help="enable rotation/shift/zoom augmentation")
    p.add_argument("--equalize", choices=("per-channel", "luminance"),
                   help="histogram equalization mode (default per-channel)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate a checkpoint or replay a count matrix")
    p.add_argument("--checkpoint", help="checkpoint to evaluate")
    p.add_argument("--manifest", help="file listing the image ids to evaluate")
    p.add_argument("--metadata", help="metadata CSV path (overrides --data-dir)")
    p.add_argument("--image-dir", help="image directory (overrides --data-dir)")
    p.add_argument("--oracle-cm", help="confusion-counts CSV; compute metrics "
                                       "from it instead of running a model")
    p.add_argument("--format", help="comma-separated report formats from "
                                    "text,csv,svg (default all)")
    p.add_argument("--equalize", choices=("per-channel", "luminance"),
                   help="histogram equalization mode; must match training "
                        "(default per-channel)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common],
                       help="render reports from a confusion-counts CSV")
    p.add_argument("--counts", help="confusion-counts CSV to render")
    p.add_argument("--format", help="comma-separated report formats from "
                                    "text,csv,svg (default all)")
    p.set_defaults(func=cmd_report)
    return parser


def _fail(code, message):
    print("error: %s" % message, file=sys.stderr)
    return code


def entrypoint(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if isinstance(exc.code, int):
            return exc.code
        return EXIT_OK if exc.code is None else EXIT_USAGE
    try:
        return args.func(args)
    except ClassMismatchError as exc:
        return _fail(EXIT_MISMATCH, exc)
    except TrainingDiverged as exc:
        where = ""
        if exc.epoch is not None:
            where = " (epoch %s, batch %s)" % (exc.epoch, exc.batch)
        return _fail(EXIT_NUMERIC, "%s%s" % (exc, where))
    except NumericsError as exc:
        return _fail(EXIT_NUMERIC, exc)
    except CheckpointError as exc:
        return _fail(EXIT_IO, exc)
    except LesionCnnError as exc:
        return _fail(EXIT_USAGE, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)


if __name__ == "__main__":
    sys.exit(entrypoint())
