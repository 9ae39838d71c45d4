"""Command-line entry point: ``train``, ``eval``, ``predict``, ``gradcheck``.

Configuration comes from a flat ``key = value`` file (see `config`), with
command-line flags overriding file values.  Logging is one machine-parseable
line per epoch on stdout plus a JSON report at the end of a run.

Exit codes are a stable contract: 0 success, 1 internal failure (including
failed gradient checks), 2 usage or configuration errors (bad flags,
unreadable config, malformed datasets, corrupt checkpoints).
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as checkpoint_io
from .autodiff import Tensor, inject_gradient_fault, using_dtype
from .config import DATASET_KINDS, RunConfig, load_run_config
from .data import (CLASS_NAMES, DatasetManifest, adapt_manifest, count_report,
                   load_fer_csv, load_image_dir, load_single_image)
from .errors import CheckpointError, ConfigError, DataError
from .layers import EVAL
from .metrics import report_json, report_text
from .optim import softmax
from .training import BEST_CHECKPOINT, evaluate_model, train_model
from .verification import run_gradient_checks

GRADCHECK_TRIALS = {"tiny": 50, "small": 150}


def _overrides_from(args) -> dict:
    """Flag values that were actually given, keyed by config-file names."""
    mapping = {"dataset": "dataset", "data_root": "data_root",
               "epochs": "epochs", "batch_size": "batch_size", "lr": "lr",
               "seed": "seed", "out": "out_dir"}
    overrides = {}
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    return overrides


def _echo_config(cfg: RunConfig) -> None:
    print("effective configuration:")
    for key, value in cfg.effective_items():
        print(f"  {key} = {value}")


def _load_split(dataset: str, data_root: str, split: str,
                input_size: int, input_channels: int) -> DatasetManifest:
    """Materialize one split of the configured corpus at model geometry.

    ``fer2013`` reads the single CSV (``data_root`` may be the file itself or
    a directory holding ``fer2013.csv``).  The directory layouts (``rafdb``,
    ``affectnet``, ``dir``) read ``<data_root>/<split>/manifest.tsv``.
    """
    if not data_root:
        raise DataError(
            "no dataset path given; set data_root in the config file or pass "
            "--data-root")
    root = Path(data_root)
    if dataset == "fer2013":
        csv_path = root if root.suffix == ".csv" else root / "fer2013.csv"
        manifest = load_fer_csv(csv_path, split)
        manifest = adapt_manifest(manifest, input_size, input_channels)
    else:
        split_root = root / split
        manifest = load_image_dir(split_root, split_root / "manifest.tsv",
                                  split, target_size=input_size,
                                  channels=input_channels)
    name = dataset if dataset != "dir" else (root.name or "dir")
    return dataclasses.replace(manifest, name=name)


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, _overrides_from(args))
    _echo_config(cfg)
    train_manifest = _load_split(cfg.dataset, cfg.data_root, "train",
                                 cfg.input_size, cfg.input_channels)
    eval_manifest = _load_split(cfg.dataset, cfg.data_root, "test",
                                cfg.input_size, cfg.input_channels)
    for manifest in (train_manifest, eval_manifest):
        for line in count_report(manifest):
            print(line)

    out_dir = Path(cfg.out_dir)
    result = train_model(cfg, train_manifest, eval_manifest, out_dir=out_dir,
                         resume_from=args.checkpoint, log=print)

    # final report comes from the best checkpoint, not the last epoch
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    with using_dtype(dtype):
        best_path = out_dir / BEST_CHECKPOINT
        model = result.model
        if best_path.exists():
            model = checkpoint_io.load(
                best_path, expected_config=cfg.model_config()).model
        confusion = evaluate_model(model, eval_manifest)
    (out_dir / "confusion.txt").write_text(report_text(confusion),
                                           encoding="utf-8")
    payload = {
        "dataset": cfg.dataset,
        "seed": cfg.seed,
        "epochs_run": len(result.history),
        "best_epoch": result.best_epoch,
        "best_accuracy": result.best_accuracy,
        "history": [dataclasses.asdict(record) for record in result.history],
        "report": json.loads(report_json(confusion)),
    }
    (out_dir / "metrics.json").write_text(json.dumps(payload, indent=2) + "\n",
                                          encoding="utf-8")
    print(f"best epoch {result.best_epoch} accuracy {result.best_accuracy:.2f}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config, _overrides_from(args))
    loaded = checkpoint_io.load(args.checkpoint)
    model = loaded.model
    geometry = model.config
    manifest = _load_split(cfg.dataset, cfg.data_root, args.split,
                           geometry.input_size, geometry.input_channels)
    confusion = evaluate_model(model, manifest)
    print(f"accuracy: {confusion.accuracy():.2f}")
    print(report_text(confusion))
    if args.out is not None:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "confusion.txt").write_text(report_text(confusion),
                                               encoding="utf-8")
        (out_dir / "metrics.json").write_text(report_json(confusion) + "\n",
                                              encoding="utf-8")
    return 0


def cmd_predict(args) -> int:
    loaded = checkpoint_io.load(args.checkpoint)
    model = loaded.model
    geometry = model.config
    sample = load_single_image(args.image, geometry.input_size,
                               geometry.input_channels)
    x = Tensor(sample.pixels[None, ...])
    logits = model.forward(x, mode=EVAL).values.data[0]
    # softmax is shift-invariant; the flag exists so that invariance is
    # checkable from the outside
    probabilities = softmax((logits + args.logit_shift)[None, :])[0]
    if geometry.num_classes <= len(CLASS_NAMES):
        names = CLASS_NAMES[:geometry.num_classes]
    else:
        names = tuple(f"class{i}" for i in range(geometry.num_classes))
    # 8 decimals: the printed row must still sum to 1 within 1e-6
    for name, p in zip(names, probabilities):
        print(f"{name:<9} {p:.8f}")
    print(f"predicted: {names[int(np.argmax(probabilities))]}")
    return 0


def cmd_gradcheck(args) -> int:
    trials = GRADCHECK_TRIALS[args.scale]
    fault = (inject_gradient_fault(args.inject_fault)
             if args.inject_fault else contextlib.nullcontext())
    with fault:
        report = run_gradient_checks(seed=args.seed if args.seed is not None else 0,
                                     trials_per_component=trials, log=print)
    print(f"elapsed: {report.elapsed_seconds:.1f}s  "
          f"max_rel_err: {report.max_rel_err:.3e}  tol: {report.tol:g}")
    if not report.passed:
        for result in report.results:
            for failure in result.failures[:5]:
                print(f"FAIL {result.name}: {failure}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resemotenet",
        description="Train, evaluate, and inspect the emotion classifier.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_flags(p):
        p.add_argument("--config", metavar="PATH",
                       help="flat 'key = value' config file")
        p.add_argument("--dataset", choices=DATASET_KINDS,
                       help="corpus kind (default fer2013)")
        p.add_argument("--data-root", dest="data_root", metavar="PATH",
                       help="CSV file/directory (fer2013) or split directory root")
        p.add_argument("--seed", type=int, metavar="N")

    t = sub.add_parser("train", help="run the training recipe")
    add_data_flags(t)
    t.add_argument("--epochs", type=int, metavar="N")
    t.add_argument("--batch-size", dest="batch_size", type=int, metavar="N")
    t.add_argument("--lr", type=float, metavar="F")
    t.add_argument("--out", metavar="DIR", help="run directory for "
                   "metrics.json, confusion.txt, best.ckpt, last.ckpt")
    t.add_argument("--checkpoint", metavar="PATH",
                   help="resume training from this checkpoint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    add_data_flags(e)
    e.add_argument("--checkpoint", metavar="PATH", required=True)
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.add_argument("--out", metavar="DIR",
                   help="also write confusion.txt and metrics.json here")
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one image file")
    p.add_argument("image", metavar="IMAGE", help="binary pixmap (P5/P6)")
    p.add_argument("--checkpoint", metavar="PATH", required=True)
    p.add_argument("--logit-shift", dest="logit_shift", type=float, default=0.0,
                   metavar="F", help="add a constant to every logit first "
                   "(the prediction must not change)")
    p.set_defaults(func=cmd_predict)

    g = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    g.add_argument("scale", choices=tuple(GRADCHECK_TRIALS),
                   help="trials per component: tiny=50, small=150")
    g.add_argument("--seed", type=int, metavar="N")
    g.add_argument("--inject-fault", dest="inject_fault", metavar="OP",
                   help="corrupt the named op's backward pass; the audit "
                   "must then fail")
    g.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as err:
        print(f"internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())
