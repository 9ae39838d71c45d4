"""The training loop: shuffled mini-batch epochs of momentum SGD, per-epoch
evaluation on the held-out split, plateau-driven learning-rate cuts, and
best/last checkpointing with exact resume.

Determinism contract: one seeded generator drives all data-order decisions
(epoch shuffles and flip draws, in that order, lazily per batch).  Its state
is stored in ``last.ckpt`` after each epoch, so a resumed run consumes the
stream exactly where the original left off and reproduces the remaining
epochs bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint
from .autodiff import Graph, Tensor, using_dtype
from .config import RunConfig
from .data import DatasetManifest, make_batches, random_horizontal_flip
from .layers import EVAL, TRAIN
from .metrics import ConfusionMatrix, predict_labels
from .model import ResEmoteNetModel, build_model
from .optim import (PlateauScheduler, SgdState, cross_entropy, scheduler_step,
                    sgd_step)

BEST_CHECKPOINT = "best.ckpt"
LAST_CHECKPOINT = "last.ckpt"

_libc = None


def _release_heap() -> None:
    """Hand freed allocator pages back to the OS between epochs.

    Large-model epochs churn through multi-hundred-MB scratch tensors;
    glibc keeps those pages resident otherwise, which reads as a leak and
    can OOM small machines.  No-op where malloc_trim is unavailable.
    """
    global _libc
    if _libc is None:
        try:
            import ctypes
            _libc = ctypes.CDLL("libc.so.6")
        except OSError:
            _libc = False
    if _libc:
        try:
            _libc.malloc_trim(0)
        except AttributeError:
            pass


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float       # mean over the epoch's samples
    eval_accuracy: float    # percent on the evaluation split
    lr: float               # rate in effect after this epoch's scheduler step
    lr_reduced: bool = False

    def line(self) -> str:
        return (f"epoch={self.epoch} train_loss={self.train_loss:.6f} "
                f"eval_acc={self.eval_accuracy:.2f} lr={self.lr:g}")


@dataclass
class TrainResult:
    model: ResEmoteNetModel
    optimizer: SgdState
    scheduler: PlateauScheduler
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_accuracy: float = float("-inf")
    final_confusion: ConfusionMatrix | None = None


def _np_dtype(name: str):
    return np.float32 if name == "float32" else np.float64


def evaluate_model(model: ResEmoteNetModel, manifest: DatasetManifest,
                   batch_size: int = 32) -> ConfusionMatrix:
    """Tally a confusion matrix over a manifest in eval mode: fixed order,
    no augmentation, running statistics untouched."""
    cm = ConfusionMatrix(model.config.num_classes)
    rng = np.random.default_rng(0)  # never consumed: shuffle is off
    for pixels, labels in make_batches(manifest, batch_size, rng, shuffle=False):
        logits = model.forward(pixels, mode=EVAL)
        cm.update(labels, predict_labels(logits.values.data))
    return cm


def train_one_epoch(model: ResEmoteNetModel, optimizer: SgdState,
                    manifest: DatasetManifest, batch_size: int,
                    rng: np.random.Generator, augment: bool) -> float:
    """One shuffled pass; returns the sample-weighted mean batch loss."""
    transform = None
    if augment:
        transform = lambda sample: random_horizontal_flip(sample, rng)
    params = model.named_parameters()
    total_loss = 0.0
    total_seen = 0
    for pixels, labels in make_batches(manifest, batch_size, rng,
                                       shuffle=True, transform=transform):
        with Graph():
            logits = model.forward(pixels, mode=TRAIN)
            value = cross_entropy(logits, labels)
            value.loss.backward()
        sgd_step(optimizer, params)
        n = labels.shape[0]
        total_loss += float(value.loss.item()) * n
        total_seen += n
        _release_heap()
    return total_loss / total_seen


def train_model(cfg: RunConfig, train_manifest: DatasetManifest,
                eval_manifest: DatasetManifest, *,
                out_dir=None,
                resume_from=None,
                log: Callable[[str], None] | None = None,
                stop_when: Callable[[EpochRecord], bool] | None = None
                ) -> TrainResult:
    """Run the full recipe from `cfg` (or continue it from `resume_from`).

    Per epoch: train over shuffled batches, evaluate on `eval_manifest`,
    feed accuracy to the plateau scheduler, emit one log line, and — when
    `out_dir` is set — refresh ``last.ckpt`` (full state incl. the data-order
    RNG) plus ``best.ckpt`` whenever accuracy improves.  `stop_when` lets
    callers end early once a target is met; otherwise all epochs run.
    """
    emit = log if log is not None else lambda line: None
    with using_dtype(_np_dtype(cfg.dtype)):
        rng = np.random.default_rng(cfg.seed)
        if resume_from is not None:
            loaded = checkpoint.load(resume_from, expected_config=cfg.model_config())
            model = loaded.model
            optimizer = loaded.optimizer
            scheduler = loaded.scheduler
            if optimizer is None or scheduler is None:
                raise checkpoint.CheckpointError(
                    f"{resume_from}: inference-only checkpoint cannot resume "
                    f"training (no optimizer state)")
            if loaded.rng_state is not None:
                rng.bit_generator.state = loaded.rng_state
            start_epoch = loaded.epoch + 1
            best_accuracy = (loaded.best_metric if loaded.best_metric is not None
                             else float("-inf"))
        else:
            model = build_model(cfg.model_config())
            optimizer = cfg.sgd_state()
            scheduler = cfg.scheduler()
            start_epoch = 1
            best_accuracy = float("-inf")

        result = TrainResult(model=model, optimizer=optimizer,
                             scheduler=scheduler, best_accuracy=best_accuracy)
        out_path = Path(out_dir) if out_dir is not None else None
        if out_path is not None:
            out_path.mkdir(parents=True, exist_ok=True)

        for epoch in range(start_epoch, cfg.epochs + 1):
            mean_loss = train_one_epoch(model, optimizer, train_manifest,
                                        cfg.batch_size, rng, cfg.augment)
            confusion = evaluate_model(model, eval_manifest)
            accuracy = confusion.accuracy()
            reduced = scheduler_step(scheduler, accuracy, optimizer)
            record = EpochRecord(epoch=epoch, train_loss=mean_loss,
                                 eval_accuracy=accuracy, lr=optimizer.lr,
                                 lr_reduced=reduced)
            result.history.append(record)
            result.final_confusion = confusion
            emit(record.line())

            improved = accuracy > result.best_accuracy + 1e-12
            if improved:
                result.best_accuracy = accuracy
                result.best_epoch = epoch
            if out_path is not None:
                if improved:
                    checkpoint.save(model, optimizer, scheduler, epoch,
                                    out_path / BEST_CHECKPOINT,
                                    rng_state=rng.bit_generator.state,
                                    best_metric=result.best_accuracy)
                checkpoint.save(model, optimizer, scheduler, epoch,
                                out_path / LAST_CHECKPOINT,
                                rng_state=rng.bit_generator.state,
                                best_metric=result.best_accuracy)
            _release_heap()
            if stop_when is not None and stop_when(record):
                break
    return result
