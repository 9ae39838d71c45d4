"""Run configuration: one flat dataclass covering architecture, optimizer,
schedule, and data settings, parseable from `key = value` files.

File syntax: one assignment per line, ``#`` starts a comment (full-line or
trailing), blank lines ignored.  Lists are comma-separated
(``stem_channels = 64,128,256``); the residual plan uses colon-separated
triples (``residual_channels = 256:512:2,512:1024:2``).  Command-line flags
override file values, which override the defaults below.  The defaults are
the full training recipe: batch 16, 80 epochs, lr 1e-3 with plateau factor
0.1, momentum 0.9, horizontal-flip augmentation on.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .optim import PlateauScheduler, SgdState

DATASET_KINDS = ("fer2013", "rafdb", "affectnet", "dir")


@dataclass
class RunConfig:
    # data
    dataset: str = "fer2013"
    data_root: str = ""
    out_dir: str = "runs/default"
    # training recipe
    batch_size: int = 16
    epochs: int = 80
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.0
    factor: float = 0.1
    patience: int = 10
    min_lr: float = 1e-6
    augment: bool = True
    dtype: str = "float32"
    seed: int = 0
    # architecture
    input_channels: int = 3
    input_size: int = 64
    stem_channels: tuple[int, ...] = (64, 128, 256)
    se_reduction: int = 16
    residual_channels: tuple[tuple[int, int, int], ...] = (
        (256, 512, 2), (512, 1024, 2), (1024, 2048, 2))
    num_classes: int = 7
    aap_output: tuple[int, int] = (1, 1)

    def validate(self) -> "RunConfig":
        if self.dataset not in DATASET_KINDS:
            raise ConfigError(
                f"dataset must be one of {', '.join(DATASET_KINDS)}; got "
                f"{self.dataset!r}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        self.model_config()  # architecture invariants
        self.sgd_state()     # optimizer invariants
        self.scheduler()     # schedule invariants
        return self

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            input_channels=self.input_channels,
            input_size=self.input_size,
            stem_channels=tuple(self.stem_channels),
            se_reduction=self.se_reduction,
            residual_channels=tuple(tuple(t) for t in self.residual_channels),
            num_classes=self.num_classes,
            aap_output=tuple(self.aap_output),
            seed=self.seed,
        )

    def sgd_state(self) -> SgdState:
        return SgdState(lr=self.lr, momentum=self.momentum,
                        weight_decay=self.weight_decay)

    def scheduler(self) -> PlateauScheduler:
        return PlateauScheduler(factor=self.factor, patience=self.patience,
                                min_lr=self.min_lr)

    def effective_items(self) -> list[tuple[str, str]]:
        """Every tunable with its resolved value, in declaration order —
        the exhaustive config echo."""
        items = []
        for f in fields(self):
            items.append((f.name, _format_value(getattr(self, f.name))))
        return items


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(":".join(str(x) for x in t) for t in value)
        return ",".join(str(x) for x in value)
    return str(value)


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part.strip()) for part in text.split(",") if part.strip())


def _parse_triples(text: str) -> tuple[tuple[int, int, int], ...]:
    triples = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        pieces = part.split(":")
        if len(pieces) != 3:
            raise ValueError(f"expected in:out:stride, got {part!r}")
        triples.append(tuple(int(p) for p in pieces))
    return tuple(triples)


_PARSERS = {
    "dataset": str,
    "data_root": str,
    "out_dir": str,
    "batch_size": int,
    "epochs": int,
    "lr": float,
    "momentum": float,
    "weight_decay": float,
    "factor": float,
    "patience": int,
    "min_lr": float,
    "augment": _parse_bool,
    "dtype": str,
    "seed": int,
    "input_channels": int,
    "input_size": int,
    "stem_channels": _parse_int_list,
    "se_reduction": int,
    "residual_channels": _parse_triples,
    "num_classes": int,
    "aap_output": _parse_int_list,
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    """Parse `key = value` lines into typed values; errors carry line numbers."""
    values: dict[str, object] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {ln}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        parser = _PARSERS.get(key)
        if parser is None:
            raise ConfigError(f"{source}: line {ln}: unknown key {key!r}")
        try:
            values[key] = parser(value)
        except ValueError as err:
            raise ConfigError(
                f"{source}: line {ln}: bad value for {key!r}: {err}") from None
    return values


def load_run_config(config_path=None, overrides: dict[str, object] | None = None
                    ) -> RunConfig:
    """Defaults <- config file <- overrides, validated as a whole."""
    merged: dict[str, object] = {}
    if config_path is not None:
        path = Path(config_path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err}") from None
        merged.update(parse_config_text(text, source=str(path)))
    if overrides:
        for key, value in overrides.items():
            if key not in _PARSERS:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = value
    try:
        cfg = RunConfig(**merged)
    except TypeError as err:
        raise ConfigError(str(err)) from None
    return cfg.validate()
