"""Dataset ingestion, augmentation, and batching.

Three corpus schemas are supported through two loaders:

* `load_fer_csv` — the single-file CSV layout (header ``emotion,pixels,Usage``,
  2304 space-separated 8-bit pixels per row forming a 48x48 grayscale image).
* `load_image_dir` — a directory of binary portable pixmaps (P5 grayscale /
  P6 color, maxval 255) indexed by a tab-separated manifest of
  ``relative-path<TAB>class-name`` lines.

Every loader emits samples with pixels scaled to [0, 1] under the canonical
seven-class label order; batching is deterministic given an RNG seed.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError

#: Canonical class order; index i <-> CLASS_NAMES[i] everywhere in the package.
CLASS_NAMES = ("Angry", "Disgust", "Fear", "Happy", "Neutral", "Sad", "Surprise")
CLASS_INDEX = {name: i for i, name in enumerate(CLASS_NAMES)}

#: The CSV corpus encodes labels in its own order (0 Angry, 1 Disgust, 2 Fear,
#: 3 Happy, 4 Sad, 5 Surprise, 6 Neutral); this table translates each native
#: label to the canonical index above.
FER_NATIVE_REMAP = {0: 0, 1: 1, 2: 2, 3: 3, 4: 5, 5: 6, 6: 4}

FER_HEADER = "emotion,pixels,Usage"
FER_PIXELS = 48 * 48

#: Published per-class train/test counts for the three reference corpora,
#: in canonical class order.  Loaders report agreement; they never enforce it.
PUBLISHED_CLASS_COUNTS = {
    ("fer2013", "train"): (3995, 436, 4097, 7215, 4965, 4830, 3171),
    ("fer2013", "test"): (491, 416, 626, 594, 528, 879, 55),
    ("rafdb", "train"): (705, 717, 281, 4772, 2524, 1982, 1290),
    ("rafdb", "test"): (162, 160, 74, 1185, 680, 478, 329),
    ("affectnet", "train"): (24882, 3803, 6378, 134415, 74874, 25459, 14090),
    ("affectnet", "test"): (500, 500, 500, 500, 500, 500, 500),
}


@dataclass
class Sample:
    """One labeled image: channel-first pixels in [0, 1] plus provenance."""

    pixels: np.ndarray  # (C, H, W)
    label: int
    source_id: str


@dataclass
class DatasetManifest:
    """A loaded split: samples, their per-class tally, and identity."""

    name: str
    split: str
    samples: list[Sample]
    class_counts: np.ndarray

    @classmethod
    def from_samples(cls, name: str, split: str, samples: list[Sample],
                     num_classes: int = len(CLASS_NAMES)) -> "DatasetManifest":
        labels = [s.label for s in samples]
        counts = np.bincount(labels, minlength=num_classes) if labels else \
            np.zeros(num_classes, dtype=np.int64)
        return cls(name=name, split=split, samples=samples,
                   class_counts=counts.astype(np.int64))

    def __len__(self) -> int:
        return len(self.samples)


def _check_split(split: str) -> str:
    if split not in ("train", "test"):
        raise ConfigError(f"split must be 'train' or 'test', got {split!r}")
    return split


def _worker_count() -> int:
    """Decoder thread count; the RESEMOTE_THREADS variable caps it."""
    limit = os.environ.get("RESEMOTE_THREADS")
    if limit is not None:
        try:
            n = int(limit)
        except ValueError:
            raise ConfigError(f"RESEMOTE_THREADS must be an integer, got {limit!r}")
        if n < 1:
            raise ConfigError(f"RESEMOTE_THREADS must be >= 1, got {n}")
        return n
    return min(4, os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# CSV corpus
# ---------------------------------------------------------------------------

def load_fer_csv(path, split_filter: str = "train") -> DatasetManifest:
    """Load one split of the CSV corpus.

    Rows carry ``native-label,pixel-string,usage``; usage ``Training`` feeds
    the train split, ``PublicTest`` and ``PrivateTest`` both feed the test
    split.  Native labels are translated through `FER_NATIVE_REMAP`.  Any
    malformed row fails the load with its line number.
    """
    _check_split(split_filter)
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8-sig")
    except OSError as err:
        raise DataError(f"cannot read dataset file {path}: {err}") from None
    lines = text.splitlines()
    if not lines or lines[0].strip() != FER_HEADER:
        got = lines[0].strip() if lines else "<empty file>"
        raise DataError(f"{path}: line 1: expected header {FER_HEADER!r}, got {got!r}")

    dtype = ad.default_dtype()
    scale = 1.0 / 255.0
    samples: list[Sample] = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise DataError(f"{path}: line {ln}: expected 3 fields, got {len(parts)}")
        raw_label, pixel_field, usage = parts[0].strip(), parts[1], parts[2].strip()
        if usage == "Training":
            row_split = "train"
        elif usage in ("PublicTest", "PrivateTest"):
            row_split = "test"
        else:
            raise DataError(f"{path}: line {ln}: unknown usage value {usage!r}")
        if row_split != split_filter:
            continue
        try:
            native = int(raw_label)
        except ValueError:
            raise DataError(f"{path}: line {ln}: label {raw_label!r} is not an integer")
        if native not in FER_NATIVE_REMAP:
            raise DataError(f"{path}: line {ln}: label {native} outside 0-6")
        try:
            values = np.array(pixel_field.split(), dtype=np.float64)
        except ValueError:
            raise DataError(f"{path}: line {ln}: non-numeric pixel value")
        if values.size != FER_PIXELS:
            raise DataError(
                f"{path}: line {ln}: expected {FER_PIXELS} pixels, got {values.size}")
        if ((values < 0) | (values > 255)).any() or (values != np.floor(values)).any():
            raise DataError(f"{path}: line {ln}: pixels must be integers in 0-255")
        pixels = (values * scale).astype(dtype).reshape(1, 48, 48)
        samples.append(Sample(pixels=pixels,
                              label=FER_NATIVE_REMAP[native],
                              source_id=f"{path.name}#L{ln}"))
    return DatasetManifest.from_samples(path.stem, split_filter, samples)


# ---------------------------------------------------------------------------
# Pixmap corpus
# ---------------------------------------------------------------------------

def decode_pixmap(data: bytes, source: str = "<bytes>") -> np.ndarray:
    """Decode a binary portable pixmap into (H, W) or (H, W, 3) uint8.

    Accepts P5 (grayscale) and P6 (color) with maxval 255.  Header tokens may
    be separated by any whitespace and interleaved with ``#`` comments; the
    raster starts one byte after the maxval token.
    """
    if len(data) < 2 or data[:2] not in (b"P5", b"P6"):
        raise DataError(f"{source}: not a binary pixmap (P5/P6 magic missing)")
    color = data[:2] == b"P6"

    tokens: list[int] = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(data):
            raise DataError(f"{source}: truncated pixmap header")
        byte = data[pos]
        if byte in b" \t\r\n":
            pos += 1
        elif byte in b"#":
            while pos < len(data) and data[pos] not in b"\r\n":
                pos += 1
        else:
            start = pos
            while pos < len(data) and data[pos] not in b" \t\r\n#":
                pos += 1
            token = data[start:pos]
            try:
                tokens.append(int(token))
            except ValueError:
                raise DataError(f"{source}: bad header token {token!r}")
    width, height, maxval = tokens
    if width < 1 or height < 1:
        raise DataError(f"{source}: bad pixmap dimensions {width}x{height}")
    if maxval != 255:
        raise DataError(f"{source}: unsupported maxval {maxval} (only 255)")
    if pos >= len(data) or data[pos] not in b" \t\r\n":
        raise DataError(f"{source}: missing whitespace after pixmap header")
    pos += 1  # exactly one separator byte, then the raster

    channels = 3 if color else 1
    expected = width * height * channels
    raster = data[pos:pos + expected]
    if len(raster) != expected:
        raise DataError(
            f"{source}: raster holds {len(raster)} bytes but header "
            f"{width}x{height}x{channels} needs {expected}")
    array = np.frombuffer(raster, dtype=np.uint8)
    if color:
        return array.reshape(height, width, 3)
    return array.reshape(height, width)


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear interpolation of an (H, W) float image.

    Source coordinate for output index i is ``i * (in - 1) / (out - 1)``;
    a single-row/column output samples the center ``(in - 1) / 2``.  Corner
    pixels map exactly onto corner pixels, which keeps the operation
    reproducible from the formula alone.
    """
    if image.ndim != 2:
        raise DataError(f"bilinear_resize expects a 2-D image, got shape {image.shape}")
    if out_h < 1 or out_w < 1:
        raise DataError(f"bilinear_resize target must be positive, got {out_h}x{out_w}")
    h, w = image.shape
    sy = (np.arange(out_h) * (h - 1) / (out_h - 1)) if out_h > 1 else \
        np.array([(h - 1) / 2.0])
    sx = (np.arange(out_w) * (w - 1) / (out_w - 1)) if out_w > 1 else \
        np.array([(w - 1) / 2.0])
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]
    top = image[np.ix_(y0, x0)] * (1 - fx) + image[np.ix_(y0, x1)] * fx
    bottom = image[np.ix_(y1, x0)] * (1 - fx) + image[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bottom * fy


def _prepare_image(raw: np.ndarray, target_size: int, channels: int,
                   source: str, dtype) -> np.ndarray:
    """uint8 pixmap array -> (channels, target, target) float in [0, 1]."""
    scaled = raw.astype(np.float64) / 255.0
    if scaled.ndim == 2:
        planes = [scaled] * channels  # grayscale replicated when color is asked
    else:
        if channels == 1:
            raise DataError(
                f"{source}: color image cannot feed a single-channel model")
        planes = [scaled[:, :, c] for c in range(3)]
    resized = [
        plane if plane.shape == (target_size, target_size)
        else bilinear_resize(plane, target_size, target_size)
        for plane in planes
    ]
    return np.stack(resized).astype(dtype)


def load_image_dir(root, manifest_file, split: str = "train",
                   target_size: int = 64, channels: int = 3) -> DatasetManifest:
    """Load pixmap samples listed in a tab-separated manifest.

    Each manifest line is ``relative-path<TAB>class-name`` (UTF-8, LF).
    Images are decoded on a small thread pool (capped by RESEMOTE_THREADS),
    rescaled to [0, 1], bilinearly resized to ``target_size``, and grayscale
    images are replicated across channels when a color model is configured.
    Sample order always follows the manifest regardless of decode timing.
    """
    _check_split(split)
    if channels not in (1, 3):
        raise ConfigError(f"channels must be 1 or 3, got {channels}")
    root = Path(root)
    manifest_file = Path(manifest_file)
    try:
        lines = manifest_file.read_text(encoding="utf-8").splitlines()
    except OSError as err:
        raise DataError(f"cannot read manifest {manifest_file}: {err}") from None

    entries: list[tuple[str, int]] = []
    for ln, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise DataError(
                f"{manifest_file}: line {ln}: expected 'path<TAB>class-name'")
        rel, class_name = line.split("\t", 1)
        rel, class_name = rel.strip(), class_name.strip()
        if class_name not in CLASS_INDEX:
            raise DataError(
                f"{manifest_file}: line {ln}: unknown class name {class_name!r}")
        entries.append((rel, CLASS_INDEX[class_name]))

    dtype = ad.default_dtype()

    def decode(entry: tuple[str, int]) -> Sample:
        rel, label = entry
        file_path = root / rel
        try:
            blob = file_path.read_bytes()
        except OSError as err:
            raise DataError(f"cannot read image {file_path}: {err}") from None
        raw = decode_pixmap(blob, source=str(file_path))
        pixels = _prepare_image(raw, target_size, channels, str(file_path), dtype)
        return Sample(pixels=pixels, label=label, source_id=rel)

    if entries:
        with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
            samples = list(pool.map(decode, entries))
    else:
        samples = []
    return DatasetManifest.from_samples(root.name, split, samples)


def load_single_image(path, target_size: int, channels: int) -> Sample:
    """Decode one pixmap file into a model-ready sample (label -1: unknown)."""
    if channels not in (1, 3):
        raise ConfigError(f"channels must be 1 or 3, got {channels}")
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as err:
        raise DataError(f"cannot read image {path}: {err}") from None
    raw = decode_pixmap(blob, source=str(path))
    pixels = _prepare_image(raw, target_size, channels, str(path),
                            ad.default_dtype())
    return Sample(pixels=pixels, label=-1, source_id=str(path))


def adapt_manifest(manifest: DatasetManifest, target_size: int,
                   channels: int) -> DatasetManifest:
    """Re-fit loaded samples to a model's input geometry (resize + channel
    replication), leaving labels and provenance untouched."""
    if channels not in (1, 3):
        raise ConfigError(f"channels must be 1 or 3, got {channels}")
    dtype = ad.default_dtype()

    def refit(sample: Sample) -> Sample:
        pixels = sample.pixels
        c, h, w = pixels.shape
        if c == 1 and channels == 3:
            pixels = np.repeat(pixels, 3, axis=0)
        elif c == 3 and channels == 1:
            raise DataError(
                f"{sample.source_id}: color image cannot feed a single-channel model")
        if (h, w) != (target_size, target_size):
            pixels = np.stack([
                bilinear_resize(plane.astype(np.float64), target_size, target_size)
                for plane in pixels
            ])
        return Sample(pixels=pixels.astype(dtype), label=sample.label,
                      source_id=sample.source_id)

    if manifest.samples:
        with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
            samples = list(pool.map(refit, manifest.samples))
    else:
        samples = []
    return DatasetManifest(name=manifest.name, split=manifest.split,
                           samples=samples,
                           class_counts=manifest.class_counts.copy())


# ---------------------------------------------------------------------------
# Augmentation and batching
# ---------------------------------------------------------------------------

def random_horizontal_flip(sample: Sample, rng: np.random.Generator,
                           p: float = 0.5) -> Sample:
    """Mirror the image left-right with probability p (always one RNG draw)."""
    if rng.random() >= p:
        return sample
    flipped = np.ascontiguousarray(sample.pixels[:, :, ::-1])
    return Sample(pixels=flipped, label=sample.label, source_id=sample.source_id)


def fisher_yates_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded uniform permutation, built by explicit backward swaps
    (n - 1 integer draws)."""
    order = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    return order


def make_batches(manifest: DatasetManifest, batch_size: int,
                 rng: np.random.Generator, shuffle: bool, transform=None):
    """Yield (pixels Tensor[B,C,H,W], labels int array) covering the manifest
    exactly once.

    Shuffling applies a seeded Fisher-Yates permutation; the final short
    batch is kept.  `transform`, when given, maps each Sample just before
    stacking (the hook the flip augmentation uses).
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    n = len(manifest.samples)
    if n == 0:
        raise DataError(f"dataset {manifest.name!r} ({manifest.split}) is empty")
    order = fisher_yates_permutation(n, rng) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        chosen = [manifest.samples[i] for i in order[start:start + batch_size]]
        if transform is not None:
            chosen = [transform(s) for s in chosen]
        pixels = Tensor(np.stack([s.pixels for s in chosen]))
        labels = np.array([s.label for s in chosen], dtype=np.int64)
        yield pixels, labels


# ---------------------------------------------------------------------------
# Published-count reporting
# ---------------------------------------------------------------------------

def normalize_dataset_name(name: str) -> str:
    return "".join(ch for ch in name.lower() if ch.isalnum())


def published_counts(name: str, split: str) -> tuple[int, ...] | None:
    """Reference per-class counts for a known corpus/split, if any."""
    return PUBLISHED_CLASS_COUNTS.get((normalize_dataset_name(name), split))


def count_report(manifest: DatasetManifest) -> list[str]:
    """Human-readable comparison of loaded counts against the reference
    table; differences are reported, never enforced."""
    lines = [f"{manifest.name} ({manifest.split}): "
             f"{int(manifest.class_counts.sum())} samples"]
    reference = published_counts(manifest.name, manifest.split)
    for i, name in enumerate(CLASS_NAMES[:len(manifest.class_counts)]):
        loaded = int(manifest.class_counts[i])
        if reference is None:
            lines.append(f"  {name:<9} {loaded}")
        else:
            mark = "ok" if loaded == reference[i] else \
                f"DIFFERS (published {reference[i]})"
            lines.append(f"  {name:<9} {loaded:>7}  {mark}")
    return lines
