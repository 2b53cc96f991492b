"""Dataset ingestion and batch streams.

Three sources produce the same pool layout:

* ``synthetic``  - procedurally rendered shape-classification images; the
  class determines geometry while color, position, scale, background, and
  noise vary per sample.
* ``folder``     - ``root/train/<class>/*.ppm``, ``root/test/<class>/*.ppm``
  and an optional ``root/unlabeled/*.ppm`` directory of extra images
  without labels (binary P5/P6 portable pixmaps).
* ``raw``        - a self-describing binary tensor file (magic ``MMRT``).

The labeled pool is a class-balanced subsample of the training pool;
labeled images also appear in the unlabeled stream, matching the usual
protocol where one training set backs both roles. Batch streams reshuffle
each epoch from a seed-derived permutation and drop the final partial
batch so every loss normalizer sees a constant batch size.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, IngestionError

UNLABELED = 0xFFFF

# stream tags namespace the per-purpose RNG streams derived from one seed
STREAM_LABELED_BATCH = 100
STREAM_UNLABELED_BATCH = 101

_GEN_TRAIN, _GEN_TEST, _GEN_LABEL_PICK = 0, 1, 2


@dataclass(frozen=True)
class DatasetSpec:
    source: str                 # "synthetic" | "folder" | "raw"
    num_classes: int
    labels_per_class: int
    seed: int = 0
    per_class: int = 500        # synthetic train images per class
    test_per_class: int = 100   # synthetic test images per class
    image_size: int = 32
    channels: int = 3
    path: str | None = None     # folder root
    train_file: str | None = None
    test_file: str | None = None

    def __post_init__(self):
        if self.source not in ("synthetic", "folder", "raw"):
            raise ConfigurationError(f"unknown dataset source {self.source!r}")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        if self.labels_per_class < 1:
            raise ConfigurationError("labels_per_class must be >= 1")


@dataclass(frozen=True)
class DatasetPools:
    labeled_images: np.ndarray    # [n_l, H, W, Ch] float32 in [0, 1]
    labeled_labels: np.ndarray    # [n_l] int64
    labeled_ids: np.ndarray       # [n_l] int64 identifiers into the train pool
    unlabeled_images: np.ndarray  # [n_u, H, W, Ch]
    unlabeled_ids: np.ndarray     # [n_u] int64, unique
    test_images: np.ndarray
    test_labels: np.ndarray
    num_classes: int

    @property
    def image_size(self):
        return int(self.unlabeled_images.shape[1])

    @property
    def channels(self):
        return int(self.unlabeled_images.shape[3])


@dataclass(frozen=True)
class LabeledBatch:
    images: np.ndarray  # [B, H, W, Ch]
    labels: np.ndarray  # [B, C] one-hot
    ids: np.ndarray | None = None  # optional stable identifiers


@dataclass(frozen=True)
class UnlabeledBatch:
    images: np.ndarray  # [B, H, W, Ch]
    ids: np.ndarray     # [B] stable identifiers


def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


# -- synthetic rendering -------------------------------------------------------


def _shape_mask(family, xs, ys, r):
    """Boolean mask of one centered shape on normalized coordinates."""
    d = np.sqrt(xs * xs + ys * ys)
    if family == 0:    # disk
        return d <= r
    if family == 1:    # square
        return np.maximum(np.abs(xs), np.abs(ys)) <= 0.9 * r
    if family == 2:    # plus
        return ((np.abs(xs) <= 0.35 * r) & (np.abs(ys) <= r)) | \
               ((np.abs(ys) <= 0.35 * r) & (np.abs(xs) <= r))
    if family == 3:    # ring
        return (d <= r) & (d >= 0.55 * r)
    if family == 4:    # triangle, apex up
        return (ys >= -r) & (ys <= r) & (np.abs(xs) <= 0.5 * (ys + r))
    if family == 5:    # diagonal bar
        return (np.abs(xs - ys) <= 0.35 * r) & (np.abs(xs) <= r) & (np.abs(ys) <= r)
    if family == 6:    # hollow frame
        m = np.maximum(np.abs(xs), np.abs(ys))
        return (m <= r) & (m >= 0.55 * r)
    # two dots
    left = np.sqrt((xs + 0.5 * r) ** 2 + ys * ys) <= 0.45 * r
    right = np.sqrt((xs - 0.5 * r) ** 2 + ys * ys) <= 0.45 * r
    return left | right


# family order favors maximally distinct geometries for small class counts
_FAMILY_ORDER = (0, 1, 2, 4, 6, 3, 5, 7)


def _render_image(class_id, rng, size, channels):
    scale_factor = 1.0 - 0.07 * (class_id // 8)
    family = _FAMILY_ORDER[class_id % 8]

    grid = (np.arange(size) + 0.5) / size - 0.5
    ys, xs = np.meshgrid(grid, grid, indexing="ij")

    # smooth two-color gradient background
    lo = rng.uniform(0.10, 0.45, size=channels)
    hi = rng.uniform(0.10, 0.45, size=channels)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    ramp = (xs * np.cos(angle) + ys * np.sin(angle) + 1.0) / 2.0
    img = lo + ramp[:, :, None] * (hi - lo)

    # one foreground shape; geometry carries the class, color does not
    cx, cy = rng.uniform(-0.12, 0.12, size=2)
    r = rng.uniform(0.26, 0.40) * scale_factor
    mask = _shape_mask(family, xs - cx, ys - cy, r)
    fg = rng.uniform(0.55, 1.0, size=channels)
    img = np.where(mask[:, :, None], fg, img)

    img = img + rng.normal(0.0, 0.02, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_synthetic_dataset(num_classes, per_class, image_size=32, seed=0,
                               channels=3, test_per_class=0):
    """Render class-balanced train/test image pools.

    Returns ``(train_images, train_labels, test_images, test_labels)``;
    bit-identical for identical arguments.
    """
    if num_classes < 2:
        raise ConfigurationError("num_classes must be >= 2")
    if per_class < 1:
        raise ConfigurationError("per_class must be >= 1")

    def render_split(count_per_class, tag):
        n = num_classes * count_per_class
        images = np.empty((n, image_size, image_size, channels), dtype=np.float32)
        labels = np.empty(n, dtype=np.int64)
        for i in range(n):
            class_id = i // count_per_class
            rng = np.random.default_rng((seed, tag, i))
            images[i] = _render_image(class_id, rng, image_size, channels)
            labels[i] = class_id
        return images, labels

    train = render_split(per_class, _GEN_TRAIN)
    if test_per_class > 0:
        test = render_split(test_per_class, _GEN_TEST)
    else:
        test = (np.empty((0, image_size, image_size, channels), dtype=np.float32),
                np.empty(0, dtype=np.int64))
    return train + test


# -- portable pixmap I/O (folder source) ----------------------------------------


def write_ppm(path, image):
    """Write a [0, 1] float image as binary PPM (3 channels) or PGM (1)."""
    arr = np.asarray(image)
    raw = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    magic = b"P6" if arr.shape[2] == 3 else b"P5"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (arr.shape[1], arr.shape[0]))
        fh.write(raw.tobytes())


def read_ppm(path):
    """Read binary P5/P6 portable pixmaps into a [0, 1] float32 array."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc

    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IngestionError(f"truncated pixmap header in {path}")
        fields.append(blob[start:pos])
    pos += 1  # single whitespace byte after maxval

    magic, width, height, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic not in (b"P5", b"P6") or maxval <= 0 or maxval > 255:
        raise IngestionError(f"unsupported pixmap format in {path}")
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    payload = blob[pos : pos + expected]
    if len(payload) != expected:
        raise IngestionError(f"pixel payload truncated in {path}")
    img = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return (img.astype(np.float32) / float(maxval)).clip(0.0, 1.0)


# -- raw tensor file -------------------------------------------------------------

_RAW_MAGIC = b"MMRT"
_RAW_VERSION = 1
_RAW_HEADER = struct.Struct("<4sIIIIII")  # magic, version, count, H, W, Ch, C


def write_raw_tensor_file(path, images, labels, num_classes):
    """Serialize images and (possibly missing) labels; -1 marks unlabeled."""
    arr = np.asarray(images, dtype=np.float32)
    lab = np.asarray(labels, dtype=np.int64)
    if arr.ndim != 4 or len(arr) != len(lab):
        raise ConfigurationError("images must be [n, H, W, Ch] with matching labels")
    encoded = np.where(lab < 0, UNLABELED, lab).astype("<u2")
    n, h, w, ch = arr.shape
    with open(path, "wb") as fh:
        fh.write(_RAW_HEADER.pack(_RAW_MAGIC, _RAW_VERSION, n, h, w, ch, num_classes))
        fh.write(arr.astype("<f4").tobytes())
        fh.write(encoded.tobytes())


def read_raw_tensor_file(path):
    """Returns ``(images float32, labels int64 with -1 for unlabeled, C)``."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    if len(blob) < _RAW_HEADER.size:
        raise IngestionError(f"{path}: file shorter than header")
    magic, version, n, h, w, ch, classes = _RAW_HEADER.unpack_from(blob)
    if magic != _RAW_MAGIC:
        raise IngestionError(f"{path}: bad magic {magic!r}")
    if version != _RAW_VERSION:
        raise IngestionError(f"{path}: unsupported version {version}")
    pixel_bytes = n * h * w * ch * 4
    expected = _RAW_HEADER.size + pixel_bytes + n * 2
    if len(blob) != expected:
        raise IngestionError(f"{path}: expected {expected} bytes, found {len(blob)}")
    images = np.frombuffer(blob, dtype="<f4", count=n * h * w * ch,
                           offset=_RAW_HEADER.size).reshape(n, h, w, ch).copy()
    encoded = np.frombuffer(blob, dtype="<u2", count=n,
                            offset=_RAW_HEADER.size + pixel_bytes).astype(np.int64)
    labels = np.where(encoded == UNLABELED, -1, encoded)
    if np.any(labels >= classes):
        raise IngestionError(f"{path}: label id exceeds declared class count")
    return images, labels, int(classes)


# -- pool assembly ----------------------------------------------------------------


def _pick_labeled(labels, labels_per_class, num_classes, seed):
    """Class-balanced labeled subset; deterministic under the seed."""
    rng = np.random.default_rng((seed, _GEN_LABEL_PICK))
    picks = []
    for c in range(num_classes):
        candidates = np.flatnonzero(labels == c)
        if len(candidates) < labels_per_class:
            raise ConfigurationError(
                f"class {c} has {len(candidates)} labeled candidates, "
                f"need {labels_per_class}")
        picks.append(np.sort(rng.choice(candidates, size=labels_per_class,
                                        replace=False)))
    return np.concatenate(picks)


def load_dataset(spec):
    """Build (labeled, unlabeled, test) pools according to the spec."""
    if spec.source == "synthetic":
        train_images, train_labels, test_images, test_labels = \
            generate_synthetic_dataset(spec.num_classes, spec.per_class,
                                       spec.image_size, spec.seed, spec.channels,
                                       spec.test_per_class)
        extra_images = None
    elif spec.source == "folder":
        train_images, train_labels, test_images, test_labels, extra_images = \
            _load_folder(spec)
    else:
        train_images, train_labels, classes = read_raw_tensor_file(spec.train_file)
        if classes != spec.num_classes:
            raise ConfigurationError(
                f"raw file declares {classes} classes, spec says {spec.num_classes}")
        test_images, test_labels, _ = read_raw_tensor_file(spec.test_file)
        if np.any(test_labels < 0):
            raise IngestionError("test pool contains unlabeled entries")
        extra_images = None

    picked = _pick_labeled(train_labels, spec.labels_per_class, spec.num_classes,
                           spec.seed)
    unlabeled_images = train_images
    unlabeled_ids = np.arange(len(train_images), dtype=np.int64)
    if extra_images is not None and len(extra_images):
        unlabeled_images = np.concatenate([train_images, extra_images], axis=0)
        unlabeled_ids = np.arange(len(unlabeled_images), dtype=np.int64)
    return DatasetPools(
        labeled_images=train_images[picked],
        labeled_labels=train_labels[picked],
        labeled_ids=picked.astype(np.int64),
        unlabeled_images=unlabeled_images,
        unlabeled_ids=unlabeled_ids,
        test_images=test_images,
        test_labels=test_labels,
        num_classes=spec.num_classes)


def _load_folder(spec):
    root = spec.path
    if root is None or not os.path.isdir(root):
        raise IngestionError(f"dataset root {root!r} does not exist")
    train_dir, test_dir = os.path.join(root, "train"), os.path.join(root, "test")
    if not os.path.isdir(train_dir) or not os.path.isdir(test_dir):
        raise IngestionError(f"{root} must contain train/ and test/ directories")
    class_names = sorted(d for d in os.listdir(train_dir)
                         if os.path.isdir(os.path.join(train_dir, d)))
    if len(class_names) != spec.num_classes:
        raise ConfigurationError(
            f"found {len(class_names)} class directories, spec says {spec.num_classes}")

    def load_split(base):
        images, labels = [], []
        for class_id, name in enumerate(class_names):
            class_dir = os.path.join(base, name)
            if not os.path.isdir(class_dir):
                raise IngestionError(f"missing class directory {class_dir}")
            for fname in sorted(os.listdir(class_dir)):
                images.append(read_ppm(os.path.join(class_dir, fname)))
                labels.append(class_id)
        if not images:
            raise IngestionError(f"no images under {base}")
        return np.stack(images), np.asarray(labels, dtype=np.int64)

    train_images, train_labels = load_split(train_dir)
    test_images, test_labels = load_split(test_dir)
    extra_dir = os.path.join(root, "unlabeled")
    extra = None
    if os.path.isdir(extra_dir):
        files = sorted(os.listdir(extra_dir))
        if files:
            extra = np.stack([read_ppm(os.path.join(extra_dir, f)) for f in files])
    return train_images, train_labels, test_images, test_labels, extra


# -- batch streams ------------------------------------------------------------------


def epoch_permutation(pool_size, seed, epoch, stream_tag=STREAM_LABELED_BATCH):
    return np.random.default_rng((seed, stream_tag, epoch)).permutation(pool_size)


def batch_for_iteration(pool_size, batch_size, seed, iteration,
                        stream_tag=STREAM_LABELED_BATCH):
    """Index batch for one global iteration of an epoch-reshuffled stream.

    Stateless: any iteration can be recomputed directly, which is what makes
    interrupted runs resumable without storing generator state.
    """
    if batch_size > pool_size:
        raise ConfigurationError(f"batch size {batch_size} exceeds pool {pool_size}")
    per_epoch = pool_size // batch_size
    epoch, pos = divmod(iteration, per_epoch)
    perm = epoch_permutation(pool_size, seed, epoch, stream_tag)
    return perm[pos * batch_size : (pos + 1) * batch_size]


def batch_iterator(items, batch_size, seed, epochs=1,
                   stream_tag=STREAM_LABELED_BATCH):
    """Yield shuffled batches, dropping each epoch's partial tail.

    ``items`` may be an integer pool size (yields index arrays) or an
    indexable array (yields its rows).
    """
    pool_size = items if isinstance(items, int) else len(items)
    if batch_size > pool_size:
        raise ConfigurationError(f"batch size {batch_size} exceeds pool {pool_size}")
    per_epoch = pool_size // batch_size
    epoch = 0
    while epochs is None or epoch < epochs:
        perm = epoch_permutation(pool_size, seed, epoch, stream_tag)
        for pos in range(per_epoch):
            idx = perm[pos * batch_size : (pos + 1) * batch_size]
            yield idx if isinstance(items, int) else items[idx]
        epoch += 1
