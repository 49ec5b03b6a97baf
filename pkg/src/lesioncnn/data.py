"""Dataset handling: metadata ingestion, label encoding, stratified
splitting, class weighting, synthetic data generation, and batch iteration.

Metadata follows the public skin-lesion CSV schema
``lesion_id,image_id,dx,dx_type,age,sex,localization`` and images are
resolved as ``<image_dir>/<image_id>.<ext>`` with ext in {jpg, png, ppm,
pgm}.  The seven diagnosis codes are fixed; their canonical order is the
alphabetical code order, and every report carries display names so the
ordering stays auditable.
"""

import csv
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import DataError, MetadataError
from .image import Image, load_image, write_netpbm
from .preprocessing import augment, histogram_equalize, normalize_batch, resize

CLASS_CODES = ("akiec", "bcc", "bkl", "df", "mel", "nv", "vasc")

DISPLAY_NAMES = {
    "akiec": "Actinic keratoses",
    "bcc": "Basal cell carcinoma",
    "bkl": "Benign keratosis",
    "df": "Dermatofibroma",
    "mel": "Melanoma",
    "nv": "Melanocytic nevi",
    "vasc": "Vascular skin lesions",
}

METADATA_COLUMNS = ("lesion_id", "image_id", "dx", "dx_type", "age", "sex", "localization")

IMAGE_EXTENSIONS = ("ppm", "pgm", "png", "jpg", "jpeg")


@dataclass(frozen=True)
class ClassCatalog:
    """Ordered set of diagnosis codes with display names.

    The full catalog holds the seven codes in canonical (alphabetical)
    order; reduced problems use a prefix subset.
    """

    codes: tuple = CLASS_CODES

    def __post_init__(self):
        codes = tuple(self.codes)
        object.__setattr__(self, "codes", codes)
        if len(codes) == 0:
            raise DataError("class catalog must hold at least one code")
        if len(set(codes)) != len(codes):
            raise DataError("class catalog has duplicate codes")
        for code in codes:
            if code not in DISPLAY_NAMES:
                raise DataError("unknown class code %r" % (code,))

    @classmethod
    def subset(cls, num_classes):
        """First ``num_classes`` codes of the canonical seven."""
        if not 1 <= num_classes <= len(CLASS_CODES):
            raise DataError(
                "num_classes must be in [1, %d], got %r" % (len(CLASS_CODES), num_classes)
            )
        return cls(CLASS_CODES[:num_classes])

    def __len__(self):
        return len(self.codes)

    def __iter__(self):
        return iter(self.codes)

    def index(self, code):
        try:
            return self.codes.index(code)
        except ValueError:
            raise DataError("unknown class code %r" % (code,)) from None

    def display_name(self, code):
        self.index(code)
        return DISPLAY_NAMES[code]

    @property
    def display_names(self):
        return tuple(DISPLAY_NAMES[c] for c in self.codes)

    def encode(self, code):
        """One-hot vector with 1.0 at the code's catalog index."""
        hot = np.zeros(len(self.codes), dtype=np.float64)
        hot[self.index(code)] = 1.0
        return hot


FULL_CATALOG = ClassCatalog()


def encode_label(dx):
    """One-hot encode a diagnosis code against the full seven-class catalog."""
    return FULL_CATALOG.encode(dx)


@dataclass(frozen=True)
class SampleRecord:
    lesion_id: str
    image_id: str
    dx: str
    dx_type: str = ""
    age: Optional[float] = None
    sex: str = ""
    localization: str = ""


def load_metadata(csv_path):
    """Read a metadata CSV into SampleRecords.

    Rows with unknown diagnosis codes, missing fields, or duplicate
    image ids are rejected with their row number (header is row 1).
    """
    if not os.path.isfile(csv_path):
        raise DataError("metadata file not found: %s" % (csv_path,))
    records = []
    seen_ids = {}
    with open(csv_path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise MetadataError("metadata file %s is empty (no header row)" % (csv_path,))
        missing = [c for c in METADATA_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise MetadataError(
                "metadata header is missing column(s): %s" % (", ".join(missing))
            )
        for row in reader:
            line = reader.line_num
            values = [row.get(c) for c in METADATA_COLUMNS]
            if any(v is None for v in values):
                raise MetadataError("row %d has too few fields" % (line,))
            lesion_id, image_id, dx, dx_type, age_text, sex, localization = values
            if dx not in DISPLAY_NAMES:
                raise MetadataError("row %d has unknown class code %r" % (line, dx))
            if not image_id:
                raise MetadataError("row %d has an empty image_id" % (line,))
            if image_id in seen_ids:
                raise MetadataError(
                    "row %d repeats image_id %r (first seen at row %d)"
                    % (line, image_id, seen_ids[image_id])
                )
            seen_ids[image_id] = line
            age = None
            if age_text not in (None, ""):
                try:
                    age = float(age_text)
                except ValueError:
                    raise MetadataError(
                        "row %d has a non-numeric age %r" % (line, age_text)
                    ) from None
            records.append(
                SampleRecord(
                    lesion_id=lesion_id,
                    image_id=image_id,
                    dx=dx,
                    dx_type=dx_type,
                    age=age,
                    sex=sex,
                    localization=localization,
                )
            )
    return records


@dataclass(frozen=True)
class SplitSpec:
    """Train/val/test fractions plus the shuffle seed.

    Fractions must be non-negative and sum to 1 within 1e-9; the train
    fraction must be positive.  A zero fraction yields an empty split.
    """

    train: float = 0.7
    val: float = 0.15
    test: float = 0.15
    seed: int = 0

    def __post_init__(self):
        fractions = (self.train, self.val, self.test)
        for f in fractions:
            if not np.isfinite(f) or f < 0:
                raise DataError("split fractions must be non-negative, got %r" % (fractions,))
        if self.train <= 0:
            raise DataError("train fraction must be positive")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise DataError("split fractions must sum to 1, got %r" % (fractions,))
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise DataError("seed must be a non-negative integer")
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def fractions(self):
        return (self.train, self.val, self.test)


def _apportion(total, fractions):
    """Split ``total`` into integer counts proportional to ``fractions``.

    Largest-remainder rule; each count differs from its exact quota by
    less than one.  Remainder ties go to the earliest split.
    """
    quotas = [total * f for f in fractions]
    counts = [int(np.floor(q)) for q in quotas]
    leftover = total - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def stratified_split(records, spec, group_by="image_id"):
    """Partition records into train/val/test, stratified by class.

    Per class, counts match the requested fractions to within one
    sample.  ``group_by="lesion_id"`` keeps all images of a lesion in
    the same split (the per-class tolerance then applies to lesion
    groups rather than individual images).
    """
    if group_by not in ("image_id", "lesion_id"):
        raise DataError("group_by must be 'image_id' or 'lesion_id', got %r" % (group_by,))
    records = list(records)
    # units are (first appearance order, member record indices); a unit
    # is one record, or all records of a lesion in strict mode
    units_by_key = {}
    for idx, record in enumerate(records):
        key = record.image_id if group_by == "image_id" else record.lesion_id
        units_by_key.setdefault(key, []).append(idx)
    unit_class = {}
    units_per_class = {}
    for key, members in units_by_key.items():
        dx = records[members[0]].dx
        unit_class[key] = dx
        units_per_class.setdefault(dx, []).append(key)
    splits = ([], [], [])
    for ci, code in enumerate(CLASS_CODES):
        keys = units_per_class.get(code)
        if not keys:
            continue
        rng = np.random.default_rng((spec.seed, ci))
        perm = rng.permutation(len(keys))
        counts = _apportion(len(keys), spec.fractions)
        start = 0
        for si, count in enumerate(counts):
            for p in perm[start:start + count]:
                splits[si].extend(units_by_key[keys[p]])
            start += count
    return tuple([records[i] for i in sorted(part)] for part in splits)


def class_weights(class_counts):
    """Balanced inverse-frequency weights w_c = N / (K * n_c).

    The normalization makes the weighted count sum equal N: the loss
    scale is invariant to class imbalance.
    """
    counts = np.asarray(class_counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size == 0:
        raise DataError("class_counts must be a non-empty 1-D sequence")
    if np.any(counts < 1):
        raise DataError("every class count must be >= 1, got %r" % (list(class_counts),))
    return counts.sum() / (counts.size * counts)


def count_classes(records, catalog=FULL_CATALOG):
    """Per-class record counts in catalog order."""
    counts = np.zeros(len(catalog), dtype=np.int64)
    for record in records:
        counts[catalog.index(record.dx)] += 1
    return counts


def _motif_mask(class_index, side, rng):
    """Boolean stamp for one synthetic image: a class-specific shape at a
    random position and scale."""
    r = int(rng.integers(max(3, side // 8), max(4, side // 4) + 1))
    cy = int(rng.integers(r + 1, side - r - 1))
    cx = int(rng.integers(r + 1, side - r - 1))
    t = max(1, r // 3)
    yy, xx = np.indices((side, side))
    dy = yy - cy
    dx = xx - cx
    if class_index == 0:  # filled disk
        return dx * dx + dy * dy <= r * r
    if class_index == 1:  # horizontal bar
        return (np.abs(dy) <= t) & (np.abs(dx) <= r)
    if class_index == 2:  # upright cross
        return ((np.abs(dx) <= t) & (np.abs(dy) <= r)) | (
            (np.abs(dy) <= t) & (np.abs(dx) <= r)
        )
    if class_index == 3:  # ring
        d2 = dx * dx + dy * dy
        inner = max(1, r - t)
        return (d2 <= r * r) & (d2 >= inner * inner)
    if class_index == 4:  # filled triangle, apex up
        return (dy >= -r) & (dy <= r) & (2 * np.abs(dx) <= dy + r)
    if class_index == 5:  # diagonal cross
        box = (np.abs(dx) <= r) & (np.abs(dy) <= r)
        return box & ((np.abs(dx - dy) <= t) | (np.abs(dx + dy) <= t))
    if class_index == 6:  # square frame
        cheb = np.maximum(np.abs(dx), np.abs(dy))
        return (cheb <= r) & (cheb >= max(1, r - t))
    raise DataError("no motif for class index %d" % (class_index,))


def synth_dataset(n_per_class, classes=7, side=64, seed=0):
    """Generate a balanced synthetic dataset of motif-on-noise images.

    Each image is grayscale noise (replicated to RGB) stamped with a
    bright geometric motif whose shape identifies the class and whose
    position and scale are randomized.  Returns (pixels, labels) with
    pixels (N, side, side, 3) uint8 and labels (N,) class indices,
    grouped by class.  Bit-identical for a fixed seed.
    """
    if not 1 <= classes <= len(CLASS_CODES):
        raise DataError("classes must be in [1, %d], got %r" % (len(CLASS_CODES), classes))
    if side < 16:
        raise DataError("side must be >= 16, got %r" % (side,))
    if n_per_class < 1:
        raise DataError("n_per_class must be >= 1")
    pixels = np.empty((classes * n_per_class, side, side, 3), dtype=np.uint8)
    labels = np.empty(classes * n_per_class, dtype=np.int64)
    for ci in range(classes):
        for i in range(n_per_class):
            rng = np.random.default_rng((seed, ci, i))
            gray = rng.integers(20, 181, size=(side, side)).astype(np.uint8)
            gray[_motif_mask(ci, side, rng)] = 250
            idx = ci * n_per_class + i
            pixels[idx] = gray[:, :, None]
            labels[idx] = ci
    return pixels, labels


def write_synth_dataset(out_dir, n_per_class, classes=7, side=64, seed=0):
    """Write a synthetic dataset as PPM files plus a metadata CSV.

    Layout: ``<out_dir>/metadata.csv`` and ``<out_dir>/images/*.ppm``.
    Returns (csv_path, image_dir).
    """
    pixels, labels = synth_dataset(n_per_class, classes, side, seed)
    image_dir = os.path.join(out_dir, "images")
    os.makedirs(image_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "metadata.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(METADATA_COLUMNS)
        for idx in range(len(labels)):
            image_id = "SYN%06d" % idx
            write_netpbm(Image(pixels[idx]), os.path.join(image_dir, image_id + ".ppm"))
            writer.writerow(
                [
                    "SYNL%06d" % idx,
                    image_id,
                    CLASS_CODES[labels[idx]],
                    "synthetic",
                    "",
                    "unknown",
                    "synthetic",
                ]
            )
    return csv_path, image_dir


def resolve_image_path(image_dir, image_id):
    for ext in IMAGE_EXTENSIONS:
        path = os.path.join(image_dir, "%s.%s" % (image_id, ext))
        if os.path.isfile(path):
            return path
    raise DataError("no image file found for image_id %r under %s" % (image_id, image_dir))


class LesionDataset:
    """Metadata records plus an image directory, preprocessed on demand.

    Samples pass through resize -> histogram equalization (then optional
    augmentation during iteration) before normalization to tensors.
    Preprocessed pixels are cached in memory by default.
    """

    def __init__(self, records, image_dir, input_side, catalog=FULL_CATALOG,
                 equalize_mode="per-channel", dtype=np.float32, cache=True):
        self.records = list(records)
        self.image_dir = image_dir
        self.input_side = int(input_side)
        self.catalog = catalog
        self.equalize_mode = equalize_mode
        self.dtype = dtype
        self._cache = {} if cache else None
        if self.input_side < 1:
            raise DataError("input_side must be >= 1")

    @property
    def num_classes(self):
        return len(self.catalog)

    def __len__(self):
        return len(self.records)

    def sample_pixels(self, index):
        """Resized, equalized (H, W, 3) uint8 pixels for one record."""
        record = self.records[index]
        if self._cache is not None and record.image_id in self._cache:
            return self._cache[record.image_id]
        path = resolve_image_path(self.image_dir, record.image_id)
        try:
            img = load_image(path).to_rgb()
        except DataError:
            raise
        except Exception as exc:
            raise DataError("failed to read image %r: %s" % (record.image_id, exc)) from exc
        img = resize(img, self.input_side, self.input_side)
        img = histogram_equalize(img, mode=self.equalize_mode)
        if self._cache is not None:
            self._cache[record.image_id] = img.pixels
        return img.pixels

    def target(self, index):
        return self.catalog.encode(self.records[index].dx)

    def class_counts(self):
        return count_classes(self.records, self.catalog)

    def batches(self, batch_size, shuffle_seed=None, augment_ranges=None):
        return batch_iter(self, batch_size, shuffle_seed, augment_ranges)


class ArrayDataset:
    """In-memory dataset over (N, H, W, 3) uint8 pixels and class indices.

    Applies the same resize + equalization pipeline as LesionDataset so
    results match training from files.
    """

    def __init__(self, pixels, labels, catalog, input_side=None,
                 equalize_mode="per-channel", dtype=np.float32):
        pixels = np.asarray(pixels)
        labels = np.asarray(labels)
        if pixels.ndim != 4 or pixels.shape[3] != 3 or pixels.dtype != np.uint8:
            raise DataError("pixels must be (N, H, W, 3) uint8")
        if labels.shape != (pixels.shape[0],):
            raise DataError("labels must be one class index per image")
        if labels.size and (labels.min() < 0 or labels.max() >= len(catalog)):
            raise DataError("labels out of range for a %d-class catalog" % (len(catalog),))
        self.catalog = catalog
        self.input_side = int(input_side) if input_side else pixels.shape[1]
        self.equalize_mode = equalize_mode
        self.dtype = dtype
        self.labels = labels.astype(np.int64)
        self._prepared = np.empty(
            (pixels.shape[0], self.input_side, self.input_side, 3), dtype=np.uint8
        )
        for i in range(pixels.shape[0]):
            img = resize(Image(pixels[i]), self.input_side, self.input_side)
            self._prepared[i] = histogram_equalize(img, mode=equalize_mode).pixels

    @property
    def num_classes(self):
        return len(self.catalog)

    def __len__(self):
        return len(self.labels)

    def sample_pixels(self, index):
        return self._prepared[index]

    def target(self, index):
        hot = np.zeros(len(self.catalog), dtype=np.float64)
        hot[self.labels[index]] = 1.0
        return hot

    def class_counts(self):
        counts = np.zeros(len(self.catalog), dtype=np.int64)
        for label in self.labels:
            counts[label] += 1
        return counts

    def batches(self, batch_size, shuffle_seed=None, augment_ranges=None):
        return batch_iter(self, batch_size, shuffle_seed, augment_ranges)


def batch_iter(dataset, batch_size, shuffle_seed=None, augment_ranges=None):
    """Yield (inputs, targets) batches covering the dataset exactly once.

    Inputs are (B, C, H, W) in the dataset dtype, targets (B, K).  With
    a shuffle seed the order is a seeded permutation; the final short
    batch is included.  Augmentation, when enabled, draws fresh
    parameters per sample from a stream derived from the shuffle seed.
    """
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    n = len(dataset)
    if shuffle_seed is None:
        order = np.arange(n)
        aug_rng = np.random.default_rng((0, 171))
    else:
        rng = np.random.default_rng(shuffle_seed)
        order = rng.permutation(n)
        aug_rng = np.random.default_rng(rng.integers(0, 2**63))
    for start in range(0, n, batch_size):
        chunk = order[start:start + batch_size]
        raw = []
        targets = np.empty((len(chunk), dataset.num_classes), dtype=dataset.dtype)
        for bi, index in enumerate(chunk):
            pix = dataset.sample_pixels(int(index))
            if augment_ranges is not None:
                params = augment_ranges.sample(aug_rng)
                pix = augment(Image(pix), params).pixels
            raw.append(pix)
            targets[bi] = dataset.target(int(index))
        inputs = normalize_batch(np.stack(raw), dtype=dataset.dtype)
        yield inputs, targets
