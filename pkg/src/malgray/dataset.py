"""Labelled sample inventory, seeded train/test splits and batch iteration."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, NamedTuple, Optional, Sequence

import numpy as np

from .errors import CountMismatch, DuplicateId, EmptyPartition, MissingFile, UnknownClass
from .imaging import GrayImage, ResizeSpec, convert_hexdump, read_pgm, resize, to_input_tensor
from .rng import Xoshiro256, derive_seed

# Index order follows the challenge's Class column (Class k -> index k-1).
FAMILIES = (
    "Ramnit",
    "Lollipop",
    "Kelihos_ver3",
    "Vundo",
    "Simda",
    "Tracur",
    "Kelihos_ver1",
    "Obfuscator.ACY",
    "Gatak",
)
NUM_CLASSES = len(FAMILIES)

# Per-family sample counts of the full challenge training set.
FAMILY_COUNTS = {
    "Ramnit": 1541,
    "Lollipop": 2478,
    "Kelihos_ver3": 2942,
    "Vundo": 475,
    "Simda": 42,
    "Tracur": 751,
    "Kelihos_ver1": 398,
    "Obfuscator.ACY": 1228,
    "Gatak": 1013,
}

FAMILY_TYPES = {
    "Ramnit": "Worm",
    "Lollipop": "Adware",
    "Kelihos_ver3": "Backdoor",
    "Vundo": "Trojan",
    "Simda": "Backdoor",
    "Tracur": "Trojan",
    "Kelihos_ver1": "Backdoor",
    "Obfuscator.ACY": "Obfuscated Malware",
    "Gatak": "Backdoor",
}

SPLIT_MODES = ("uniform_random", "stratified")
MANIFEST_HEADER = ("sample_id", "image_path", "label_index", "label_name", "split")
IMAGE_SUFFIXES = (".pgm", ".bytes")


@dataclass(frozen=True, order=True)
class FamilyLabel:
    index: int
    name: str

    @classmethod
    def from_index(cls, index: int) -> "FamilyLabel":
        if not 0 <= index < NUM_CLASSES:
            raise UnknownClass(f"label index {index} outside 0..{NUM_CLASSES - 1}")
        return cls(index, FAMILIES[index])

    @classmethod
    def from_class(cls, value) -> "FamilyLabel":
        """From the challenge's 1-based ``Class`` column."""
        try:
            k = int(str(value).strip())
        except ValueError:
            raise UnknownClass(f"class {value!r} is not an integer") from None
        if not 1 <= k <= NUM_CLASSES:
            raise UnknownClass(f"class {k} outside 1..{NUM_CLASSES}")
        return cls.from_index(k - 1)


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    image_path: str
    label: FamilyLabel
    split: str = ""


@dataclass(frozen=True)
class Manifest:
    """Immutable, id-sorted list of records."""

    records: tuple = ()

    def __post_init__(self):
        recs = tuple(sorted(self.records, key=lambda r: r.sample_id))
        seen = set()
        for r in recs:
            if r.sample_id in seen:
                raise DuplicateId(r.sample_id)
            seen.add(r.sample_id)
        object.__setattr__(self, "records", recs)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def ids(self):
        return [r.sample_id for r in self.records]

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label.index for r in self.records], dtype=np.int64)

    def family_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=NUM_CLASSES)

    def partition(self, name: str) -> "Manifest":
        return Manifest(tuple(r for r in self.records if r.split == name))


@dataclass(frozen=True)
class SplitSpec:
    train_count: int
    test_count: int
    seed: int = 0
    mode: str = "uniform_random"

    def __post_init__(self):
        if self.mode not in SPLIT_MODES:
            raise ValueError(f"unknown split mode {self.mode!r}")
        if self.train_count < 0 or self.test_count < 0:
            raise CountMismatch("split counts must be non-negative")


def _find_image(root: str, sample_id: str) -> Optional[str]:
    for suffix in IMAGE_SUFFIXES:
        path = os.path.join(root, sample_id + suffix)
        if os.path.isfile(path):
            return path
    return None


def read_labels(label_file) -> list:
    """Rows of an ``Id,Class`` CSV as ``(id, FamilyLabel)`` pairs."""
    fh = open(label_file, newline="") if isinstance(label_file, (str, os.PathLike)) else label_file
    try:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"Id", "Class"} <= set(reader.fieldnames):
            raise UnknownClass("label CSV must have an 'Id,Class' header")
        rows = [(row["Id"].strip(), FamilyLabel.from_class(row["Class"])) for row in reader]
    finally:
        if fh is not label_file:
            fh.close()
    return rows


def build_manifest(root, label_file) -> Manifest:
    """One record per labelled sample found as ``<root>/<id>.pgm`` or ``<root>/<id>.bytes``."""
    root = os.fspath(root)
    records = []
    seen = set()
    for sample_id, label in read_labels(label_file):
        if sample_id in seen:
            raise DuplicateId(sample_id)
        seen.add(sample_id)
        path = _find_image(root, sample_id)
        if path is None:
            raise MissingFile(f"no .pgm or .bytes file for {sample_id} under {root}")
        records.append(SampleRecord(sample_id, path, label))
    return Manifest(tuple(records))


def write_manifest(manifest: Manifest, path) -> None:
    """CSV with image paths stored relative to the CSV's directory."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in manifest:
            rel = os.path.relpath(os.path.abspath(r.image_path), base)
            w.writerow([r.sample_id, rel.replace(os.sep, "/"), r.label.index, r.label.name, r.split])


def read_manifest(path) -> Manifest:
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            label = FamilyLabel.from_index(int(row["label_index"]))
            img = row["image_path"]
            if not os.path.isabs(img):
                img = os.path.normpath(os.path.join(base, img))
            records.append(SampleRecord(row["sample_id"], img, label, row.get("split") or ""))
    return Manifest(tuple(records))


def stratified_quota(counts: Sequence[int], train_total: int) -> np.ndarray:
    """Largest-remainder allocation of ``train_total`` across families.

    Each family gets ``floor(n_f * T / N)`` or one more; leftover seats go to
    the largest fractional parts, ties to the lower family index.
    """
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        return np.zeros_like(counts)
    exact = counts * train_total
    base = exact // total
    rem = exact - base * total  # fractional part scaled by total, kept exact
    left = train_total - int(base.sum())
    order = sorted(range(len(counts)), key=lambda i: (-int(rem[i]), i))
    for i in order[:left]:
        base[i] += 1
    return base


def split(manifest: Manifest, spec: SplitSpec):
    """Seeded partition into ``(train, test)`` manifests.

    Records are shuffled (Fisher-Yates, xoshiro256** seeded by SplitMix64
    from ``spec.seed``) starting from id-sorted order. ``uniform_random``
    takes the first ``train_count`` shuffled records; ``stratified`` takes,
    per family, the first quota records in shuffled order.
    """
    n = len(manifest)
    if spec.train_count + spec.test_count != n:
        raise CountMismatch(f"{spec.train_count} + {spec.test_count} != {n} records")
    order = Xoshiro256(spec.seed).shuffle(list(range(n)))
    recs = manifest.records
    if spec.mode == "uniform_random":
        train_idx = set(order[: spec.train_count])
    else:
        quota = stratified_quota(manifest.family_counts(), spec.train_count)
        taken = np.zeros(NUM_CLASSES, dtype=np.int64)
        train_idx = set()
        for i in order:
            f = recs[i].label.index
            if taken[f] < quota[f]:
                taken[f] += 1
                train_idx.add(i)
    train = tuple(replace(r, split="train") for i, r in enumerate(recs) if i in train_idx)
    test = tuple(replace(r, split="test") for i, r in enumerate(recs) if i not in train_idx)
    return Manifest(train), Manifest(test)


def epoch_order(n: int, shuffle_seed: int, epoch: int) -> list:
    """Sample order for one epoch; a pure function of ``(shuffle_seed, epoch)``."""
    return Xoshiro256(derive_seed(shuffle_seed, epoch)).shuffle(list(range(n)))


class Batch(NamedTuple):
    inputs: np.ndarray
    labels: np.ndarray
    ids: tuple


@dataclass
class ImageLoader:
    """Loads records as network inputs at a fixed ``(C, H, W)``.

    Resized uint8 planes are cached, so repeated epochs only pay for the
    float conversion.
    """

    input_shape: tuple = (1, 256, 256)
    interp: str = "bilinear"
    row_width: object = 16
    unknown: str = "zero"
    normalization: str = "unit"
    mean: object = 0.0
    std: object = 1.0
    dtype: object = np.float32
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def spec(self) -> ResizeSpec:
        return ResizeSpec(self.input_shape[2], self.input_shape[1], self.interp)

    def plane(self, record: SampleRecord) -> np.ndarray:
        hit = self.cache.get(record.image_path)
        if hit is not None:
            return hit
        path = record.image_path
        if not os.path.isfile(path):
            raise MissingFile(path)
        if path.endswith(".bytes"):
            img = convert_hexdump(path, self.row_width, self.spec, self.unknown)
        else:
            img = resize(read_pgm(path), self.spec)
        self.cache[path] = img.pixels
        return img.pixels

    def image(self, record: SampleRecord) -> GrayImage:
        return GrayImage(self.plane(record))

    def __call__(self, records: Sequence[SampleRecord]) -> np.ndarray:
        stack = np.stack([self.plane(r) for r in records])
        return to_input_tensor(stack, self.input_shape[0], self.normalization, self.mean, self.std,
                               dtype=self.dtype)


def batches(part: Manifest, batch_size: int, shuffle_seed: int, epoch: int,
            loader: Optional[Callable] = None) -> Iterator[Batch]:
    """Yield the epoch's batches; the final short batch is kept.

    ``loader`` maps a list of records to an ``(N, C, H, W)`` array; without
    one, ``inputs`` is ``None`` and only labels and ids are produced.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if len(part) == 0:
        raise EmptyPartition("partition has no samples")
    order = epoch_order(len(part), shuffle_seed, epoch)
    recs = part.records
    for start in range(0, len(order), batch_size):
        chunk = [recs[i] for i in order[start:start + batch_size]]
        labels = np.array([r.label.index for r in chunk], dtype=np.int64)
        inputs = loader(chunk) if loader is not None else None
        yield Batch(inputs, labels, tuple(r.sample_id for r in chunk))
