"""Seeded toy corpora with one visual motif per family.

Used for smoke runs and for checking that the training machinery can fit
an easily separable problem. Nothing here resembles real malware.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from .bytesource import ByteSequence, render_hexdump
from .dataset import FAMILIES, NUM_CLASSES, Manifest, SampleRecord, FamilyLabel
from .imaging import GrayImage, write_pgm
from .rng import derive_seed


# (kind, period) per family; samples differ in pool-aligned phase and noise.
_MOTIFS = (
    ("rows", 4),
    ("cols", 4),
    ("checker", 2),
    ("diag", 6),
    ("rows", 8),
    ("cols", 8),
    ("checker", 4),
    ("antidiag", 6),
    ("flat", 1),
)


def _motif(k: int, size: int, gen: np.random.Generator) -> np.ndarray:
    """Square-wave texture in {-1, +1} for family ``k`` at a random phase."""
    kind, period = _MOTIFS[k]
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = 4 * gen.integers(0, 4, 2)
    yy, xx = yy + dy, xx + dx
    if kind == "rows":
        on = (yy // (period // 2)) % 2
    elif kind == "cols":
        on = (xx // (period // 2)) % 2
    elif kind == "checker":
        on = ((yy // period) + (xx // period)) % 2
    elif kind == "diag":
        on = ((xx + yy) // (period // 2)) % 2
    elif kind == "antidiag":
        on = ((xx - yy) // (period // 2)) % 2
    else:
        on = np.zeros((size, size), dtype=np.int64)
    return np.where(on > 0, 1.0, -1.0) if kind != "flat" else on.astype(np.float64)


def class_image(k: int, sample: int, seed: int = 0, size: int = 32) -> GrayImage:
    """Sample ``sample`` of family ``k``: the family's high-contrast texture plus mild noise."""
    gen = np.random.Generator(np.random.PCG64(derive_seed(seed, k * 1000 + sample)))
    v = 128 + 100 * _motif(k, size, gen) + gen.normal(0, 3, (size, size))
    return GrayImage(np.clip(np.floor(v + 0.5), 0, 255).astype(np.uint8))


def make_image_corpus(root, per_class: int = 8, seed: int = 0, size: int = 32) -> Manifest:
    """Write ``<root>/<id>.pgm`` files plus ``labels.csv``; returns the manifest."""
    os.makedirs(root, exist_ok=True)
    records = []
    for k in range(NUM_CLASSES):
        for s in range(per_class):
            sid = f"syn{k}_{s:03d}"
            path = os.path.join(root, sid + ".pgm")
            write_pgm(class_image(k, s, seed, size), path)
            records.append(SampleRecord(sid, path, FamilyLabel.from_index(k)))
    _write_labels(root, records)
    return Manifest(tuple(records))


def make_bytes_corpus(root, per_class: int = 4, seed: int = 0, n_bytes: int = 1024,
                      unknown_rate: float = 0.01) -> Manifest:
    """Hexdump corpus: each file's bytes are a flattened class image, sprinkled with ``??``."""
    os.makedirs(root, exist_ok=True)
    side = int(np.sqrt(n_bytes))
    records = []
    for k in range(NUM_CLASSES):
        for s in range(per_class):
            sid = f"hex{k}_{s:03d}"
            data = class_image(k, s, seed, side).pixels.ravel()[:n_bytes]
            gen = np.random.Generator(np.random.PCG64(derive_seed(seed, 10**6 + k * 1000 + s)))
            unknown = gen.random(data.shape[0]) < unknown_rate
            unknown[0] = False
            seq = ByteSequence(sid, np.where(unknown, 0, data).astype(np.uint8), unknown)
            path = os.path.join(root, sid + ".bytes")
            with open(path, "w", newline="\n") as fh:
                fh.write(render_hexdump(seq))
            records.append(SampleRecord(sid, path, FamilyLabel.from_index(k)))
    _write_labels(root, records)
    return Manifest(tuple(records))


def _write_labels(root, records):
    with open(os.path.join(root, "labels.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Id", "Class"])
        for r in records:
            w.writerow([r.sample_id, r.label.index + 1])


def synthetic_manifest(counts=None, prefix: str = "s") -> Manifest:
    """Records without files, e.g. to exercise splitting at full dataset scale."""
    from .dataset import FAMILY_COUNTS

    counts = counts or [FAMILY_COUNTS[f] for f in FAMILIES]
    recs = []
    for k, n in enumerate(counts):
        for i in range(n):
            sid = f"{prefix}{k}_{i:05d}"
            recs.append(SampleRecord(sid, sid + ".pgm", FamilyLabel.from_index(k)))
    return Manifest(tuple(recs))
