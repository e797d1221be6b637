"""Seeded synthetic image dataset with a superclass/subclass hierarchy.

Each superclass gets a random base pattern; subclasses perturb that base, so
classes sharing a superclass look alike. That gives the margin logic real
"semantically close" classes to trigger on, and gives the text-text
similarity matrices a block structure worth preserving.

Pixels are quantized to the 256-level grid at generation time, matching the
1/255 perturbation granularity and making the 8-bit on-disk format lossless.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    InvalidSpec,
    IoFailure,
    TruncatedFile,
    UnsupportedVersion,
)

Array = np.ndarray

DATASET_MAGIC = b"TIMD"
DATASET_VERSION = 1


@dataclass(frozen=True)
class SyntheticSpec:
    num_superclasses: int = 4
    subclasses_per_superclass: int = 2
    image_side: int = 16
    within_super_shift: float = 0.15
    noise_sigma: float = 0.08
    train_count: int = 2000
    test_count: int = 500
    seed: int = 0

    def __post_init__(self):
        counts = (self.num_superclasses, self.subclasses_per_superclass,
                  self.image_side, self.train_count, self.test_count)
        if any(c < 1 for c in counts):
            raise InvalidSpec(f"counts must be >= 1: {self}")
        if self.noise_sigma < 0 or self.within_super_shift < 0:
            raise InvalidSpec(f"noise/shift must be >= 0: {self}")
        if self.seed < 0:
            raise InvalidSpec(f"seed must be >= 0, got {self.seed}")

    @property
    def num_classes(self) -> int:
        return self.num_superclasses * self.subclasses_per_superclass

    @property
    def input_dim(self) -> int:
        return self.image_side * self.image_side


@dataclass
class Dataset:
    images: Array                # (n, side^2) float64 in [0, 1]
    labels: Array                # (n,) class ids
    superclass_of: Array         # (num_classes,) superclass ids
    image_side: int
    split: str = ""

    @property
    def num_classes(self) -> int:
        return len(self.superclass_of)

    @property
    def num_samples(self) -> int:
        return len(self.labels)

    def __eq__(self, other):
        return (isinstance(other, Dataset)
                and self.image_side == other.image_side
                and np.array_equal(self.images, other.images)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.superclass_of, other.superclass_of))


def _quantize(x: Array) -> Array:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0) / 255.0


def class_prototypes(spec: SyntheticSpec) -> Array:
    """The noiseless per-class patterns (num_classes x side^2)."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(3)[0])
    d = spec.input_dim
    protos = np.empty((spec.num_classes, d))
    for s in range(spec.num_superclasses):
        base = rng.uniform(0.0, 1.0, size=d)
        for k in range(spec.subclasses_per_superclass):
            c = s * spec.subclasses_per_superclass + k
            protos[c] = base + spec.within_super_shift * rng.standard_normal(d)
    return protos


def _balanced_counts(total: int, num_classes: int) -> Array:
    counts = np.full(num_classes, total // num_classes, dtype=np.int64)
    counts[: total % num_classes] += 1
    return counts


def _sample_split(protos: Array, spec: SyntheticSpec, rng, total: int,
                  split: str) -> Dataset:
    counts = _balanced_counts(total, spec.num_classes)
    images = []
    labels = []
    for c, n_c in enumerate(counts):
        noise = rng.standard_normal((n_c, spec.input_dim)) * spec.noise_sigma
        images.append(_quantize(protos[c][None, :] + noise))
        labels.append(np.full(n_c, c, dtype=np.int64))
    superclass_of = np.repeat(np.arange(spec.num_superclasses, dtype=np.int64),
                              spec.subclasses_per_superclass)
    return Dataset(images=np.concatenate(images), labels=np.concatenate(labels),
                   superclass_of=superclass_of, image_side=spec.image_side,
                   split=split)


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    """Deterministic (train, test) pair; the splits use disjoint seed streams."""
    _, train_ss, test_ss = np.random.SeedSequence(spec.seed).spawn(3)
    protos = class_prototypes(spec)
    train = _sample_split(protos, spec, np.random.default_rng(train_ss),
                          spec.train_count, "train")
    test = _sample_split(protos, spec, np.random.default_rng(test_ss),
                         spec.test_count, "test")
    return train, test


# -- on-disk format -------------------------------------------------------------
#
#   magic "TIMD" | u32 version | u32 num_classes | u32 num_superclasses
#   | u32 image_side | u32 n | u16*num_classes superclass map | u16*n labels
#   | u8*(n*side^2) pixels
#
# Little-endian throughout. Pixels are stored as round(p * 255); load widens
# back to float64 p/255, which is bit-exact for grid-aligned datasets.


def save_dataset(d: Dataset, path) -> None:
    num_supers = int(d.superclass_of.max()) + 1 if d.num_classes else 0
    header = struct.pack("<4sIIIII", DATASET_MAGIC, DATASET_VERSION,
                         d.num_classes, num_supers, d.image_side, d.num_samples)
    supers = d.superclass_of.astype("<u2").tobytes()
    labels = d.labels.astype("<u2").tobytes()
    pixels = np.round(d.images * 255.0).astype(np.uint8).tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header + supers + labels + pixels)
    except OSError as exc:
        raise IoFailure(f"cannot write dataset {path}: {exc}") from exc


def load_dataset(path, split: str = "") -> Dataset:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read dataset {path}: {exc}") from exc

    def take(pos: int, n: int) -> tuple[bytes, int]:
        if pos + n > len(blob):
            raise TruncatedFile(f"{path}: expected {n} more bytes at offset {pos}")
        return blob[pos:pos + n], pos + n

    head, pos = take(0, 24)
    magic, version, num_classes, _num_supers, side, n = struct.unpack("<4sIIIII", head)
    if magic != DATASET_MAGIC:
        raise BadMagic(f"{path}: not a dataset file")
    if version != DATASET_VERSION:
        raise UnsupportedVersion(f"{path}: version {version}")
    raw, pos = take(pos, 2 * num_classes)
    superclass_of = np.frombuffer(raw, dtype="<u2").astype(np.int64)
    raw, pos = take(pos, 2 * n)
    labels = np.frombuffer(raw, dtype="<u2").astype(np.int64)
    raw, pos = take(pos, n * side * side)
    images = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    return Dataset(images=images.reshape(n, side * side), labels=labels,
                   superclass_of=superclass_of, image_side=side, split=split)
