"""Datasets, label permutations and the concept-shift presentation stream.

A concept shift swaps the labels of two classes for every image of those
classes. Images are never altered; only the mapping from image class to
served label changes, so the image marginal stays fixed while P(y|x) moves.
"""
from __future__ import annotations

import csv
import gzip
import itertools
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
N_CLASSES = 10
REFERENCE_EPOCH = 50_000  # presentations per epoch implied by 500 swaps, one per 100
CLASS_PAIRS = tuple(itertools.combinations(range(N_CLASSES), 2))


class IDXFormatError(ValueError):
    pass


# ---------------------------------------------------------------- IDX files

def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, expected_magic: int, n_dims: int):
    with _open(path) as f:
        header = f.read(8)
        if len(header) < 8:
            raise OSError(f"{path}: truncated IDX header")
        magic, count = struct.unpack(">ii", header)
        if magic != expected_magic:
            raise IDXFormatError(
                f"{path}: expected magic {expected_magic}, found {magic}")
        dims = [count]
        if n_dims > 1:
            extra = f.read(4 * (n_dims - 1))
            if len(extra) < 4 * (n_dims - 1):
                raise OSError(f"{path}: truncated IDX header")
            dims += list(struct.unpack(">" + "i" * (n_dims - 1), extra))
        n_bytes = int(np.prod(dims))
        payload = f.read(n_bytes)
    if len(payload) < n_bytes:
        raise OSError(f"{path}: truncated payload ({len(payload)} of {n_bytes} bytes)")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    """Raw ``(M, rows, cols)`` uint8 images from an IDX3 file."""
    return _read_idx(path, IMAGE_MAGIC, 3)


def read_idx_labels(path) -> np.ndarray:
    return _read_idx(path, LABEL_MAGIC, 1)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (labels if 1-D, images if 3-D)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = {1: LABEL_MAGIC, 3: IMAGE_MAGIC}[array.ndim]
    header = struct.pack(">i" + "i" * array.ndim, magic, *array.shape)
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as f:
        f.write(header)
        f.write(array.tobytes())


@dataclass
class Dataset:
    images: np.ndarray  # (M, 784) float64 in [0, 1]
    labels: np.ndarray  # (M,) int64
    split: str = "train"
    image_shape: tuple = (28, 28)

    def __post_init__(self):
        if len(self.images) == 0 or len(self.images) != len(self.labels):
            raise ValueError("dataset needs equal, nonzero image and label counts")
        if self.split not in ("train", "validation"):
            raise ValueError(f"unknown split {self.split!r}")

    def __len__(self):
        return len(self.labels)

    def subset(self, index) -> "Dataset":
        return Dataset(self.images[index], self.labels[index], self.split,
                       self.image_shape)


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Load an IDX image/label pair, scaling pixels by 1/255."""
    raw = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if raw.shape[0] != labels.shape[0]:
        raise IDXFormatError(
            f"image count {raw.shape[0]} does not match label count {labels.shape[0]}")
    if labels.size and labels.max() >= N_CLASSES:
        raise IDXFormatError(f"{labels_path}: label {labels.max()} out of range")
    images = raw.reshape(raw.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(images, labels.astype(np.int64), split, tuple(raw.shape[1:]))


def stratified_subset(dataset: Dataset, n: int, rng: np.random.Generator) -> Dataset:
    """Draw ``n`` samples with classes as balanced as ``n`` allows."""
    if n >= len(dataset):
        return dataset
    classes = np.unique(dataset.labels)
    base, extra = divmod(n, len(classes))
    bonus = set(rng.choice(classes, size=extra, replace=False).tolist())
    picked = []
    for c in classes:
        members = np.flatnonzero(dataset.labels == c)
        take = min(len(members), base + (c in bonus))
        picked.append(rng.choice(members, size=take, replace=False))
    index = np.sort(np.concatenate(picked))
    return dataset.subset(index)


# ------------------------------------------------------------- permutations

def identity_permutation(n_classes: int = N_CLASSES) -> np.ndarray:
    return np.arange(n_classes, dtype=np.int64)


def swap_pair(perm: np.ndarray, a: int, b: int) -> np.ndarray:
    """Return a copy of ``perm`` with the labels served for classes a and b exchanged."""
    n = len(perm)
    if a == b:
        raise ValueError("a swap needs two distinct classes")
    if not (0 <= a < n and 0 <= b < n):
        raise ValueError(f"classes must lie in 0..{n - 1}")
    out = np.array(perm, dtype=np.int64)
    out[a], out[b] = out[b], out[a]
    return out


def relabel(label, perm: np.ndarray):
    """Label served for raw class ``label`` (scalar or array) under ``perm``."""
    out = np.asarray(perm)[label]
    return int(out) if np.ndim(out) == 0 else out


def is_bijection(perm) -> bool:
    perm = np.asarray(perm)
    return np.array_equal(np.sort(perm), np.arange(len(perm)))


# ---------------------------------------------------------------- schedules

@dataclass
class ShiftSchedule:
    """Swap rate per epoch, either constant or piecewise constant by epoch.

    ``segments`` is a list of ``(n_epochs, rate)`` pairs laid end to end,
    starting at epoch 0.
    """

    mode: str = "constant"
    rate_per_epoch: float = 0.0
    segments: list = field(default_factory=list)
    epoch_length: int = REFERENCE_EPOCH
    name: str = ""

    def __post_init__(self):
        if self.mode not in ("constant", "seasonal"):
            raise ValueError(f"unknown shift mode {self.mode!r}")
        if self.epoch_length < 1:
            raise ValueError("epoch_length must be at least 1")
        if self.mode == "seasonal" and not self.segments:
            raise ValueError("a seasonal schedule needs at least one segment")
        self.segments = [(int(n), float(r)) for n, r in self.segments]
        rates = [self.rate_per_epoch] + [r for _, r in self.segments]
        if min(rates) < 0:
            raise ValueError("shift rates must be nonnegative")
        if any(n < 1 for n, _ in self.segments):
            raise ValueError("segment lengths must be at least one epoch")
        if max(rates) > self.epoch_length:
            raise ValueError(
                f"rate {max(rates)} exceeds one swap per presentation "
                f"(epoch_length {self.epoch_length})")

    @property
    def label(self) -> str:
        if self.mode == "seasonal":
            return self.name or "seasonal"
        return format_rate(self.rate_per_epoch)

    @property
    def n_epochs(self) -> int | None:
        return sum(n for n, _ in self.segments) if self.mode == "seasonal" else None

    def boundaries(self):
        """Start epoch and rate of every seasonal segment."""
        out, start = [], 0
        for n, rate in self.segments:
            out.append((start, rate))
            start += n
        return out


def format_rate(rate: float) -> str:
    return f"{rate:g}"


def constant_schedule(rate: float, epoch_length: int = REFERENCE_EPOCH) -> ShiftSchedule:
    return ShiftSchedule("constant", float(rate), [], epoch_length)


def max_rate(epoch_length: int) -> int:
    """One swap per 100 presentations."""
    return max(1, epoch_length // 100)


def schedule_a(epoch_length: int = REFERENCE_EPOCH, segment: int = 10,
               cycles: int = 2) -> ShiftSchedule:
    """Calm (no swaps) and stormy (maximum rate) segments, alternating, ending calm."""
    storm = max_rate(epoch_length)
    segs = []
    for _ in range(cycles):
        segs += [(segment, 0.0), (segment, storm)]
    segs.append((segment, 0.0))
    return ShiftSchedule("seasonal", 0.0, segs, epoch_length, "A")


def schedule_b(epoch_length: int = REFERENCE_EPOCH, segment: int = 8) -> ShiftSchedule:
    """Stepped ramp 0 -> moderate -> maximum -> moderate -> 0."""
    storm = max_rate(epoch_length)
    mid = max(1, storm // 10)
    segs = [(segment, r) for r in (0.0, mid, storm, mid, 0.0)]
    return ShiftSchedule("seasonal", 0.0, segs, epoch_length, "B")


SEASONAL_SCHEDULES = {"A": schedule_a, "B": schedule_b}


def seasonal_rate(schedule: ShiftSchedule, epoch: int) -> float:
    """Rate in force during ``epoch``; past the end the last segment persists."""
    if schedule.mode == "constant":
        return schedule.rate_per_epoch
    start = 0
    for n, rate in schedule.segments:
        if epoch < start + n:
            return rate
        start += n
    return schedule.segments[-1][1]


def swap_events_for_epoch(schedule: ShiftSchedule, epoch: int,
                          rng: np.random.Generator):
    """Evenly spaced swaps for one epoch as ``(offset, a, b)`` tuples.

    Offsets are ``k * floor(E / r)`` for ``k = 1 .. floor(r)``, counted in
    presentations from the start of the epoch; an offset of ``E`` lands on
    the first presentation of the next epoch.
    """
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    rate = seasonal_rate(schedule, epoch)
    length = schedule.epoch_length
    if rate > length:
        raise ValueError(f"rate {rate} exceeds epoch length {length}")
    n_events = int(np.floor(rate))
    if n_events == 0:
        return []
    spacing = int(np.floor(length / rate))
    picks = rng.integers(0, len(CLASS_PAIRS), size=n_events)
    return [(k * spacing, *CLASS_PAIRS[p]) for k, p in zip(range(1, n_events + 1), picks)]


# ------------------------------------------------------------------- stream

@dataclass
class SwapEvent:
    presentation_index: int
    epoch: int
    class_a: int
    class_b: int


class DriftStream:
    """Endless stream of ``(image, served label)`` under a shift schedule.

    Each epoch serves ``epoch_length`` samples from a fresh seeded shuffle of
    the dataset (shuffles are concatenated when the epoch is longer than the
    dataset). Swap events are applied before the presentation at their index
    is served.
    """

    def __init__(self, dataset: Dataset, schedule: ShiftSchedule,
                 rng: np.random.Generator):
        self.dataset = dataset
        self.schedule = schedule
        self.rng = rng
        self.permutation = identity_permutation()
        self.presentation_index = 0
        self.event_log: list[SwapEvent] = []
        self._order = np.empty(0, dtype=np.int64)
        self._pending: dict[int, list] = {}

    @property
    def epoch(self) -> int:
        return self.presentation_index // self.schedule.epoch_length

    def _start_epoch(self, epoch: int) -> None:
        length = self.schedule.epoch_length
        m = len(self.dataset)
        chunks = [self.rng.permutation(m) for _ in range(-(-length // m))]
        self._order = np.concatenate(chunks)[:length]
        base = epoch * length
        for offset, a, b in swap_events_for_epoch(self.schedule, epoch, self.rng):
            self._pending.setdefault(base + offset, []).append((epoch, a, b))

    def next_presentation(self):
        """Serve one sample: ``(sample index, image, label, fired events)``."""
        g = self.presentation_index
        length = self.schedule.epoch_length
        if g % length == 0:
            self._start_epoch(g // length)
        fired = []
        for epoch, a, b in self._pending.pop(g, ()):
            self.permutation = swap_pair(self.permutation, a, b)
            event = SwapEvent(g, epoch, a, b)
            self.event_log.append(event)
            fired.append(event)
        idx = int(self._order[g % length])
        label = int(self.permutation[self.dataset.labels[idx]])
        self.presentation_index += 1
        return idx, self.dataset.images[idx], label, fired

    def __iter__(self):
        while True:
            yield self.next_presentation()


def replay_permutation(events) -> np.ndarray:
    """Fold logged swaps over the identity."""
    perm = identity_permutation()
    for e in events:
        perm = swap_pair(perm, e.class_a, e.class_b)
    return perm


def write_event_log(events, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["presentation_index", "epoch", "class_a", "class_b"])
        for e in events:
            w.writerow([e.presentation_index, e.epoch, e.class_a, e.class_b])
