"""Event-stream samples, the native binary sample format, and preprocessing.

Sample file layout (little-endian)::

    offset  size  field
    0       4     magic b"SNNE"
    4       2     version (u16, = 1)
    6       2     label (u16)
    8       4     duration in ms (f32)
    12      4     n_events (u32)
    16      6*n   n_events x (time_ms f32, unit u16), sorted by time

A manifest is a UTF-8 JSON document
``{"name", "split", "n_classes", "n_channels", "samples": [{"file", "label"}]}``
with sample paths relative to the manifest's directory.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

MAGIC = b"SNNE"
VERSION = 1
HEADER = struct.Struct("<4sHHfI")
EVENT_DTYPE = np.dtype([("time", "<f4"), ("unit", "<u2")])
SOURCE_CHANNELS = 700


class FormatError(ValueError):
    """A sample or manifest file does not match the expected layout."""

    def __init__(self, message: str, offset: int | None = None, path=None):
        where = f" at byte {offset}" if offset is not None else ""
        source = f"{path}: " if path is not None else ""
        super().__init__(f"{source}{message}{where}")
        self.offset = offset


@dataclass
class EventSample:
    """One labeled recording as sorted ``(time_ms, unit)`` events."""

    times: np.ndarray
    units: np.ndarray
    label: int
    duration: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float32).reshape(-1)
        self.units = np.asarray(self.units, dtype=np.uint16).reshape(-1)
        self.duration = float(np.float32(self.duration))
        if self.times.shape != self.units.shape:
            raise ValueError("times and units must have the same length")

    @property
    def n_events(self) -> int:
        return int(self.times.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventSample):
            return NotImplemented
        return (self.label == other.label and self.duration == other.duration
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.units, other.units))


@dataclass
class DenseSample:
    """Binary frames ``[T, n_in]`` and a label."""

    frames: np.ndarray
    label: int

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])


def encode_sample(sample: EventSample) -> bytes:
    if sample.n_events and np.any(np.diff(sample.times) < 0):
        raise ValueError("events must be sorted by time")
    events = np.empty(sample.n_events, dtype=EVENT_DTYPE)
    events["time"] = sample.times
    events["unit"] = sample.units
    head = HEADER.pack(MAGIC, VERSION, int(sample.label), sample.duration, sample.n_events)
    return head + events.tobytes()


def decode_sample(blob: bytes, path=None) -> EventSample:
    if len(blob) < HEADER.size:
        raise FormatError("truncated header", len(blob), path)
    magic, version, label, duration, n_events = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0, path)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4, path)
    expected = HEADER.size + n_events * EVENT_DTYPE.itemsize
    if len(blob) < expected:
        raise FormatError(f"truncated payload: {n_events} events need {expected} bytes", len(blob), path)
    if len(blob) > expected:
        raise FormatError("trailing bytes after last event", expected, path)
    events = np.frombuffer(blob, dtype=EVENT_DTYPE, count=n_events, offset=HEADER.size)
    times = events["time"]
    if n_events:
        bad = np.flatnonzero(np.diff(times) < 0)
        if bad.size:
            idx = int(bad[0]) + 1
            raise FormatError(f"event {idx} out of time order", HEADER.size + idx * EVENT_DTYPE.itemsize, path)
        if not np.all(np.isfinite(times)) or times[0] < 0:
            raise FormatError("event time negative or non-finite", HEADER.size, path)
    return EventSample(times.copy(), events["unit"].copy(), label, duration)


def write_sample(sample: EventSample, path: str | Path) -> None:
    Path(path).write_bytes(encode_sample(sample))


def read_sample(path: str | Path) -> EventSample:
    return decode_sample(Path(path).read_bytes(), path)


def bin_spatial(sample: EventSample, factor: int = 6, n_channels: int = SOURCE_CHANNELS) -> EventSample:
    """Merge groups of ``factor`` adjacent channels.

    Unit ``u`` maps to ``min(u // factor, n_channels // factor - 1)``, so the
    trailing partial group folds into the last bin (700 channels -> 116 bins).
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    n_bins = n_channels // factor
    units = np.minimum(sample.units.astype(np.int64) // factor, n_bins - 1)
    return EventSample(sample.times.copy(), units, sample.label, sample.duration)


def n_bins(n_channels: int, factor: int) -> int:
    return n_channels // factor


def subsample_temporal(sample: EventSample, frame_ms: float = 10.0, n_channels: int | None = None) -> DenseSample:
    """Binary OR of events into frames ``[floor(t/frame_ms)]``.

    ``T = ceil(duration / frame_ms)``; an event at exactly ``duration`` lands
    in the last frame.
    """
    if not frame_ms > 0:
        raise ValueError("frame_ms must be > 0")
    width = n_channels if n_channels is not None else (int(sample.units.max()) + 1 if sample.n_events else 0)
    T = int(math.ceil(sample.duration / frame_ms - 1e-9))
    frame_idx = np.floor(sample.times.astype(np.float64) / frame_ms).astype(np.int64)
    if sample.n_events:
        T = max(T, 1)
        frame_idx = np.minimum(frame_idx, T - 1)
    frames = np.zeros((T, width), dtype=np.float64)
    frames[frame_idx, sample.units.astype(np.int64)] = 1.0
    return DenseSample(frames, int(sample.label))


def gen_sparsity_mask(rows: int, cols: int, density: float, seed: int) -> np.ndarray:
    """Fixed random binary map with exactly ``round(rows*cols*density)`` ones."""
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    total = rows * cols
    k = int(math.floor(total * density + 0.5))
    mask = np.zeros(total)
    if k >= total:
        mask[:] = 1.0
    else:
        rng = np.random.default_rng(seed)
        mask[rng.choice(total, size=k, replace=False)] = 1.0
    return mask.reshape(rows, cols)


@dataclass
class DatasetManifest:
    name: str
    split: str
    n_classes: int
    n_channels: int
    samples: list[tuple[str, int]] = field(default_factory=list)
    root: Path = Path(".")

    def __len__(self) -> int:
        return len(self.samples)

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
            samples = [(str(s["file"]), int(s["label"])) for s in doc["samples"]]
            return cls(str(doc["name"]), str(doc["split"]), int(doc["n_classes"]),
                       int(doc["n_channels"]), samples, path.parent)
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise FormatError(f"invalid manifest: {exc}", path=path) from None

    def save(self, path: str | Path) -> None:
        doc = {
            "name": self.name,
            "split": self.split,
            "n_classes": self.n_classes,
            "n_channels": self.n_channels,
            "samples": [{"file": f, "label": lab} for f, lab in self.samples],
        }
        Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")

    def iter_samples(self) -> Iterator[EventSample]:
        for file, label in self.samples:
            sample = read_sample(self.root / file)
            if sample.label != label:
                raise FormatError(f"label {sample.label} in file disagrees with manifest label {label}",
                                  6, self.root / file)
            yield sample

    def validate(self) -> None:
        """Check every referenced file exists, parses and carries a valid label."""
        for sample in self.iter_samples():
            if not 0 <= sample.label < self.n_classes:
                raise FormatError(f"label {sample.label} >= n_classes {self.n_classes}")
            if sample.n_events and int(sample.units.max()) >= self.n_channels:
                raise FormatError(f"unit {int(sample.units.max())} >= n_channels {self.n_channels}")


def load_dense(manifest: DatasetManifest, bin_factor: int = 6, frame_ms: float = 10.0) -> list[DenseSample]:
    """Load, bin and subsample every sample of a manifest."""
    width = n_bins(manifest.n_channels, bin_factor)
    return [subsample_temporal(bin_spatial(s, bin_factor, manifest.n_channels), frame_ms, width)
            for s in manifest.iter_samples()]


def synth_coincidence(n_pairs: int, gap: int, t_total: int, seed: int, out_dir: str | Path,
                      split: str = "train", frame_ms: float = 10.0,
                      negatives: str = "offset", offsets: tuple[int, int] = (3, 6)) -> DatasetManifest:
    """Two-channel task that a single coincidence-detecting neuron solves by delaying channel 0.

    Class 1 puts a channel-0 spike at frame ``t1`` and a channel-1 spike at
    ``t1 + gap``.  Class 0 ("negatives") is one of:

    * ``"coincident"``: both spikes at ``t1``.
    * ``"offset"``: channel 1 at ``t1 + gap + k`` with ``k`` uniform in
      ``offsets`` (inclusive), so no fixed threshold on the interval separates
      the classes without a learned delay.

    Writes ``2 * n_pairs`` sample files under ``out_dir/split`` and the
    manifest ``out_dir/split.json``.
    """
    if negatives not in ("coincident", "offset"):
        raise ValueError(f"unknown negatives mode {negatives!r}")
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    (out_dir / split).mkdir(parents=True, exist_ok=True)
    span = gap + (offsets[1] if negatives == "offset" else 0)
    tail = 3
    last_start = t_total - span - tail
    if last_start < 1:
        raise ValueError(f"t_total={t_total} too short for gap={gap}")
    duration = t_total * frame_ms
    entries = []
    for n in range(n_pairs):
        for label in (0, 1):
            t1 = int(rng.integers(1, last_start + 1))
            if label == 1:
                t2 = t1 + gap
            elif negatives == "coincident":
                t2 = t1
            else:
                t2 = t1 + gap + int(rng.integers(offsets[0], offsets[1] + 1))
            events = sorted([((t1 + 0.5) * frame_ms, 0), ((t2 + 0.5) * frame_ms, 1)])
            times, units = zip(*events)
            name = f"{split}/{n:05d}_{label}.snne"
            write_sample(EventSample(times, units, label, duration), out_dir / name)
            entries.append((name, label))
    manifest = DatasetManifest(f"coincidence-gap{gap}", split, 2, 2, entries, out_dir)
    manifest.save(out_dir / f"{split}.json")
    return manifest
