"""Convert an HDF5 spike dataset (SHD/SSC layout) into native sample files.

The HDF5 file holds ``spikes/times`` (seconds) and ``spikes/units`` as
per-sample ragged arrays plus a ``labels`` vector.  Writes one ``.snne`` file
per sample under ``OUT/SPLIT/`` and the manifest ``OUT/SPLIT.json``.

Usage::

    python tools/convert_hdf5.py shd_train.h5 data/shd --split train --name shd
"""

from __future__ import annotations

import argparse
import math
from pathlib import Path

import h5py
import numpy as np

from delaylearn.data import SOURCE_CHANNELS, DatasetManifest, EventSample, write_sample


def convert(src: Path, out: Path, split: str, name: str, n_classes: int | None,
            duration_ms: float | None, limit: int | None = None) -> DatasetManifest:
    (out / split).mkdir(parents=True, exist_ok=True)
    entries = []
    with h5py.File(src, "r") as f:
        times, units = f["spikes"]["times"], f["spikes"]["units"]
        labels = np.asarray(f["labels"], dtype=np.int64)
        count = len(labels) if limit is None else min(limit, len(labels))
        for k in range(count):
            t_ms = np.asarray(times[k], dtype=np.float64) * 1000.0
            order = np.argsort(t_ms, kind="stable")
            t_ms, u = t_ms[order], np.asarray(units[k])[order]
            dur = duration_ms if duration_ms is not None else (math.ceil(t_ms[-1]) if t_ms.size else 0.0)
            rel = f"{split}/{k:06d}.snne"
            write_sample(EventSample(t_ms, u, int(labels[k]), dur), out / rel)
            entries.append((rel, int(labels[k])))
    n_classes = n_classes if n_classes is not None else int(labels.max()) + 1
    manifest = DatasetManifest(name, split, n_classes, SOURCE_CHANNELS, entries, out)
    manifest.save(out / f"{split}.json")
    return manifest


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("src", type=Path)
    p.add_argument("out", type=Path)
    p.add_argument("--split", default="train")
    p.add_argument("--name", default="shd")
    p.add_argument("--n-classes", type=int)
    p.add_argument("--duration-ms", type=float, help="fixed duration (default: last event time)")
    p.add_argument("--limit", type=int, help="convert only the first N samples")
    args = p.parse_args(argv)
    m = convert(args.src, args.out, args.split, args.name, args.n_classes, args.duration_ms, args.limit)
    print(f"wrote {len(m)} samples and {args.out / (args.split + '.json')}")


if __name__ == "__main__":
    main()
