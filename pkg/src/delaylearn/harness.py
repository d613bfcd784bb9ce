"""Training loop, evaluation, experiment protocols and checkpoints."""

from __future__ import annotations

import csv
import json
import math
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .batched import make_learner
from .config import ConfigError, NetworkConfig, RunConfig
from .data import DatasetManifest, DenseSample, load_dense
from .dynamics import NetworkParams, init_params
from .online import TrainingError, apply_updates, make_optimizer

ABLATIONS = ("sparsity_sweep", "fixed_vs_learnable", "delay_placement", "weights_only_width")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float
    seconds: float
    delay_min: float = math.nan
    delay_max: float = math.nan


@dataclass
class RunMetrics:
    epochs: list[EpochMetrics] = field(default_factory=list)
    wall_time: float = 0.0
    delay_hist: dict[str, list[int]] = field(default_factory=dict)
    param_stats: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_csv(self, path: str | Path) -> None:
        """One row per epoch and split: ``epoch, split, loss, accuracy, seconds``."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "split", "loss", "accuracy", "seconds"])
            for m in self.epochs:
                writer.writerow([m.epoch, "train", f"{m.train_loss:.6f}", f"{m.train_acc:.6f}", f"{m.seconds:.3f}"])
                if not math.isnan(m.test_acc):
                    writer.writerow([m.epoch, "test", f"{m.test_loss:.6f}", f"{m.test_acc:.6f}", f"{m.seconds:.3f}"])


def learnable_names(run: RunConfig) -> tuple[str, ...]:
    names = []
    if run.learn_weights:
        names += ["w_in", "w_out"] + (["w_rec"] if run.net.recurrent else [])
    if run.learn_delays_in and run.net.delay_in != "none":
        names.append("d_in")
    if run.learn_delays_rec and run.net.recurrent and run.net.delay_rec != "none":
        names.append("d_rec")
    return tuple(names)


def as_dense(data, run: RunConfig) -> list[DenseSample]:
    """Accept a manifest, a manifest path or an already loaded sample list."""
    if data is None:
        return []
    if isinstance(data, (str, Path)):
        data = DatasetManifest.load(data)
    if isinstance(data, DatasetManifest):
        return load_dense(data, run.bin_factor, run.frame_ms)
    return list(data)


def pad_batch(samples: Sequence[DenseSample], n_in: int):
    """Stack samples into ``[B, T_max, n_in]`` with their lengths and labels."""
    lengths = np.array([s.n_frames for s in samples])
    frames = np.zeros((len(samples), int(lengths.max(initial=0)), n_in))
    for b, s in enumerate(samples):
        if s.frames.shape[1] != n_in:
            raise ConfigError(f"sample has {s.frames.shape[1]} channels, network expects {n_in}")
        frames[b, : s.n_frames] = s.frames
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return frames, labels, lengths


def _batches(samples, batch_size, order=None):
    order = np.arange(len(samples)) if order is None else order
    for start in range(0, len(order), batch_size):
        yield [samples[i] for i in order[start:start + batch_size]]


def _forward_scores(params: NetworkParams, cfg: NetworkConfig, samples, rule: str, batch_size: int, engine: str):
    learner = make_learner(params, cfg, learn=(), engine=engine)
    loss, correct = 0.0, 0
    for batch in _batches(samples, batch_size):
        frames, labels, lengths = pad_batch(batch, cfg.n_in)
        result = learner.run_batch(frames, labels, lengths)
        loss += float(result.loss.sum())
        correct += int((result.scores[rule].argmax(axis=1) == labels).sum())
    n = max(len(samples), 1)
    return loss / n, correct / n


def evaluate(params: NetworkParams, data, run: RunConfig | NetworkConfig, rule: str | None = None,
             batch_size: int = 64) -> float:
    """Top-1 accuracy; the prediction is ``argmax_k sum_t softmax(y_t)_k`` by default."""
    if isinstance(run, NetworkConfig):
        run = RunConfig(net=run)
    samples = as_dense(data, run)
    if not samples:
        return math.nan
    return _forward_scores(params, run.net, samples, rule or run.predict, batch_size, run.engine)[1]


def confidence_interval(values) -> tuple[float, float]:
    """Mean and 95% half-width ``t_{0.975, n-1} * s / sqrt(n)``."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 2:
        raise ValueError("a confidence interval needs at least two values")
    s = values.std(ddof=1)
    return float(values.mean()), float(stats.t.ppf(0.975, n - 1) * s / math.sqrt(n))


def delay_histogram(params: NetworkParams, cfg: NetworkConfig) -> dict[str, list[int]]:
    """Counts of rounded delay values ``-(d_max-1)/2 .. +(d_max-1)/2`` per delay group."""
    out = {}
    half = cfg.d_half
    for name, mask in (("d_in", params.mask_in), ("d_rec", params.mask_rec)):
        d = getattr(params, name)
        if d is None:
            continue
        values = d[mask > 0] if d.ndim == 2 else d
        counts, _ = np.histogram(values, bins=cfg.d_max, range=(-half - 0.5, half + 0.5))
        out[name] = counts.tolist()
    return out


def parameter_stats(params: NetworkParams) -> dict[str, dict[str, float]]:
    out = {}
    for name, arr in params.learnable().items():
        out[name] = {"mean": float(arr.mean()), "std": float(arr.std()),
                     "min": float(arr.min()), "max": float(arr.max())}
    return out


def _delay_range(params: NetworkParams) -> tuple[float, float]:
    ds = [d for d in (params.d_in, params.d_rec) if d is not None]
    if not ds:
        return math.nan, math.nan
    return float(min(d.min() for d in ds)), float(max(d.max() for d in ds))


def train(run: RunConfig, train_data, test_data=None, params: NetworkParams | None = None,
          resume: "Checkpoint | None" = None, checkpoint_path: str | Path | None = None,
          on_epoch: Callable[[EpochMetrics], None] | None = None):
    """Online training for ``run.epochs`` epochs.

    Each batch streams through the network while eligibility traces and
    gradients accumulate; the optimizer steps once per batch.  The epoch-``e``
    shuffle depends only on ``(seed, e)``, so a run resumed from a checkpoint
    continues exactly like the uninterrupted one.

    Args:
        train_data, test_data: manifests, manifest paths or ``DenseSample`` lists.
        params: initial parameters (default: ``init_params(run.net)``).
        resume: checkpoint to continue from; overrides ``params``.
        checkpoint_path: written after every completed epoch.  On a numerical
            failure the last completed epoch's checkpoint is left in place.

    Returns:
        ``(params, RunMetrics)``.
    """
    cfg = run.net
    train_set = as_dense(train_data, run)
    test_set = as_dense(test_data, run)
    metrics = RunMetrics()
    optimizer = make_optimizer(cfg)
    start = 0
    if resume is not None:
        params = resume.params.copy()
        optimizer.load_state_arrays(resume.optimizer_state)
        start = resume.epoch
        metrics.epochs = list(resume.metrics)
    elif params is None:
        params = init_params(cfg)
    else:
        params = params.copy()
    params.check(cfg)
    learn = learnable_names(run)
    learner = make_learner(params, cfg, learn, run.engine)
    t_run = time.perf_counter()
    for epoch in range(start, run.epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_set))
        loss_sum, correct = 0.0, 0
        for batch in _batches(train_set, run.batch_size, order):
            frames, labels, lengths = pad_batch(batch, cfg.n_in)
            result = learner.run_batch(frames, labels, lengths)
            if not np.all(np.isfinite(result.loss)):
                raise TrainingError(f"non-finite loss in epoch {epoch}")
            loss_sum += float(result.loss.sum())
            correct += int((result.scores[run.predict].argmax(axis=1) == labels).sum())
            if learn:
                apply_updates(params, learner.elig, cfg, optimizer, learn)
            else:
                learner.elig.zero_grads()
        n = max(len(train_set), 1)
        test_loss, test_acc = (_forward_scores(params, cfg, test_set, run.predict, 64, run.engine)
                               if test_set else (math.nan, math.nan))
        d_lo, d_hi = _delay_range(params)
        m = EpochMetrics(epoch, loss_sum / n, correct / n, test_loss, test_acc,
                         time.perf_counter() - t0, d_lo, d_hi)
        metrics.epochs.append(m)
        if checkpoint_path is not None:
            checkpoint_save(checkpoint_path, params, run, optimizer, epoch + 1, metrics.epochs)
        if on_epoch is not None:
            on_epoch(m)
    metrics.wall_time = time.perf_counter() - t_run
    metrics.delay_hist = delay_histogram(params, cfg)
    metrics.param_stats = parameter_stats(params)
    return params, metrics


# ---------------------------------------------------------------- ablations

def ablation_conditions(protocol: str, base: RunConfig, **grid) -> dict[str, dict]:
    """Named config overrides for one protocol."""
    if protocol == "sparsity_sweep":
        densities = grid.get("densities", (1.0, 0.5, 0.2))
        modes = grid.get("modes", ("axonal", "synaptic"))
        return {f"{m}_density{d:g}": {"delay_in": m, "sparsity": round(1.0 - d, 12)}
                for m in modes for d in densities}
    if protocol == "fixed_vs_learnable":
        return {
            "learnable": {"learn_delays_in": True},
            "fixed_random": {"learn_delays_in": False},
            "fixed_zero": {"learn_delays_in": False, "delay_init": "zero"},
        }
    if protocol == "delay_placement":
        out = {}
        for mode in grid.get("modes", ("synaptic", "axonal")):
            out[f"input_{mode}"] = {"recurrent": True, "delay_in": mode, "delay_rec": "none"}
            out[f"recurrent_{mode}"] = {"recurrent": True, "delay_in": "none", "delay_rec": mode}
            out[f"both_{mode}"] = {"recurrent": True, "delay_in": mode, "delay_rec": mode}
        return out
    if protocol == "weights_only_width":
        widths = grid.get("widths", (16, 32, 64, 128))
        return {f"width{w}": {"n_hidden": int(w), "delay_in": "none", "delay_rec": "none",
                              "learn_delays_in": False, "learn_delays_rec": False} for w in widths}
    raise ConfigError(f"unknown ablation protocol {protocol!r}; expected one of {', '.join(ABLATIONS)}")


@dataclass
class AblationResult:
    protocol: str
    rows: list[dict]  # protocol, condition, seed, accuracy
    params: dict[tuple[str, int], NetworkParams] = field(default_factory=dict)

    def summary(self) -> list[dict]:
        out = []
        for cond in dict.fromkeys(r["condition"] for r in self.rows):
            acc = [r["accuracy"] for r in self.rows if r["condition"] == cond]
            mean, ci = confidence_interval(acc) if len(acc) > 1 else (float(acc[0]), math.nan)
            out.append({"condition": cond, "mean": mean, "ci": ci, "n": len(acc)})
        return out

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["protocol", "condition", "seed", "accuracy"])
            writer.writeheader()
            writer.writerows(self.rows)

    def summary_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["condition", "mean", "ci", "n"])
            writer.writeheader()
            writer.writerows(self.summary())


def run_ablation(protocol: str, base: RunConfig, train_data, test_data, seeds: Sequence[int] | None = None,
                 keep_params: bool = False, **grid) -> AblationResult:
    """Train and evaluate every condition of ``protocol`` for each seed.

    Conditions share seeds, so condition ``c`` with seed ``s`` starts from the
    same random state as every other condition with seed ``s``.
    """
    conditions = ablation_conditions(protocol, base, **grid)
    seeds = list(range(base.repeats)) if seeds is None else list(seeds)
    train_set, test_set = as_dense(train_data, base), as_dense(test_data, base)
    result = AblationResult(protocol, [])
    for name, overrides in conditions.items():
        for seed in seeds:
            run = base.replace(**overrides, seed=seed)
            params, _ = train(run, train_set)
            acc = evaluate(params, test_set, run)
            result.rows.append({"protocol": protocol, "condition": name, "seed": seed, "accuracy": acc})
            if keep_params:
                result.params[(name, seed)] = params
    return result


# ---------------------------------------------------------------- checkpoints
#
# Layout (little-endian):
#   0   8  magic b"DLYCKPT\0"
#   8   2  version u16
#   10  4  header length n (u32)
#   14  n  UTF-8 JSON header: {"config", "epoch", "metrics", "arrays": [{"name", "shape", "offset"}]}
#   ..     float64 array data, offsets relative to the end of the header

CKPT_MAGIC = b"DLYCKPT\0"
CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<8sHI")


class CheckpointError(ValueError):
    """Unreadable, corrupt or incompatible checkpoint."""


@dataclass
class Checkpoint:
    params: NetworkParams
    run: RunConfig
    optimizer_state: dict[str, np.ndarray]
    epoch: int
    metrics: list[EpochMetrics]


def checkpoint_save(path: str | Path, params: NetworkParams, run: RunConfig, optimizer=None,
                    epoch: int = 0, metrics: Sequence[EpochMetrics] = ()) -> None:
    """Write atomically (temporary file, then rename)."""
    arrays = {f"param.{k}": v for k, v in params.arrays().items()}
    if optimizer is not None:
        arrays.update({f"opt.{k}": v for k, v in optimizer.state_arrays().items()})
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(data)
        offset += len(data)
    header = json.dumps({
        "config": run.flat(),
        "epoch": int(epoch),
        "metrics": [asdict(m) for m in metrics],
        "arrays": entries,
    }).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)


def checkpoint_load(path: str | Path, expect: RunConfig | NetworkConfig | None = None) -> Checkpoint:
    """Read a checkpoint; with ``expect`` the stored arrays must fit that config."""
    blob = Path(path).read_bytes()
    if len(blob) < _CKPT_HEAD.size:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    magic, version, n = _CKPT_HEAD.unpack_from(blob)
    if magic != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
    try:
        header = json.loads(blob[_CKPT_HEAD.size:_CKPT_HEAD.size + n].decode("utf-8"))
        base = _CKPT_HEAD.size + n
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            start = base + entry["offset"]
            if start + 8 * count > len(blob):
                raise CheckpointError(f"{path}: array {entry['name']} truncated")
            arrays[entry["name"]] = np.frombuffer(blob, "<f8", count, start).reshape(shape).copy()
        from .config import parse_overrides

        flat = {k: ("true" if v is True else "false" if v is False else str(v)) for k, v in header["config"].items()}
        run = RunConfig().replace(**parse_overrides(flat))
        metrics = [EpochMetrics(**m) for m in header["metrics"]]
        epoch = int(header["epoch"])
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    try:
        params = NetworkParams(**{k[6:]: v for k, v in arrays.items() if k.startswith("param.")})
        params.check(run.net)
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: stored arrays inconsistent with stored config: {exc}") from None
    if expect is not None:
        net = expect.net if isinstance(expect, RunConfig) else expect
        try:
            params.check(net)
        except ValueError as exc:
            raise CheckpointError(f"{path}: checkpoint does not fit the config: {exc}") from None
    opt = {k[4:]: v for k, v in arrays.items() if k.startswith("opt.")}
    return Checkpoint(params, run, opt, epoch, metrics)
