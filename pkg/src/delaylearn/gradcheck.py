"""Compare the online gradients with the reference oracles on random inputs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, NetworkConfig
from .dynamics import init_params
from .online import OnlineLearner
from .oracle import GradReport, bptt_grad, compare_grads, finite_diff_grad, smoothed_forward

WEIGHTS = ("w_in", "w_rec", "w_out")
DELAYS = ("d_in", "d_rec")

# tolerances for a pass
WEIGHT_MAX_REL = 1e-4
WEIGHT_COSINE = 0.9999
DELAY_COSINE = {"synaptic": 0.99, "axonal": 0.95}
RECURRENT_COSINE = 0.8
MAX_SYNAPSES = 256
MAX_STEPS = 100

SMALL_DEFAULTS = dict(n_in=6, n_hidden=4, n_out=3, sigma=2.0, d_max=9, tau_m=30.0, w_scale=3.0)


@dataclass
class SeedResult:
    seed: int
    bptt: GradReport
    fd: GradReport | None
    hidden_spikes: int


@dataclass
class GradcheckResult:
    cfg: NetworkConfig
    seeds: list[SeedResult] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def worst(self, report: str, name: str, stat: str) -> float:
        vals = []
        for s in self.seeds:
            rep = getattr(s, report)
            if rep is not None and name in rep.groups:
                vals.append(getattr(rep.groups[name], stat))
        if not vals:
            return math.nan
        return min(vals) if stat == "cosine" else max(vals)

    def summary_rows(self) -> list[dict]:
        rows = []
        for s in self.seeds:
            for kind in ("bptt", "fd"):
                rep = getattr(s, kind)
                if rep is None:
                    continue
                for name, g in rep.groups.items():
                    rows.append({"seed": s.seed, "oracle": kind, "group": name, "cosine": g.cosine,
                                 "max_rel": g.max_rel, "mean_rel": g.mean_rel, "count": g.count,
                                 "nonsmooth": g.nonsmooth})
        return rows

    def write(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        if self.seeds:
            self.seeds[0].bptt.to_csv(out_dir / "gradcheck.csv")
            if self.seeds[0].fd is not None:
                self.seeds[0].fd.to_csv(out_dir / "gradcheck_fd.csv")
        with open(out_dir / "gradcheck_summary.csv", "w", newline="", encoding="utf-8") as fh:
            fields = ["seed", "oracle", "group", "cosine", "max_rel", "mean_rel", "count", "nonsmooth"]
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(self.summary_rows())


def random_input(seed: int, steps: int, n_in: int, rate: float = 0.3) -> np.ndarray:
    return (np.random.default_rng([seed, 1]).random((steps, n_in)) < rate).astype(float)


def check_small(cfg: NetworkConfig, steps: int) -> None:
    synapses = cfg.n_hidden * (cfg.n_in + cfg.n_out + (cfg.n_hidden if cfg.recurrent else 0))
    if synapses > MAX_SYNAPSES or steps > MAX_STEPS:
        raise ConfigError(f"gradcheck is limited to {MAX_SYNAPSES} synapses and {MAX_STEPS} steps "
                          f"(got {synapses} synapses, {steps} steps)")


def run_gradcheck(cfg: NetworkConfig, seeds=range(20), steps: int = 25, h: float = 1e-3,
                  rate: float = 0.3, trace_decay: float | None = None) -> GradcheckResult:
    """Online gradients (kernel-smoothed reads) against reverse mode and finite differences.

    Pass criteria:

    * feedforward, every seed: weight gradients within ``WEIGHT_MAX_REL`` relative error
      and ``WEIGHT_COSINE`` cosine of reverse mode;
    * recurrent: the median over seeds of each group's cosine with reverse
      mode at least ``RECURRENT_COSINE`` (the online rule is an approximation
      there, so single seeds may fall lower);
    * delays: cosine with central differences at least ``DELAY_COSINE[mode]``
      (feedforward only, since recurrent delay gradients are approximate).
    """
    check_small(cfg, steps)
    result = GradcheckResult(cfg)
    for seed in seeds:
        params = init_params(cfg, seed=seed)
        x = random_input(seed, steps, cfg.n_in, rate)
        label = seed % cfg.n_out
        learner = OnlineLearner(params, cfg, read="smoothed", trace_decay=trace_decay)
        learner.run_batch(x, [label])
        online = learner.elig.grads
        _, tape = smoothed_forward(x, params, cfg, label=label)
        exact = bptt_grad(tape, params, cfg)
        bptt = compare_grads(online, exact, params)
        fd_report = None
        delays = [n for n in DELAYS if n in online]
        if delays:
            fd, smooth = finite_diff_grad(x, params, cfg, delays, h=h, label=label)
            fd_report = compare_grads(online, fd, params, names=delays, smooth=smooth)
        result.seeds.append(SeedResult(seed, bptt, fd_report, int(tape.z.sum())))
        if not cfg.recurrent:
            _judge(result, cfg, seed, bptt, fd_report)
    if cfg.recurrent and result.seeds:
        for name in result.seeds[0].bptt.groups:
            median = float(np.median([s.bptt.groups[name].cosine for s in result.seeds]))
            if median < RECURRENT_COSINE:
                result.failures.append(f"{name}: median cosine {median:.4f} < {RECURRENT_COSINE}")
    return result


def _judge(result, cfg, seed, bptt, fd) -> None:
    for name in WEIGHTS:
        g = bptt.groups.get(name)
        if g is None:
            continue
        if g.max_rel > WEIGHT_MAX_REL or g.cosine < WEIGHT_COSINE:
            result.failures.append(f"seed {seed}: {name} max rel {g.max_rel:.2e}, cosine {g.cosine:.6f}")
    if fd is not None:
        for name, g in fd.groups.items():
            threshold = DELAY_COSINE[cfg.delay_in if name == "d_in" else cfg.delay_rec]
            if g.cosine < threshold:
                result.failures.append(f"seed {seed}: {name} cosine {g.cosine:.4f} < {threshold}")
