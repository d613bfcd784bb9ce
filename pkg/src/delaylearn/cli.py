"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure (including a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, dump_run_config, load_run_config
from .data import DatasetManifest, FormatError, n_bins, synth_coincidence
from .dynamics import init_params
from .footprint import footprint_totals, memory_footprint
from .gradcheck import SMALL_DEFAULTS, run_gradcheck
from .harness import (ABLATIONS, CheckpointError, checkpoint_load, checkpoint_save, delay_histogram, evaluate,
                      learnable_names, parameter_stats, run_ablation, train)
from .online import TrainingError

log = logging.getLogger("delaylearn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key=value config file")
    p.add_argument("--seed", type=int, help="shortcut for seed=N")
    p.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides")


def _resolve(args, base: RunConfig | None = None) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_run_config(args.config, overrides, base)


def _prepare_out(out: Path | None, run: RunConfig | None = None) -> Path | None:
    if out is None:
        return None
    out.mkdir(parents=True, exist_ok=True)
    if run is not None:
        (out / "config.txt").write_text(dump_run_config(run), encoding="utf-8")
    return out


def _load_manifest(path: str, run: RunConfig, what: str) -> DatasetManifest:
    if not path:
        raise UsageError(f"{what} is not set (use {what}=PATH)")
    manifest = DatasetManifest.load(path)
    manifest.validate()
    width = n_bins(manifest.n_channels, run.bin_factor)
    if width != run.net.n_in:
        raise ConfigError(f"{path}: {manifest.n_channels} channels binned by {run.bin_factor} give {width} "
                          f"inputs, config has n_in={run.net.n_in}")
    return manifest


def cmd_train(args) -> int:
    run = _resolve(args)
    resume = checkpoint_load(args.resume, run) if args.resume else None
    train_m = _load_manifest(run.train_manifest, run, "train_manifest")
    test_m = _load_manifest(run.test_manifest, run, "test_manifest") if run.test_manifest else None
    out = _prepare_out(args.out, run)

    def report(m):
        log.info("epoch %d  train loss %.4f acc %.4f  test acc %.4f  %.1fs",
                 m.epoch, m.train_loss, m.train_acc, m.test_acc, m.seconds)

    params, metrics = train(run, train_m, test_m, resume=resume, checkpoint_path=out / "checkpoint.ckpt",
                            on_epoch=report)
    metrics.to_csv(out / "metrics.csv")
    summary = {
        "final_test_acc": metrics.epochs[-1].test_acc if metrics.epochs else None,
        "final_train_acc": metrics.epochs[-1].train_acc if metrics.epochs else None,
        "wall_time": metrics.wall_time,
        "delay_hist": metrics.delay_hist,
        "param_stats": metrics.param_stats,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    if not metrics.epochs:
        checkpoint_save(out / "checkpoint.ckpt", params, run)
    print(f"trained {len(metrics.epochs)} epochs; outputs in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = checkpoint_load(args.checkpoint)
    run = ckpt.run
    manifest = _load_manifest(str(args.manifest) if args.manifest else run.test_manifest, run, "test_manifest")
    acc = evaluate(ckpt.params, manifest, run, rule=args.rule)
    out = _prepare_out(args.out, run)
    if out is not None:
        doc = {"checkpoint": str(args.checkpoint), "manifest": str(args.manifest or run.test_manifest),
               "rule": args.rule or run.predict, "accuracy": acc, "samples": len(manifest)}
        (out / "eval.json").write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    print(f"accuracy {acc:.4f} on {len(manifest)} samples")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    run = _resolve(args, RunConfig().replace(**SMALL_DEFAULTS))
    cfg = run.net
    decay = 0.0 if args.corrupt_trace else None
    result = run_gradcheck(cfg, seeds=range(args.seeds), steps=args.steps, h=args.h, trace_decay=decay)
    out = _prepare_out(args.out, run)
    if out is not None:
        result.write(out)
    for name in ("w_in", "w_rec", "w_out", "d_in", "d_rec"):
        cos = result.worst("bptt", name, "cosine")
        if np.isnan(cos):
            continue
        line = f"{name:6s} vs reverse mode: min cosine {cos:.6f}, max rel err {result.worst('bptt', name, 'max_rel'):.2e}"
        fd_cos = result.worst("fd", name, "cosine")
        if not np.isnan(fd_cos):
            line += f"; vs finite differences: min cosine {fd_cos:.6f}"
        print(line)
    for failure in result.failures:
        print(f"FAIL {failure}")
    print("gradcheck PASS" if result.passed else "gradcheck FAIL")
    return EXIT_OK if result.passed else EXIT_NUMERIC


def cmd_ablate(args) -> int:
    run = _resolve(args)
    train_m = _load_manifest(run.train_manifest, run, "train_manifest")
    test_m = _load_manifest(run.test_manifest, run, "test_manifest")
    out = _prepare_out(args.out, run)
    seeds = range(args.seeds) if args.seeds is not None else None
    result = run_ablation(args.protocol, run, train_m, test_m, seeds)
    result.to_csv(out / "ablation.csv")
    result.summary_csv(out / "ablation_summary.csv")
    for row in result.summary():
        print(f"{row['condition']:24s} {row['mean']:.4f} ± {row['ci']:.4f} (n={row['n']})")
    return EXIT_OK


def cmd_synth(args) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    for split, seed, pairs in (("train", args.seed, args.pairs), ("test", args.seed + 1, args.test_pairs)):
        synth_coincidence(pairs, args.gap, args.t_total, seed, out, split, args.frame_ms, args.negatives)
    print(f"wrote {out / 'train.json'} and {out / 'test.json'}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    if args.checkpoint is not None:
        ckpt = checkpoint_load(args.checkpoint)
        run, params = ckpt.run, ckpt.params
        print(f"checkpoint {args.checkpoint}: epoch {ckpt.epoch}")
    else:
        run = _resolve(args)
        params = init_params(run.net)
        print("freshly initialized parameters")
    cfg = run.net
    print(f"network: {cfg.n_in} inputs, {cfg.n_hidden} hidden ({'recurrent' if cfg.recurrent else 'feedforward'}), "
          f"{cfg.n_out} outputs; delays in={cfg.delay_in} rec={cfg.delay_rec}; sparsity {cfg.sparsity:g}")
    for name, st in parameter_stats(params).items():
        print(f"  {name:6s} mean {st['mean']:+.4f} std {st['std']:.4f} range [{st['min']:+.4f}, {st['max']:+.4f}]")
    for name, counts in delay_histogram(params, cfg).items():
        print(f"  {name} histogram (delay -{cfg.d_half}..+{cfg.d_half}): {' '.join(map(str, counts))}")
    rows = memory_footprint(params, cfg, args.q_w, args.q_d, args.q_v, learnable_names(run))
    print(f"memory (q_w={args.q_w}, q_d={args.q_d}, q_v={args.q_v} bits):")
    for r in rows:
        print(f"  {r.category:8s} {r.name:16s} {r.count:8d} x {r.bits:2d} bit = {r.bytes:8d} bytes")
    totals = footprint_totals(rows)
    print(f"  storage {totals['storage']} bytes, learning {totals['learning']} bytes, total {totals['total']} bytes")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="delaylearn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a network")
    _add_config_args(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="top-1 accuracy of a checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--manifest", type=Path, help="default: the test manifest of the checkpoint's config")
    p.add_argument("--rule", choices=("sum_softmax", "final", "max"))
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="compare online gradients with the oracles")
    _add_config_args(p)
    p.add_argument("--out", type=Path)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--steps", type=int, default=25)
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--corrupt-trace", action="store_true",
                   help="test hook: drop the eligibility recursion memory (must fail)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="run an ablation protocol")
    _add_config_args(p)
    p.add_argument("--protocol", choices=ABLATIONS, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seeds", type=int, help="number of shared seeds (default: repeats)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="write the two-channel coincidence task")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--gap", type=int, default=5)
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--test-pairs", type=int, default=50)
    p.add_argument("--t-total", type=int, default=60)
    p.add_argument("--frame-ms", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--negatives", choices=("offset", "coincident"), default="offset")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inspect", help="parameter statistics and memory footprint")
    p.add_argument("checkpoint", type=Path, nargs="?")
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="key=value")
    p.add_argument("--q-w", type=int, default=8)
    p.add_argument("--q-d", type=int, default=5)
    p.add_argument("--q-v", type=int, default=16)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    # overrides may follow options such as ``--seed``, which argparse leaves unparsed
    args, extra = parser.parse_known_args(argv)
    if extra:
        if not hasattr(args, "overrides") or not all("=" in e and not e.startswith("-") for e in extra):
            parser.error(f"unrecognized arguments: {' '.join(extra)}")
        args.overrides = list(args.overrides) + extra
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, CheckpointError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
