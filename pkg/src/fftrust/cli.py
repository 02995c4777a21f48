"""Command line entry point: ``generate``, ``train``, ``bench`` and ``report``.

A JSON config file (``--config``) is authoritative; explicit flags override
it.  Output goes to ``--out``, else ``$FFTRUST_OUTPUT_DIR``, else
``./fftrust_out``.

Exit codes: 0 success, 2 config error, 3 data error, 4 runtime failure.
"""

import argparse
import json
import os
import sys
from dataclasses import fields

from .config import TrainConfig, from_dict, load_config
from .data import DOMAIN_NAMES, default_domains, generate_benchmark, write_dataset
from .exceptions import ConfigError, DataError
from .harness import (
    ResultCache,
    ablation_grid,
    ablation_summary,
    output_dir,
    resume,
    summarize,
    table,
    train,
    train_seed,
    write_table,
    run_benchmark,
)
from .noise import build_matrix, inject

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

_SKIP = {"noise", "seeds"}
_FLOAT_OR_NONE = {"lambda_ce", "lambda_im", "lambda_elr", "m_elr", "lambda_f", "m_f", "warmup_start", "warmup_end"}


def _csv(kind):
    def parse(text):
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


def _add_config_flags(p):
    p.add_argument("--config", help="JSON config file (authoritative; flags override it)")
    p.add_argument("--out", help="output directory (default: $FFTRUST_OUTPUT_DIR or ./fftrust_out)")
    defaults = TrainConfig()
    for f in fields(TrainConfig):
        if f.name in _SKIP:
            continue
        flag = "--" + f.name.replace("_", "-")
        value = getattr(defaults, f.name)
        if isinstance(value, bool):
            p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        elif f.name in _FLOAT_OR_NONE or isinstance(value, float):
            p.add_argument(flag, dest=f.name, type=float, default=None)
        elif isinstance(value, int):
            p.add_argument(flag, dest=f.name, type=int, default=None)
        else:
            p.add_argument(flag, dest=f.name, default=None)
    p.add_argument("--noise-type", choices=("none", "sym", "asym"))
    p.add_argument("--noise-rate", type=float)
    p.add_argument("--seeds", type=_csv(int), help="comma-separated seed list")


def _overrides(args):
    out = {f.name: getattr(args, f.name) for f in fields(TrainConfig) if f.name not in _SKIP}
    noise = {"type": args.noise_type, "rate": args.noise_rate}
    out["noise"] = {k: v for k, v in noise.items() if v is not None}
    if args.noise_type == "none" and args.noise_rate is None:
        out["noise"]["rate"] = 0.0
    out["seeds"] = args.seeds
    return out


def build_config(args):
    overrides = _overrides(args)
    if args.config:
        return load_config(args.config, overrides)
    return from_dict({k: v for k, v in overrides.items() if v is not None and v != {}})


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)


def cmd_generate(args):
    cfg = build_config(args)
    out = output_dir(args.out)
    path = args.file or os.path.join(out, "dataset.nldg")
    domains = generate_benchmark(cfg.dims, cfg.n_seq, cfg.data_seed, phase_spread=cfg.phase_spread)
    records = [r for d in DOMAIN_NAMES for r in domains.get(d, [])]
    meta = {"seed": cfg.data_seed, "n_seq": cfg.n_seq, "phase_spread": cfg.phase_spread,
            "domains": [spec.to_dict() for spec in default_domains()], "noise": {"type": "none", "rate": 0.0}}
    if cfg.noise.type != "none":
        matrix = build_matrix(cfg.noise.type, cfg.n_classes, cfg.noise.rate, cfg.noise.adjacency)
        for r in records:
            noisy, _ = inject(r.y_clean, matrix, [args.noise_seed, r.sample_id])
            r.set_noisy(noisy)
        meta["noise"] = {"type": cfg.noise.type, "rate": cfg.noise.rate, "seed": args.noise_seed}
    write_dataset(records, path, cfg.dims, meta)
    print(f"wrote {len(records)} sequences to {path}")


def cmd_train(args):
    cfg = build_config(args)
    out = output_dir(args.out)
    if args.resume:
        result = resume(args.resume, cfg, out)
        report = summarize(cfg, [result])
        _dump(report.to_dict(), os.path.join(out, f"run_{cfg.target_domain}.json"))
    elif args.stop_at is not None:
        ckpt = args.checkpoint or os.path.join(out, "checkpoint.ffck")
        seed = cfg.seeds[0]
        result = train_seed(cfg, seed, out, stop_at=args.stop_at, checkpoint=ckpt)
        if result is None:
            print(f"stopped after epoch {args.stop_at}; checkpoint at {ckpt}")
            return
        report = summarize(cfg, [result])
    else:
        report = train(cfg, out)
    print(f"target {report.target}: ACC {report.acc_mean:.4f} ± {report.acc_std:.4f}  "
          f"MF1 {report.mf1_mean:.4f} ± {report.mf1_std:.4f}")


def cmd_bench(args):
    cfg = build_config(args)
    out = output_dir(args.out)
    cache = ResultCache(os.path.join(out, "cells"))
    targets = args.targets or list(DOMAIN_NAMES)
    if args.ablation:
        rows = ablation_grid(cfg, targets, cache=cache, workers=args.workers,
                             noise_type=args.noise_types[0], rate=args.rates[-1])
        summary = ablation_summary(rows)
        _dump({"rows": rows, "summary": summary}, os.path.join(out, "ablation.json"))
        for r in summary["rows"]:
            print(f"time_elr={r['time_elr']:d} fourier_elr={r['fourier_elr']:d} ff_cdr={r['ff_cdr']:d}  "
                  f"ACC {r['acc']:.4f}  MF1 {r['mf1']:.4f}")
        if summary["exceptions"]:
            print(f"{len(summary['exceptions'])} single-module row(s) beat the all-on row")
        return
    cells = run_benchmark(cfg, args.noise_types, args.rates, targets, cache=cache, workers=args.workers)
    _dump({"cells": cells}, os.path.join(out, "cells.json"))
    tab = table(cells)
    write_table(tab, os.path.join(out, "table.json"), os.path.join(out, "table.csv"))
    print(f"{len(cells)} cells written to {out}")


def cmd_report(args):
    cells = []
    for path in args.inputs:
        try:
            with open(path) as fh:
                cells += json.load(fh)["cells"]
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"{path}: not a benchmark cell file ({exc})") from exc
    out = output_dir(args.out)
    tab = table(cells)
    write_table(tab, os.path.join(out, "table.json"), os.path.join(out, "table.csv"))
    for row in tab["rows"]:
        per = "  ".join(f"{t} {v['acc']:.3f}/{v['mf1']:.3f}" for t, v in row["targets"].items())
        print(f"{row['noise_type']:>4} {row['rate']:.1f}  {per}  avg {row['average']['acc']:.3f}/"
              f"{row['average']['mf1']:.3f}")


def build_parser():
    parser = argparse.ArgumentParser(prog="fftrust", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize the multi-domain dataset file")
    _add_config_flags(p)
    p.add_argument("--file", help="dataset path (default: <out>/dataset.nldg)")
    p.add_argument("--noise-seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train every seed on one target domain")
    _add_config_flags(p)
    p.add_argument("--stop-at", type=int, help="halt after this many epochs and write a checkpoint (first seed)")
    p.add_argument("--checkpoint", help="checkpoint path for --stop-at")
    p.add_argument("--resume", help="continue from a checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="run the noise x rate x target x seed grid")
    _add_config_flags(p)
    p.add_argument("--noise-types", type=_csv(str), default=["sym", "asym"])
    p.add_argument("--rates", type=_csv(float), default=[0.2, 0.4, 0.6])
    p.add_argument("--targets", type=_csv(str))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--ablation", action="store_true", help="run the 8-row regularizer ablation instead")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="aggregate benchmark cells into a table")
    p.add_argument("inputs", nargs="+", help="cells.json files written by bench")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
