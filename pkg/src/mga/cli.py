"""Command-line entry point: ``mga run | params | bench | export-attn | gen-data``.

Exit codes: 0 ok, 2 invalid configuration or usage, 3 numerical failure,
4 missing artifact.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .cmga import FRAMEALL, FRAMEWISE
from .config import FIELDS, RunConfig, load_config, parse_value
from .errors import ConfigurationError, DataError, FormatError, MissingArtifactError, NumericalError, UsageError
from .experiment import resolve_output_dir, run_ablation, run_experiment
from .reporting import COMPONENTS, bench_cost, count_parameters, export_attention
from .synth import SynthConfig, write_corpus

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_MISSING = 0, 2, 3, 4


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for name in FIELDS:
        raw = getattr(args, name, None)
        if raw is not None:
            overrides[name] = parse_value(name, raw)
    return dataclasses.replace(cfg, **overrides).validate()


def cmd_run(args) -> int:
    cfg = _run_config(args)
    out = resolve_output_dir(cfg)
    records = run_ablation(cfg, out) if args.ablation else [run_experiment(cfg, out)]
    for rec in records:
        cells = f"smga={rec.config['smga']} cmga={rec.config['cmga']}"
        print(f"{rec.run_id} {cells} mean={rec.mean:.4f} ci95={rec.ci95:.4f} wall={rec.wall_seconds:.1f}s -> {out}")
    return EXIT_OK


def cmd_params(args) -> int:
    pc = count_parameters(
        args.component, args.dim, args.r, args.frames, r1=args.r1, blocks=args.blocks, reduction=args.reduction
    )
    if args.json:
        print(json.dumps({"component": pc.component, "total": pc.total, "frozen": pc.frozen, "itemized": pc.itemized}, indent=2))
        return EXIT_OK
    width = max(len(k) for k in pc.itemized)
    for name, n in pc.itemized.items():
        print(f"{name:<{width}}  {n:>12,d}")
    print(f"{'total':<{width}}  {pc.total:>12,d}  ({pc.total / 1e6:.2f}M)")
    if pc.frozen:
        print(f"{'frozen backbone':<{width}}  {pc.frozen:>12,d}")
    return EXIT_OK


def cmd_bench(args) -> int:
    variants = (FRAMEWISE, FRAMEALL) if args.variant == "both" else (args.variant,)
    rows = [
        bench_cost(args.n_way, args.k_shot, args.frames, (args.height, args.width), args.dim, args.r, v, reps=args.reps)
        for v in variants
    ]
    if args.json:
        print(json.dumps(rows, indent=2))
        return EXIT_OK
    print(f"{'variant':<10} {'elements':>12} {'MACs':>14} {'peak floats':>12} {'median s':>10}")
    for row in rows:
        print(
            f"{row['variant']:<10} {row['score_elements']:>12,d} {row['macs']:>14,d} "
            f"{row['peak_live_floats']:>12,d} {row['wall_seconds']:>10.5f}"
        )
    if len(rows) == 2:
        print(f"element ratio {rows[1]['score_elements'] / rows[0]['score_elements']:g}, "
              f"time ratio {rows[1]['wall_seconds'] / rows[0]['wall_seconds']:.2f}")
    return EXIT_OK


def cmd_export(args) -> int:
    run_dir = args.run_dir or os.environ.get("MGA_OUT")
    if not run_dir:
        raise UsageError("give a run directory or set MGA_OUT")
    for path in export_attention(run_dir, args.which, args.frame, args.query, args.run, args.out):
        print(path)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    out = args.out or os.environ.get("MGA_OUT")
    if not out:
        raise UsageError("give an output directory or set MGA_OUT")
    cfg = SynthConfig(
        grid=args.grid, frames=args.frames, square=args.square, noise=args.noise, instances_per_class=args.instances, seed=args.seed
    )
    manifest = write_corpus(cfg, out)
    print(manifest)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mga", description="Motion-guided attention few-shot toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and evaluate per a config file")
    run.add_argument("config", nargs="?", help="flat key = value config file")
    run.add_argument("--ablation", action="store_true", help="run all four (smga, cmga) toggle cells")
    for name in FIELDS:
        run.add_argument(_flag(name), dest=name, metavar="VALUE", help=f"override '{name}'")
    run.set_defaults(fn=cmd_run)

    params = sub.add_parser("params", help="itemized learnable-parameter count")
    params.add_argument("--component", choices=COMPONENTS, default="cmga")
    params.add_argument("--dim", type=int, default=2048)
    params.add_argument("--r", type=int, default=8, help="compression factor (Cmga-Adapter factor for adapter-model)")
    params.add_argument("--r1", type=int, default=None, help="Smga-Adapter factor for adapter-model")
    params.add_argument("--frames", type=int, default=8)
    params.add_argument("--blocks", type=int, default=4)
    params.add_argument("--reduction", type=int, default=4)
    params.add_argument("--json", action="store_true")
    params.set_defaults(fn=cmd_params)

    bench = sub.add_parser("bench", help="frame-wise vs frame-all cross-attention cost")
    bench.add_argument("--variant", choices=(FRAMEWISE, FRAMEALL, "both"), default="both")
    bench.add_argument("--n-way", type=int, default=5)
    bench.add_argument("--k-shot", type=int, default=1)
    bench.add_argument("--frames", type=int, default=8)
    bench.add_argument("--height", type=int, default=7)
    bench.add_argument("--width", type=int, default=7)
    bench.add_argument("--dim", type=int, default=64)
    bench.add_argument("--r", type=int, default=4)
    bench.add_argument("--reps", type=int, default=5)
    bench.add_argument("--json", action="store_true")
    bench.set_defaults(fn=cmd_bench)

    export = sub.add_parser("export-attn", help="write saved attention scores as CSV and PGM")
    export.add_argument("run_dir", nargs="?", help="run directory (default: $MGA_OUT)")
    export.add_argument("--which", choices=("self", "cross"), default="cross")
    export.add_argument("--frame", type=int, default=0)
    export.add_argument("--query", type=int, default=0)
    export.add_argument("--run", default=None, help="run id such as r0001 (default: latest)")
    export.add_argument("--out", default=None, help="output directory (default: <run_dir>/attention)")
    export.set_defaults(fn=cmd_export)

    gen = sub.add_parser("gen-data", help="write the synthetic corpus as MGAF files plus a manifest")
    gen.add_argument("out", nargs="?", help="output directory (default: $MGA_OUT)")
    gen.add_argument("--grid", type=int, default=10)
    gen.add_argument("--frames", type=int, default=8)
    gen.add_argument("--square", type=int, default=3)
    gen.add_argument("--noise", type=float, default=0.05)
    gen.add_argument("--instances", type=int, default=30)
    gen.add_argument("--seed", type=int, default=0)
    gen.set_defaults(fn=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigurationError, UsageError, DataError) as exc:
        print(f"mga: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"mga: numerical failure in '{exc.op}': {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MissingArtifactError, FormatError) as exc:
        print(f"mga: missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
