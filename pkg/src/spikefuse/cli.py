"""Command-line benchmark runner.

    spikefuse --benchmark integrator --dims 64 --steps 1000 --ablation --output out.csv
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor

from spikefuse.benchmarks import (
    BENCHMARKS,
    BenchmarkError,
    BenchmarkSpec,
    ablation_ladder,
    benchmark_model,
    run_bench,
    write_results_csv,
)
from spikefuse.ir import dump_ir
from spikefuse.passes import PipelineConfig


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="spikefuse",
        description="Build, optimize and time the benchmark networks; write one CSV row per run.",
    )
    p.add_argument("--benchmark", choices=BENCHMARKS, required=True)
    p.add_argument("--dims", type=int, default=16, help="represented dimensionality")
    p.add_argument("--neurons-per-dim", type=int, default=50)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--dt", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=1, help="minibatch size")
    p.add_argument("--unroll", type=int, default=1, help="steps per inner loop iteration")
    p.add_argument("--planner", choices=("greedy", "tree"), default="tree")
    p.add_argument("--tree-depth", type=int, default=3)
    p.add_argument("--no-merge", action="store_true", help="one group per operator")
    p.add_argument("--no-sort", action="store_true", help="skip signal/operator sorting")
    p.add_argument("--no-simplify", action="store_true", help="skip rewrite simplifications")
    p.add_argument("--check", action="store_true",
                   help="compare against the reference interpreter (dims <= 16)")
    p.add_argument("--ablation", action="store_true",
                   help="run the cumulative optimization ladder instead of one config")
    p.add_argument("--output", help="CSV path (default: stdout)")
    p.add_argument("--dump-ir", metavar="PATH", help="write the lowered IR as JSON")
    p.add_argument("--jobs", type=int, default=1,
                   help="run distinct ablation rungs in parallel processes")
    return p


def spec_from_args(args: argparse.Namespace) -> BenchmarkSpec:
    config = PipelineConfig(
        simplify=not args.no_simplify,
        planner=args.planner,
        tree_depth=args.tree_depth,
        sort=not args.no_sort,
        merge=not args.no_merge,
    )
    return BenchmarkSpec(
        name=args.benchmark,
        dimensions=args.dims,
        neurons_per_dim=args.neurons_per_dim,
        steps=args.steps,
        dt=args.dt,
        seed=args.seed,
        batch=args.batch,
        config=config,
        unroll=args.unroll,
        check=args.check,
    )


def main(argv: list[str] | None = None) -> int:
    args = parser().parse_args(argv)
    try:
        spec = spec_from_args(args)
    except (BenchmarkError, ValueError) as e:
        print(f"spikefuse: error: {e}", file=sys.stderr)
        return 2
    if args.jobs < 1:
        print("spikefuse: error: --jobs must be >= 1", file=sys.stderr)
        return 2

    try:
        if args.dump_ir:
            with open(args.dump_ir, "w") as f:
                f.write(dump_ir(benchmark_model(spec), indent=1))
        specs = ablation_ladder(spec) if args.ablation else [spec]
        if args.jobs > 1 and len(specs) > 1:
            with ProcessPoolExecutor(args.jobs) as pool:
                results = list(pool.map(run_bench, specs))
        else:
            results = [run_bench(s) for s in specs]
    except BenchmarkError as e:
        print(f"spikefuse: error: {e}", file=sys.stderr)
        return 1

    if args.output:
        with open(args.output, "w", newline="") as f:
            write_results_csv(results, f)
    else:
        write_results_csv(results, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
