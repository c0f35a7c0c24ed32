#!/usr/bin/env python3
"""
Honeycomb Dirac Runner - Main Runner Script
Computes subwavelength bands, the Dirac cone and the effective envelope dynamics
of a honeycomb lattice of high-contrast circular inclusions
"""

import argparse
import json
import sys
import time
from typing import List, Optional

from config import Config, load_run_config
from honeycomb import HoneycombPipeline
from honeycomb.cache import CacheManager
from honeycomb.errors import HoneycombError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Honeycomb Dirac Runner - bands, cone fit and envelope dynamics for bubble honeycomb lattices"
    )

    parser.add_argument(
        "command",
        nargs="?",
        choices=sorted(Config.SUBCOMMANDS),
        help="Stage to run"
    )

    parser.add_argument(
        "--config", "-c",
        type=str,
        help="Path to a JSON run configuration"
    )

    parser.add_argument(
        "--out", "-o",
        type=str,
        help="Output directory (overrides output_dir)"
    )

    parser.add_argument(
        "--seed",
        type=int,
        help="Seed for sampled test points"
    )

    parser.add_argument(
        "--threads",
        type=int,
        help="Worker threads for quasimomentum sweeps (0 = one per CPU, 1 = serial)"
    )

    parser.add_argument("--delta", type=float, help="Contrast parameter")
    parser.add_argument("--epsilon", type=float, help="Microscale of the wave packet")
    parser.add_argument("--radius-fraction", type=float, help="Disk radius as a fraction of L")
    parser.add_argument("--nodes", type=int, help="Quadrature nodes per circle")
    parser.add_argument("--lattice-constant", type=float, help="Lattice constant L")
    parser.add_argument("--snapshot-format", choices=sorted(Config.SNAPSHOT_FORMATS), help="Snapshot file format")
    parser.add_argument("--times", type=float, nargs="+", help="Snapshot times")

    parser.add_argument(
        "--no-cache",
        action="store_true",
        help="Do not read or write the capacitance cache"
    )

    parser.add_argument(
        "--cache-stats",
        action="store_true",
        help="Show cache statistics"
    )

    parser.add_argument(
        "--clear-cache",
        action="store_true",
        help="Clear all cached data"
    )

    parser.add_argument(
        "--verbose", "-v",
        action="store_true",
        help="Enable verbose output"
    )

    return parser


def _overrides(args) -> dict:
    return {
        "output_dir": args.out,
        "seed": args.seed,
        "threads": args.threads,
        "delta": args.delta,
        "epsilon": args.epsilon,
        "radius_fraction": args.radius_fraction,
        "nodes_per_boundary": args.nodes,
        "lattice_constant": args.lattice_constant,
        "snapshot_format": args.snapshot_format,
        "times": args.times,
    }


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    # Handle cache operations
    if args.cache_stats or args.clear_cache:
        cache = CacheManager()
        if args.cache_stats:
            print("\n📊 Cache Statistics:")
            print(json.dumps(cache.get_cache_stats(), indent=2))
        if args.clear_cache:
            cache.clear_all_cache()
            print("🗑️ Cache cleared successfully")
        cache.close()
        return 0

    if not args.command:
        parser.print_usage(sys.stderr)
        print("❌ Error: a subcommand is required", file=sys.stderr)
        return 2

    cache = None
    try:
        config = load_run_config(args.config, _overrides(args))
        if Config.USE_CACHE and not args.no_cache:
            cache = CacheManager()

        pipeline = HoneycombPipeline(config, cache=cache)
        print(f"🚀 Running '{args.command}' (N={config.nodes_per_boundary}, "
              f"r={config.radius_fraction}L, delta={config.delta:g})")

        start_time = time.time()
        if args.command == "selfcheck":
            result = pipeline.selfcheck()
        else:
            result = getattr(pipeline, f"run_{args.command}")()
        processing_time = time.time() - start_time

        print(f"\n✅ Completed in {processing_time:.2f} seconds")
        print(f"💾 Results saved to {pipeline.out_dir}")

        if args.command == "selfcheck" and not result["passed"]:
            failed = [s["name"] for s in result["suites"] if not s["passed"]]
            print(f"❌ Error: selfcheck failed: {', '.join(failed)}", file=sys.stderr)
            return 4
        return 0

    except HoneycombError as e:
        print(f"❌ Error: {e}", file=sys.stderr)
        if args.verbose:
            import traceback
            traceback.print_exc()
        return e.exit_code
    finally:
        if cache is not None:
            cache.close()


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
