#!/usr/bin/env python3
"""Run the default experiment at several sensor intervals and compare the traces."""

import sys
from pathlib import Path

# Add the src directory to the path so we can import our modules
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from dotenv import load_dotenv

from edge_miner.config.logging import setup_logging
from edge_miner.core.harness import run_experiment, write_results
from edge_miner.data.models import ExperimentConfig
from edge_miner.errors import EdgeMinerError

INTERVALS = (50.0, 100.0, 200.0)


def sweep(out_root: Path) -> None:
    """Run each interval, write its results and report whether consensus matched."""

    print("📡 Interval sweep")
    print("=" * 50)

    reference = None
    for interval in INTERVALS:
        cfg = ExperimentConfig(interval_ms=interval)
        print(f"Interval {interval:.0f} ms: {cfg.txn_count} transactions, block size {cfg.block_size}")
        print("-" * 40)
        try:
            result = run_experiment(cfg)
        except EdgeMinerError as e:
            print(f"❌ Error: {e}")
            continue

        write_results(result, out_root / f"interval-{int(interval)}")
        summary = result.summary
        print(f"  contract phase 1 mean: {summary.phase1_mean:.2f} ms")
        if summary.phase2_mean is not None:
            print(f"  contract phase 2 mean: {summary.phase2_mean:.2f} ms (change at {summary.change_point})")
        if summary.consensus_mean is not None:
            print(f"  consensus mean:        {summary.consensus_mean:.2f} ms")
        print(f"  audit: {'passed' if result.audit.passed else 'FAILED'}")

        values = result.consensus_trace.values
        if reference is None:
            reference = values
        else:
            print(f"  consensus trace identical to 50 ms run: {values == reference}")
        print()

    print(f"✨ Results written under {out_root}")


if __name__ == "__main__":
    load_dotenv()
    setup_logging(level="WARNING")
    sweep(Path(sys.argv[1]) if len(sys.argv) > 1 else Path("data/sweep"))
