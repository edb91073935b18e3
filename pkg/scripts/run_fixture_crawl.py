"""Replay the bundled crawl fixtures and print the resulting pools.

Demonstrates the offline transport: the same CLI path used for live
crawls runs here against JSON files, so the whole pool-building flow is
testable without network access.
"""

import argparse
import subprocess
import sys
from pathlib import Path


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="fixture_crawl", help="working directory")
    parser.add_argument(
        "--fixture-root",
        default=str(Path(__file__).resolve().parent.parent / "tests/fixtures/crawl"),
    )
    args = parser.parse_args()

    subprocess.run(
        [
            sys.executable, "-m", "gtcycle.cli", "crawl",
            "--origins", "Q1",
            "--out", args.out,
            "--fixture-root", args.fixture_root,
        ],
        check=True,
    )
    out = Path(args.out)
    print("--- stats.json ---")
    print((out / "stats.json").read_text(encoding="utf-8"))
    print("--- graphs.txt ---")
    print((out / "graphs.txt").read_text(encoding="utf-8"))
    print("--- texts.txt ---")
    print((out / "texts.txt").read_text(encoding="utf-8"))


if __name__ == "__main__":
    main()
