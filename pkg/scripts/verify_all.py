"""Run ``pilotwave verify`` on every config in configs/ and summarize exit codes.

    python scripts/verify_all.py [--threads 4]

harmonic_coarse_cn.yaml is a deliberate negative test and is expected to exit 1.
"""
import argparse
import contextlib
import io
import sys
import time
from pathlib import Path

from pilotwave.cli import main as cli_main

EXPECTED_FAILURES = {"harmonic_coarse_cn"}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--configs", type=Path, default=Path(__file__).resolve().parent.parent / "configs")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true", help="print each check table")
    args = p.parse_args(argv)
    bad = 0
    for cfg in sorted(args.configs.glob("*.yaml")):
        buf = io.StringIO()
        start = time.perf_counter()
        with contextlib.redirect_stdout(buf):
            rc = cli_main(["verify", str(cfg), "--threads", str(args.threads)])
        expected = 1 if cfg.stem in EXPECTED_FAILURES else 0
        ok = rc == expected
        bad += not ok
        print(f"{'ok ' if ok else 'BAD'} {cfg.stem:<20} exit={rc} (expected {expected})  "
              f"{time.perf_counter() - start:.1f}s")
        if args.verbose or not ok:
            print("    " + buf.getvalue().strip().replace("\n", "\n    "))
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
