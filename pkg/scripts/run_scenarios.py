r"""Run the full experiment once per mismatch scenario.

Usage:
  python scripts/run_scenarios.py --out-dir results --seed 7
  python scripts/run_scenarios.py --scenarios noise,telephone -- --steps 500 --hidden-dims 128,128

Arguments after `--` are passed to every `svrbench full-exp` call.
"""
import argparse
import os
import sys

from svrbench.cli import run_command
from svrbench.simulate import SCENARIOS


def run_scenario(name: str, out_dir: str, seed: int, extra: list) -> int:
    target = os.path.join(out_dir, name)
    print(f"Running scenario '{name}' into {target}...")
    code = run_command(["full-exp", "--scenario", name, "--seed", str(seed), "--out-dir", target] + extra)
    if code != 0:
        print(f"Scenario '{name}' failed with exit code {code}")
    return code


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--out-dir", default="results", help="Parent directory, one subdirectory per scenario")
    p.add_argument("--scenarios", default=",".join(SCENARIOS), help="Comma-separated scenario names")
    p.add_argument("--seed", type=int, default=0, help="Master seed shared by every scenario")
    p.add_argument("extra", nargs=argparse.REMAINDER, help="Extra full-exp flags after --")
    args = p.parse_args()

    extra = args.extra[1:] if args.extra[:1] == ["--"] else args.extra
    names = [n.strip() for n in args.scenarios.split(",") if n.strip()]
    unknown = [n for n in names if n not in SCENARIOS]
    if unknown:
        print(f"Unknown scenarios {unknown}; choose from {', '.join(SCENARIOS)}")
        sys.exit(1)

    failed = [n for n in names if run_scenario(n, args.out_dir, args.seed, extra) != 0]
    if failed:
        sys.exit(1)
    print("All scenarios finished. Summaries are in", args.out_dir)


if __name__ == "__main__":
    main()
