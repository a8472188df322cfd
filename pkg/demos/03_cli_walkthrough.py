"""The command-line pipeline, end to end, in a scratch directory.

Each step below is one ``pressim`` invocation (printed before it runs), so the
same sequence can be typed in a shell:

    gen -> simulate -> train -> synth (both models) -> report

Run:  python3 demos/03_cli_walkthrough.py [--keep DIR]
"""
import argparse
import shlex
import tempfile
from pathlib import Path

from pressim.cli import run


def step(*argv):
    argv = [str(a) for a in argv]
    print(f"\n$ pressim {shlex.join(argv)}")
    code = run(argv)
    if code != 0:
        raise SystemExit(f"step failed with exit code {code}")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--keep", type=Path, help="work in this directory instead of a temp one")
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        d = args.keep or Path(tmp)
        d.mkdir(parents=True, exist_ok=True)
        step("gen", "--template", "squat_cycle", "--duration", 12, "--mass", 80, "--seed", 1,
             "--out", d / "poses.psim")
        step("simulate", "--poses", d / "poses.psim", "--mass", 80, "--out", d / "sim")
        step("train", "--data", d / "poses.psim", d / "sim/deform.psim", d / "sim/pressure.psim",
             "--epochs", 2, "--batch-size", 32, "--out", d / "models")
        for model in ("pressim", "baseline"):
            step("synth", "--poses", d / "poses.psim", "--deform", d / "sim/deform.psim",
                 "--checkpoints", d / "models", "--model", model,
                 "--reference", d / "sim/pressure.psim", "--out", d / f"{model}.psim")
        step("report", "--truth", d / "sim/pressure.psim",
             "--pred", f"pressim={d / 'pressim.psim'}",
             "--pred", f"baseline={d / 'baseline.psim'}", "--out", d / "report")
        print("\n(the scores are on the training recording itself: this demo shows the "
              "plumbing, not generalisation)")


if __name__ == "__main__":
    main()
