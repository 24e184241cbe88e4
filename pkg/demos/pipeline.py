"""Small end-to-end run: generate data, pretrain, finetune, evaluate.

    python3 demos/pipeline.py [out_dir]

Takes about a minute on one CPU core. Every step goes through the same
command-line entry point a user would call, so each stage leaves its
``config.json``, ``metrics.log`` and ``report.txt`` under ``out_dir``.
"""

import sys
from pathlib import Path

from dformer.cli import run


def step(*argv) -> None:
    argv = [str(a) for a in argv]
    print("$ dformer " + " ".join(argv), flush=True)
    code = run(argv)
    if code:
        sys.exit(code)


def main(out: Path) -> None:
    step("gen-data", "--mode", "classify", "--n-samples", 128, "--size", 32, "--n-classes", 4,
         "--seed", 1, "--out", out / "cls")
    step("gen-data", "--mode", "segment", "--n-samples", 48, "--size", 64, "--n-classes", 5,
         "--seed", 2, "--out", out / "seg")
    step("pretrain", "--data", out / "cls", "--epochs", 8, "--out", out / "pretrain")
    step("finetune", "--data", out / "seg", "--checkpoint", out / "pretrain" / "best.ckpt",
         "--epochs", 10, "--lr", 4e-3, "--out", out / "finetune")
    # best.ckpt holds the epoch with the highest validation mIoU; the finetune
    # report scores the final weights, so the two numbers can differ
    step("eval", "--data", out / "seg", "--checkpoint", out / "finetune" / "best.ckpt", "--msflip",
         "--out", out / "eval")
    print((out / "eval" / "report.txt").read_text())


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "runs/demo"))
