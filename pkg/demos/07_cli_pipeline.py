"""
Driving everything from the command line
========================================

The `affseg` executable exposes each stage as a subcommand plus a
`pipeline` command that chains watershed -> agglomerate -> eval.  Flags
can live in a JSON config file; explicit flags win over config values.
This demo shells out exactly the way a batch job would.
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path


def run(*args):
    print("$ affseg", " ".join(args))
    proc = subprocess.run([sys.executable, "-m", "affseg.cli", *args],
                          capture_output=True, text=True)
    if proc.stdout:
        print(proc.stdout, end="")
    if proc.returncode != 0:
        print(proc.stderr, end="")
    return proc


with tempfile.TemporaryDirectory() as d:
    work = Path(d)

    # %% synthesize a test volume pair
    run("synth", "--shape", "8", "16", "16", "--seeds", "6",
        "--anisotropy", "3.0", "--sigma", "0.1", "--jitter", "0.2",
        "--rng-seed", "1",
        "--gt-out", str(work / "gt.volb"), "--aff-out", str(work / "aff.volb"))

    # %% watershed, then a threshold sweep from the merge tree
    run("watershed", "--aff", str(work / "aff.volb"), "--out", str(work / "ws.volb"),
        "--t-high", "0.98", "--t-low", "0.3", "--size-min", "0", "--t-merge", "0.3")
    run("agglomerate", "--labels", str(work / "ws.volb"),
        "--aff", str(work / "aff.volb"), "--scorer", "mean", "--theta", "0.0",
        "--out", str(work / "agg.volb"), "--tree-out", str(work / "tree.txt"))
    run("curve", "--tree", str(work / "tree.txt"), "--base", str(work / "ws.volb"),
        "--gt", str(work / "gt.volb"),
        "--thetas", "1.0", "0.9", "0.7", "0.5", "0.0",
        "--out", str(work / "curve.csv"))
    print((work / "curve.csv").read_text())

    # %% the same thing as one command with a config file
    cfg = {"pipeline": {
        "aff": str(work / "aff.volb"),
        "gt": str(work / "gt.volb"),
        "workdir": str(work / "run"),
        "t-high": 0.98, "t-low": 0.3, "size-min": 0, "t-merge": 0.3,
        "scorer": "mean", "theta": 0.9,
    }}
    (work / "config.json").write_text(json.dumps(cfg, indent=2))
    run("pipeline", "--config", str(work / "config.json"))

    # %% gradient volumes come from the same container format
    run("malis-grad", "--aff", str(work / "aff.volb"), "--gt", str(work / "gt.volb"),
        "--grad-out", str(work / "grad.volb"))
