"""The propsim command line, end to end in one temporary directory.

Everything below also works from a shell; this script drives the entry
point directly so the whole tour runs with a single python invocation.
Each step prints the command it stands for before running it.
"""
import shlex
import tempfile
from pathlib import Path

from propsim.cli import main

workdir = Path(tempfile.mkdtemp(prefix="propsim_tour_"))
vectors = str(workdir / "vectors.bin")
outdir = str(workdir / "out")


def run(*args):
    print(f"$ propsim {shlex.join(args)}")
    rc = main(list(args))
    assert rc == 0, f"exit code {rc}"
    print()


# synthesize a reproducible input file (a sidecar manifest records its shape)
run("generate", "--num-field", "32", "--num-vector", "24",
    "--synthetic", "random-exact", "--seed", "11", "--bits", "10",
    "--output", vectors)

# the sidecar means the run needs no dimension flags
run("run", "--num-way", "2", "--input", vectors,
    "--npv", "4", "--npr", "2", "--output", outdir)

# rerun the computation distributed and compare against a single rank,
# a delay-injected rerun, and the brute-force reference
run("verify", "--num-way", "2", "--input", vectors, "--npv", "4", "--npr", "2")

# which pair sits at a given spot in a given rank's output file
run("index", "--input", outdir, "--rank", "2", "--position", "0")

# planning helpers: a grid for a problem too big for one rank, and the
# runtime model evaluated for a deep-pipeline 3-way configuration
run("suggest", "--num-way", "2", "--num-field", "8192", "--num-vector", "24576",
    "--num-proc", "16", "--target-units", "13", "--memory-bytes", str(1 << 30))
run("suggest", "--num-way", "3", "--num-field", "4096", "--num-vector", "11520",
    "--num-proc", "32", "--target-units", "6", "--memory-bytes", str(1 << 30))
run("model", "--num-way", "3", "--ell", "6", "--nvp", "2880", "--num-stage", "16",
    "--tg", "1", "--tc", "0", "--ttv", "0", "--ttm", "0", "--tcpu", "0")

# what the 3-way schedule hands one rank when there are four vector slabs
run("dump-schedule", "--num-way", "3", "--npv", "4", "--rank", "0")

print(f"artifacts left under {workdir}")
