"""
A small outlier / missing-part sweep through the command line
=============================================================

Writes synthetic clouds and a manifest, then runs ``symplane eval`` on it.
Use a handful of models per level here; the acceptance tests run 50.
"""

# %%
import subprocess
import sys
from pathlib import Path

from symplane import io
from symplane.synth import SHAPES

OUT = Path(__file__).with_name("out") / "sweep"
OUT.mkdir(parents=True, exist_ok=True)
MODELS = 4


def run(*args):
    subprocess.run([sys.executable, "-m", "symplane.cli", *args], check=True)


# %%
levels = [("alpha", a) for a in (0, 50, 100)] + [("gamma", g) for g in (0.15, 0.28)]
for kind, value in levels:
    lines = []
    for s in range(MODELS):
        cloud = OUT / f"{kind}{value}_{s}.ply"
        run("synth", "--output", str(cloud), "--shape", SHAPES[s % 4], "--n", "2000",
            f"--{kind}", str(value), "--pose", "--seed", str(s))
        lines.append(f"{cloud.name}\t{cloud.stem}.gt.txt")
    manifest = OUT / f"{kind}{value}.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    run("eval", "--input", str(manifest), "--output", str(OUT / f"{kind}{value}"))

# %%
print(f"{'level':>12} {'F-score':>8}")
for kind, value in levels:
    s = io.read_keyvalue(OUT / f"{kind}{value}" / "summary.txt")
    print(f"{kind + '=' + str(value):>12} {float(s['fscore']):8.3f}")
