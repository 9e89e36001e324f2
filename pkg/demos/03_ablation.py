"""Train the ablation variants on the synthetic protocol and print the table.

Each (variant, seed) pair trains a desk-scale model from scratch (about two
minutes on one CPU core), so the defaults keep the run short:

    python demos/03_ablation.py --seeds 0 1 --out ablation.csv
"""
import argparse

from ranet import experiments

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--variants", nargs="+", default=["w/ RAM", "Maximum", "-CL"],
                    choices=list(experiments.VARIANT_FLAGS))
parser.add_argument("--seeds", type=int, nargs="+", default=[0])
parser.add_argument("--out", default="ablation.csv")
args = parser.parse_args()

rows = experiments.run_ablation(args.variants, args.seeds)
experiments.write_ablation_csv(rows, args.out)
for row in rows:
    per_seed = " ".join(f"{100 * j:.1f}" for j in row.j_means)
    print(f"{row.variant:12s} J {100 * row.mean:5.1f}   [{per_seed}]")
print(f"table written to {args.out}")
