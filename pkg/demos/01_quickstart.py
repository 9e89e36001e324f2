"""Quickstart: synthesise a dataset, train a desk-scale model, segment and score it.

Runs on a laptop CPU in a couple of minutes:

    python demos/01_quickstart.py --out /tmp/ranet_quickstart
"""
import argparse
from dataclasses import replace
from pathlib import Path

from ranet import experiments
from ranet.metrics import evaluate, write_report
from ranet.segmenter import Segmenter
from ranet.training import train_pipeline

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--out", default="quickstart_out")
parser.add_argument("--iters", type=int, default=300, help="iterations per training stage")
args = parser.parse_args()
out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

# Training data: still images for pretraining, short clips for video fine-tuning.
stills = experiments.training_stills(n=100)
videos = experiments.training_videos(n=15)
cfg = replace(experiments.DESK_TRAIN, pretrain_iters=args.iters, finetune_iters=args.iters)
result = train_pipeline(stills, videos, experiments.DESK_MODEL, cfg)
ckpt = result.final.save(out / "model.npz")
print(f"trained {len(result.final.loss_history)} iterations, final loss {result.final.loss_history[-1]:.3f}")
print(f"checkpoint: {ckpt}")

# Segment held-out videos from their first-frame annotation only.
segmenter = Segmenter(result.final.to_model())
eval_set = experiments.eval_videos()
preds = {v.name: segmenter.segment_video(v) for v in eval_set}
report = evaluate(preds, {v.name: v.masks for v in eval_set})
write_report(report, out / "report.json", out / "report.csv")
g = report["global"]
print(f"J {g['J']['mean']:.3f}  F {g['F']['mean']:.3f}  J&F {g['jf_mean']:.3f}")
