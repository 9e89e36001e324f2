"""Look inside the ranking attention module for one frame.

Prints which template cells were kept on each side, their scores, and writes
the raw similarity maps as a tiled PNG. An untrained model is enough to see
the mechanics; pass --checkpoint to inspect a trained one.

    python demos/02_inspect_ranking.py --checkpoint /tmp/ranet_quickstart/model.npz
"""
import argparse
from pathlib import Path

import numpy as np
import torch

from ranet import experiments
from ranet.matching import correlate, dump_similarity_grid
from ranet.model import Checkpoint, RANet
from ranet.segmenter import Segmenter

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--checkpoint")
parser.add_argument("--out", default="ranking_out")
args = parser.parse_args()
out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

torch.manual_seed(0)
model = Checkpoint.load(args.checkpoint).to_model() if args.checkpoint else RANet(experiments.DESK_MODEL)
video = experiments.eval_videos(n=1)[0]
seg = Segmenter(model, record=True)
state = seg.init_state(video.frames[0], video.masks[0])
res = seg.segment_frame(state, video.frames[1])

bank = state.banks[1]
print(f"template grid {bank.h0}x{bank.w0} = {len(bank)} cells, "
      f"{int(bank.template_mask.sum())} on the object")
for side, entry in res.info[0].items():
    idx = np.asarray(entry["selected_indices"])
    scores = np.asarray(entry["scores"])
    print(f"{side}: kept {idx.size} maps; top 5 cells {idx[:5].tolist()} "
          f"scores {np.round(scores[:5], 3).tolist()}")

with torch.no_grad():
    _, feat = model.encode(seg._to_input(video.frames[1]))
    S = correlate(bank, feat[0])
path = dump_similarity_grid(S, out / "similarity.png")
print(f"similarity maps: {path}")
