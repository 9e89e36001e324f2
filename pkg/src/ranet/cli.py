"""Command-line interface: ``ranet <command> [flags]``.

Datasets, predictions and annotations all use the DAVIS folder layout::

    <root>/JPEGImages/<subset>/<video>/00000.jpg ...
    <root>/Annotations/<subset>/<video>/00000.png ...   (indexed PNG, 0 = background)

``infer`` writes its predictions in the same ``Annotations`` layout, so its
output directory can be handed straight to ``eval --pred``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import experiments
from .bench import benchmark
from .data.davis import (list_videos, load_davis_layout, load_video, read_prediction_layout, write_davis_layout,
                         write_masks)
from .data.synth import SynthConfig, synthetic_dataset
from .data.types import DataError
from .matching import correlate, dump_similarity_grid
from .metrics import evaluate, write_report
from .model import Checkpoint
from .segmenter import Segmenter
from .training import (ABLATION_FLAGS, ConfigError, TrainingDiverged, finetune_video, load_config, online_finetune,
                       pretrain_static, save_config, write_loss_csv)

log = logging.getLogger("ranet")


def _configs(args):
    if getattr(args, "config", None):
        model_cfg, train_cfg = load_config(args.config)
    else:
        model_cfg, train_cfg = experiments.DESK_MODEL, experiments.DESK_TRAIN
    changes = {}
    for key in ("seed", "lr", "online_lr", "batch_size"):
        value = getattr(args, key, None)
        if value is not None:
            changes[key] = value
    if getattr(args, "iters", None) is not None:
        if args.command in ("pretrain", "ablate"):
            changes["pretrain_iters"] = args.iters
        if args.command in ("finetune", "ablate"):
            changes["finetune_iters"] = args.iters
    if getattr(args, "ablate", None):
        changes["ablations"] = tuple(args.ablate)
    return model_cfg, replace(train_cfg, **changes)


def _stills(videos):
    """Every annotated frame of every video becomes one (image, label map) still."""
    out = []
    for v in videos:
        for frame, mask in zip(v.frames, v.masks or []):
            if mask is not None and mask.any():
                out.append((frame, mask))
    return out


def _save_checkpoint(ckpt: Checkpoint, out: Path, model_cfg, train_cfg) -> None:
    out.parent.mkdir(parents=True, exist_ok=True)
    ckpt.save(out)
    save_config(out.with_suffix(".config.json"), ckpt.config, train_cfg)
    write_loss_csv(out.with_suffix(".loss.csv"), ckpt.loss_history)
    print(f"checkpoint {out} (iteration {ckpt.iteration}, final loss "
          f"{ckpt.loss_history[-1] if ckpt.loss_history else float('nan'):.4f})")


# -- commands ----------------------------------------------------------------------

def cmd_config(args) -> int:
    save_config(args.out, experiments.DESK_MODEL, experiments.DESK_TRAIN)
    print(f"wrote {args.out}")
    return 0


def cmd_synth(args) -> int:
    base = SynthConfig(height=args.height, width=args.width, n_objects=args.objects, length=args.length,
                       occluder_prob=args.occluder_prob, distractors=args.distractors, motion=args.motion)
    videos = synthetic_dataset(args.videos, base, seed=args.seed)
    write_davis_layout(args.out, videos, args.subset)
    print(f"wrote {len(videos)} videos to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    model_cfg, train_cfg = _configs(args)
    stills = _stills(load_davis_layout(args.data, args.subset))
    ckpt = pretrain_static(stills, train_cfg, model_cfg)
    _save_checkpoint(ckpt, Path(args.out), model_cfg, train_cfg)
    return 0


def cmd_finetune(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    model_cfg, train_cfg = _configs(args)
    videos = load_davis_layout(args.data, args.subset)
    out = finetune_video(videos, ckpt, train_cfg)
    _save_checkpoint(out, Path(args.out), model_cfg, train_cfg)
    return 0


def cmd_infer(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    _, train_cfg = _configs(args)
    if args.size_policy:
        ckpt.config = replace(ckpt.config, size_policy=args.size_policy)
    names = args.video or list_videos(args.data, args.subset)
    out = Path(args.out)
    timing = {"online_iters": args.online_iters, "videos": {}}
    debug = {}
    for k, name in enumerate(names):
        video = load_video(args.data, args.subset, name)
        start = time.perf_counter()
        model = online_finetune(ckpt, video.frames[0], video.masks[0], args.online_iters, train_cfg,
                                seed=train_cfg.seed * 1000 + k)
        adapt = time.perf_counter() - start
        seg = Segmenter(model, record=bool(args.debug_ram))
        frame_times: List[float] = []
        log_entries: Optional[list] = [] if args.debug_ram else None
        masks = seg.segment_video(video, timings=frame_times, debug_log=log_entries)
        write_masks(out, args.subset, name, masks)
        timing["videos"][name] = {"frames": len(video), "online_finetune_s": adapt,
                                  "ms_per_frame": 1e3 * float(np.mean(frame_times)) if frame_times else None,
                                  "frame_ms": [1e3 * t for t in frame_times]}
        if log_entries is not None:
            debug[name] = log_entries
        if args.dump_similarity and len(video) > 1:
            _dump_similarity(seg, video, out / "similarity" / f"{name}.png")
        print(f"{name}: {len(video)} frames")
    (out / "timing.json").write_text(json.dumps(timing, indent=2))
    if args.debug_ram:
        Path(args.debug_ram).write_text(json.dumps(debug))
    return 0


def _dump_similarity(seg: Segmenter, video, path: Path) -> None:
    state = seg.init_state(video.frames[0], video.masks[0])
    _, feat = seg.model.encode(seg._to_input(video.frames[1]))
    bank = state.banks[state.object_ids[0]]
    S = correlate(bank, feat[0].detach())
    idx = np.flatnonzero(bank.template_mask.numpy().reshape(-1) > 0)[:32]
    path.parent.mkdir(parents=True, exist_ok=True)
    dump_similarity_grid(S.detach(), path, indices=idx)


def cmd_eval(args) -> int:
    start = time.perf_counter()
    names = list_videos(args.data, args.subset)
    preds, annos = {}, {}
    for name in names:
        video = load_video(args.data, args.subset, name)
        if not video.fully_annotated:
            raise DataError(f"{name}: evaluation needs annotations for every frame")
        annos[name] = video.masks
        preds[name] = read_prediction_layout(args.pred, args.subset, name, len(video))
    report = evaluate(preds, annos, args.include_first, args.include_last)
    report["config_echo"] = {"pred": str(args.pred), "data": str(args.data), "subset": args.subset,
                             "include_first": args.include_first, "include_last": args.include_last}
    report["timing"] = {"eval_seconds": time.perf_counter() - start}
    timing_file = Path(args.pred) / "timing.json"
    if timing_file.exists():
        report["timing"]["inference"] = json.loads(timing_file.read_text())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = Path(args.csv) if args.csv else out.with_suffix(".csv")
    write_report(report, out, csv_path)
    g = report["global"]
    print(f"J&F {g['jf_mean']:.4f}  J {g['J']['mean']:.4f}  F {g['F']['mean']:.4f}  ({len(annos)} videos)")
    return 0


def cmd_bench(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    names = [args.video] if args.video else list_videos(args.data, args.subset)[:1]
    if not names:
        raise DataError(f"no videos under {args.data}")
    video = load_video(args.data, args.subset, names[0])
    result = benchmark(Segmenter(ckpt.to_model()), video, runs=args.runs, warmup=args.warmup)
    text = json.dumps(result, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(f"{result['ms_per_frame']:.2f} ms/frame  {result['fps']:.1f} FPS  "
          f"spread {100 * result['run_spread']:.1f}% (bound {100 * result['noise_bound']:.0f}%)")
    return 0


def cmd_ablate(args) -> int:
    model_cfg, train_cfg = _configs(args)
    size = model_cfg.input_size
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = experiments.run_ablation(args.variant, args.seeds, model_cfg, train_cfg,
                                    experiments.eval_videos(args.eval_videos, size=size))
    experiments.write_ablation_csv(rows, out / "ablation.csv")
    (out / "ablation.json").write_text(json.dumps(
        [{"variant": r.variant, "seeds": r.seeds, "j_means": r.j_means, "mean": r.mean} for r in rows], indent=2))
    for r in rows:
        print(f"{r.variant:>12s}  J Mean {100 * r.mean:.1f}")
    return 0


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ranet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def common(sp, data=True):
        if data:
            sp.add_argument("--data", required=True, help="DAVIS-layout dataset root")
        sp.add_argument("--subset", default="480p", help="resolution folder name (default 480p)")

    def training(sp):
        sp.add_argument("--config", help="JSON config written by `ranet config`")
        sp.add_argument("--iters", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--batch-size", dest="batch_size", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--ablate", action="append", choices=sorted(ABLATION_FLAGS),
                        help="ablation flag (repeatable)")

    sp = sub.add_parser("config", help="write the default configuration")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_config)

    sp = sub.add_parser("synth", help="emit a synthetic dataset in DAVIS layout")
    sp.add_argument("--out", required=True)
    sp.add_argument("--videos", type=int, default=10)
    sp.add_argument("--objects", type=int, default=1)
    sp.add_argument("--length", type=int, default=12)
    sp.add_argument("--height", type=int, default=experiments.DESK_SIZE[0])
    sp.add_argument("--width", type=int, default=experiments.DESK_SIZE[1])
    sp.add_argument("--motion", type=float, default=2.0)
    sp.add_argument("--occluder-prob", dest="occluder_prob", type=float, default=0.0)
    sp.add_argument("--distractors", type=int, default=0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--subset", default="480p")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("pretrain", help="static-image pretraining on every annotated frame")
    common(sp)
    training(sp)
    sp.add_argument("--out", required=True, help="checkpoint path (.npz)")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("finetune", help="video fine-tuning from a checkpoint")
    common(sp)
    training(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("infer", help="segment videos and write indexed PNG masks")
    common(sp)
    sp.add_argument("--config", help="JSON config (online fine-tuning settings)")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--video", action="append", help="restrict to this video (repeatable)")
    sp.add_argument("--online-iters", dest="online_iters", type=int, default=0)
    sp.add_argument("--online-lr", dest="online_lr", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--size-policy", dest="size_policy", choices=["error", "resize"])
    sp.add_argument("--debug-ram", dest="debug_ram", help="write selected indices and scores (JSON)")
    sp.add_argument("--dump-similarity", dest="dump_similarity", action="store_true",
                    help="save a grid of foreground similarity maps per video")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("eval", help="score predicted masks against annotations")
    common(sp)
    sp.add_argument("--pred", required=True, help="prediction root (as written by infer)")
    sp.add_argument("--out", required=True, help="JSON report path")
    sp.add_argument("--csv", help="CSV path (default: next to the JSON report)")
    sp.add_argument("--include-first", dest="include_first", action="store_true")
    sp.add_argument("--include-last", dest="include_last", action="store_true")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bench", help="per-frame inference latency")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--video")
    sp.add_argument("--runs", type=int, default=3)
    sp.add_argument("--warmup", type=int, default=2)
    sp.add_argument("--out", help="JSON result path")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("ablate", help="train and score ablation variants on the synthetic protocol")
    training(sp)
    sp.add_argument("--variant", action="append", required=True, choices=list(experiments.VARIANT_FLAGS))
    sp.add_argument("--seeds", type=int, nargs="+", default=[0])
    sp.add_argument("--eval-videos", dest="eval_videos", type=int, default=10)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DataError, ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"ranet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        path = Path(getattr(args, "out", "diverged.npz")).with_suffix(".last_good.npz")
        exc.checkpoint.save(path)
        print(f"ranet {args.command}: {exc}; last good checkpoint saved to {path}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
