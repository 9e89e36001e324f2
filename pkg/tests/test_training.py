import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from ranet.data import SynthConfig, generate_synthetic_video
from ranet.model import Checkpoint, RANet
from ranet.training import (ConfigError, TrainConfig, TrainingDiverged, apply_ablation, bce_loss, finetune_video,
                            load_config, lr_factor, online_finetune, pretrain_static, save_config, train_pipeline,
                            train_steps, validate_ablations, write_loss_csv)

from conftest import TINY

FAST = TrainConfig(lr=1e-3, online_lr=1e-4, batch_size=2, pretrain_iters=3, finetune_iters=3)


@pytest.fixture(scope="module")
def stills():
    out = []
    for i in range(3):
        v = generate_synthetic_video(SynthConfig(height=32, width=48, length=1, radius=(0.25, 0.3), seed=i))
        out.append((v.frames[0], v.masks[0]))
    return out


@pytest.fixture(scope="module")
def videos():
    return [generate_synthetic_video(SynthConfig(height=32, width=48, length=6, radius=(0.25, 0.3), seed=40 + i))
            for i in range(2)]


def test_bce_at_zero_logits_is_ln2():
    loss = bce_loss(torch.zeros(2, 4, 4), torch.randint(0, 2, (2, 4, 4)))
    assert loss.item() == pytest.approx(math.log(2), abs=1e-7)


def test_bce_saturation():
    target = torch.randint(0, 2, (3, 5)).double()
    logits = (2 * target - 1) * 40.0
    assert bce_loss(logits, target).item() < 1e-15
    assert bce_loss(-logits, target).item() == pytest.approx(40.0, rel=1e-9)


def test_bce_against_loop_oracle(rng):
    logits = torch.from_numpy(rng.normal(scale=3, size=(2, 6, 7)))
    target = torch.from_numpy((rng.uniform(size=(2, 6, 7)) > 0.5).astype(np.float64))
    total = 0.0
    for x, y in zip(logits.flatten().tolist(), target.flatten().tolist()):
        p = 1 / (1 + math.exp(-x))
        total += -(y * math.log(p) + (1 - y) * math.log(1 - p))
    assert abs(bce_loss(logits, target).item() - total / logits.numel()) <= 1e-7


def test_bce_errors():
    with pytest.raises(ValueError, match="shape"):
        bce_loss(torch.zeros(2, 3), torch.zeros(3, 2))
    with pytest.raises(ValueError, match="non-finite"):
        bce_loss(torch.tensor([float("nan")]), torch.zeros(1))


def test_zero_lr_keeps_parameters(stills):
    torch.manual_seed(0)
    model = RANet(TINY)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    cfg = replace(FAST, lr=0.0)
    from ranet.training import _static_sampler
    train_steps(model, _static_sampler(stills, cfg), 100, 0.0, cfg, np.random.default_rng(0))
    for k, v in model.state_dict().items():
        assert torch.equal(v, before[k]), k


def test_training_is_deterministic(stills, videos):
    a = train_pipeline(stills, videos, TINY, FAST)
    b = train_pipeline(stills, videos, TINY, FAST)
    assert a.final.loss_history == b.final.loss_history
    assert len(a.final.loss_history) == 6
    for k in a.final.state:
        assert a.final.state[k].tobytes() == b.final.state[k].tobytes()


def test_stage_skipping(stills, videos):
    ip = train_pipeline(stills, videos, TINY, replace(FAST, ablations=("-IP",)))
    assert ip.stages == ["finetune"] and len(ip.final.loss_history) == 3
    vf = train_pipeline(stills, videos, TINY, replace(FAST, ablations=("-VF",)))
    assert vf.stages == ["pretrain"] and len(vf.final.loss_history) == 3


def test_ablation_wiring():
    assert apply_ablation(TINY, ("-CL",)).variant == "no_correlation"
    assert apply_ablation(TINY, ("Maximum",)).variant == "maximum"
    assert apply_ablation(TINY, ("w/o Ranking",)).variant == "no_ranking"
    assert apply_ablation(TINY, ("-PM",)).zero_prior
    assert apply_ablation(TINY, ("-IP", "-PM")).variant == "ram"
    for bad in [("-XY",), ("-CL", "Maximum"), ("-IP", "-VF")]:
        with pytest.raises(ConfigError):
            validate_ablations(bad)
    with pytest.raises(ConfigError):
        TrainConfig(ablations=("-CL", "w/o Ranking"))


def test_online_finetune_leaves_source_untouched(stills):
    ckpt = Checkpoint.from_model(RANet(TINY))
    snapshot = {k: v.copy() for k, v in ckpt.state.items()}
    image, mask = stills[0]
    adapted = online_finetune(ckpt, image, mask, 2, FAST)
    assert not adapted.training
    for k, v in ckpt.state.items():
        assert v.tobytes() == snapshot[k].tobytes()
    changed = any(not np.array_equal(p.detach().numpy(), snapshot[n])
                  for n, p in adapted.named_parameters())
    assert changed
    with pytest.raises(ValueError):
        online_finetune(ckpt, image, mask, -1, FAST)


def test_divergence_returns_last_good_checkpoint(stills):
    ckpt = pretrain_static(stills, replace(FAST, pretrain_iters=1), TINY)
    model = ckpt.to_model()
    with torch.no_grad():
        model.decoder.head.bias.fill_(float("nan"))
    from ranet.training import _static_sampler
    with pytest.raises(TrainingDiverged) as info:
        train_steps(model, _static_sampler(stills, FAST), 2, 1e-3, FAST, np.random.default_rng(0),
                    start_iteration=1)
    assert isinstance(info.value.checkpoint, Checkpoint)


def test_finetune_requires_annotated_videos(stills):
    ckpt = Checkpoint.from_model(RANet(TINY))
    v = generate_synthetic_video(SynthConfig(height=32, width=48, length=1, seed=1))
    with pytest.raises(ValueError):
        finetune_video([v], ckpt, FAST)


def test_config_roundtrip(tmp_path):
    cfg = replace(FAST, ablations=("-PM",), seed=5)
    path = save_config(tmp_path / "c.json", TINY, cfg)
    m, t = load_config(path)
    assert m == TINY and t == cfg
    path.write_text(path.read_text().replace('"schema_version": 1', '"schema_version": 9'))
    with pytest.raises(ConfigError):
        load_config(path)


def test_loss_csv(tmp_path):
    path = write_loss_csv(tmp_path / "l.csv", [0.5, 0.25])
    assert path.read_text().splitlines() == ["iteration,loss", "1,0.5", "2,0.25"]


def test_cosine_schedule():
    cfg = replace(FAST, lr_schedule="cosine", lr_floor=0.1)
    assert lr_factor(cfg, 0, 11) == pytest.approx(1.0)
    assert lr_factor(cfg, 5, 11) == pytest.approx(0.55)
    assert lr_factor(cfg, 10, 11) == pytest.approx(0.1)
    steps = [lr_factor(cfg, i, 11) for i in range(11)]
    assert all(a >= b for a, b in zip(steps, steps[1:]))
    assert lr_factor(FAST, 7, 11) == 1.0
    with pytest.raises(ConfigError):
        TrainConfig(lr_schedule="step")
