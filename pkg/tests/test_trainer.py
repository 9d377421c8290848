import json

import pytest
import torch

from mspn.checkpoint import load_checkpoint
from mspn.config import from_dict
from mspn.metrics import evaluate
from mspn.trainer import D_PHASE, G_PHASE, NonFiniteLossError, Trainer, train


def toy_config(**kw):
    cfg = {
        "data": {"canvas": 16, "digits": 1, "glyph_size": 8, "train_count": 8, "test_count": 4,
                 "speed_min": 1.0, "speed_max": 2.0},
        "network": {"levels": 2, "hidden_channels": 4, "code_channels": 2},
        "context": 3, "horizon": 2, "batch_size": 2, "epochs": 1, "adversarial": False,
    }
    for key, value in kw.items():
        if isinstance(value, dict):
            cfg.setdefault(key, {}).update(value)
        else:
            cfg[key] = value
    return from_dict(cfg)


def params(module):
    return [p.detach().clone() for p in module.parameters()]


def same(a, b):
    return all(torch.equal(x, y) for x, y in zip(a, b))


def test_pixel_only_run(tmp_path):
    result = train(toy_config(), tmp_path)
    assert result.discriminator is None
    ckpt = load_checkpoint(tmp_path / "checkpoints" / "final.pt")
    assert ckpt.discriminator is None and ckpt.step == 4
    steps = [r for r in result.history if r["type"] == "step"]
    assert len(steps) == 4 and all(r["loss_pix"] == r["loss_pix"] for r in steps)
    assert (tmp_path / "config.resolved.yaml").exists()
    log = [json.loads(l) for l in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert [r["step"] for r in log if r["type"] == "step"] == [1, 2, 3, 4]


def test_adversarial_smoke_keeps_score_window(tmp_path):
    cfg = toy_config(adversarial=True, epochs=3, lr_d=1e-3, disc_base_channels=4,
                     data={"train_count": 16})
    result = train(cfg, tmp_path)
    switches = result.alternation.switches
    assert switches, "no phase switch happened"
    for sw in switches:
        if sw["reason"] == "guard":
            continue
        if sw["phase"] == D_PHASE:
            assert sw["fake"] < sw["real"] - sw["c1"]
        else:
            assert sw["fake"] > sw["real"] - sw["c2"]
    assert result.alternation.guard_trips < 0.2 * len(switches)
    ckpt = load_checkpoint(tmp_path / "checkpoints" / "final.pt")
    assert ckpt.discriminator is not None


def test_frozen_party_invariant(tmp_path):
    tr = Trainer(toy_config(adversarial=True, lr_d=1e-3), tmp_path)
    tr.out_dir.mkdir(parents=True, exist_ok=True)
    batch = next(tr.train_set.batches(2))
    g_before, d_before = params(tr.generator), params(tr.discriminator)
    tr.update_d(tr.measure_d(batch)[2])
    assert same(g_before, params(tr.generator)) and not same(d_before, params(tr.discriminator))
    d_before = params(tr.discriminator)
    tr.update_g(tr.measure_g(batch)[2])
    assert same(d_before, params(tr.discriminator)) and not same(g_before, params(tr.generator))
    assert tr.step == 2


def test_long_term_mode_feeds_back_after_context(tmp_path):
    cfg = toy_config(context=10, horizon=5, long_term=True, long_term_start=0.5,
                     data={"canvas": 16, "train_count": 4})
    tr = Trainer(cfg, tmp_path)
    tr.run()
    # second half of the batches runs with predicted feedback on steps 11..15
    assert tr.rollout_mode() == "predicted_feedback"
    assert tr.last_fed_back == [10, 11, 12, 13, 14]
    modes = [r["mode"] for r in tr.history if r["type"] == "step"]
    assert modes == ["teacher_forced", "predicted_feedback"]


def test_identical_seeds_give_identical_reports(tmp_path):
    a = train(toy_config(), tmp_path / "a")
    b = train(toy_config(), tmp_path / "b")
    ra = [r for r in a.history if r["type"] == "eval"]
    rb = [r for r in b.history if r["type"] == "eval"]
    assert ra == rb and ra


@pytest.mark.parametrize("adversarial", [False, True])
def test_resume_matches_unbroken_run(tmp_path, adversarial):
    cfg = toy_config(epochs=2, adversarial=adversarial, lr_d=1e-3)
    full = train(cfg, tmp_path / "full")
    part = train(cfg, tmp_path / "resumed", stop_after=3)
    assert part.step < full.step
    resumed = train(cfg, tmp_path / "resumed", resume=True)
    assert resumed.step == full.step
    test = Trainer(cfg, tmp_path / "x").test_set
    ra = evaluate(full.generator, test, cfg.context, cfg.horizon)
    rb = evaluate(resumed.generator, test, cfg.context, cfg.horizon)
    assert ra.ssim == pytest.approx(rb.ssim, abs=1e-6) and ra.mse == pytest.approx(rb.mse, abs=1e-6)


def test_non_finite_loss_aborts_with_diagnostic(tmp_path):
    tr = Trainer(toy_config(), tmp_path)
    with torch.no_grad():
        next(tr.generator.parameters()).fill_(float("nan"))
    with pytest.raises(NonFiniteLossError):
        tr.run()
    assert (tmp_path / "checkpoints" / "diagnostic.pt").exists()


def test_max_steps_and_snapshots(tmp_path):
    result = train(toy_config(epochs=5, max_steps=6, eval_every=2), tmp_path)
    evals = [r for r in result.history if r["type"] == "eval"]
    assert result.step == 6 and [r["batches_seen"] for r in evals] == [2, 4, 6]
