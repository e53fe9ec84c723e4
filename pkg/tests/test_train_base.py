"""Tests for stage-one training: the invariance regularizer, discriminator
updates, data hygiene (the discriminator never sees blanked states),
determinism, and checkpoint round trips."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from maskmotion.checkpoint import load_manifest, params_digest
from maskmotion.envs import EnvConfig
from maskmotion.errors import CheckpointError
from maskmotion.goals import HeadingTask
from maskmotion.nets import Discriminator, GaussianPolicy, gaussian_kl
from maskmotion.ppo import TrainConfig
from maskmotion.synth import desk_bundle
from maskmotion.train_base import BaseTrainer, discriminator_update, mi_loss, write_log

BUNDLE = desk_bundle(frames=60)

SMALL = TrainConfig(
    iterations=3,
    num_envs=8,
    horizon=8,
    minibatch_size=32,
    policy_epochs=2,
    disc_batch=32,
    disc_updates=1,
    hidden_dims=(32, 32),
    disc_hidden_dims=(32, 32),
    max_steps=40,
    seed=0,
)


def make_trainer(cfg=SMALL, task=None, **kw):
    return BaseTrainer(
        BUNDLE.spec, BUNDLE.partition, BUNDLE.clips, cfg, task=task,
        env_config=EnvConfig(max_steps=cfg.max_steps), **kw,
    )


# -- invariance loss ---------------------------------------------------------------

def test_mi_loss_bitwise_zero_for_null_mask():
    torch.manual_seed(0)
    policy = GaussianPolicy(6, 3, (16,), "silu", -0.5)
    obs = torch.randn(5, 6)
    loss = mi_loss(policy, obs, obs.clone())
    assert float(loss.detach()) == 0.0


def test_mi_loss_positive_when_inputs_differ():
    torch.manual_seed(0)
    policy = GaussianPolicy(6, 3, (16,), "silu", -0.5)
    full = torch.randn(5, 6)
    masked = full.clone()
    masked[:, :3] = 0.0
    assert float(mi_loss(policy, full, masked).detach()) > 0.0


def test_mi_loss_gradient_flows_only_through_masked_branch():
    torch.manual_seed(1)
    policy = GaussianPolicy(6, 3, (16,), "silu", -0.5)
    full = torch.randn(4, 6)
    masked = full.clone()
    masked[:, 2:4] = 0.0

    loss = mi_loss(policy, full, masked)
    loss.backward()
    grads = [p.grad.clone() for p in policy.parameters()]

    # reference: the full branch as hard constants
    policy.zero_grad()
    with torch.no_grad():
        mean_p, std_p = policy(full)
    mean_q, std_q = policy(masked)
    gaussian_kl(mean_p, std_p, mean_q, std_q).mean().backward()
    for g, p in zip(grads, policy.parameters()):
        assert torch.equal(g, p.grad)

    # sanity: without the stop-gradient the gradients would differ
    policy.zero_grad()
    mean_p2, std_p2 = policy(full)
    mean_q2, std_q2 = policy(masked)
    gaussian_kl(mean_p2, std_p2, mean_q2, std_q2).mean().backward()
    assert any(not torch.equal(g, p.grad) for g, p in zip(grads, policy.parameters()))


# -- discriminator update -------------------------------------------------------------

def test_discriminator_update_separates_toy_distributions():
    torch.manual_seed(2)
    disc = Discriminator(feature_dim=2, window_transitions=1, hidden_dims=(32,))
    opt = torch.optim.Adam(disc.parameters(), lr=1e-3)
    gen = torch.Generator().manual_seed(3)
    stats = {}
    for _ in range(200):
        real = torch.randn(64, 4, generator=gen) * 0.1 + 1.0
        fake = torch.randn(64, 4, generator=gen) * 0.1 - 1.0
        stats = discriminator_update(disc, opt, real, fake, gp_weight=5.0)
    assert stats["disc_real_acc"] > 0.95
    assert stats["disc_fake_acc"] > 0.95
    assert stats["disc_gp"] < 1.0
    assert np.isfinite(stats["disc_loss"])


# -- trainer basics ----------------------------------------------------------------------

def test_trainer_iteration_log_entry():
    tr = make_trainer()
    entry = tr.train_iteration()
    for key in (
        "iter", "reward_mean", "policy_loss", "mi_loss", "value_loss",
        "episodes", "masked_frac", "disc_loss", "disc_gp",
        "disc_real_acc", "disc_fake_acc",
    ):
        assert key in entry, key
    assert entry["iter"] == 1
    assert np.isfinite(entry["reward_mean"]) and entry["reward_mean"] >= 0.0
    assert 0.0 <= entry["masked_frac"] <= 1.0
    assert entry["mi_loss"] >= 0.0


def test_trainer_obs_dims_with_task():
    task = HeadingTask(BUNDLE.spec, SMALL.num_envs)
    tr = make_trainer(task=task, task_weight=0.5)
    assert tr.obs_dim == tr.S + tr.N + 3
    entry = tr.train_iteration()
    assert np.isfinite(entry["reward_mean"])


def test_discriminator_never_sees_masked_states():
    cfg = TrainConfig(**{**SMALL.to_dict(), "rho": 1.0})
    tr = make_trainer(cfg)

    stepped, pushed = [], []
    real_step = tr.env.step
    real_push = tr.tracker.push

    def spy_step(actions):
        out = real_step(actions)
        stepped.append(out[0].copy())
        return out

    def spy_push(states):
        pushed.append(states.copy())
        return real_push(states)

    tr.env.step = spy_step
    tr.tracker.push = spy_push
    buf, _, _, _ = tr.collect()

    assert len(stepped) == cfg.horizon and len(pushed) == cfg.horizon
    for a, b in zip(stepped, pushed):
        np.testing.assert_array_equal(a, b)

    # every env is masked (rho = 1), so each policy obs row has a zero block
    # while the stored full states generically do not
    flags = buf.get("flags")
    assert np.all(flags.sum(axis=-1) >= 1.0)
    obs = buf.get("obs")
    states = buf.get("states")
    dense = flags @ np.stack([
        (tr.index_map == g).astype(np.float64) for g in range(tr.N)
    ])
    masked_entries = dense > 0
    assert np.all(obs[..., : tr.S][masked_entries] == 0.0)
    assert np.any(states[masked_entries] != 0.0)


def test_masked_frac_tracks_rho():
    cfg = TrainConfig(**{**SMALL.to_dict(), "rho": 0.0})
    tr = make_trainer(cfg)
    entry = tr.train_iteration()
    assert entry["masked_frac"] == 0.0
    assert entry["mi_loss"] == 0.0  # null masks: the KL is exactly zero


# -- determinism -------------------------------------------------------------------------

def test_same_seed_bitwise_identical():
    log1 = make_trainer().train(2)
    tr2 = make_trainer()
    log2 = tr2.train(2)
    assert log1 == log2
    tr3 = make_trainer()
    tr3.train(2)
    assert params_digest(tr3._modules()) == params_digest(tr2._modules())


def test_different_seed_differs():
    tr1 = make_trainer()
    tr1.train(1)
    cfg2 = TrainConfig(**{**SMALL.to_dict(), "seed": 1})
    tr2 = make_trainer(cfg2)
    tr2.train(1)
    assert params_digest(tr1._modules()) != params_digest(tr2._modules())


# -- checkpointing ------------------------------------------------------------------------

def test_resume_matches_uninterrupted_run(tmp_path):
    tr_full = make_trainer()
    tr_full.train(4)

    tr_half = make_trainer()
    tr_half.train(2)
    ckpt = tr_half.save(tmp_path / "half")
    tr_resumed = BaseTrainer.load(ckpt, BUNDLE.clips)
    tr_resumed.train(2)

    assert params_digest(tr_resumed._modules()) == params_digest(tr_full._modules())
    assert tr_resumed.log == tr_full.log
    assert tr_resumed.iteration == 4


def test_zero_iteration_checkpoint(tmp_path):
    tr = make_trainer()
    ckpt = tr.save(tmp_path / "init")
    manifest = load_manifest(ckpt)
    assert manifest["iteration"] == 0
    assert manifest["stage"] == "base"
    assert manifest["dims"]["state"] == tr.S
    assert manifest["env_config"]["max_steps"] == 40
    tr2 = BaseTrainer.load(ckpt, BUNDLE.clips)
    assert params_digest(tr2._modules()) == params_digest(tr._modules())
    assert tr2.env_config.max_steps == 40
    entry = tr2.train_iteration()
    assert entry["iter"] == 1


def test_load_rejects_wrong_stage(tmp_path):
    tr = make_trainer()
    ckpt = tr.save(tmp_path / "c")
    manifest_path = ckpt / "manifest.json"
    import json

    m = json.loads(manifest_path.read_text())
    m["stage"] = "residual"
    manifest_path.write_text(json.dumps(m))
    with pytest.raises(CheckpointError, match="stage"):
        BaseTrainer.load(ckpt, BUNDLE.clips)


def test_manifest_records_task(tmp_path):
    task = HeadingTask(BUNDLE.spec, SMALL.num_envs)
    tr = make_trainer(task=task, task_weight=0.7)
    ckpt = tr.save(tmp_path / "t")
    m = load_manifest(ckpt)
    assert m["task"]["name"] == "heading"
    assert m["task_weight"] == 0.7
    assert m["dims"]["task_obs"] == 3


def test_write_log_jsonl(tmp_path):
    log = [{"iter": 1, "reward_mean": 0.5}, {"iter": 2, "reward_mean": 0.75}]
    path = tmp_path / "logs" / "run.jsonl"
    write_log(log, path)
    import json

    lines = path.read_text().strip().split("\n")
    assert [json.loads(s) for s in lines] == log
