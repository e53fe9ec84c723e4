import numpy as np
import pytest
import torch
import torch.nn as nn

from maskmotion.errors import InvalidInputError
from maskmotion.nets import (
    Discriminator,
    GaussianPolicy,
    LOGIT_CLAMP,
    MLPSpec,
    PopArtCritic,
    build_mlp,
    gaussian_kl,
    gradient_penalty,
)


def test_mlp_spec_validation():
    with pytest.raises(InvalidInputError):
        MLPSpec(0, (8,), 1)
    with pytest.raises(InvalidInputError):
        MLPSpec(4, (), 1)
    with pytest.raises(InvalidInputError):
        MLPSpec(4, (8,), 1, activation="swishy")


def test_build_mlp_shapes():
    net = build_mlp(MLPSpec(6, (16, 8), 3))
    out = net(torch.zeros(5, 6))
    assert out.shape == (5, 3)


# -- policy ------------------------------------------------------------------

def test_policy_output_shapes_and_determinism():
    torch.manual_seed(0)
    pol = GaussianPolicy(10, 4, (16, 16))
    obs = torch.randn(7, 10)
    mean, std = pol(obs)
    assert mean.shape == (7, 4) and std.shape == (7, 4)
    assert pol.act_deterministic(obs).equal(mean)
    g1 = torch.Generator().manual_seed(5)
    g2 = torch.Generator().manual_seed(5)
    a1, lp1 = pol.sample(obs, g1)
    a2, lp2 = pol.sample(obs, g2)
    assert a1.equal(a2) and lp1.equal(lp2)


def test_policy_log_std_init_and_clamp():
    pol = GaussianPolicy(4, 2, (8,), log_std_init=-1.0)
    _, std = pol(torch.zeros(1, 4))
    assert torch.allclose(std, torch.exp(torch.tensor(-1.0)) * torch.ones(1, 2))
    with torch.no_grad():
        pol.log_std.fill_(10.0)
    _, std_hi = pol(torch.zeros(1, 4))
    assert torch.allclose(std_hi, torch.exp(torch.tensor(2.0)) * torch.ones(1, 2))
    with torch.no_grad():
        pol.log_std.fill_(-20.0)
    _, std_lo = pol(torch.zeros(1, 4))
    assert torch.allclose(std_lo, torch.exp(torch.tensor(-5.0)) * torch.ones(1, 2))


def test_policy_log_prob_matches_numpy_oracle():
    torch.manual_seed(1)
    pol = GaussianPolicy(6, 3, (16,))
    obs = torch.randn(11, 6)
    actions = torch.randn(11, 3)
    lp = pol.log_prob(obs, actions).detach().numpy()
    mean, std = (x.detach().numpy().astype(np.float64) for x in pol(obs))
    a = actions.numpy().astype(np.float64)
    oracle = -0.5 * np.sum(
        (a - mean) ** 2 / std**2 + 2 * np.log(std) + np.log(2 * np.pi), axis=-1
    )
    assert np.allclose(lp, oracle, atol=1e-5)


def test_policy_obs_dim_check():
    pol = GaussianPolicy(6, 3, (8,))
    with pytest.raises(InvalidInputError):
        pol(torch.zeros(2, 7))


def test_zero_mean_head():
    torch.manual_seed(2)
    pol = GaussianPolicy(5, 3, (16, 8))
    pol.zero_mean_head()
    obs = torch.randn(9, 5)
    mean, _ = pol(obs)
    assert mean.abs().max().item() == 0.0


# -- discriminator --------------------------------------------------------------

def test_discriminator_window_dims():
    d = Discriminator(feature_dim=10, window_transitions=5, hidden_dims=(16,))
    assert d.input_dim == 60
    out = d.logits(torch.zeros(3, 60))
    assert out.shape == (3,)
    with pytest.raises(InvalidInputError):
        d.logits(torch.zeros(3, 50))
    with pytest.raises(InvalidInputError):
        d.logits(torch.zeros(3, 60), torch.zeros(3, 5))


def test_discriminator_conditional_dims():
    d = Discriminator(feature_dim=10, window_transitions=2, hidden_dims=(16,), condition_dim=5)
    out = d.logits(torch.zeros(3, 30), torch.zeros(3, 5))
    assert out.shape == (3,)
    with pytest.raises(InvalidInputError):
        d.logits(torch.zeros(3, 30))
    with pytest.raises(InvalidInputError):
        d.logits(torch.zeros(3, 30), torch.zeros(3, 4))


def test_discriminator_logit_clamp_and_score_range():
    torch.manual_seed(3)
    d = Discriminator(feature_dim=4, window_transitions=1, hidden_dims=(8,))
    with torch.no_grad():
        for p in d.parameters():
            p.mul_(100.0)  # force saturation
    x = torch.randn(64, 8) * 10
    logits = d.logits(x)
    assert logits.abs().max() <= LOGIT_CLAMP
    scores = d.score(x)
    assert torch.all(scores > 0.0) and torch.all(scores < 1.0)


# -- PopArt ------------------------------------------------------------------------

def test_popart_constant_targets_hit_sigma_floor():
    critic = PopArtCritic(4, (8,), num_streams=1, sigma_floor=1e-4)
    for _ in range(50):
        critic.update_stats(torch.full((32, 1), 3.5))
    assert critic.sigma.item() == pytest.approx(1e-4)
    assert critic.mu.item() == pytest.approx(3.5, abs=1e-6)


def test_popart_normalizes_gaussian_stream():
    torch.manual_seed(4)
    critic = PopArtCritic(4, (8,), num_streams=1, beta=1e-2)
    gen = torch.Generator().manual_seed(10)
    for _ in range(100):
        batch = 10.0 + 2.0 * torch.randn(256, 1, generator=gen)
        critic.update_stats(batch)
    fresh = 10.0 + 2.0 * torch.randn(4096, 1, generator=gen)
    normed = critic.normalize_targets(fresh)
    assert abs(normed.mean().item()) < 0.1
    assert 0.5 < normed.std().item() < 2.0


def test_popart_rescaling_preserves_denormalized_values():
    torch.manual_seed(5)
    critic = PopArtCritic(6, (16, 8), num_streams=2)
    obs = torch.randn(32, 6)
    gen = torch.Generator().manual_seed(11)
    before = critic.values(obs).detach()
    for _ in range(20):
        targets = torch.cat(
            [5.0 + torch.randn(64, 1, generator=gen), -3.0 + 0.5 * torch.randn(64, 1, generator=gen)],
            dim=1,
        )
        critic.update_stats(targets)
        after = critic.values(obs).detach()
        assert torch.allclose(after, before, atol=1e-5), "head rescale drifted outputs"
        before = after


def test_popart_streams_are_independent():
    critic = PopArtCritic(4, (8,), num_streams=2, sigma_floor=1e-4)
    gen = torch.Generator().manual_seed(12)
    for _ in range(60):
        t0 = torch.full((128, 1), 2.0)
        t1 = 4.0 * torch.randn(128, 1, generator=gen)
        critic.update_stats(torch.cat([t0, t1], dim=1))
    sigma = critic.sigma
    assert sigma[0].item() == pytest.approx(1e-4)
    assert sigma[1].item() > 1.0


def test_popart_target_shape_check():
    critic = PopArtCritic(4, (8,), num_streams=2)
    with pytest.raises(InvalidInputError):
        critic.update_stats(torch.zeros(16, 3))


# -- KL --------------------------------------------------------------------------

def kl_oracle(mp, sp, mq, sq):
    """Closed form in float64."""
    mp, sp, mq, sq = (np.asarray(x, dtype=np.float64) for x in (mp, sp, mq, sq))
    return np.sum(
        np.log(sq / sp) + (sp**2 + (mp - mq) ** 2) / (2.0 * sq**2) - 0.5, axis=-1
    )


def test_gaussian_kl_matches_closed_form():
    rng = np.random.default_rng(13)
    mp = rng.standard_normal((20, 6))
    mq = rng.standard_normal((20, 6))
    sp = np.exp(rng.uniform(-1, 1, (20, 6)))
    sq = np.exp(rng.uniform(-1, 1, (20, 6)))
    kl = gaussian_kl(*(torch.as_tensor(x) for x in (mp, sp, mq, sq))).numpy()
    assert np.allclose(kl, kl_oracle(mp, sp, mq, sq), rtol=1e-10)


def test_gaussian_kl_identical_is_exactly_zero():
    m = torch.tensor([[0.3, -1.2, 4.0]])
    s = torch.tensor([[0.5, 1.7, 0.01]])
    kl = gaussian_kl(m, s, m.clone(), s.clone())
    assert kl.item() == 0.0  # bitwise zero, not just approximately


def test_gaussian_kl_monte_carlo_oracle():
    # estimate E_p[log p - log q] by sampling; agreement within 2%
    rng = np.random.default_rng(14)
    mp = np.array([0.5, -0.2])
    sp = np.array([0.8, 1.3])
    mq = np.array([-0.1, 0.4])
    sq = np.array([1.1, 0.9])
    x = mp + sp * rng.standard_normal((2_000_000, 2))

    def logpdf(x, m, s):
        return np.sum(-0.5 * ((x - m) / s) ** 2 - np.log(s) - 0.5 * np.log(2 * np.pi), axis=-1)

    mc = float(np.mean(logpdf(x, mp, sp) - logpdf(x, mq, sq)))
    kl = gaussian_kl(
        torch.as_tensor(mp[None]), torch.as_tensor(sp[None]),
        torch.as_tensor(mq[None]), torch.as_tensor(sq[None]),
    ).item()
    assert abs(kl - mc) / abs(kl) < 0.02


def test_gaussian_kl_is_nonnegative_property():
    rng = np.random.default_rng(15)
    for _ in range(200):
        mp, mq = rng.standard_normal((2, 4))
        sp, sq = np.exp(rng.uniform(-2, 2, (2, 4)))
        kl = gaussian_kl(
            torch.as_tensor(mp[None]), torch.as_tensor(sp[None]),
            torch.as_tensor(mq[None]), torch.as_tensor(sq[None]),
        ).item()
        assert kl >= 0.0


def test_gaussian_kl_rejects_nonpositive_std():
    m = torch.zeros(1, 2)
    with pytest.raises(InvalidInputError):
        gaussian_kl(m, torch.tensor([[1.0, 0.0]]), m, torch.ones(1, 2))


# -- gradient penalty ---------------------------------------------------------------

def test_gradient_penalty_linear_oracle():
    # for a linear logit w.x + b the penalty is exactly ||w||^2
    d = Discriminator(feature_dim=3, window_transitions=1, hidden_dims=(4,))
    w = torch.tensor([[0.3, -0.7, 0.2, 0.9, -0.1, 0.4]])
    lin = nn.Linear(6, 1)
    with torch.no_grad():
        lin.weight.copy_(w)
        lin.bias.zero_()
    d.net = nn.Sequential(lin)
    x = torch.randn(16, 6)
    gp = gradient_penalty(d, x)
    assert gp.item() == pytest.approx(float((w**2).sum()), rel=1e-6)


def test_gradient_penalty_includes_condition_gradient():
    d = Discriminator(feature_dim=2, window_transitions=1, hidden_dims=(4,), condition_dim=2)
    w = torch.tensor([[0.5, -0.5, 1.0, 2.0, 0.0, 3.0]])  # last two: condition weights
    lin = nn.Linear(6, 1)
    with torch.no_grad():
        lin.weight.copy_(w)
        lin.bias.zero_()
    d.net = nn.Sequential(lin)
    gp = gradient_penalty(d, torch.randn(8, 4), torch.randn(8, 2))
    assert gp.item() == pytest.approx(float((w**2).sum()), rel=1e-6)


def test_gradient_penalty_finite_difference():
    torch.manual_seed(16)
    d = Discriminator(feature_dim=3, window_transitions=1, hidden_dims=(8, 8)).double()
    x = torch.randn(4, 6, dtype=torch.float64)
    gp = gradient_penalty(d, x).item()
    # numerical gradient of the logit for one sample
    h = 1e-6
    num = 0.0
    for b in range(4):
        g = np.zeros(6)
        for k in range(6):
            xp, xm = x.clone(), x.clone()
            xp[b, k] += h
            xm[b, k] -= h
            g[k] = (d.logits(xp)[b].item() - d.logits(xm)[b].item()) / (2 * h)
        num += float((g**2).sum())
    assert gp == pytest.approx(num / 4.0, rel=1e-5)


def test_gradient_penalty_backpropagates():
    torch.manual_seed(17)
    d = Discriminator(feature_dim=3, window_transitions=1, hidden_dims=(8,))
    gp = gradient_penalty(d, torch.randn(8, 6))
    gp.backward()
    grads = [p.grad for p in d.parameters() if p.grad is not None]
    assert grads and any(g.abs().sum() > 0 for g in grads)
