import math

import numpy as np
import pytest
import torch

from depmicrodiff.dat import DependencyAwareTransformer
from depmicrodiff.diffusion import (ConditionBundle, ar_diffusion_sample, ar_diffusion_train_step, build_condition,
                                    cosine_schedule, ddim_step, forward_sample, forward_step, mask_latent, predict_x0,
                                    reverse_step, select_timesteps, time_embedding, write_plan, write_schedule)
from depmicrodiff.errors import ConfigError, DataError
from depmicrodiff.masks import ARSplit, build_attention_mask

SCHED = cosine_schedule(1000)


def test_schedule_identities():
    ab = SCHED.alpha_bars
    assert ab[0] == 1.0 and ab[-1] < 1e-3
    assert np.all(np.diff(SCHED.betas) > 0)
    assert np.all((SCHED.betas > 0) & (SCHED.betas <= 0.999))
    assert np.all(np.diff(ab) < 0)
    snr = ab[1:] / (1 - ab[1:])
    assert np.all(np.diff(snr) < 0)
    with pytest.raises(ConfigError):
        cosine_schedule(0)


def test_schedule_matches_formula():
    s = 0.008
    f = lambda t: math.cos((t / 1000 + s) / (1 + s) * math.pi / 2) ** 2
    for t in (1, 10, 500, 900):
        assert SCHED.alpha_bars[t] == pytest.approx(f(t) / f(0), rel=1e-9)


def test_forward_sample_boundaries(rng):
    x0 = rng.standard_normal(5)
    assert np.array_equal(forward_sample(x0, 0, rng.standard_normal(5), SCHED), x0)
    assert np.allclose(forward_sample(x0, 300, np.zeros(5), SCHED), math.sqrt(SCHED.alpha_bars[300]) * x0)
    with pytest.raises(DataError):
        forward_sample(x0, 1001, x0, SCHED)


def test_closed_form_matches_iterated_steps():
    rng = np.random.default_rng(0)
    n, t, x0 = 100_000, 40, 1.5
    x = np.full(n, x0)
    for k in range(1, t + 1):
        x = forward_step(x, k, rng.standard_normal(n), SCHED)
    y = forward_sample(np.full(n, x0), t, rng.standard_normal(n), SCHED)
    assert abs(x.mean() - y.mean()) <= 0.02 * abs(y.mean())
    assert abs(x.var() - y.var()) <= 0.02 * y.var()


def test_x0_inversion_exact(rng):
    x0, eps = rng.standard_normal(50), rng.standard_normal(50)
    for t in (1, 100, 999):
        xt = forward_sample(x0, t, eps, SCHED)
        assert np.max(np.abs(predict_x0(xt, t, eps, SCHED) - x0)) < 1e-6


def test_reverse_step_t1_deterministic(rng):
    x, e = rng.standard_normal(4), rng.standard_normal(4)
    a = reverse_step(x, 1, e, rng.standard_normal(4), SCHED)
    b = reverse_step(x, 1, e, rng.standard_normal(4), SCHED)
    assert np.array_equal(a, b)


def test_reverse_oracle_recovers_data_mean():
    """Exact-score denoiser for Gaussian data N(m, s^2); ancestral chain over all T steps."""
    rng = np.random.default_rng(1)
    m, s, n = 2.0, 0.5, 10_000
    ab = SCHED.alpha_bars
    x = rng.standard_normal(n)
    for t in range(SCHED.T, 0, -1):
        eps_hat = math.sqrt(1 - ab[t]) * (x - math.sqrt(ab[t]) * m) / (ab[t] * s**2 + 1 - ab[t])
        x = reverse_step(x, t, eps_hat, rng.standard_normal(n), SCHED)
    assert abs(x.mean() - m) < 0.05 * m


def test_ddim_with_true_eps_is_exact(rng):
    x0, eps = rng.standard_normal(6), rng.standard_normal(6)
    xt = forward_sample(x0, 800, eps, SCHED)
    assert np.allclose(ddim_step(xt, 800, 0, eps, SCHED), x0, atol=1e-9)


def test_timestep_plans():
    split = ARSplit.from_sizes([2, 2, 3])
    full = select_timesteps(SCHED, "full", split=split)
    assert all(len(s) == 1000 for s in full.steps)
    frac = select_timesteps(SCHED, "fractional", 2, split)
    assert all(len(s) == 500 for s in frac.steps)
    assert set(frac.steps[0]) <= set(full.steps[0])
    assert all(list(s) == sorted(set(s)) and s[0] >= 1 and s[-1] <= 1000 for s in frac.steps)
    assert select_timesteps(SCHED, "fractional", 1, split).steps == full.steps
    ada = select_timesteps(SCHED, "adaptive", 4, split)
    assert [len(s) for s in ada.steps] == [71, 71, 108]
    with pytest.raises(ConfigError):
        select_timesteps(SCHED, "fractional", 2000, split)
    with pytest.warns(UserWarning):
        select_timesteps(SCHED, "fractional", 7, split)


def test_time_embedding():
    e = time_embedding(torch.arange(1, 1001), 8)
    d = torch.cdist(e, e)
    d.fill_diagonal_(1.0)
    assert d.min() > 0
    assert torch.all(e.norm(dim=-1) <= math.sqrt(8) + 1e-12)
    assert torch.equal(time_embedding(5, 8), time_embedding(5, 8))
    with pytest.raises(ConfigError):
        time_embedding(3, 7)


def test_condition_masking():
    m0 = torch.randn(2, 5, 3)
    ones, zeros = torch.ones(2, 5, dtype=torch.long), torch.zeros(2, 5, dtype=torch.long)
    proj = lambda meta, m0c, m: torch.zeros(m0c.shape[0], 2, 4)
    assert torch.all(build_condition(m0, ones, None, proj).observed_latent == 0)
    assert torch.equal(build_condition(m0, zeros, None, proj).observed_latent, m0)
    m = (torch.rand(2, 5) < 0.5).long()
    once = mask_latent(m0, m)
    assert torch.equal(mask_latent(once, m), once)
    with pytest.raises(DataError):
        build_condition(m0, torch.zeros(2, 4), None, proj)


class _Oracle(torch.nn.Module):
    """Returns the exact noise given the clean tokens (they are passed as ``clean``)."""

    def __init__(self, exact=True):
        super().__init__()
        self.exact = exact

    def forward(self, clean, noisy, t_tok, cond, mask, rows=None):
        if not self.exact:
            return torch.zeros_like(noisy)
        ab = torch.as_tensor(SCHED.alpha_bars, dtype=noisy.dtype)[t_tok].unsqueeze(-1)
        return (noisy - ab.sqrt() * clean) / (1 - ab).sqrt()


def _cond(B, S, h, c=2):
    return ConditionBundle(torch.zeros(B, S, h, dtype=torch.float64), torch.zeros(B, S), None,
                           torch.zeros(B, c, 4, dtype=torch.float64))


def test_train_step_oracle_and_zero_losses():
    B, S, h = 64, 6, 8
    z0 = torch.randn(B, S, h, dtype=torch.float64)
    split = ARSplit.from_sizes([2, 4])
    g = torch.Generator().manual_seed(0)
    assert ar_diffusion_train_step(z0, _Oracle(), _cond(B, S, h), split, None, SCHED, g).item() < 1e-12
    loss = ar_diffusion_train_step(z0, _Oracle(False), _cond(B, S, h), split, None, SCHED, g).item()
    assert loss == pytest.approx(1.0, abs=0.05)
    w = torch.zeros(B, S)
    w[:, 0] = 1
    assert ar_diffusion_train_step(z0, _Oracle(), _cond(B, S, h), split, None, SCHED, g, weight=w).item() < 1e-12


def _small_model(q=6, h=4, seed=0):
    torch.manual_seed(seed)
    model = DependencyAwareTransformer(q, h, 0, model_dim=16, n_layers=2, n_heads=2, ff_dim=32, c=2).double()
    with torch.no_grad():
        model.head.weight.normal_(0, 0.3)
    return model.eval()


def _model_cond(model, B, q, h, seed=0):
    g = torch.Generator().manual_seed(seed)
    m0 = torch.randn(B, q, h, generator=g, dtype=torch.float64)
    m = (torch.rand(B, q, generator=g) < 0.3).long()
    return build_condition(m0, m, None, model.condition)


def test_sampler_determinism_and_ar_causality():
    q, h = 6, 4
    model = _small_model(q, h)
    cond = _model_cond(model, 3, q, h)
    split = ARSplit.from_sizes([2, 1, 3])
    plan = select_timesteps(SCHED, "fractional", 20, split)
    a = ar_diffusion_sample(model, cond, None, SCHED, plan, split, seed=4)
    b = ar_diffusion_sample(model, cond, None, SCHED, plan, split, seed=4)
    assert torch.equal(a, b)
    c = ar_diffusion_sample(model, cond, None, SCHED, plan, split, segment_seeds=[4, 4, 99])
    d = ar_diffusion_sample(model, cond, None, SCHED, plan, split, segment_seeds=[4, 4, 4])
    assert torch.equal(c[:, :3], d[:, :3]) and not torch.equal(c[:, 3:], d[:, 3:])


def test_sampler_row_seeds_independent_of_batching():
    q, h = 5, 4
    model = _small_model(q, h)
    cond = _model_cond(model, 4, q, h)
    split = ARSplit.from_sizes([2, 3])
    plan = select_timesteps(SCHED, "full", split=split)
    plan = type(plan)("full", 1, tuple(tuple(range(1, 31)) for _ in plan.steps))
    both = ar_diffusion_sample(model, cond, None, SCHED, plan, split, seed=1, row_seeds=[10, 11, 12, 13])
    sub = ConditionBundle(cond.observed_latent[2:], cond.token_mask[2:], None, cond.condition_tokens[2:])
    alone = ar_diffusion_sample(model, sub, None, SCHED, plan, split, seed=1, row_seeds=[12, 13])
    assert torch.allclose(both[2:], alone, atol=1e-12)


def test_single_step_split_sampling():
    model = _small_model(4, 4)
    cond = _model_cond(model, 2, 4, 4)
    split = ARSplit.from_sizes([4])
    out = ar_diffusion_sample(model, cond, None, SCHED, select_timesteps(SCHED, "fractional", 20, split), split)
    assert out.shape == (2, 4, 4) and torch.isfinite(out).all()


def test_loss_halves_on_one_feature_toy():
    torch.manual_seed(0)
    q, h, B = 1, 4, 64
    model = DependencyAwareTransformer(q, h, 0, model_dim=32, n_layers=1, n_heads=2, ff_dim=64, c=1)
    opt = torch.optim.Adam(model.parameters(), lr=3e-3)
    g = torch.Generator().manual_seed(0)
    split = ARSplit.from_sizes([1])
    target = torch.tensor([1.0, -0.5, 0.25, 0.0])

    def loss_at(gen):
        z0 = target + 0.05 * torch.randn(B, q, h, generator=gen)
        cond = build_condition(z0, torch.ones(B, q, dtype=torch.long), None, model.condition)
        return ar_diffusion_train_step(z0, model, cond, split, None, SCHED, gen)

    with torch.no_grad():
        first = np.mean([loss_at(torch.Generator().manual_seed(k)).item() for k in range(20)])
    for _ in range(2000):
        loss = loss_at(g)
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        last = np.mean([loss_at(torch.Generator().manual_seed(k)).item() for k in range(20)])
    assert last <= 0.5 * first


def test_dumps(tmp_path):
    write_schedule(tmp_path / "s.csv", cosine_schedule(10))
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "t,beta,alpha_bar" and len(lines) == 11
    split = ARSplit.from_sizes([1, 2])
    write_plan(tmp_path / "p.txt", select_timesteps(cosine_schedule(10), "fractional", 2, split))
    assert len((tmp_path / "p.txt").read_text().splitlines()) == 2
