"""Noise schedule, forward/reverse steps, timestep plans, conditioning and
autoregressive diffusion over AR-ordered latent tokens.

All latent tensors here are in token (AR) order: token k of a sample is the
k-th feature of the model's ordering.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, DataError, TrainingDivergence
from .masks import ARSplit, build_attention_mask


@dataclass(frozen=True)
class DiffusionSchedule:
    """``betas[t-1]`` is beta_t for t = 1..T; ``alpha_bars[t]`` for t = 0..T with alpha_bars[0] = 1."""

    T: int
    betas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def alphas(self):
        return 1.0 - self.betas

    def beta(self, t):
        return self.betas[np.asarray(t) - 1]

    def torch_alpha_bars(self, dtype=torch.float32):
        return torch.as_tensor(self.alpha_bars, dtype=dtype)


def cosine_schedule(T=1000, offset=0.008) -> DiffusionSchedule:
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    steps = np.arange(T + 1, dtype=float)
    f = np.cos((steps / T + offset) / (1 + offset) * math.pi / 2) ** 2
    ab = f / f[0]
    betas = np.clip(1.0 - ab[1:] / ab[:-1], 1e-8, 0.999)
    if np.any(np.diff(betas) <= 0):
        raise ConfigError(f"cosine schedule with T={T} is not strictly increasing after clipping")
    alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return DiffusionSchedule(T, betas, alpha_bars)


def _check_t(t, T, lo=0):
    ta = np.asarray(t.cpu() if torch.is_tensor(t) else t)
    if np.any(ta < lo) or np.any(ta > T):
        raise DataError(f"timestep out of range [{lo}, {T}]: {ta.min()}..{ta.max()}")


def _coef(sched, t, like, values):
    """Per-element coefficient ``values[t]`` broadcast against ``like``."""
    if torch.is_tensor(like):
        v = torch.as_tensor(values, dtype=like.dtype)[torch.as_tensor(t, dtype=torch.long)]
        while v.dim() < like.dim():
            v = v.unsqueeze(-1)
        return v
    v = np.asarray(values)[np.asarray(t)]
    return v[..., None] if np.ndim(v) and np.ndim(v) < np.ndim(like) else v


def forward_sample(x0, t, eps, sched: DiffusionSchedule):
    """Closed-form q(x_t | x_0): sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    _check_t(t, sched.T)
    ab = _coef(sched, t, x0, sched.alpha_bars)
    sqrt = torch.sqrt if torch.is_tensor(x0) else np.sqrt
    return sqrt(ab) * x0 + sqrt(1.0 - ab) * eps


def forward_step(x_prev, t, eps, sched: DiffusionSchedule):
    """One Markov transition q(x_t | x_{t-1})."""
    _check_t(t, sched.T, lo=1)
    beta = float(sched.beta(t))
    return math.sqrt(1.0 - beta) * x_prev + math.sqrt(beta) * eps


def predict_x0(x_t, t, eps_hat, sched: DiffusionSchedule):
    ab = _coef(sched, t, x_t, sched.alpha_bars)
    sqrt = torch.sqrt if torch.is_tensor(x_t) else np.sqrt
    return (x_t - sqrt(1.0 - ab) * eps_hat) / sqrt(ab)


def reverse_step(x_t, t, eps_hat, eps_draw, sched: DiffusionSchedule):
    """Ancestral step t -> t-1 with posterior variance; no noise at t = 1."""
    _check_t(t, sched.T, lo=1)
    t = int(t)
    beta = sched.betas[t - 1]
    ab_t, ab_prev = sched.alpha_bars[t], sched.alpha_bars[t - 1]
    mean = (x_t - (beta / math.sqrt(1.0 - ab_t)) * eps_hat) / math.sqrt(1.0 - beta)
    if t == 1:
        return mean
    var = beta * (1.0 - ab_prev) / (1.0 - ab_t)
    return mean + math.sqrt(var) * eps_draw


def ddim_step(x_t, t, t_prev, eps_hat, sched: DiffusionSchedule, clip=None):
    """Deterministic (eta = 0) jump from t to an earlier plan step t_prev."""
    ab_t, ab_prev = sched.alpha_bars[int(t)], sched.alpha_bars[int(t_prev)]
    x0 = (x_t - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
    if clip is not None:
        x0 = x0.clamp(-clip, clip) if torch.is_tensor(x0) else np.clip(x0, -clip, clip)
    return math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * eps_hat


@dataclass(frozen=True)
class TimestepPlan:
    mode: str
    n: int
    steps: tuple[tuple[int, ...], ...]  # ascending timesteps, one tuple per AR step


def _evenly_spaced(T, count):
    return tuple(int(math.ceil(k * T / count)) for k in range(1, count + 1))


def select_timesteps(sched: DiffusionSchedule, mode="fractional", n=20, split: ARSplit | None = None) -> TimestepPlan:
    """Full: all T steps; fractional: floor(T/n) evenly spaced steps;
    adaptive: the fractional budget shared across AR steps in proportion to
    their sizes (at least one step each)."""
    T = sched.T
    n_steps = split.n_steps if split is not None else 1
    if mode == "full":
        return TimestepPlan(mode, 1, tuple(tuple(range(1, T + 1)) for _ in range(n_steps)))
    if n < 1 or n > T:
        raise ConfigError(f"fraction divisor n must lie in [1, T={T}], got {n}")
    if n not in (1, 2, 3, 4, 20):
        warnings.warn(f"fraction divisor n={n} is outside the usual {{2, 3, 4, 20}}", stacklevel=2)
    budget = T // n
    if mode == "fractional":
        return TimestepPlan(mode, n, tuple(_evenly_spaced(T, budget) for _ in range(n_steps)))
    if mode == "adaptive":
        sizes = np.array(split.sizes if split is not None else [1])
        share = budget * sizes / sizes.sum()
        alloc = np.maximum(np.floor(share).astype(int), 1)
        leftover = budget - alloc.sum()
        if leftover > 0:
            # ties go to the later (deeper) AR step
            biggest = len(sizes) - 1 - int(np.argmax(sizes[::-1]))
            alloc[biggest] += leftover
        return TimestepPlan(mode, n, tuple(_evenly_spaced(T, int(min(a, T))) for a in alloc))
    raise ConfigError(f"unknown sampling mode {mode!r}")


def time_embedding(t, dim):
    """Sinusoidal embedding with frequencies geometric from 1 down to 1/10000."""
    if dim % 2:
        raise ConfigError(f"time embedding width must be even, got {dim}")
    half = dim // 2
    t = torch.as_tensor(t)
    exponent = torch.arange(half, dtype=torch.float64) / max(half - 1, 1)
    freqs = 10000.0 ** (-exponent)
    ang = t.to(torch.float64).unsqueeze(-1) * freqs
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


@dataclass
class ConditionBundle:
    observed_latent: torch.Tensor  # (B, S, h): m0 with masked tokens zeroed
    token_mask: torch.Tensor  # (B, S): 1 = masked
    meta_embedding: torch.Tensor | None  # (B, E) or None when metadata is switched off
    condition_tokens: torch.Tensor  # (B, c, D)

    @property
    def c(self):
        return self.condition_tokens.shape[1]

    def repeat(self, k):
        rep = lambda x: None if x is None else x.repeat_interleave(k, dim=0)
        return ConditionBundle(rep(self.observed_latent), rep(self.token_mask), rep(self.meta_embedding),
                               rep(self.condition_tokens))


def mask_latent(m0, m):
    """(1 - m) * m0 with a token-level mask broadcast over latent channels."""
    keep = (1 - m).to(m0.dtype)
    while keep.dim() < m0.dim():
        keep = keep.unsqueeze(-1)
    return keep * m0


def build_condition(m0, m, meta_embedding, proj) -> ConditionBundle:
    """``proj(meta_embedding, m0_c, m)`` returns the (B, c, D) condition tokens."""
    m0 = torch.as_tensor(m0)
    m = torch.as_tensor(m)
    if m.shape != m0.shape[:-1]:
        raise DataError(f"token mask shape {tuple(m.shape)} does not match latent grid {tuple(m0.shape)}")
    m0_c = mask_latent(m0, m)
    tokens = proj(meta_embedding, m0_c, m)
    if tokens.shape[1] < 1:
        raise DataError("need at least one condition token")
    return ConditionBundle(m0_c, m, meta_embedding, tokens)


def ar_diffusion_train_step(z0, model, cond: ConditionBundle, split: ARSplit, dep, sched: DiffusionSchedule,
                            generator, dep_mode="or_as_written", step=None, weight=None, t_power=1.0):
    """Epsilon-prediction MSE for one batch under one AR split.

    Every AR step gets its own timestep per sample; clean tokens of earlier
    steps are the visible context. ``step=None`` scores every AR step at
    once (the mask keeps them independent); an integer scores only that step.
    ``weight`` (B, S) down-weights tokens whose target is unreliable.
    ``t_power`` < 1 shifts timestep draws toward high noise (t = ceil(T u^p));
    1 is the uniform draw.
    """
    B, S, _ = z0.shape
    seg = torch.as_tensor(split.segment_ids())
    if t_power == 1.0:
        t_seg = torch.randint(1, sched.T + 1, (B, split.n_steps), generator=generator)
    else:
        u = torch.rand((B, split.n_steps), generator=generator, dtype=torch.float64)
        t_seg = torch.ceil(sched.T * u**t_power).long().clamp(1, sched.T)
    t_tok = t_seg[:, seg]
    eps = torch.randn(z0.shape, generator=generator, dtype=z0.dtype)
    x_t = forward_sample(z0, t_tok, eps, sched)
    mask = build_attention_mask(S, cond.c, split, dep, dep_mode)
    eps_hat = model(z0, x_t, t_tok, cond, mask)
    err = ((eps_hat - eps) ** 2).mean(-1)
    w = torch.ones_like(err) if weight is None else torch.as_tensor(weight, dtype=err.dtype)
    if step is not None:
        sl = slice(split.cumsum[step], split.cumsum[step + 1])
        err, w = err[:, sl], w[:, sl]
    loss = (err * w).sum() / w.sum().clamp_min(1e-12)
    if not torch.isfinite(loss):
        raise TrainingDivergence("non-finite diffusion loss", {"split": str(split)})
    return loss


def _segment_generator(seed, g):
    gen = torch.Generator()
    gen.manual_seed(int(np.random.SeedSequence([int(seed), g]).generate_state(1)[0]))
    return gen


def _draw(shape, gens, dtype):
    """Noise from one generator, or one generator per batch row."""
    if isinstance(gens, torch.Generator):
        return torch.randn(shape, generator=gens, dtype=dtype)
    return torch.stack([torch.randn(shape[1:], generator=g, dtype=dtype) for g in gens])


@torch.no_grad()
def ar_diffusion_sample(model, cond: ConditionBundle, dep, sched: DiffusionSchedule, plan: TimestepPlan,
                        split: ARSplit, seed=0, dep_mode="or_as_written", clip=None, segment_seeds=None,
                        row_seeds=None):
    """Generate AR steps in order; each starts from Gaussian noise, is denoised
    along its plan, then joins the clean context for later steps.

    Every AR step draws from its own generator, so changing the stream of a
    later step leaves earlier steps untouched. With ``row_seeds`` each batch
    row also gets its own stream, so a row's draw does not depend on batching.
    """
    B, S, h = cond.observed_latent.shape
    if split.total != S or len(plan.steps) != split.n_steps:
        raise DataError("plan/split do not match the token grid")
    dtype = cond.observed_latent.dtype
    mask = build_attention_mask(S, cond.c, split, dep, dep_mode)
    clean = torch.zeros(B, S, h, dtype=dtype)
    for g in range(split.n_steps):
        lo, hi = split.cumsum[g], split.cumsum[g + 1]
        base = segment_seeds[g] if segment_seeds is not None else seed
        if row_seeds is not None:
            if len(row_seeds) != B:
                raise DataError(f"{len(row_seeds)} row seeds for batch of {B}")
            gen = [_segment_generator(base, int(r) * 65537 + g) for r in row_seeds]
        else:
            gen = _segment_generator(base, g)
        x = _draw((B, hi - lo, h), gen, dtype)
        steps = plan.steps[g]
        for k in range(len(steps) - 1, -1, -1):
            t = steps[k]
            noisy = torch.zeros(B, S, h, dtype=dtype)
            noisy[:, lo:hi] = x
            t_tok = torch.full((B, S), t, dtype=torch.long)
            eps_hat = model(clean, noisy, t_tok, cond, mask, rows=(lo, hi))
            if plan.mode == "full":
                x = reverse_step(x, t, eps_hat, _draw(x.shape, gen, dtype), sched)
            else:
                x = ddim_step(x, t, steps[k - 1] if k > 0 else 0, eps_hat, sched, clip)
        clean[:, lo:hi] = x
    return clean


def write_schedule(path, sched: DiffusionSchedule):
    lines = ["t,beta,alpha_bar"]
    lines += [f"{t},{sched.betas[t - 1]!r},{sched.alpha_bars[t]!r}" for t in range(1, sched.T + 1)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_plan(path, plan: TimestepPlan):
    with open(path, "w", encoding="utf-8") as fh:
        for steps in plan.steps:
            fh.write(" ".join(str(t) for t in steps) + "\n")
