"""Dependency-aware transformer denoiser, its training loop, checkpoints and
the imputation entry point.

Each attention layer takes keys and values from the embedded input tokens
rather than from updated hidden states. A query row therefore only ever
mixes information from the columns its mask row allows, so a blocked
position has no influence even when the mask is not transitive (as it is
not once dependency edges are folded in). It also lets sampling evaluate
just the rows of the current AR step.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .data import NormalizedMatrix
from .dependency import DependencyMatrix
from .diffusion import (ar_diffusion_sample, ar_diffusion_train_step, build_condition, cosine_schedule,
                        select_timesteps, time_embedding)
from .errors import ConfigError, DataError, TrainingDivergence
from .masks import DEP_MODES, AttentionMask, generate_ar_steps, permute_dep
from .vae import TokenVAE, VAEConfig, config_hash, fit_vae, state_arrays, transfer, vae_from_arrays, write_npz

Y_MAX = math.log10(101.0)  # upper bound of log10(1 + percent abundance)


@dataclass
class DATConfig:
    model_dim: int = 64
    n_layers: int = 4
    n_heads: int = 4
    ff_dim: int = 256
    c: int = 2
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 200
    patience: int = 20
    val_fraction: float = 0.1
    decay_alpha: float = 0.8
    dep_mode: str = "or_as_written"
    use_metadata: bool = True
    parameterization: str = "v"  # network output read as v (converted to eps) or as eps directly
    T: int = 1000
    schedule_offset: float = 0.008
    t_power: float = 1.0  # < 1 draws training timesteps toward high noise
    train_mask_max: float = 0.6  # extra masking: per-sample rate ~ U(0, max) over observed nonzeros
    grad_clip: float = 1.0
    ema_decay: float = 0.0  # > 0 keeps an exponential moving average of the weights for validation and sampling
    divergence_threshold: float = 1e3
    seed: int = 0

    def validate(self):
        if self.model_dim % self.n_heads or self.model_dim % 2:
            raise ConfigError(f"model_dim {self.model_dim} must be even and divisible by n_heads {self.n_heads}")
        if self.c < 1:
            raise ConfigError("need at least one condition token")
        if self.dep_mode not in DEP_MODES:
            raise ConfigError(f"dep_mode must be one of {DEP_MODES}")
        if not 0.0 < self.decay_alpha <= 1.0:
            raise ConfigError(f"decay_alpha must lie in (0, 1], got {self.decay_alpha}")
        if self.parameterization not in ("v", "eps"):
            raise ConfigError(f"parameterization must be 'v' or 'eps', got {self.parameterization!r}")
        if not 0.0 <= self.train_mask_max < 1.0:
            raise ConfigError("train_mask_max must lie in [0, 1)")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError("ema_decay must lie in [0, 1)")
        return self


@dataclass
class SamplerConfig:
    mode: str = "fractional"
    n: int = 20
    n_draws: int = 8
    clip: float | None = 5.0  # x0 clip in standardized latent units (DDIM only)
    seed: int = 0
    chunk: int = 256


class _Block(nn.Module):
    """Pre-norm attention + feed-forward; keys/values come from ``X``."""

    def __init__(self, D, heads, ff):
        super().__init__()
        self.heads = heads
        self.ln_q = nn.LayerNorm(D)
        self.ln_kv = nn.LayerNorm(D)
        self.q = nn.Linear(D, D)
        self.kv = nn.Linear(D, 2 * D)
        self.o = nn.Linear(D, D)
        self.ln_ff = nn.LayerNorm(D)
        self.ff = nn.Sequential(nn.Linear(D, ff), nn.SiLU(), nn.Linear(ff, D))

    def forward(self, H, X, blocked):
        B, R, D = H.shape
        N, nh = X.shape[1], self.heads
        dh = D // nh
        q = self.q(self.ln_q(H)).view(B, R, nh, dh).transpose(1, 2)
        k, v = self.kv(self.ln_kv(X)).view(B, N, 2, nh, dh).permute(2, 0, 3, 1, 4)
        att = (q @ k.transpose(-1, -2)) / math.sqrt(dh)
        att = att.masked_fill(blocked, float("-inf")).softmax(-1)
        H = H + self.o((att @ v).transpose(1, 2).reshape(B, R, D))
        return H + self.ff(self.ln_ff(H))


class DependencyAwareTransformer(nn.Module):
    """Denoiser over [condition | visible clean | noisy sample] tokens.

    With ``alpha_bars`` given, the head output F is read as a velocity and
    the returned noise estimate is sqrt(1 - ab) x_t + sqrt(ab) F. An error in
    F then moves the implied x0 by a bounded amount even where ab is tiny,
    which a raw noise head does not guarantee.
    """

    def __init__(self, q, h, meta_dim=0, model_dim=64, n_layers=4, n_heads=4, ff_dim=256, c=2, alpha_bars=None):
        super().__init__()
        D = model_dim
        self.q, self.h, self.D, self.c, self.meta_dim = q, h, D, c, meta_dim
        self.in_clean = nn.Linear(h, D)
        self.in_noisy = nn.Linear(h, D)
        self.obs = nn.Linear(h + 1, D)
        self.feat = nn.Parameter(torch.randn(q, D) * 0.02)
        self.kind = nn.Parameter(torch.randn(3, D) * 0.02)  # condition / visible / sample
        self.time = nn.Sequential(nn.Linear(D, D), nn.SiLU(), nn.Linear(D, D))
        self.meta = nn.Linear(meta_dim, D) if meta_dim else None
        self.null = nn.Parameter(torch.randn(D) * 0.02)
        self.summary = nn.Sequential(nn.Linear(q * (h + 1), D), nn.SiLU(), nn.Linear(D, D))
        self.extra = nn.Parameter(torch.randn(max(c - 2, 0), D) * 0.02)
        self.blocks = nn.ModuleList(_Block(D, n_heads, ff_dim) for _ in range(n_layers))
        self.ln_out = nn.LayerNorm(D)
        self.head = nn.Linear(D, h)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        self.register_buffer("order", torch.arange(q))
        self.velocity = alpha_bars is not None
        if self.velocity:
            self.register_buffer("alpha_bars", torch.as_tensor(np.asarray(alpha_bars), dtype=torch.float32))

    def condition(self, meta, m0_c, m):
        """Condition tokens: metadata (or the learned null token), a summary of
        the observed latent grid, then any extra learned tokens."""
        B = m0_c.shape[0]
        flat = torch.cat([m0_c, m.unsqueeze(-1).to(m0_c.dtype)], -1).flatten(1)
        summ = self.summary(flat)
        if meta is None or self.meta is None:
            mt = self.null.expand(B, self.D)
        else:
            meta = torch.as_tensor(meta, dtype=m0_c.dtype)
            if meta.shape[-1] != self.meta_dim:
                raise DataError(f"metadata embedding width {meta.shape[-1]} != expected {self.meta_dim}")
            mt = self.meta(meta)
        if self.c == 1:
            toks = (summ + mt).unsqueeze(1)
        else:
            toks = torch.stack([mt, summ, *self.extra.expand(B, -1, -1).unbind(1)], 1)
        return toks + self.kind[0]

    def embed(self, clean, noisy, t_tok, cond, mask: AttentionMask):
        B, S, h = noisy.shape
        if S != self.q or h != self.h or mask.s != S or cond.c != mask.c or mask.c != self.c:
            raise DataError(f"token grid {tuple(noisy.shape)} / mask (c={mask.c}, s={mask.s}) mismatch "
                            f"model (c={self.c}, q={self.q}, h={self.h})")
        v = mask.v
        obs = self.obs(torch.cat([cond.observed_latent, cond.token_mask.unsqueeze(-1).to(noisy.dtype)], -1))
        f = self.feat[self.order]
        vis = self.in_clean(clean[:, :v]) + obs[:, :v] + f[:v] + self.kind[1]
        te = self.time(time_embedding(t_tok, self.D).to(noisy.dtype))
        sam = self.in_noisy(noisy) + obs + f + self.kind[2] + te
        return torch.cat([cond.condition_tokens, vis, sam], 1)

    def attend(self, X, mask: AttentionMask, rows=None):
        """Run the blocks for sample rows ``rows`` (default all) over embedded tokens ``X``."""
        if X.shape[1] != mask.seq:
            raise DataError(f"token count {X.shape[1]} != mask size {mask.seq}")
        lo, hi = rows if rows is not None else (0, mask.s)
        sl = slice(mask.ctx + lo, mask.ctx + hi)
        blocked = torch.as_tensor(mask.matrix[sl] != 0)
        H = X[:, sl]
        for blk in self.blocks:
            H = blk(H, X, blocked)
        return self.head(self.ln_out(H))

    def forward(self, clean, noisy, t_tok, cond, mask: AttentionMask, rows=None):
        out = self.attend(self.embed(clean, noisy, t_tok, cond, mask), mask, rows)
        if not self.velocity:
            return out
        lo, hi = rows if rows is not None else (0, mask.s)
        ab = self.alpha_bars.to(out.dtype)[t_tok[:, lo:hi]].unsqueeze(-1)
        return torch.sqrt(1 - ab) * noisy[:, lo:hi] + torch.sqrt(ab) * out


def ar_ordering(c_dir, variances):
    """Token order: C_dir out-degree descending, then variance descending, then index."""
    c_dir = np.asarray(c_dir)
    outdeg = c_dir.sum(axis=0)  # column j counts the features j influences
    idx = np.arange(len(outdeg))
    return np.lexsort((idx, -np.asarray(variances, dtype=float), -outdeg))


@dataclass
class DATCheckpoint:
    model: DependencyAwareTransformer
    vae: TokenVAE
    order: np.ndarray
    dep: DependencyMatrix
    latent_mean: np.ndarray  # (q, h), feature order
    latent_scale: float
    config: DATConfig
    vae_config: VAEConfig
    feature_ids: list = field(default_factory=list)
    provider: dict | None = None
    history: list = field(default_factory=list)
    initial_val_loss: float = math.nan

    @property
    def schedule(self):
        return cosine_schedule(self.config.T, self.config.schedule_offset)

    @property
    def q(self):
        return self.model.q

    def config_hash(self):
        return config_hash({"dat": asdict(self.config), "vae": asdict(self.vae_config)})

    def latents(self, x):
        return _latents(self.vae, x, self.latent_mean, self.latent_scale)

    def decode(self, z):
        with torch.no_grad():
            return self.vae.decode(z * self.latent_scale + torch.as_tensor(self.latent_mean))

    def save(self, path):
        meta = {
            "kind": "dat",
            "config": asdict(self.config),
            "vae_config": asdict(self.vae_config),
            "config_hash": self.config_hash(),
            "seed": self.config.seed,
            "schedule": {"name": "cosine", "T": self.config.T, "offset": self.config.schedule_offset},
            "layout": self.vae.layout,
            "input_scale": float(self.vae.input_scale),
            "meta_dim": self.model.meta_dim,
            "latent_scale": self.latent_scale,
            "feature_ids": list(self.feature_ids),
            "provider": self.provider,
            "use_metadata": self.config.use_metadata,
        }
        arrays = {**state_arrays(self.model, "dat."), **state_arrays(self.vae)}
        arrays.update({"order": np.asarray(self.order), "latent_mean": np.asarray(self.latent_mean),
                       "dep.c_dir": self.dep.c_dir, "dep.c_mi": self.dep.c_mi, "dep.dep": self.dep.dep})
        return write_npz(path, meta, arrays)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            if meta.get("kind") != "dat":
                raise ConfigError(f"{path} is not a DAT checkpoint")
            arrays = {k: z[k] for k in z.files if k != "__meta__"}
        cfg = DATConfig(**meta["config"])
        vae_cfg = VAEConfig(**meta["vae_config"])
        vae = vae_from_arrays({k: v for k, v in arrays.items() if not k.startswith("dat.")}, meta)
        lay = meta["layout"]
        model = _build_model(lay["q"], lay["h"], meta["meta_dim"], cfg)
        model.load_state_dict({k[4:]: torch.as_tensor(v) for k, v in arrays.items() if k.startswith("dat.")})
        model.eval()
        dep = DependencyMatrix(arrays["dep.c_dir"], arrays["dep.c_mi"], arrays["dep.dep"])
        return cls(model, vae, arrays["order"], dep, arrays["latent_mean"], float(meta["latent_scale"]),
                   cfg, vae_cfg, meta["feature_ids"], meta["provider"])

    def permuted(self, perm):
        """Equivalent checkpoint for inputs whose columns are ``x[:, perm]``."""
        perm = np.asarray(perm)
        q, h = self.vae.q, self.vae.h
        inv = np.argsort(perm)
        vae = transfer(self.vae)
        sd = {k: v.clone() for k, v in vae.state_dict().items()}
        p = torch.as_tensor(perm)
        for k in ("center", "scale", "enc.loc_w", "enc.loc_b", "dec.loc_w", "dec.loc_b",
                  "dec.mix_out.weight", "dec.mix_out.bias"):
            sd[k] = sd[k][p]
        sd["enc.mix1.weight"] = sd["enc.mix1.weight"][:, p]
        hid = sd["enc.mix_out.weight"].shape[1]
        sd["enc.mix_out.weight"] = sd["enc.mix_out.weight"].view(q, h, hid)[p].reshape(q * h, hid)
        sd["enc.mix_out.bias"] = sd["enc.mix_out.bias"].view(q, h)[p].reshape(-1)
        w = sd["dec.mix1.weight"]
        sd["dec.mix1.weight"] = w.view(w.shape[0], q, h)[:, p].reshape(w.shape[0], q * h)
        vae.load_state_dict(sd)
        model = copy.deepcopy(self.model)
        with torch.no_grad():
            model.feat.copy_(self.model.feat[p])
            new_order = inv[np.asarray(self.order)]
            model.order.copy_(torch.as_tensor(new_order))
        ix = np.ix_(perm, perm)
        dep = DependencyMatrix(self.dep.c_dir[ix], self.dep.c_mi[ix], self.dep.dep[ix])
        fids = [self.feature_ids[i] for i in perm] if self.feature_ids else []
        return DATCheckpoint(model, vae, new_order, dep, np.asarray(self.latent_mean)[perm], self.latent_scale,
                             self.config, self.vae_config, fids, self.provider, self.history)


def _latents(vae, x, mean, scale):
    """Standardized encoder means of ``x`` (n, q) -> (n, q, h), feature order."""
    with torch.no_grad():
        mu, _ = vae.encode(torch.as_tensor(np.asarray(x), dtype=torch.float32))
    return (mu - torch.as_tensor(mean)) / scale


def _build_model(q, h, meta_dim, cfg: DATConfig):
    ab = cosine_schedule(cfg.T, cfg.schedule_offset).alpha_bars if cfg.parameterization == "v" else None
    return DependencyAwareTransformer(q, h, meta_dim, cfg.model_dim, cfg.n_layers, cfg.n_heads, cfg.ff_dim, cfg.c, ab)


def _values(x):
    return np.asarray(x.values if hasattr(x, "values") else x, dtype=float)


def _mask_values(mask, shape):
    m = np.zeros(shape, dtype=np.int8) if mask is None else np.asarray(getattr(mask, "mask", mask), dtype=np.int8)
    if m.shape != shape:
        raise DataError(f"mask shape {m.shape} does not match matrix shape {shape}")
    return m


def _extra_mask(rng, Y, known, frac_max):
    """Hide a random share of each row's observed nonzero entries."""
    B, q = Y.shape
    rate = rng.uniform(0.0, frac_max, size=(B, 1))
    return ((rng.random((B, q)) < rate) & (Y > 0) & (known == 0)).astype(np.int8)


def train(Y, dep: DependencyMatrix, cfg: DATConfig = None, vae_cfg: VAEConfig = None, meta=None,
          known_missing=None, vae_init: TokenVAE | None = None, feature_ids=None, provider=None, log=None):
    """Fit the VAE (fresh or from ``vae_init``), then the denoiser on ``Y`` (n x q).

    ``known_missing`` marks entries that are hidden in ``Y`` (stored as 0):
    they stay masked in every condition and their tokens carry no loss.
    Returns the checkpoint with the best validation loss.
    """
    cfg = (cfg or DATConfig()).validate()
    vae_cfg = vae_cfg or VAEConfig(seed=cfg.seed)
    Y = _values(Y)
    n, q = Y.shape
    if dep.dep.shape != (q, q):
        raise DataError(f"dependency matrix {dep.dep.shape} does not match {q} features")
    known = _mask_values(known_missing, Y.shape)
    if cfg.use_metadata:
        if meta is None:
            raise ConfigError("metadata conditioning is on but no embeddings were supplied")
        meta = np.asarray(meta, dtype=np.float32)
        if meta.shape[0] != n:
            raise DataError(f"{meta.shape[0]} metadata rows for {n} samples")
    else:
        meta = None
    if n < 4:
        raise DataError("need at least 4 samples to train")

    vae, _ = fit_vae(Y, vae_cfg, model=transfer(vae_init, q) if vae_init is not None else None)
    for prm in vae.parameters():
        prm.requires_grad_(False)
    with torch.no_grad():
        z = vae.encode(torch.as_tensor(Y, dtype=torch.float32))[0]
    lat_mean = z.mean(0)
    lat_scale = float((z - lat_mean).std())
    z_std = ((z - lat_mean) / lat_scale).float()

    order = ar_ordering(dep.c_dir, Y.var(axis=0))
    dep_tok = permute_dep(dep.dep, order)
    o = torch.as_tensor(order)
    sched = cosine_schedule(cfg.T, cfg.schedule_offset)

    torch.manual_seed(cfg.seed)
    model = _build_model(q, vae.h, meta.shape[1] if meta is not None else 0, cfg)
    model.order.copy_(o)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    lr_sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(cfg.epochs, 1))

    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_val = max(1, int(round(cfg.val_fraction * n)))
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    gen = torch.Generator().manual_seed(cfg.seed)

    ema = None
    if cfg.ema_decay > 0:
        ema = copy.deepcopy(model).eval()
        for prm in ema.parameters():
            prm.requires_grad_(False)
    net = ema if ema is not None else model  # weights that are validated and kept

    def batch_loss(idx, brng, bgen, model=model):
        hide = known[idx] | _extra_mask(brng, Y[idx], known[idx], cfg.train_mask_max)
        m0 = _latents(vae, Y[idx] * (1 - hide), lat_mean, lat_scale)
        mt = torch.as_tensor(hide[:, order])
        mb = torch.as_tensor(meta[idx]) if meta is not None else None
        cond = build_condition(m0[:, o], mt, mb, model.condition)
        split = generate_ar_steps(q, cfg.decay_alpha, brng)
        weight = torch.as_tensor(1 - known[idx][:, order], dtype=torch.float32)
        return ar_diffusion_train_step(z_std[idx][:, o], model, cond, split, dep_tok, sched, bgen,
                                       cfg.dep_mode, weight=weight, t_power=cfg.t_power), split

    def val_loss():
        vrng = np.random.default_rng([cfg.seed, 1])
        vgen = torch.Generator().manual_seed(cfg.seed + 1)
        tot = 0.0
        with torch.no_grad():
            for start in range(0, n_val, 256):
                idx = val_idx[start:start + 256]
                # several draws per sample to steady the estimate
                for _ in range(4):
                    tot += batch_loss(idx, vrng, vgen, net)[0].item() * len(idx)
        return tot / (4 * n_val)

    history = []
    model.eval()
    best = initial = val_loss()
    best_state, stale = copy.deepcopy(net.state_dict()), 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        lr = opt.param_groups[0]["lr"]
        tot, seen = 0.0, 0
        order_ep = rng.permutation(tr_idx)
        for start in range(0, len(order_ep), cfg.batch_size):
            idx = order_ep[start:start + cfg.batch_size]
            loss, split = batch_loss(idx, rng, gen)
            val = loss.item()
            if not math.isfinite(val) or val > cfg.divergence_threshold:
                raise TrainingDivergence("denoiser loss diverged", {"epoch": epoch, "batch_start": start,
                                                                    "loss": val, "split": str(split), "lr": lr})
            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip:
                nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            if ema is not None:
                with torch.no_grad():
                    for pe, pm in zip(ema.parameters(), model.parameters()):
                        pe.lerp_(pm, 1.0 - cfg.ema_decay)
            tot += val * len(idx)
            seen += len(idx)
        lr_sched.step()
        model.eval()
        vl = val_loss()
        rec = {"epoch": epoch, "train_loss": tot / max(seen, 1), "val_loss": vl, "lr": lr, "seed": cfg.seed}
        history.append(rec)
        if log is not None:
            log(rec)
        if vl < best - 1e-9:
            best, best_state, stale = vl, copy.deepcopy(net.state_dict()), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    for prm in model.parameters():
        prm.requires_grad_(False)
    return DATCheckpoint(model, vae, order, dep, lat_mean.numpy(), lat_scale, cfg, vae_cfg,
                         list(feature_ids or []), provider, history, initial)


def impute(masked, mask, checkpoint: DATCheckpoint, sampler: SamplerConfig = None, meta=None):
    """Fill masked entries by sampling the denoiser; observed entries pass through.

    The reconstruction is averaged over ``sampler.n_draws`` draws, each with
    its own AR split. Every sample row has its own noise stream, so a row's
    result does not depend on which other rows are imputed alongside it.
    """
    sampler = sampler or SamplerConfig()
    Y = _values(masked)
    if Y.ndim != 2 or Y.shape[1] != checkpoint.q:
        raise DataError(f"matrix width {Y.shape[-1]} does not match checkpoint width {checkpoint.q}")
    m = _mask_values(mask, Y.shape)
    out = Y.copy()
    rows = np.flatnonzero(m.any(axis=1))
    if rows.size == 0:
        return out
    cfg = checkpoint.config
    if cfg.use_metadata:
        if meta is None:
            raise ConfigError("checkpoint conditions on metadata but none was supplied")
        meta = np.asarray(meta, dtype=np.float32)
        if meta.shape[0] != Y.shape[0]:
            raise DataError(f"{meta.shape[0]} metadata rows for {Y.shape[0]} samples")
    else:
        meta = None
    if sampler.n_draws < 1:
        raise ConfigError("n_draws must be >= 1")
    model, q = checkpoint.model, checkpoint.q
    order = np.asarray(checkpoint.order)
    o = torch.as_tensor(order)
    dep_tok = permute_dep(checkpoint.dep.dep, order)
    sched = checkpoint.schedule
    m0 = checkpoint.latents(Y[rows] * (1 - m[rows]))[:, o]
    mt = torch.as_tensor(m[rows][:, order])
    acc = np.zeros((rows.size, q))
    for k in range(sampler.n_draws):
        seed_k = int(np.random.SeedSequence([sampler.seed, k]).generate_state(1)[0])
        split = generate_ar_steps(q, cfg.decay_alpha, np.random.default_rng(seed_k))
        plan = select_timesteps(sched, sampler.mode, sampler.n, split)
        for start in range(0, rows.size, sampler.chunk):
            sl = slice(start, start + sampler.chunk)
            mb = torch.as_tensor(meta[rows[sl]]) if meta is not None else None
            with torch.no_grad():
                cond = build_condition(m0[sl], mt[sl], mb, model.condition)
            zt = ar_diffusion_sample(model, cond, dep_tok, sched, plan, split, seed=seed_k, dep_mode=cfg.dep_mode,
                                     clip=sampler.clip, row_seeds=rows[sl].tolist())
            zf = torch.empty_like(zt)
            zf[:, o] = zt
            acc[sl] += checkpoint.decode(zf).double().numpy()
    recon = np.clip(acc / sampler.n_draws, 0.0, Y_MAX)
    hidden = m[rows] == 1
    sub = out[rows]
    sub[hidden] = recon[hidden]
    out[rows] = sub
    return out


def imputed_matrix(masked: NormalizedMatrix, values) -> NormalizedMatrix:
    return masked.with_values(values)
