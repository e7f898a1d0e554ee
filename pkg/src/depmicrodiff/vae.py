"""Token-grid variational autoencoder: one latent token of width h per feature.

The encoder combines a per-feature affine embedding with a shared MLP mixing
path; the decoder mirrors it. Inputs are standardized per feature and scaled
by ``input_scale`` before the network; the loss is computed in that space.
"""

from __future__ import annotations

import copy
import hashlib
import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, DataError, TrainingDivergence


@dataclass
class VAEConfig:
    latent_dim: int = 8
    hidden: int = 128
    input_scale: float = 4.0
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 200
    patience: int = 20
    val_fraction: float = 0.1
    seed: int = 0


def config_hash(cfg) -> str:
    payload = json.dumps(asdict(cfg) if hasattr(cfg, "__dataclass_fields__") else cfg, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


class _Encoder(nn.Module):
    def __init__(self, q, h, hidden):
        super().__init__()
        self.loc_w = nn.Parameter(torch.randn(q, h) * 0.5)
        self.loc_b = nn.Parameter(torch.zeros(q, h))
        self.mix1 = nn.Linear(q, hidden)
        self.mix2 = nn.Linear(hidden, hidden)
        self.mix_out = nn.Linear(hidden, q * h)
        self.mu = nn.Linear(h, h)
        self.logvar = nn.Linear(h, h)
        self.act = nn.SiLU()

    def forward(self, u):
        q, h = self.loc_w.shape
        mix = self.mix_out(self.act(self.mix2(self.act(self.mix1(u))))).view(*u.shape[:-1], q, h)
        tok = u.unsqueeze(-1) * self.loc_w + self.loc_b + mix
        return self.mu(tok), self.logvar(tok).clamp(-30.0, 20.0)


class _Decoder(nn.Module):
    def __init__(self, q, h, hidden):
        super().__init__()
        self.loc_w = nn.Parameter(torch.randn(q, h) * 0.5)
        self.loc_b = nn.Parameter(torch.zeros(q))
        self.mix1 = nn.Linear(q * h, hidden)
        self.mix2 = nn.Linear(hidden, hidden)
        self.mix_out = nn.Linear(hidden, q)
        self.act = nn.SiLU()

    def forward(self, z):
        local = (z * self.loc_w).sum(-1) + self.loc_b
        return local + self.mix_out(self.act(self.mix2(self.act(self.mix1(z.flatten(-2))))))


class TokenVAE(nn.Module):
    def __init__(self, q, latent_dim=8, hidden=128, input_scale=4.0):
        super().__init__()
        self.q, self.h, self.hidden = q, latent_dim, hidden
        self.enc = _Encoder(q, latent_dim, hidden)
        self.dec = _Decoder(q, latent_dim, hidden)
        self.register_buffer("center", torch.zeros(q))
        self.register_buffer("scale", torch.ones(q))
        self.register_buffer("input_scale", torch.tensor(float(input_scale)))

    @property
    def layout(self):
        return {"q": self.q, "L": self.q, "h": self.h, "hidden": self.hidden}

    def set_standardization(self, Y):
        Y = torch.as_tensor(np.asarray(Y), dtype=self.center.dtype)
        std = Y.std(dim=0, unbiased=False)
        self.center.copy_(Y.mean(dim=0))
        self.scale.copy_(torch.where(std > 1e-8, std, torch.ones_like(std)))

    def to_model_space(self, x):
        return (x - self.center) / self.scale * self.input_scale

    def from_model_space(self, u):
        return u / self.input_scale * self.scale + self.center

    def _check_width(self, x):
        if x.shape[-1] != self.q:
            raise DataError(f"input width {x.shape[-1]} does not match VAE width {self.q}")

    def encode(self, x):
        """(mu, logvar), each (..., q, h)."""
        x = torch.as_tensor(x, dtype=self.center.dtype)
        self._check_width(x)
        return self.enc(self.to_model_space(x))

    def decode(self, z):
        z = torch.as_tensor(z, dtype=self.center.dtype)
        if tuple(z.shape[-2:]) != (self.q, self.h):
            raise DataError(f"latent grid shape {tuple(z.shape[-2:])} does not match ({self.q}, {self.h})")
        return self.from_model_space(self.dec(z))


def reparameterize(mu, logvar, eps):
    if mu.shape != logvar.shape or mu.shape != eps.shape:
        raise DataError("mu, logvar and eps must share a shape")
    exp = torch.exp if torch.is_tensor(logvar) else np.exp
    return mu + exp(logvar / 2) * eps


def vae_loss(x, x_hat, mu, logvar):
    """(total, recon, kl) summed over all entries: ||x - x_hat||^2 and the
    Gaussian KL to N(0, I)."""
    tensors = torch.is_tensor(x)
    xp = torch if tensors else np
    for arr in (x, x_hat, mu, logvar):
        if not bool(xp.all(xp.isfinite(arr))):
            raise DataError("non-finite input to vae_loss")
    recon = ((x - x_hat) ** 2).sum()
    kl = 0.5 * (mu**2 + xp.exp(logvar) - 1 - logvar).sum()
    return recon + kl, recon, kl


def vae_loss_grads(x, x_hat, mu, logvar):
    """Analytic gradients of the total loss w.r.t. x_hat, mu and logvar."""
    return {
        "x_hat": -2.0 * (x - x_hat),
        "mu": np.asarray(mu, dtype=float).copy(),
        "logvar": -0.5 * (1.0 - np.exp(logvar)),
    }


def align_features(datasets):
    """Reorder every dataset to the first one's feature order; ids must match as sets."""
    ref = list(datasets[0].feature_ids)
    aligned = []
    for ds in datasets:
        missing = sorted(set(ref) - set(ds.feature_ids))
        extra = sorted(set(ds.feature_ids) - set(ref))
        if missing or extra:
            raise DataError(
                f"feature ids of {ds.name!r} do not align: missing {missing[:10]}, unexpected {extra[:10]}"
            )
        idx = [ds.feature_ids.index(f) for f in ref]
        aligned.append((ds, idx))
    return ref, aligned


def fit_vae(Y, cfg: VAEConfig, model: TokenVAE | None = None, epochs=None, log=None):
    """Train on a normalized matrix ``Y`` (n x q). Returns (best model, history).

    A fresh model takes its standardization from ``Y``; a supplied model keeps
    its own (so transferred weights keep their meaning).
    """
    Y = np.asarray(Y, dtype=np.float32)
    n, q = Y.shape
    epochs = cfg.epochs if epochs is None else epochs
    torch.manual_seed(cfg.seed)
    if model is None:
        model = TokenVAE(q, cfg.latent_dim, cfg.hidden, cfg.input_scale)
        model.set_standardization(Y)
    elif model.q != q:
        raise DataError(f"VAE width {model.q} does not match data width {q}")
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_val = max(1, int(round(cfg.val_fraction * n))) if n > 1 else 0
    val_idx, tr_idx = perm[:n_val], perm[n_val:] if n_val < n else perm
    X = torch.as_tensor(Y)
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)

    def run_loss(idx, train):
        u = model.to_model_space(X[idx])
        mu, logvar = model.enc(u)
        if train:
            z = reparameterize(mu, logvar, torch.randn(mu.shape, generator=gen))
        else:
            z = mu
        total, recon, kl = vae_loss(u, model.dec(z), mu, logvar)
        return total / len(idx), recon / len(idx), kl / len(idx)

    history = []
    best, best_state, stale = math.inf, copy.deepcopy(model.state_dict()), 0
    for epoch in range(1, epochs + 1):
        model.train()
        order = rng.permutation(tr_idx)
        tot = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, _, _ = run_loss(idx, True)
            if not torch.isfinite(loss):
                raise TrainingDivergence("VAE loss diverged", {"epoch": epoch, "loss": loss.item()})
            opt.zero_grad()
            loss.backward()
            opt.step()
            tot += loss.item() * len(idx)
        model.eval()
        with torch.no_grad():
            val, val_recon, val_kl = (v.item() for v in run_loss(val_idx, False)) if n_val else (math.nan,) * 3
        rec = {"epoch": epoch, "train_loss": tot / len(order), "val_loss": val, "val_recon": val_recon,
               "val_kl": val_kl, "seed": cfg.seed}
        history.append(rec)
        if log is not None:
            log(rec)
        if val < best - 1e-9:
            best, best_state, stale = val, copy.deepcopy(model.state_dict()), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if epochs > 0:
        model.load_state_dict(best_state)
    model.eval()
    return model, history


def pretrain(datasets, cfg: VAEConfig, target=None, log=None):
    """Fit one shared VAE on several datasets; ``target`` must not be among them."""
    from .data import normalize

    if not datasets:
        raise DataError("pretraining needs at least one dataset")
    if target is not None:
        tgt_ids = set(target.sample_ids)
        for ds in datasets:
            if ds is target or (ds.name is not None and ds.name == target.name) or tgt_ids & set(ds.sample_ids):
                raise DataError(f"target dataset {target.name!r} appears in the pretraining set (leakage)")
    ref, aligned = align_features(datasets)
    Y = np.vstack([normalize(ds).values[:, idx] for ds, idx in aligned])
    model, history = fit_vae(Y, cfg, log=log)
    model.feature_ids = ref
    return model, history


def transfer(params: TokenVAE, q=None, latent_dim=None) -> TokenVAE:
    """Bit-exact copy of pretrained weights for initializing the imputation model."""
    if q is not None and params.q != q:
        raise DataError(f"pretrained VAE width {params.q} does not match target width {q}")
    if latent_dim is not None and params.h != latent_dim:
        raise DataError(f"pretrained latent width {params.h} does not match configured {latent_dim}")
    clone = TokenVAE(params.q, params.h, params.hidden, float(params.input_scale))
    clone.load_state_dict(params.state_dict())
    clone.feature_ids = getattr(params, "feature_ids", None)
    return clone


def state_arrays(module: nn.Module, prefix=""):
    return {prefix + k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def write_npz(path, meta: dict, arrays: dict):
    """npz container with fixed entry timestamps, so identical content gives
    identical bytes (``np.savez`` stamps the current time)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = {"__meta__": np.array(json.dumps(meta, sort_keys=True)), **arrays}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(entries):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(entries[name]), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())
    return path


def save_vae(path, model: TokenVAE, cfg: VAEConfig, feature_ids=None):
    meta = {
        "kind": "vae",
        "layout": model.layout,
        "input_scale": float(model.input_scale),
        "config": asdict(cfg),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "feature_ids": list(feature_ids if feature_ids is not None else getattr(model, "feature_ids", None) or []),
    }
    return write_npz(path, meta, state_arrays(model))


def vae_from_arrays(arrays, meta, prefix=""):
    lay = meta["layout"]
    model = TokenVAE(lay["q"], lay["h"], lay["hidden"], meta["input_scale"])
    state = {k[len(prefix):]: torch.as_tensor(v) for k, v in arrays.items() if k.startswith(prefix)}
    state = {k: v for k, v in state.items() if k.split(".")[0] in ("enc", "dec", "center", "scale", "input_scale")}
    model.load_state_dict(state)
    model.feature_ids = meta.get("feature_ids") or None
    model.eval()
    return model


def load_vae(path):
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("kind") != "vae":
            raise ConfigError(f"{path} is not a VAE checkpoint")
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    return vae_from_arrays(arrays, meta), meta
