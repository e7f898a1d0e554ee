"""Dependency-aware autoregressive latent diffusion for sparse abundance imputation."""
