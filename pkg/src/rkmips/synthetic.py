"""Seeded low-rank embeddings that mimic matrix-factorization output."""

from __future__ import annotations

import numpy as np

from .vector_store import ITEM, USER, ConfigurationError, VectorSet


def gen_synthetic(n: int, m: int, d: int, rank: int, seed: int = 0, noise: float = 0.05,
                  taste_shift: float = 1.0, popularity_spread: float = 0.8):
    """Return ``(users, items)``.

    Both sets are ``latent @ mixing + noise`` with a shared ``rank x d`` mixing
    matrix. Users share a common taste offset in latent space and item latents
    are scaled by a log-normal popularity factor, which together give the skewed
    norm and score distributions seen in real factorizations.
    """
    if min(n, m, d, rank) < 1:
        raise ConfigurationError("n, m, d and rank must all be positive")
    if rank > d:
        raise ConfigurationError(f"rank {rank} exceeds dimension {d}")
    rng = np.random.default_rng(seed)
    mixing = rng.standard_normal((rank, d)) / np.sqrt(rank)
    shift = taste_shift * rng.standard_normal(rank)
    zu = rng.standard_normal((n, rank)) + shift
    scale = np.exp(popularity_spread * rng.standard_normal(m))
    zp = rng.standard_normal((m, rank)) * scale[:, None]
    users = zu @ mixing + noise * rng.standard_normal((n, d))
    items = zp @ mixing + noise * rng.standard_normal((m, d))
    return VectorSet(users, role=USER), VectorSet(items, role=ITEM)
