"""The two infusion operations and the depth policies that place them."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


class InfusionPolicy(enum.Enum):
    NONE = "none"
    SHALLOW = "shallow"
    SEMI_DEEP = "semi-deep"
    DEEP = "deep"

    @classmethod
    def parse(cls, text) -> "InfusionPolicy":
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            choices = ", ".join(p.value for p in cls)
            raise DomainError(f"unknown policy {text!r}; expected one of {choices}") from None

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class InfusionSites:
    latent_at: tuple
    attention_at: tuple

    @property
    def n_blocks(self):
        return len(self.latent_at)

    def any(self):
        return any(self.latent_at) or any(self.attention_at)

    def count(self):
        return sum(self.latent_at) + sum(self.attention_at)


def sites_for(policy, n_blocks: int) -> InfusionSites:
    """Resolve a policy to per-block flags (index 0 is the first block)."""
    policy = InfusionPolicy.parse(policy)
    if n_blocks < 1:
        raise DomainError(f"n_blocks must be >= 1, got {n_blocks}")
    first = tuple(b == 0 for b in range(n_blocks))
    none = (False,) * n_blocks
    every = (True,) * n_blocks
    if policy is InfusionPolicy.NONE:
        return InfusionSites(none, none)
    if policy is InfusionPolicy.SHALLOW:
        return InfusionSites(first, none)
    if policy is InfusionPolicy.SEMI_DEEP:
        return InfusionSites(first, first)
    return InfusionSites(every, every)


def infuse_latent(H, G, W_g):
    """Add projected node embeddings to hidden states: ``H + G @ W_g``."""
    H = np.asarray(H)
    G = np.asarray(G)
    W_g = np.asarray(W_g)
    if H.shape[-2] != G.shape[-2]:
        raise DomainError(f"sequence length mismatch: H has {H.shape[-2]} rows, G has {G.shape[-2]}")
    if G.shape[-1] != W_g.shape[0]:
        raise DomainError(f"G has d_g={G.shape[-1]} but W_g expects {W_g.shape[0]}")
    if H.shape[-1] != W_g.shape[1]:
        raise DomainError(f"H has d_model={H.shape[-1]} but W_g projects to {W_g.shape[1]}")
    return H + G @ W_g


def infuse_attention(S, K, d_g: int):
    """Add the scaled Gram matrix to pre-softmax scores: ``S + K / sqrt(d_g)``.

    Broadcasts over leading axes, so a per-head score stack receives the same
    ``K`` in every head.
    """
    S = np.asarray(S)
    K = np.asarray(K)
    if S.shape[-2:] != K.shape[-2:] or S.shape[-1] != S.shape[-2]:
        raise DomainError(f"score shape {S.shape[-2:]} and knowledge shape {K.shape[-2:]} differ")
    if d_g < 1:
        raise DomainError(f"d_g must be positive, got {d_g}")
    return S + K / math.sqrt(d_g)
