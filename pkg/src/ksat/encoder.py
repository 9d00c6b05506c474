"""A small post-LN transformer encoder-classifier in numpy with hand-written
backpropagation and knowledge infusion hooks in every block.

Everything runs in float64. Examples are processed as padded batches of
shape ``(B, L)``; a boolean mask marks real tokens.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DivergenceError, DomainError
from .infusion import InfusionSites, infuse_attention, infuse_latent

INIT_SCALE = 0.05
LN_EPS = 1e-5
MASK_SENTINEL = -1e9
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class EncoderConfig:
    n_blocks: int = 2
    n_heads: int = 2
    d_model: int = 16
    d_ff: int = 32
    vocab_size: int = 100
    max_len: int = 32
    n_classes: int = 2
    d_g: int = 8
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "seed":
                if not isinstance(value, (int, np.integer)):
                    raise ConfigError(f"seed must be an integer, got {value!r}")
                continue
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{f.name} must be a positive integer, got {value!r}")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.d_model % self.n_heads:
            raise ConfigError(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}"
            )

    @property
    def d_head(self):
        return self.d_model // self.n_heads


class ModelParams:
    """Named float64 arrays plus the config that shaped them."""

    def __init__(self, config: EncoderConfig, arrays: dict):
        self.config = config
        self.arrays = arrays

    def __getitem__(self, name):
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def base_names(self):
        return [k for k in self.arrays if k != "w_g"]

    def count(self, base_only=False) -> int:
        names = self.base_names() if base_only else list(self.arrays)
        return sum(self.arrays[k].size for k in names)

    def base_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.base_names()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.arrays[name]).tobytes())
        return h.hexdigest()

    def equal(self, other: "ModelParams") -> bool:
        return self.arrays.keys() == other.arrays.keys() and all(
            np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items()
        )


def _block_shapes(cfg: EncoderConfig):
    D, F = cfg.d_model, cfg.d_ff
    return [
        ("wq", (D, D), "w"), ("bq", (D,), "zero"),
        ("wk", (D, D), "w"), ("bk", (D,), "zero"),
        ("wv", (D, D), "w"), ("bv", (D,), "zero"),
        ("wo", (D, D), "w"), ("bo", (D,), "zero"),
        ("ln1_g", (D,), "one"), ("ln1_b", (D,), "zero"),
        ("w1", (D, F), "w"), ("b1", (F,), "zero"),
        ("w2", (F, D), "w"), ("b2", (D,), "zero"),
        ("ln2_g", (D,), "one"), ("ln2_b", (D,), "zero"),
    ]


def init_params(config: EncoderConfig) -> ModelParams:
    """Uniform(-0.05, 0.05) weights, zero biases, unit layer-norm gains.

    The knowledge projection ``w_g`` comes from its own random stream so the
    base parameters do not depend on ``d_g`` or on whether knowledge is used.
    """
    base_rng = np.random.default_rng([config.seed, 0])
    wg_rng = np.random.default_rng([config.seed, 1])

    def draw(shape, kind):
        if kind == "w":
            return base_rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)
        if kind == "one":
            return np.ones(shape)
        return np.zeros(shape)

    D = config.d_model
    arrays = {
        "tok_emb": draw((config.vocab_size, D), "w"),
        "pos_emb": draw((config.max_len, D), "w"),
    }
    for b in range(config.n_blocks):
        for name, shape, kind in _block_shapes(config):
            arrays[f"b{b}.{name}"] = draw(shape, kind)
    arrays["cls_w"] = draw((D, config.n_classes), "w")
    arrays["cls_b"] = np.zeros(config.n_classes)
    arrays["w_g"] = wg_rng.uniform(-INIT_SCALE, INIT_SCALE, size=(config.d_g, D))
    return ModelParams(config, arrays)


# ---------------------------------------------------------------------------
# batching


class Batch(NamedTuple):
    ids: np.ndarray     # (B, L) int
    mask: np.ndarray    # (B, L) bool, True for real tokens
    G: np.ndarray       # (B, L, d_g)
    K: np.ndarray       # (B, L, L)
    labels: np.ndarray  # (B,) int, -1 when unknown


def collate(examples: Sequence, d_g: int, length: int | None = None) -> Batch:
    """Pad ``(ids, context[, label])`` tuples into one batch."""
    if not examples:
        raise DomainError("cannot collate an empty batch")
    L = max(len(ex[0]) for ex in examples) if length is None else length
    B = len(examples)
    ids = np.zeros((B, L), dtype=np.int64)
    mask = np.zeros((B, L), dtype=bool)
    G = np.zeros((B, L, d_g))
    K = np.zeros((B, L, L))
    labels = np.full(B, -1, dtype=np.int64)
    for i, ex in enumerate(examples):
        tok, ctx = np.asarray(ex[0], dtype=np.int64), ex[1]
        n = len(tok)
        if n > L:
            raise DomainError(f"sequence of length {n} exceeds batch length {L}")
        if ctx.length != n:
            raise DomainError(f"context length {ctx.length} does not match {n} tokens")
        if ctx.G.shape[1] != d_g:
            raise DomainError(f"context has d_g={ctx.G.shape[1]}, model expects {d_g}")
        ids[i, :n] = tok
        mask[i, :n] = True
        G[i, :n] = ctx.G
        K[i, :n, :n] = ctx.K
        if len(ex) > 2:
            labels[i] = ex[2]
    return Batch(ids, mask, G, K, labels)


def _take(batch: Batch, idx) -> Batch:
    return Batch(*(a[idx] for a in batch))


# ---------------------------------------------------------------------------
# building blocks


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _layer_norm_back(dy, cache):
    xhat, inv, g = cache
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    red = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=red), dy.sum(axis=red)


def _gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    return 0.5 * x * (1.0 + t), t


def _gelu_back(dy, x, t):
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def _softmax(s):
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class AttentionTrace:
    """Per block arrays of shape ``(B, H, L, L)``."""

    scores: list
    weights: list


def _split_heads(x, H):
    B, L, D = x.shape
    return x.reshape(B, L, H, D // H).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, L, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, L, H * dh)


def _check_sites(params: ModelParams, sites: InfusionSites):
    if sites.n_blocks != params.config.n_blocks:
        raise DomainError(
            f"sites cover {sites.n_blocks} blocks, model has {params.config.n_blocks}"
        )


def forward_batch(params: ModelParams, batch: Batch, sites: InfusionSites, keep_cache=False):
    """Return ``(logits (B, C), trace)`` and, optionally, the backward cache."""
    cfg = params.config
    _check_sites(params, sites)
    P = params.arrays
    B, L = batch.ids.shape
    if L > cfg.max_len:
        raise DomainError(f"sequence length {L} exceeds max_len {cfg.max_len}")
    H, dh = cfg.n_heads, cfg.d_head
    key_ok = batch.mask[:, None, None, :]
    Kg = batch.K[:, None, :, :]

    x = P["tok_emb"][batch.ids] + P["pos_emb"][:L]
    trace = AttentionTrace([], [])
    caches = []
    for b in range(cfg.n_blocks):
        p = f"b{b}."
        if sites.latent_at[b]:
            x = infuse_latent(x, batch.G, P["w_g"])
        q = _split_heads(x @ P[p + "wq"] + P[p + "bq"], H)
        k = _split_heads(x @ P[p + "wk"] + P[p + "bk"], H)
        v = _split_heads(x @ P[p + "wv"] + P[p + "bv"], H)
        s = q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh)
        if sites.attention_at[b]:
            s = infuse_attention(s, Kg, cfg.d_g)
        a = _softmax(np.where(key_ok, s, MASK_SENTINEL))
        ctx = _merge_heads(a @ v)
        attn = ctx @ P[p + "wo"] + P[p + "bo"]
        y, ln1 = _layer_norm(x + attn, P[p + "ln1_g"], P[p + "ln1_b"])
        hpre = y @ P[p + "w1"] + P[p + "b1"]
        hact, t = _gelu(hpre)
        ff = hact @ P[p + "w2"] + P[p + "b2"]
        out, ln2 = _layer_norm(y + ff, P[p + "ln2_g"], P[p + "ln2_b"])
        trace.scores.append(s)
        trace.weights.append(a)
        if keep_cache:
            caches.append((x, q, k, v, a, ctx, ln1, y, hpre, hact, t, ln2))
        x = out

    m = batch.mask.astype(np.float64)
    counts = m.sum(axis=1, keepdims=True)
    pooled = (x * m[:, :, None]).sum(axis=1) / counts
    logits = pooled @ P["cls_w"] + P["cls_b"]
    if keep_cache:
        return logits, trace, (caches, pooled, m, counts)
    return logits, trace


def _cross_entropy(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


def batch_loss_and_gradients(params: ModelParams, batch: Batch, sites: InfusionSites):
    cfg = params.config
    P = params.arrays
    if np.any(batch.labels < 0) or np.any(batch.labels >= cfg.n_classes):
        raise DomainError("labels must lie in [0, n_classes)")
    logits, _, (caches, pooled, m, counts) = forward_batch(params, batch, sites, keep_cache=True)
    loss, dlogits = _cross_entropy(logits, batch.labels)

    grads = {k: np.zeros_like(v) for k, v in P.items()}
    grads["cls_w"] = pooled.T @ dlogits
    grads["cls_b"] = dlogits.sum(axis=0)
    dpooled = dlogits @ P["cls_w"].T
    dx = dpooled[:, None, :] * (m / counts)[:, :, None]

    B, L = batch.ids.shape
    H, dh = cfg.n_heads, cfg.d_head
    key_ok = batch.mask[:, None, None, :]
    for b in reversed(range(cfg.n_blocks)):
        p = f"b{b}."
        x, q, k, v, a, ctx, ln1, y, hpre, hact, t, ln2 = caches[b]
        dz2, grads[p + "ln2_g"], grads[p + "ln2_b"] = _layer_norm_back(dx, ln2)
        dy = dz2
        dff = dz2
        grads[p + "w2"] = np.einsum("blf,bld->fd", hact, dff)
        grads[p + "b2"] = dff.sum(axis=(0, 1))
        dhact = dff @ P[p + "w2"].T
        dhpre = _gelu_back(dhact, hpre, t)
        grads[p + "w1"] = np.einsum("bld,blf->df", y, dhpre)
        grads[p + "b1"] = dhpre.sum(axis=(0, 1))
        dy = dy + dhpre @ P[p + "w1"].T

        dz1, grads[p + "ln1_g"], grads[p + "ln1_b"] = _layer_norm_back(dy, ln1)
        dxb = dz1
        dattn = dz1
        grads[p + "wo"] = np.einsum("bld,ble->de", ctx, dattn)
        grads[p + "bo"] = dattn.sum(axis=(0, 1))
        dctx = _split_heads(dattn @ P[p + "wo"].T, H)
        da = dctx @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ dctx
        ds = a * (da - (da * a).sum(axis=-1, keepdims=True))
        ds = np.where(key_ok, ds, 0.0)
        ds = ds / math.sqrt(dh)
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
            dflat = _merge_heads(dproj)
            grads[p + "w" + name] = np.einsum("bld,ble->de", x, dflat)
            grads[p + "b" + name] = dflat.sum(axis=(0, 1))
            dxb = dxb + dflat @ P[p + "w" + name].T
        if sites.latent_at[b]:
            grads["w_g"] += np.einsum("blg,bld->gd", batch.G, dxb)
        dx = dxb

    grads["pos_emb"][:L] = dx.sum(axis=0)
    np.add.at(grads["tok_emb"], batch.ids.reshape(-1), dx.reshape(-1, cfg.d_model))
    return float(loss), ModelParams(cfg, grads)


# ---------------------------------------------------------------------------
# single-example and dataset-level API


def forward(params: ModelParams, tokens, context, sites: InfusionSites, mask=None):
    """Logits ``(n_classes,)`` and per-block trace for one sequence.

    ``mask`` marks real tokens; positions where it is False are padding and
    are excluded as attention keys and from pooling.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if context.length != len(tokens):
        raise DomainError(f"context length {context.length} does not match {len(tokens)} tokens")
    batch = collate([(tokens, context)], params.config.d_g)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != tokens.shape:
            raise DomainError("mask shape must match tokens")
        batch = batch._replace(mask=mask[None, :])
    logits, trace = forward_batch(params, batch, sites)
    return logits[0], AttentionTrace([s[0] for s in trace.scores], [w[0] for w in trace.weights])


def loss_and_gradients(params: ModelParams, batch, sites: InfusionSites):
    """Mean cross-entropy over ``(tokens, context, label)`` tuples and its exact gradient."""
    if not isinstance(batch, Batch):
        if len(batch) == 0:
            raise DomainError("empty batch")
        batch = collate(batch, params.config.d_g)
    return batch_loss_and_gradients(params, batch, sites)


def predict(params: ModelParams, tokens, context, sites: InfusionSites, mask=None) -> int:
    logits, _ = forward(params, tokens, context, sites, mask=mask)
    return int(np.argmax(logits))


def predict_many(params: ModelParams, examples: Sequence, sites: InfusionSites, chunk=256):
    """Argmax predictions over ``(tokens, context[, label])`` tuples, in batches."""
    out = []
    for start in range(0, len(examples), chunk):
        batch = collate(examples[start:start + chunk], params.config.d_g)
        logits, _ = forward_batch(params, batch, sites)
        out.extend(int(i) for i in np.argmax(logits, axis=1))
    return out


def train(
    params: ModelParams,
    dataset: Sequence,
    sites: InfusionSites,
    epochs: int,
    learning_rate: float,
    batch_size: int,
    seed: int,
    max_grad_norm: float | None = None,
):
    """Minibatch SGD with a seeded shuffle per epoch.

    When ``max_grad_norm`` is set, each minibatch gradient is rescaled so its
    global L2 norm does not exceed it. Returns new params (the input is not
    modified) and the mean training loss of each epoch.
    """
    if len(dataset) == 0:
        raise DomainError("cannot train on an empty dataset")
    if epochs < 0 or batch_size < 1 or learning_rate <= 0:
        raise DomainError("epochs >= 0, batch_size >= 1 and learning_rate > 0 required")
    params = params.copy()
    if epochs == 0:
        return params, []
    full = collate(dataset, params.config.d_g)
    rng = np.random.default_rng(seed)
    n = len(dataset)
    curve = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for bi, start in enumerate(range(0, n, batch_size)):
            idx = order[start:start + batch_size]
            loss, grads = batch_loss_and_gradients(params, _take(full, idx), sites)
            if not math.isfinite(loss):
                raise DivergenceError(epoch, bi)
            step = learning_rate
            if max_grad_norm is not None:
                norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.arrays.values()))
                if norm > max_grad_norm:
                    step = learning_rate * max_grad_norm / norm
            for name, g in grads.arrays.items():
                params.arrays[name] -= step * g
            total += loss * len(idx)
        curve.append(total / n)
    return params, curve
