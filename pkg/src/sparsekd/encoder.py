"""BERT-style transformer encoder with a pooled classification head.

The forward pass records the four observables consumed by the distillation
losses: the embedding-layer output, per-layer pre-softmax attention scores,
per-layer hidden states, and the classifier logits.  Exactly six weight
matrices per layer (the attention projections and the two feed-forward
matrices) are prunable; embeddings, biases, norms, and the task head are not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, InputError
from .tensor import Tensor

PRUNABLE_SLOTS = ("wq", "wk", "wv", "wo", "w1", "w2")


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 4
    hidden_size: int = 32
    num_heads: int = 4
    intermediate_size: int = 64
    vocab_size: int = 64
    max_seq_len: int = 32
    type_vocab_size: int = 2
    dropout_prob: float = 0.1
    num_labels: int = 2
    # Record attention observables after the softmax instead of the raw
    # scaled scores.  Off by default; both teacher and student must agree.
    attn_post_softmax: bool = False

    def __post_init__(self):
        for name in (
            "num_layers",
            "hidden_size",
            "num_heads",
            "intermediate_size",
            "vocab_size",
            "max_seq_len",
            "type_vocab_size",
            "num_labels",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.hidden_size % self.num_heads != 0:
            raise ConfigError(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ConfigError(f"dropout_prob must be in [0, 1), got {self.dropout_prob}")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads


def bert_base_config(num_labels: int = 2) -> EncoderConfig:
    """The full-scale reference shape used for compression accounting."""
    return EncoderConfig(
        num_layers=12,
        hidden_size=768,
        num_heads=12,
        intermediate_size=3072,
        vocab_size=30522,
        max_seq_len=512,
        num_labels=num_labels,
    )


@dataclass
class LayerParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor


@dataclass
class EncoderParams:
    """All trainable tensors of encoder plus task head, addressable by name."""

    config: EncoderConfig
    tok_emb: Tensor
    pos_emb: Tensor
    seg_emb: Tensor
    emb_ln_g: Tensor
    emb_ln_b: Tensor
    layers: list[LayerParams]
    pooler_w: Tensor
    pooler_b: Tensor
    cls_w: Tensor
    cls_b: Tensor

    def named(self) -> dict[str, Tensor]:
        out = {
            "tok_emb": self.tok_emb,
            "pos_emb": self.pos_emb,
            "seg_emb": self.seg_emb,
            "emb_ln_g": self.emb_ln_g,
            "emb_ln_b": self.emb_ln_b,
            "pooler_w": self.pooler_w,
            "pooler_b": self.pooler_b,
            "cls_w": self.cls_w,
            "cls_b": self.cls_b,
        }
        for i, lp in enumerate(self.layers):
            for slot in (
                "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                "w1", "b1", "w2", "b2", "ln1_g", "ln1_b", "ln2_g", "ln2_b",
            ):
                out[f"layer{i}.{slot}"] = getattr(lp, slot)
        return out

    def prunable(self) -> dict[str, Tensor]:
        """The 6 linear-transformation matrices per layer, in layer order."""
        out = {}
        for i, lp in enumerate(self.layers):
            for slot in PRUNABLE_SLOTS:
                out[f"layer{i}.{slot}"] = getattr(lp, slot)
        return out

    def trainable(self) -> list[Tensor]:
        return list(self.named().values())

    def copy(self) -> "EncoderParams":
        named = self.named()
        fresh = {k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in named.items()}
        layers = []
        for i in range(self.config.num_layers):
            layers.append(LayerParams(**{
                slot: fresh[f"layer{i}.{slot}"]
                for slot in (
                    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                    "w1", "b1", "w2", "b2", "ln1_g", "ln1_b", "ln2_g", "ln2_b",
                )
            }))
        return EncoderParams(
            config=self.config,
            tok_emb=fresh["tok_emb"],
            pos_emb=fresh["pos_emb"],
            seg_emb=fresh["seg_emb"],
            emb_ln_g=fresh["emb_ln_g"],
            emb_ln_b=fresh["emb_ln_b"],
            layers=layers,
            pooler_w=fresh["pooler_w"],
            pooler_b=fresh["pooler_b"],
            cls_w=fresh["cls_w"],
            cls_b=fresh["cls_b"],
        )


@dataclass
class ForwardTrace:
    """Observables of one forward pass.

    ``attention_scores`` holds the scaled query-key products of every layer
    *before* the softmax (unless the config requests post-softmax recording);
    ``hidden_states`` holds each layer's output after its final residual norm.
    """

    embedding_output: Tensor
    attention_scores: list[Tensor] = field(default_factory=list)
    hidden_states: list[Tensor] = field(default_factory=list)
    logits: Tensor | None = None


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) resampled until every draw lies within +/- 2 std."""
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2.0 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2.0 * std
    return x


def init_params(config: EncoderConfig, seed: int) -> EncoderParams:
    """Deterministic initialization: truncated-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    h, inter = config.hidden_size, config.intermediate_size
    std = 0.02

    def w(shape):
        return Tensor(_trunc_normal(rng, shape, std), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    def ones(shape):
        return Tensor(np.ones(shape), requires_grad=True)

    layers = []
    for _ in range(config.num_layers):
        layers.append(LayerParams(
            wq=w((h, h)), bq=zeros(h),
            wk=w((h, h)), bk=zeros(h),
            wv=w((h, h)), bv=zeros(h),
            wo=w((h, h)), bo=zeros(h),
            w1=w((h, inter)), b1=zeros(inter),
            w2=w((inter, h)), b2=zeros(h),
            ln1_g=ones(h), ln1_b=zeros(h),
            ln2_g=ones(h), ln2_b=zeros(h),
        ))
    return EncoderParams(
        config=config,
        tok_emb=w((config.vocab_size, h)),
        pos_emb=w((config.max_seq_len, h)),
        seg_emb=w((config.type_vocab_size, h)),
        emb_ln_g=ones(h),
        emb_ln_b=zeros(h),
        layers=layers,
        pooler_w=w((h, h)),
        pooler_b=zeros(h),
        cls_w=w((h, config.num_labels)),
        cls_b=zeros(config.num_labels),
    )


def _linear(x: Tensor, w: Tensor, b: Tensor, m: np.ndarray | None) -> Tensor:
    if m is not None:
        if m.shape != w.shape:
            raise ContractError(f"mask shape {m.shape} does not match weight {w.shape}")
        w = T.mul(w, Tensor(m))
    return T.add(T.matmul(x, w), b)


def forward(
    params: EncoderParams,
    token_ids: np.ndarray,
    mask=None,
    train_mode: bool = False,
    seed: int = 0,
) -> ForwardTrace:
    """Run the encoder and task head, recording distillation observables.

    ``mask`` (a :class:`~sparsekd.pruning.PruneMask` or plain name->array
    dict) is multiplied elementwise into each prunable matrix before use, so
    gradients at pruned positions vanish.  Dropout fires only in train mode,
    driven by ``seed``.
    """
    cfg = params.config
    ids = np.asarray(token_ids)
    if ids.ndim != 2:
        raise InputError(f"token_ids must be 2-d (batch, seq), got {ids.shape}")
    batch, seq = ids.shape
    if seq > cfg.max_seq_len:
        raise InputError(f"sequence length {seq} exceeds max_seq_len {cfg.max_seq_len}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise InputError(
            f"token id out of range [0, {cfg.vocab_size}): "
            f"min={ids.min()}, max={ids.max()}"
        )
    masks = getattr(mask, "masks", mask) or {}
    rng = np.random.default_rng(seed) if train_mode else None
    p_drop = cfg.dropout_prob if train_mode else 0.0

    def drop(x):
        return T.dropout(x, p_drop, rng) if p_drop > 0.0 else x

    tok = T.embedding(params.tok_emb, ids)
    pos = T.take_rows(params.pos_emb, np.arange(seq))
    seg = T.take_rows(params.seg_emb, np.zeros(seq, dtype=np.int64))
    x = T.layer_norm(T.add(T.add(tok, pos), seg), params.emb_ln_g, params.emb_ln_b)
    trace = ForwardTrace(embedding_output=x)
    x = drop(x)

    n_heads, d = cfg.num_heads, cfg.head_dim
    inv_sqrt_d = 1.0 / math.sqrt(d)

    def split_heads(t):
        return T.permute(T.reshape(t, (batch, seq, n_heads, d)), (0, 2, 1, 3))

    for i, lp in enumerate(params.layers):
        def m(slot, _i=i):
            return masks.get(f"layer{_i}.{slot}")

        q = split_heads(_linear(x, lp.wq, lp.bq, m("wq")))
        k = split_heads(_linear(x, lp.wk, lp.bk, m("wk")))
        v = split_heads(_linear(x, lp.wv, lp.bv, m("wv")))
        scores = T.scale(T.matmul(q, T.transpose_last2(k)), inv_sqrt_d)
        probs = T.softmax_rows(scores)
        trace.attention_scores.append(probs if cfg.attn_post_softmax else scores)
        ctx = T.matmul(drop(probs), v)
        ctx = T.reshape(T.permute(ctx, (0, 2, 1, 3)), (batch, seq, cfg.hidden_size))
        attn_out = drop(_linear(ctx, lp.wo, lp.bo, m("wo")))
        x = T.layer_norm(T.add(x, attn_out), lp.ln1_g, lp.ln1_b)
        ffn = T.gelu(_linear(x, lp.w1, lp.b1, m("w1")))
        ffn = drop(_linear(ffn, lp.w2, lp.b2, m("w2")))
        x = T.layer_norm(T.add(x, ffn), lp.ln2_g, lp.ln2_b)
        trace.hidden_states.append(x)

    pooled = T.tanh(T.add(T.matmul(T.first_token(x), params.pooler_w), params.pooler_b))
    trace.logits = T.add(T.matmul(pooled, params.cls_w), params.cls_b)
    return trace


def mlm_logits(params: EncoderParams, trace: ForwardTrace, flat_positions: np.ndarray) -> Tensor:
    """Tied-projection token logits at selected flattened (batch*seq) positions."""
    batch, seq, h = trace.hidden_states[-1].shape
    flat = T.reshape(trace.hidden_states[-1], (batch * seq, h))
    picked = T.take_rows(flat, flat_positions)
    return T.matmul(picked, T.transpose_last2(params.tok_emb))


def count_encoder_params(config: EncoderConfig) -> dict:
    """Closed-form parameter counts for the encoder backbone.

    ``backbone_total`` covers every per-layer weight, bias, and norm plus the
    pooler; embedding tables and the classifier are excluded.  The breakdown
    and alternative conventions (without pooler; weight matrices only) are
    reported so the counting convention is always explicit.
    """
    h, inter, layers = config.hidden_size, config.intermediate_size, config.num_layers
    attention = layers * 4 * (h * h + h)
    ffn = layers * ((h * inter + inter) + (inter * h + h))
    norms = layers * 2 * 2 * h
    pooler = h * h + h
    per_layer = 4 * (h * h + h) + (h * inter + inter) + (inter * h + h) + 2 * 2 * h
    weights_only = layers * (4 * h * h + 2 * h * inter) + h * h
    total = attention + ffn + norms + pooler
    return {
        "backbone_total": total,
        "attention": attention,
        "ffn": ffn,
        "norms": norms,
        "pooler": pooler,
        "per_layer": per_layer,
        "backbone_without_pooler": total - pooler,
        "weight_matrices_only": weights_only,
        "convention": (
            "backbone_total = per-layer weights+biases+norms plus pooler; "
            "embeddings and classifier excluded"
        ),
    }
