"""Four-term distillation objective between a frozen teacher and a student.

total = emb + att + hid + prd over the active terms, unweighted, assembled
in that fixed order.  Teacher-side tensors are detached inside every term,
so no gradient ever reaches teacher parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import tensor as T
from .encoder import ForwardTrace
from .errors import ConfigError, ContractError
from .tensor import Tensor

TERM_ORDER = ("emb", "att", "hid", "prd")


@dataclass(frozen=True)
class AugmentPolicy:
    """Random-token replacement settings for distillation-time augmentation."""

    replace_prob: float = 0.1
    copies: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.replace_prob <= 1.0:
            raise ConfigError(f"replace_prob must be in [0, 1], got {self.replace_prob}")
        if self.copies < 0:
            raise ConfigError(f"copies must be >= 0, got {self.copies}")


@dataclass(frozen=True)
class DistillConfig:
    temperature: float = 1.0
    active_terms: tuple[str, ...] = TERM_ORDER
    # (student_layer, teacher_layer) pairs; None means the identity map over
    # equal depths.  Must be strictly increasing in both coordinates.
    layer_map: tuple[tuple[int, int], ...] | None = None
    # Literal form scales only student logits by temperature; the symmetric
    # variant scales both sides and multiplies by temperature**2.
    symmetric_prd: bool = False
    augment: AugmentPolicy | None = None

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        unknown = set(self.active_terms) - set(TERM_ORDER)
        if unknown:
            raise ConfigError(f"unknown distillation terms: {sorted(unknown)}")
        if self.layer_map is not None:
            pairs = tuple(tuple(p) for p in self.layer_map)
            for (s0, t0), (s1, t1) in zip(pairs, pairs[1:]):
                if s1 <= s0 or t1 <= t0:
                    raise ConfigError(
                        f"layer_map must be strictly increasing in both coordinates: "
                        f"({s0},{t0}) -> ({s1},{t1})"
                    )
            object.__setattr__(self, "layer_map", pairs)


def identity_map(depth: int) -> tuple[tuple[int, int], ...]:
    return tuple((i, i) for i in range(depth))


def uniform_stride_map(student_depth: int, teacher_depth: int) -> tuple[tuple[int, int], ...]:
    """Map student layer i to teacher layer (i+1)*stride - 1 (TinyBERT style)."""
    if teacher_depth % student_depth != 0:
        raise ConfigError(
            f"teacher depth {teacher_depth} not a multiple of student depth {student_depth}"
        )
    stride = teacher_depth // student_depth
    return tuple((i, (i + 1) * stride - 1) for i in range(student_depth))


def _resolve_map(config: DistillConfig, s_depth: int, t_depth: int):
    pairs = config.layer_map
    if pairs is None:
        if s_depth != t_depth:
            raise ConfigError(
                f"identity layer map needs equal depths, got student {s_depth} "
                f"vs teacher {t_depth}"
            )
        pairs = identity_map(s_depth)
    for s, t in pairs:
        if not (0 <= s < s_depth and 0 <= t < t_depth):
            raise ConfigError(
                f"layer pair ({s},{t}) outside depths ({s_depth},{t_depth})"
            )
    return pairs


def loss_emb(emb_s: Tensor, emb_t: Tensor) -> Tensor:
    """MSE between student and teacher embedding-layer outputs."""
    if emb_s.shape != emb_t.shape:
        raise ContractError(
            f"embedding shapes differ: student {emb_s.shape} vs teacher {emb_t.shape} "
            "(hidden sizes must match; no projection supported)"
        )
    return T.mse(emb_s, emb_t.detach())


def _mapped_sum(xs_s, xs_t, layer_map, what: str) -> Tensor:
    if not layer_map:
        raise ConfigError(f"empty layer map with {what} loss active")
    total = None
    for s_idx, t_idx in layer_map:
        a, b = xs_s[s_idx], xs_t[t_idx]
        if a.shape != b.shape:
            raise ContractError(
                f"{what} pair ({s_idx},{t_idx}) shapes differ: {a.shape} vs {b.shape}"
            )
        term = T.mse(a, b.detach())
        total = term if total is None else T.add(total, term)
    return total


def loss_att(att_s: list[Tensor], att_t: list[Tensor], layer_map) -> Tensor:
    """Sum over mapped layer pairs of attention-score MSE (sum, not mean)."""
    return _mapped_sum(att_s, att_t, layer_map, "attention")


def loss_hid(hid_s: list[Tensor], hid_t: list[Tensor], layer_map) -> Tensor:
    """Sum over mapped layer pairs of hidden-state MSE."""
    return _mapped_sum(hid_s, hid_t, layer_map, "hidden")


def loss_prd(z_s: Tensor, z_t: Tensor, temp: float, symmetric: bool = False) -> Tensor:
    """Soft cross-entropy between teacher and temperature-scaled student logits.

    Mean over the batch of -sum_c softmax(z_t)_c * log_softmax(z_s / temp)_c.
    The literal form leaves the teacher side unscaled; ``symmetric`` scales
    both sides and multiplies by temp**2.  Gradients flow to z_s only.
    """
    if temp <= 0.0:
        raise ConfigError(f"temperature must be > 0, got {temp}")
    if z_s.shape != z_t.shape:
        raise ContractError(f"logit shapes differ: {z_s.shape} vs {z_t.shape}")
    batch = z_s.shape[0]
    z_t = z_t.detach()
    teacher = T.scale(z_t, 1.0 / temp) if symmetric else z_t
    p_t = T.softmax_rows(teacher)
    log_q = T.log_softmax_rows(T.scale(z_s, 1.0 / temp))
    loss = T.scale(T.tsum(T.mul(p_t, log_q)), -1.0 / batch)
    if symmetric:
        loss = T.scale(loss, temp * temp)
    return loss


@dataclass
class DistillOutput:
    total: Tensor
    per_term: dict[str, float] = field(default_factory=dict)


def distill_loss(trace_s: ForwardTrace, trace_t: ForwardTrace, config: DistillConfig) -> DistillOutput:
    """Assemble the active terms in canonical order (emb, att, hid, prd)."""
    active = set(config.active_terms)
    pairs = None
    if "att" in active or "hid" in active:
        pairs = _resolve_map(config, len(trace_s.hidden_states), len(trace_t.hidden_states))
    terms: dict[str, Tensor] = {}
    if "emb" in active:
        terms["emb"] = loss_emb(trace_s.embedding_output, trace_t.embedding_output)
    if "att" in active:
        terms["att"] = loss_att(trace_s.attention_scores, trace_t.attention_scores, pairs)
    if "hid" in active:
        terms["hid"] = loss_hid(trace_s.hidden_states, trace_t.hidden_states, pairs)
    if "prd" in active:
        terms["prd"] = loss_prd(
            trace_s.logits, trace_t.logits, config.temperature, config.symmetric_prd
        )
    if not terms:
        raise ConfigError("no active distillation terms")
    total = None
    for name in TERM_ORDER:
        if name in terms:
            total = terms[name] if total is None else T.add(total, terms[name])
    per_term = {name: (terms[name].item() if name in terms else 0.0) for name in TERM_ORDER}
    return DistillOutput(total=total, per_term=per_term)
