"""Magnitude-based unstructured pruning of the per-layer linear matrices.

Masks cover exactly the six prunable matrices per layer.  A cubic ramp
drives the target sparsity from ``s_init`` to ``s_final`` between
``t_begin`` and ``t_end``; masks are recomputed from current weight
magnitudes every ``prune_interval`` steps, so weights may revive between
recomputations within the ramp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import EncoderParams
from .errors import ConfigError, ContractError

SCOPES = ("per_matrix", "global")


@dataclass(frozen=True)
class SparsitySchedule:
    s_init: float = 0.0
    s_final: float = 0.95
    t_begin: int = 0
    t_end: int = 1000
    prune_interval: int = 10

    def __post_init__(self):
        if not 0.0 <= self.s_init < 1.0:
            raise ConfigError(f"s_init must be in [0, 1), got {self.s_init}")
        if not 0.0 < self.s_final <= 1.0:
            raise ConfigError(f"s_final must be in (0, 1], got {self.s_final}")
        if self.s_init > self.s_final:
            raise ConfigError(f"s_init {self.s_init} exceeds s_final {self.s_final}")
        if self.t_begin < 0 or self.t_end <= self.t_begin:
            raise ConfigError(
                f"require 0 <= t_begin < t_end, got [{self.t_begin}, {self.t_end}]"
            )
        if self.prune_interval < 1:
            raise ConfigError(f"prune_interval must be >= 1, got {self.prune_interval}")


def target_sparsity(t: int, sched: SparsitySchedule) -> float:
    """Cubic ramp: flat at s_init before t_begin, flat at s_final after t_end."""
    if t < 0:
        raise ContractError(f"step must be >= 0, got {t}")
    if t <= sched.t_begin:
        return sched.s_init
    if t >= sched.t_end:
        return sched.s_final
    frac = (t - sched.t_begin) / (sched.t_end - sched.t_begin)
    return sched.s_final + (sched.s_init - sched.s_final) * (1.0 - frac) ** 3


class PruneMask:
    """Binary {0, 1} masks over the prunable matrices, keyed by name."""

    def __init__(self, masks: dict[str, np.ndarray]):
        self.masks = {k: np.asarray(v, dtype=np.float64) for k, v in masks.items()}
        for name, m in self.masks.items():
            vals = np.unique(m)
            if not np.isin(vals, (0.0, 1.0)).all():
                raise ContractError(f"mask {name} has entries outside {{0, 1}}")

    @property
    def total(self) -> int:
        return sum(m.size for m in self.masks.values())

    @property
    def nnz(self) -> int:
        return int(sum(m.sum() for m in self.masks.values()))

    @property
    def current_sparsity(self) -> float:
        return 1.0 - self.nnz / self.total

    def __contains__(self, name):
        return name in self.masks

    def __getitem__(self, name):
        return self.masks[name]

    def copy(self) -> "PruneMask":
        return PruneMask({k: v.copy() for k, v in self.masks.items()})

    def all_ones(self) -> bool:
        return all((m == 1.0).all() for m in self.masks.values())


def _keep_counts(sizes: list[int], sparsity: float) -> list[int]:
    """Per-matrix keep counts: floor(s*n) smallest entries dropped.

    When floor(s*n) == n at s < 1 the largest-magnitude weight survives, so
    a matrix only empties out at s == 1 exactly.
    """
    keeps = []
    for n in sizes:
        drop = int(np.floor(sparsity * n))
        if drop >= n and sparsity < 1.0:
            drop = n - 1
        keeps.append(n - min(drop, n))
    return keeps


def compute_mask(params: EncoderParams, sparsity: float, scope: str = "per_matrix") -> PruneMask:
    """Magnitude mask at the requested sparsity over the prunable set.

    ``per_matrix`` thresholds each matrix independently; ``global`` pools all
    prunable weights under a single threshold.  Ties break in stable
    row-major order within a matrix, then matrix order.
    """
    if not 0.0 <= sparsity <= 1.0:
        raise ContractError(f"sparsity must be in [0, 1], got {sparsity}")
    if scope not in SCOPES:
        raise ConfigError(f"scope must be one of {SCOPES}, got {scope!r}")
    prunable = params.prunable()
    masks = {}
    if scope == "per_matrix":
        for name, w in prunable.items():
            flat = np.abs(w.data.ravel())
            (keep,) = _keep_counts([flat.size], sparsity)
            order = np.argsort(flat, kind="stable")
            m = np.ones(flat.size)
            m[order[: flat.size - keep]] = 0.0
            masks[name] = m.reshape(w.data.shape)
    else:
        names = list(prunable)
        sizes = [prunable[n].data.size for n in names]
        pooled = np.concatenate([np.abs(prunable[n].data.ravel()) for n in names])
        total = pooled.size
        drop = int(np.floor(sparsity * total))
        if drop >= total and sparsity < 1.0:
            drop = total - 1
        order = np.argsort(pooled, kind="stable")
        flat_mask = np.ones(total)
        flat_mask[order[:drop]] = 0.0
        offset = 0
        for name, size in zip(names, sizes):
            masks[name] = flat_mask[offset:offset + size].reshape(prunable[name].data.shape)
            offset += size
    return PruneMask(masks)


def apply_mask(params: EncoderParams, mask: PruneMask) -> EncoderParams:
    """Zero masked weights in place; everything non-prunable is untouched."""
    prunable = params.prunable()
    if set(mask.masks) != set(prunable):
        raise ContractError(
            f"mask covers {sorted(mask.masks)} but prunable set is {sorted(prunable)}"
        )
    for name, w in prunable.items():
        m = mask.masks[name]
        if m.shape != w.data.shape:
            raise ContractError(
                f"mask {name} shape {m.shape} does not match weight {w.data.shape}"
            )
        w.data[m == 0.0] = 0.0
    return params


def sparsity_report(params: EncoderParams, mask: PruneMask) -> dict:
    """Remaining-weight fractions (mask ones over totals), per matrix and pooled."""
    prunable = params.prunable()
    if set(mask.masks) != set(prunable):
        raise ContractError("mask does not cover the prunable set")
    per_matrix = {
        name: float(mask.masks[name].sum() / mask.masks[name].size)
        for name in prunable
    }
    return {
        "remaining_weight_fraction": mask.nnz / mask.total,
        "per_matrix": per_matrix,
    }
