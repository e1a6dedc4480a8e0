"""Synthetic classification and masked-token corpora, plus augmentation.

Vocabulary layout: ids 0..3 are special (PAD, CLS, SEP, MASK), ids 4 and 5
are the two marker tokens the classification rules are built from, and
everything from 6 upward is background.  Sequences always start with CLS.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError

PAD, CLS, SEP, MASK = 0, 1, 2, 3
MARKER_A, MARKER_B = 4, 5
NUM_SPECIAL = 4
FIRST_BACKGROUND = 6

RULES = ("marker_order", "marker_presence")


@dataclass
class Dataset:
    tokens: np.ndarray            # (n, seq) int64
    labels: np.ndarray | None     # (n,) int64, None for unlabeled corpora

    def __len__(self):
        return self.tokens.shape[0]


@dataclass
class TaskSplits:
    train: Dataset
    dev: Dataset


@dataclass(frozen=True)
class SyntheticTask:
    """Deterministic generator spec for a toy task.

    ``classification`` labels each sequence by the configured marker rule;
    ``mlm_pretrain`` yields an unlabeled corpus from the same sequence
    distribution.  Train and dev splits come from disjoint draws.
    """

    kind: str = "classification"
    seed: int = 0
    vocab_size: int = 64
    seq_len: int = 16
    num_labels: int = 2
    size: int = 512
    dev_size: int = 256
    rule: str = "marker_order"

    def __post_init__(self):
        if self.kind not in ("classification", "mlm_pretrain"):
            raise ConfigError(f"unknown task kind {self.kind!r}")
        if self.rule not in RULES:
            raise ConfigError(f"unknown classification rule {self.rule!r}")
        if self.vocab_size <= FIRST_BACKGROUND + 1:
            raise ConfigError(f"vocab_size too small: {self.vocab_size}")
        if self.seq_len < 4:
            raise ConfigError(f"seq_len must be >= 4, got {self.seq_len}")
        if self.kind == "classification" and self.num_labels != 2:
            raise ConfigError("marker rules are binary; num_labels must be 2")
        if self.size < 2 or self.dev_size < 2:
            raise ConfigError("size and dev_size must be >= 2")

    def build(self) -> TaskSplits:
        rng = np.random.default_rng(self.seed)
        n = self.size + self.dev_size
        tokens = rng.integers(FIRST_BACKGROUND, self.vocab_size, size=(n, self.seq_len))
        tokens[:, 0] = CLS
        # Two distinct marker positions per row, uniform over 1..seq_len-1.
        p1 = rng.integers(1, self.seq_len, size=n)
        p2 = rng.integers(1, self.seq_len - 1, size=n)
        p2 = p2 + (p2 >= p1)
        lo, hi = np.minimum(p1, p2), np.maximum(p1, p2)
        rows = np.arange(n)
        if self.kind == "mlm_pretrain":
            tokens[rows, lo] = MARKER_A
            tokens[rows, hi] = MARKER_B
            return TaskSplits(
                train=Dataset(tokens[: self.size], None),
                dev=Dataset(tokens[self.size:], None),
            )
        # Exactly balanced labels, shuffled deterministically.
        labels = np.zeros(n, dtype=np.int64)
        labels[: n // 2] = 1
        rng.shuffle(labels)
        if self.rule == "marker_order":
            # label 1 iff MARKER_A occurs before MARKER_B.
            first = np.where(labels == 1, MARKER_A, MARKER_B)
            second = np.where(labels == 1, MARKER_B, MARKER_A)
            tokens[rows, lo] = first
            tokens[rows, hi] = second
        else:  # marker_presence: label 1 iff MARKER_A occurs anywhere
            tokens[rows[labels == 1], lo[labels == 1]] = MARKER_A
        return TaskSplits(
            train=Dataset(tokens[: self.size], labels[: self.size]),
            dev=Dataset(tokens[self.size:], labels[self.size:]),
        )


def augment(dataset: Dataset, policy) -> Dataset:
    """Random-token replacement copies appended after the originals.

    Each non-special token of each copy is independently resampled (to a
    different non-special token) with probability ``replace_prob``; labels
    are carried over unchanged.  Output size is (1 + copies) * input size.
    """
    rng = np.random.default_rng(policy.seed)
    blocks = [dataset.tokens]
    labels = [dataset.labels] if dataset.labels is not None else None
    for _ in range(policy.copies):
        copy = dataset.tokens.copy()
        replace = (rng.random(copy.shape) < policy.replace_prob) & (copy >= NUM_SPECIAL)
        if replace.any():
            vocab_span = int(dataset.tokens.max()) + 1
            draws = rng.integers(NUM_SPECIAL, vocab_span - 1, size=int(replace.sum()))
            originals = copy[replace]
            # Skip past the original id so the replacement always differs.
            draws = draws + (draws >= originals)
            copy[replace] = draws
        blocks.append(copy)
        if labels is not None:
            labels.append(dataset.labels)
    return Dataset(
        tokens=np.concatenate(blocks, axis=0),
        labels=np.concatenate(labels, axis=0) if labels is not None else None,
    )


def mask_for_mlm(tokens: np.ndarray, rng: np.random.Generator, mask_prob: float = 0.15):
    """Replace ~mask_prob of the non-CLS positions with MASK per sequence.

    Returns (masked tokens, flat positions into batch*seq, original ids).
    At least one position per sequence is always masked.
    """
    if not 0.0 < mask_prob <= 1.0:
        raise ContractError(f"mask_prob must be in (0, 1], got {mask_prob}")
    batch, seq = tokens.shape
    count = max(1, int(round(mask_prob * (seq - 1))))
    masked = tokens.copy()
    flat_positions = np.empty(batch * count, dtype=np.int64)
    for i in range(batch):
        pos = rng.choice(np.arange(1, seq), size=count, replace=False)
        masked[i, pos] = MASK
        flat_positions[i * count:(i + 1) * count] = i * seq + pos
    originals = tokens.reshape(-1)[flat_positions]
    return masked, flat_positions, originals


class BatchSampler:
    """Deterministic shuffled mini-batches, reshuffling each epoch."""

    def __init__(self, dataset: Dataset, batch_size: int, seed: int):
        if batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
        self.dataset = dataset
        self.batch_size = min(batch_size, len(dataset))
        self.seed = seed
        self._epoch = 0
        self._cursor = 0
        self._order = self._shuffle()

    def _shuffle(self):
        rng = np.random.default_rng([self.seed, self._epoch])
        return rng.permutation(len(self.dataset))

    def next(self) -> tuple[np.ndarray, np.ndarray | None]:
        if self._cursor + self.batch_size > len(self.dataset):
            self._epoch += 1
            self._order = self._shuffle()
            self._cursor = 0
        idx = self._order[self._cursor:self._cursor + self.batch_size]
        self._cursor += self.batch_size
        tokens = self.dataset.tokens[idx]
        labels = self.dataset.labels[idx] if self.dataset.labels is not None else None
        return tokens, labels
