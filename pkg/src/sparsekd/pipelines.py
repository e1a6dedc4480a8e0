"""End-to-end training strategies.

Three-stage recipe: masked-token pretraining produces a general encoder,
cross-entropy fine-tuning of a dense copy produces the teacher, and the
pruning strategies compress a student under one of three regimes:

* ``prune_at_finetune``  - prune while fine-tuning on task labels.
* ``prune_at_pretrain``  - prune during masked-token training, then
  fine-tune with the mask frozen.
* ``prune_at_distill``   - initialize from the *pre-trained* (not
  fine-tuned) encoder and prune while distilling from the teacher on the
  (optionally augmented) task data.

All strategies share one loop: every ``prune_interval`` steps the mask is
recomputed from current magnitudes at the scheduled target sparsity and
applied; optimizer updates are masked so pruned weights stay exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .distill import DistillConfig, distill_loss
from .encoder import EncoderConfig, EncoderParams, forward, init_params, mlm_logits
from .errors import ConfigError, TrainingDivergedError
from .metrics import MetricsRecord
from .optim import AdamW
from .pruning import PruneMask, SparsitySchedule, apply_mask, compute_mask, target_sparsity
from .tasks import BatchSampler, Dataset, TaskSplits, augment, mask_for_mlm
from .tensor import no_grad

STRATEGIES = ("finetune", "prune_at_finetune", "prune_at_pretrain", "prune_at_distill")


@dataclass
class TrainConfig:
    strategy: str = "finetune"
    learning_rate: float = 3e-3
    steps: int = 600
    batch_size: int = 16
    weight_decay: float = 0.01
    seed: int = 0
    eval_every: int = 100
    pretrain_steps: int = 1200
    prune_scope: str = "per_matrix"
    sparsity: SparsitySchedule | None = None
    distill: DistillConfig | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.strategy.startswith("prune_") and self.sparsity is None:
            raise ConfigError(f"strategy {self.strategy} requires a sparsity schedule")
        if self.strategy == "prune_at_distill" and self.distill is None:
            raise ConfigError("prune_at_distill requires a distill config")


@dataclass
class RunResult:
    params: EncoderParams
    mask: PruneMask | None
    metrics: list[MetricsRecord] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _dropout_seed(seed: int, step: int) -> int:
    return (seed * 1_000_003 + step) % (2 ** 63)


def evaluate(params: EncoderParams, dataset: Dataset, mask: PruneMask | None = None,
             batch_size: int = 64) -> dict:
    """Argmax accuracy and mean cross-entropy on a labeled split (eval mode)."""
    if dataset.labels is None:
        raise ConfigError("evaluate requires a labeled dataset")
    n = len(dataset)
    correct = 0
    loss_sum = 0.0
    with no_grad():
        for start in range(0, n, batch_size):
            tokens = dataset.tokens[start:start + batch_size]
            labels = dataset.labels[start:start + batch_size]
            trace = forward(params, tokens, mask=mask, train_mode=False)
            logits = trace.logits.data
            correct += int((logits.argmax(axis=1) == labels).sum())
            loss_sum += T.cross_entropy(trace.logits, labels).item() * len(labels)
    return {"accuracy": correct / n, "loss": loss_sum / n}


def evaluate_mlm(params: EncoderParams, dataset: Dataset, seed: int = 0,
                 mask: PruneMask | None = None, batch_size: int = 64) -> float:
    """Mean masked-token cross-entropy over a corpus, with seeded masking."""
    rng = np.random.default_rng([seed, 999])
    total = 0.0
    count = 0
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            tokens = dataset.tokens[start:start + batch_size]
            masked, flat_pos, originals = mask_for_mlm(tokens, rng)
            trace = forward(params, masked, mask=mask, train_mode=False)
            logits = mlm_logits(params, trace, flat_pos)
            total += T.cross_entropy(logits, originals).item() * len(originals)
            count += len(originals)
    return total / count


def _run_loop(
    params: EncoderParams,
    cfg: TrainConfig,
    loss_step,
    phase: str,
    sched: SparsitySchedule | None,
    dev_eval,
    frozen_mask: PruneMask | None = None,
    on_step=None,
    step_offset: int = 0,
) -> tuple[PruneMask | None, list[MetricsRecord]]:
    opt = AdamW(
        params.named(),
        lr=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
    )
    mask = frozen_mask
    records: list[MetricsRecord] = []
    for t in range(cfg.steps):
        target = None
        if sched is not None:
            target = target_sparsity(t, sched)
            if t % sched.prune_interval == 0:
                mask = compute_mask(params, target, cfg.prune_scope)
                apply_mask(params, mask)
                opt.mask_moments(mask)
        opt.zero_grad()
        losses = loss_step(t, mask)
        if not math.isfinite(losses["loss_total"]):
            raise TrainingDivergedError(t)
        opt.step(mask)
        rec = MetricsRecord(
            step=step_offset + t,
            phase=phase,
            target_sparsity=target,
            actual_sparsity=mask.current_sparsity if mask is not None else None,
            **losses,
        )
        if cfg.eval_every and (t + 1) % cfg.eval_every == 0 and dev_eval is not None:
            rec.dev_accuracy = dev_eval(params, mask)
        records.append(rec)
        if on_step is not None:
            on_step(t, params, mask)
    return mask, records


def pretrain(enc_cfg: EncoderConfig, task: TaskSplits, cfg: TrainConfig,
             init: EncoderParams | None = None,
             sched: SparsitySchedule | None = None,
             on_step=None) -> RunResult:
    """Masked-token pretraining; 15% of positions are masked and predicted
    through the tied embedding projection."""
    params = init.copy() if init is not None else init_params(enc_cfg, cfg.seed)
    sampler = BatchSampler(task.train, cfg.batch_size, seed=cfg.seed)

    def loss_step(t, mask):
        tokens, _ = sampler.next()
        rng = np.random.default_rng([cfg.seed, 5, t])
        masked, flat_pos, originals = mask_for_mlm(tokens, rng)
        trace = forward(params, masked, mask=mask, train_mode=True,
                        seed=_dropout_seed(cfg.seed, t))
        loss = T.cross_entropy(mlm_logits(params, trace, flat_pos), originals)
        T.backward(loss)
        return {"loss_total": loss.item(), "task_loss": loss.item()}

    mask, records = _run_loop(params, cfg, loss_step, "pretrain", sched,
                              dev_eval=None, on_step=on_step)
    summary = {"dev_mlm_loss": evaluate_mlm(params, task.dev, seed=cfg.seed, mask=mask)}
    return RunResult(params=params, mask=mask, metrics=records, summary=summary)


def _classification_loss_step(params, cfg, sampler):
    def loss_step(t, mask):
        tokens, labels = sampler.next()
        trace = forward(params, tokens, mask=mask, train_mode=True,
                        seed=_dropout_seed(cfg.seed, t))
        loss = T.cross_entropy(trace.logits, labels)
        T.backward(loss)
        return {"loss_total": loss.item(), "task_loss": loss.item()}
    return loss_step


def _dev_eval(task):
    def run(params, mask):
        return evaluate(params, task.dev, mask=mask)["accuracy"]
    return run


def finetune_teacher(pretrained: EncoderParams, task: TaskSplits, cfg: TrainConfig,
                     on_step=None) -> RunResult:
    """Dense cross-entropy fine-tuning of a copy of the pretrained encoder."""
    params = pretrained.copy()
    sampler = BatchSampler(task.train, cfg.batch_size, seed=cfg.seed)
    _, records = _run_loop(
        params, cfg, _classification_loss_step(params, cfg, sampler),
        "finetune", sched=None, dev_eval=_dev_eval(task), on_step=on_step,
    )
    dev = evaluate(params, task.dev)
    return RunResult(params=params, mask=None, metrics=records,
                     summary={"dev_accuracy": dev["accuracy"], "dev_loss": dev["loss"]})


def prune_at_finetune(pretrained: EncoderParams, task: TaskSplits, cfg: TrainConfig,
                      on_step=None) -> RunResult:
    """Baseline: magnitude-prune on the schedule while fine-tuning on labels."""
    params = pretrained.copy()
    sampler = BatchSampler(task.train, cfg.batch_size, seed=cfg.seed)
    mask, records = _run_loop(
        params, cfg, _classification_loss_step(params, cfg, sampler),
        "finetune", sched=cfg.sparsity, dev_eval=_dev_eval(task), on_step=on_step,
    )
    return RunResult(params=params, mask=mask, metrics=records,
                     summary=_final_summary(params, mask, task))


def prune_at_distill(pretrained: EncoderParams, teacher: EncoderParams,
                     task: TaskSplits, cfg: TrainConfig, on_step=None) -> RunResult:
    """Prune the pre-trained encoder while it learns to mimic the fine-tuned
    teacher on the task data.

    The student starts from the *pretrained* weights (not the teacher's) so
    the general-purpose features survive; the teacher runs in eval mode and
    is never updated.  When the distill config carries an augmentation
    policy the task data is expanded with random-token-replacement copies.
    """
    if cfg.distill is None:
        raise ConfigError("prune_at_distill requires a distill config")
    tc, sc = teacher.config, pretrained.config
    if (tc.hidden_size, tc.num_heads) != (sc.hidden_size, sc.num_heads):
        raise ConfigError(
            f"teacher ({tc.hidden_size}h/{tc.num_heads}a) and student "
            f"({sc.hidden_size}h/{sc.num_heads}a) must share hidden size and heads"
        )
    params = pretrained.copy()
    train_data = task.train
    if cfg.distill.augment is not None and cfg.distill.augment.copies > 0:
        train_data = augment(task.train, cfg.distill.augment)
    sampler = BatchSampler(train_data, cfg.batch_size, seed=cfg.seed)

    def loss_step(t, mask):
        tokens, _ = sampler.next()
        with no_grad():
            trace_t = forward(teacher, tokens, train_mode=False)
        trace_s = forward(params, tokens, mask=mask, train_mode=True,
                          seed=_dropout_seed(cfg.seed, t))
        out = distill_loss(trace_s, trace_t, cfg.distill)
        T.backward(out.total)
        return {
            "loss_total": out.total.item(),
            "loss_emb": out.per_term["emb"],
            "loss_att": out.per_term["att"],
            "loss_hid": out.per_term["hid"],
            "loss_prd": out.per_term["prd"],
        }

    mask, records = _run_loop(params, cfg, loss_step, "distill",
                              sched=cfg.sparsity, dev_eval=_dev_eval(task),
                              on_step=on_step)
    return RunResult(params=params, mask=mask, metrics=records,
                     summary=_final_summary(params, mask, task))


def prune_at_pretrain(enc_cfg: EncoderConfig, mlm_task: TaskSplits, task: TaskSplits,
                      cfg: TrainConfig, on_step=None) -> RunResult:
    """Baseline: prune during masked-token training, then fine-tune on the
    task with the mask frozen (no regrowth)."""
    if cfg.sparsity is None:
        raise ConfigError("prune_at_pretrain requires a sparsity schedule")
    pre_cfg = TrainConfig(
        strategy="finetune",
        learning_rate=cfg.learning_rate,
        steps=cfg.pretrain_steps,
        batch_size=cfg.batch_size,
        weight_decay=cfg.weight_decay,
        seed=cfg.seed,
        eval_every=0,
    )
    pre_sched = _rescale_schedule(cfg.sparsity, cfg.pretrain_steps)
    pre = pretrain(enc_cfg, mlm_task, pre_cfg, sched=pre_sched, on_step=on_step)
    params = pre.params
    frozen = pre.mask
    sampler = BatchSampler(task.train, cfg.batch_size, seed=cfg.seed)
    _, records = _run_loop(
        params, cfg, _classification_loss_step(params, cfg, sampler),
        "finetune", sched=None, dev_eval=_dev_eval(task),
        frozen_mask=frozen, on_step=on_step, step_offset=cfg.pretrain_steps,
    )
    return RunResult(params=params, mask=frozen, metrics=pre.metrics + records,
                     summary=_final_summary(params, frozen, task))


def _rescale_schedule(sched: SparsitySchedule, steps: int) -> SparsitySchedule:
    """Fit the ramp inside a pretraining budget, keeping recovery headroom."""
    if sched.t_end < steps:
        return sched
    t_end = max(sched.t_begin + 1, int(steps * 0.6))
    return SparsitySchedule(
        s_init=sched.s_init, s_final=sched.s_final,
        t_begin=min(sched.t_begin, max(0, t_end - 1)), t_end=t_end,
        prune_interval=sched.prune_interval,
    )


def _final_summary(params, mask, task: TaskSplits) -> dict:
    dev = evaluate(params, task.dev, mask=mask)
    train = evaluate(params, task.train, mask=mask)
    out = {
        "dev_accuracy": dev["accuracy"],
        "dev_loss": dev["loss"],
        "train_loss": train["loss"],
    }
    if mask is not None:
        out["remaining_weight_fraction"] = mask.nnz / mask.total
        out["sparsity"] = mask.current_sparsity
    return out
