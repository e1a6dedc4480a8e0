"""Magnitude pruning of transformer encoders under knowledge distillation.

A desk-scale engine: a dense teacher is fine-tuned from a pretrained
encoder, then a student copy of the *pretrained* weights is magnitude-pruned
on a gradual schedule while it learns to mimic the teacher's embeddings,
attention scores, hidden states, and logits.  Two baseline pruning
strategies, a CSR sparse inference path, and compression accounting round
out the toolkit.
"""

from .distill import (
    AugmentPolicy,
    DistillConfig,
    distill_loss,
    identity_map,
    loss_att,
    loss_emb,
    loss_hid,
    loss_prd,
    uniform_stride_map,
)
from .encoder import (
    EncoderConfig,
    EncoderParams,
    ForwardTrace,
    bert_base_config,
    count_encoder_params,
    forward,
    init_params,
)
from .pipelines import (
    RunResult,
    TrainConfig,
    evaluate,
    evaluate_mlm,
    finetune_teacher,
    pretrain,
    prune_at_distill,
    prune_at_finetune,
    prune_at_pretrain,
)
from .pruning import (
    PruneMask,
    SparsitySchedule,
    apply_mask,
    compute_mask,
    sparsity_report,
    target_sparsity,
)
from .sparse import (
    CompressionReport,
    CsrMatrix,
    SparseEncoder,
    benchmark_throughput,
    count_flops,
    spmm,
    to_csr,
)
from .tasks import Dataset, SyntheticTask, TaskSplits, augment
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "AugmentPolicy",
    "CompressionReport",
    "CsrMatrix",
    "Dataset",
    "DistillConfig",
    "EncoderConfig",
    "EncoderParams",
    "ForwardTrace",
    "PruneMask",
    "RunResult",
    "SparseEncoder",
    "SparsitySchedule",
    "SyntheticTask",
    "TaskSplits",
    "Tensor",
    "TrainConfig",
    "apply_mask",
    "augment",
    "backward",
    "bert_base_config",
    "benchmark_throughput",
    "compute_mask",
    "count_encoder_params",
    "count_flops",
    "distill_loss",
    "evaluate",
    "evaluate_mlm",
    "finetune_teacher",
    "forward",
    "identity_map",
    "init_params",
    "loss_att",
    "loss_emb",
    "loss_hid",
    "loss_prd",
    "no_grad",
    "pretrain",
    "prune_at_distill",
    "prune_at_finetune",
    "prune_at_pretrain",
    "sparsity_report",
    "spmm",
    "target_sparsity",
    "to_csr",
    "uniform_stride_map",
]
