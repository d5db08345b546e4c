"""Temporal-attention alignment between audio embedding sequences and text.

Long-form audio arrives as a per-timestep embedding sequence, gets unfolded
into overlapping frames whose size scales with sequence length, and is
scored against a text embedding through two attention poolings (over kernel
positions and over frames).  The fused scores feed an in-batch contrastive
loss with hand-derived gradients, a desk-scale trainer, and a recall@k
retrieval harness.  Embeddings are exchanged through CESF binary stores
plus JSONL pair manifests.
"""

from .alignment import (
    AlignmentResult,
    FusionConfig,
    align,
    fused_score,
    kernel_attention,
    pooled_scores,
    similarity_matrix,
    softmax,
    temporal_attention,
)
from .contrastive import (
    GradCheckReport,
    GradientBundle,
    backprop,
    batch_scores,
    grad_check,
    loss_grad_scores,
    nce_loss,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateInput,
    DimensionMismatch,
    DivergenceError,
    DuplicateId,
    EmptyBatch,
    FormatError,
    InvalidK,
    IoError,
    KernelExceedsLength,
    MissingRecord,
    ModalityMismatch,
    ParamMismatch,
    SequenceTooShort,
    TempalignError,
)
from .framing import (
    REF_WINDOW,
    FrameTensor,
    KernelParams,
    fold_back,
    kernel_params,
    unfold,
)
from .model import (
    ToyModelParams,
    adapter_forward,
    batch_loss_and_grads,
    full_grad_check,
    load_checkpoint,
    project_text,
    save_checkpoint,
)
from .optim import AdamW, linear_lr
from .retrieval import RetrievalReport, eval_report, rank_targets, recall_at_k
from .store import (
    EmbeddingRecord,
    EmbeddingStore,
    Modality,
    PairEntry,
    PairManifest,
    load_manifest,
    read_store,
    resolve_pairs,
    write_manifest,
    write_store,
)
from .synth import SynthConfig, SynthDataset, SynthPair, emit_stores, synth_dataset
from .train import TrainConfig, TrainResult, evaluate, train, train_step

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "AlignmentResult",
    "ConfigError",
    "DataError",
    "DegenerateInput",
    "DimensionMismatch",
    "DivergenceError",
    "DuplicateId",
    "EmbeddingRecord",
    "EmbeddingStore",
    "EmptyBatch",
    "FormatError",
    "FrameTensor",
    "FusionConfig",
    "GradCheckReport",
    "GradientBundle",
    "InvalidK",
    "IoError",
    "KernelExceedsLength",
    "KernelParams",
    "MissingRecord",
    "Modality",
    "ModalityMismatch",
    "PairEntry",
    "PairManifest",
    "ParamMismatch",
    "REF_WINDOW",
    "RetrievalReport",
    "SequenceTooShort",
    "SynthConfig",
    "SynthDataset",
    "SynthPair",
    "TempalignError",
    "ToyModelParams",
    "TrainConfig",
    "TrainResult",
    "adapter_forward",
    "align",
    "backprop",
    "batch_loss_and_grads",
    "batch_scores",
    "emit_stores",
    "eval_report",
    "evaluate",
    "fold_back",
    "full_grad_check",
    "fused_score",
    "grad_check",
    "kernel_attention",
    "kernel_params",
    "linear_lr",
    "load_checkpoint",
    "load_manifest",
    "loss_grad_scores",
    "nce_loss",
    "pooled_scores",
    "project_text",
    "rank_targets",
    "read_store",
    "recall_at_k",
    "resolve_pairs",
    "save_checkpoint",
    "similarity_matrix",
    "softmax",
    "synth_dataset",
    "temporal_attention",
    "train",
    "train_step",
    "unfold",
    "write_manifest",
    "write_store",
]
