"""Desk-scale training loop.

AdamW over the audio adapter, text projection, and optionally the fusion
weights, with linear learning-rate decay to zero across the whole run and
a retrieval evaluation on the held-out pairs after every epoch.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .contrastive import batch_scores
from .errors import ConfigError, DataError, DivergenceError, EmptyBatch
from .model import (
    ToyModelParams,
    batch_loss_and_grads,
    frame_batch,
    project_text,
    save_checkpoint,
)
from .optim import AdamW, linear_lr
from .retrieval import recall_at_k
from .store import EmbeddingStore, PairManifest, resolve_pairs
from .synth import SynthConfig, SynthDataset, SynthPair, synth_dataset

DEFAULT_EVAL_KS = (1, 5, 20, 100)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization and scoring settings for a toy run.

    lr, weight_decay, batch_size, epochs and the linear decay schedule keep
    their realistic-run defaults.  The framing seconds, the small init_scale
    and the sharp temperature are calibrated for the desk-scale synthetic
    task: with the total AdamW movement budget fixed by lr and step count, a
    small init lets learned directions dominate, and cosine scoring makes
    the overall weight scale irrelevant.
    """

    lr: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 50
    epochs: int = 20
    kernel_secs: float = 3.0
    stride_secs: float = 1.0
    ref_window: float = 30.0
    kernel_weight: float = 0.5
    temporal_weight: float = 0.5
    temperature: float = 0.5
    normalize: bool = True
    symmetric_loss: bool = False
    train_fusion_weights: bool = False
    use_adapter: bool = True
    init_scale: float = 0.002
    seed: int = 0
    drop_last: bool = True
    workers: int = 1
    eval_ks: tuple[int, ...] = DEFAULT_EVAL_KS

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.batch_size == 1:
            warnings.warn(
                "batch_size=1 gives a degenerate contrastive loss (no negatives)",
                stacklevel=2,
            )
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.init_scale <= 0:
            raise ConfigError(f"init_scale must be > 0, got {self.init_scale}")


@dataclass
class TrainResult:
    params: ToyModelParams
    epochs: list[dict]  # one report object per epoch, epoch 0 = initial eval
    step_losses: list[float]
    checkpoint_path: Path | None = None

    def report_lines(self) -> list[str]:
        return [json.dumps(entry, sort_keys=True) for entry in self.epochs]

    def write_report(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.report_lines()) + "\n", encoding="utf-8")


def evaluate(
    pairs: Sequence[SynthPair], params: ToyModelParams, cfg: TrainConfig
) -> dict[str, dict]:
    """Retrieval recalls over a pair set under the current parameters."""
    if not pairs:
        raise EmptyBatch("no pairs to evaluate")
    frames = frame_batch(pairs, params, cfg.kernel_secs, cfg.stride_secs, cfg.ref_window)
    projected = project_text(np.stack([p.text for p in pairs]), params)
    scores = batch_scores(
        frames,
        projected,
        params.fusion_config(cfg.normalize, cfg.temperature),
        workers=cfg.workers,
    )
    t2a, a2t = recall_at_k(scores, cfg.eval_ks)
    return {"t2a": t2a.to_dict(), "a2t": a2t.to_dict()}


def train_step(
    batch: Sequence[SynthPair],
    params: ToyModelParams,
    cfg: TrainConfig,
    optimizer: AdamW,
    step_index: int,
    total_steps: int,
) -> tuple[float, ToyModelParams]:
    """One optimization step; params are updated in place.

    The scheduled learning rate for step_index is applied, so the final
    step of a run (lr exactly 0) leaves the parameters untouched.
    """
    if not batch:
        raise EmptyBatch("empty training batch")
    result = batch_loss_and_grads(
        batch,
        params,
        cfg.kernel_secs,
        cfg.stride_secs,
        cfg.ref_window,
        normalize=cfg.normalize,
        temperature=cfg.temperature,
        symmetric=cfg.symmetric_loss,
        workers=cfg.workers,
    )
    if not np.isfinite(result.loss):
        raise DivergenceError(
            f"non-finite loss {result.loss!r} at step {step_index} "
            f"(lr={linear_lr(cfg.lr, step_index, total_steps):.3e}, "
            f"max |text_w|={np.abs(params.text_w).max():.3e})"
        )
    optimizer.step(result.params, linear_lr(cfg.lr, step_index, total_steps))
    return result.loss, params


def _snapshot(params: ToyModelParams, optimizer: AdamW) -> tuple[ToyModelParams, AdamW]:
    copied = params.copy()
    opt = AdamW(
        copied.trainable(),
        optimizer.beta1,
        optimizer.beta2,
        optimizer.eps,
        optimizer.weight_decay,
    )
    opt.load_state(optimizer.state())  # load copies array contents
    return copied, opt


def train(
    cfg: TrainConfig,
    dataset: SynthDataset | None = None,
    synth_cfg: SynthConfig | None = None,
    checkpoint_path: str | Path | None = None,
    report_path: str | Path | None = None,
) -> TrainResult:
    """Run the full loop: seeded shuffled batching, linear lr decay, eval
    after every epoch, final checkpoint.

    On divergence the last end-of-epoch state is written to checkpoint_path
    (when given) before the error propagates.
    """
    if dataset is None:
        dataset = synth_dataset(synth_cfg if synth_cfg is not None else SynthConfig(seed=cfg.seed))
    data_cfg = dataset.config
    if not dataset.train:
        raise EmptyBatch("dataset has no training pairs")

    rng = np.random.default_rng(cfg.seed)
    params = ToyModelParams.init(
        rng,
        music_dim=data_cfg.music_dim,
        speech_dim=data_cfg.speech_dim,
        text_dim=data_cfg.text_dim,
        fused_dim=data_cfg.fused_dim,
        init_scale=cfg.init_scale,
        kernel_weight=cfg.kernel_weight,
        temporal_weight=cfg.temporal_weight,
        train_fusion_weights=cfg.train_fusion_weights,
        use_adapter=cfg.use_adapter,
    )
    optimizer = AdamW(params.trainable(), weight_decay=cfg.weight_decay)

    n_train = len(dataset.train)
    if cfg.drop_last:
        steps_per_epoch = n_train // cfg.batch_size
        if steps_per_epoch == 0:
            raise ConfigError(
                f"batch_size {cfg.batch_size} exceeds train set size {n_train} with drop_last"
            )
    else:
        steps_per_epoch = (n_train + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.epochs * steps_per_epoch

    epochs: list[dict] = [
        {
            "epoch": 0,
            "mean_loss": None,
            "lr": cfg.lr,
            "recalls": evaluate(dataset.eval, params, cfg) if dataset.eval else None,
        }
    ]
    step_losses: list[float] = []
    last_good = _snapshot(params, optimizer)

    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(n_train)
            epoch_losses = []
            for b in range(steps_per_epoch):
                step_index = (epoch - 1) * steps_per_epoch + b
                batch = [dataset.train[i] for i in order[b * cfg.batch_size : (b + 1) * cfg.batch_size]]
                loss, params = train_step(batch, params, cfg, optimizer, step_index, total_steps)
                epoch_losses.append(loss)
                step_losses.append(loss)
            epochs.append(
                {
                    "epoch": epoch,
                    "mean_loss": float(np.mean(epoch_losses)),
                    "lr": linear_lr(cfg.lr, (epoch * steps_per_epoch) - 1, total_steps),
                    "recalls": evaluate(dataset.eval, params, cfg) if dataset.eval else None,
                }
            )
            last_good = _snapshot(params, optimizer)
    except DivergenceError:
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, last_good[0], last_good[1], meta=_run_meta(cfg, data_cfg))
        raise

    result = TrainResult(params=params, epochs=epochs, step_losses=step_losses)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, params, optimizer, meta=_run_meta(cfg, data_cfg))
        result.checkpoint_path = Path(checkpoint_path)
    if report_path is not None:
        result.write_report(report_path)
    return result


def _run_meta(cfg: TrainConfig, data_cfg: SynthConfig) -> dict:
    meta = {"train_config": asdict(cfg), "data_config": asdict(data_cfg)}
    meta["train_config"]["eval_ks"] = list(cfg.eval_ks)
    meta["data_config"]["seq_len_range"] = list(data_cfg.seq_len_range)
    return meta


def dataset_from_stores(
    text_store: EmbeddingStore,
    music_store: EmbeddingStore,
    speech_store: EmbeddingStore,
    manifest: PairManifest,
    fused_dim: int | None = None,
) -> SynthDataset:
    """Assemble a trainable dataset from embedding stores plus a manifest.

    The music and speech stores must agree on ids and timestep counts (the
    same underlying audio described in two feature spaces).  Labels are not
    recoverable from stores and are set to -1.  The returned dataset's
    config only carries dimensions; its sampling fields are placeholders.
    """
    splits: dict[str, list[SynthPair]] = {"train": [], "eval": []}
    for split in splits:
        music_pairs = resolve_pairs(manifest, text_store, music_store, split)
        speech_pairs = resolve_pairs(manifest, text_store, speech_store, split)
        for (text_rec, music_rec), (_, speech_rec) in zip(music_pairs, speech_pairs):
            if music_rec.steps != speech_rec.steps:
                raise DataError(
                    f"audio {music_rec.id!r}: music has {music_rec.steps} timesteps "
                    f"but speech has {speech_rec.steps}"
                )
            splits[split].append(
                SynthPair(
                    music=music_rec.data,
                    speech=speech_rec.data,
                    text=text_rec.data[0],
                    label=-1,
                )
            )
    music_dim = music_store.dim
    speech_dim = speech_store.dim
    config = SynthConfig(
        num_classes=1,
        music_dim=music_dim,
        speech_dim=speech_dim,
        text_dim=text_store.dim,
        fused_dim=fused_dim if fused_dim is not None else music_dim + speech_dim,
        n_train=max(len(splits["train"]), 1),
        n_eval=max(len(splits["eval"]), 1),
    )
    return SynthDataset(train=splits["train"], eval=splits["eval"], config=config)
