"""Synthetic paired audio/text embedding generation for desk-scale training.

Each pair belongs to one of K classes.  Every source space (music, speech,
text) has a unit-vector prototype per class.  On top of the class
prototype, matched audio and text share a pair-specific Gaussian latent:
the text observes the latent directly, the audio observes it through fixed
random mixing matrices, and audio timesteps additionally carry smaller
independent jitter.  The shared latent is what makes the true counterpart
identifiable among same-class candidates, so retrieval can exceed
class-level chance; with noise_sigma = 0 everything collapses onto the
prototypes.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError
from .store import (
    EmbeddingRecord,
    Modality,
    PairEntry,
    PairManifest,
    write_manifest,
    write_store,
)

# Per-timestep jitter scale relative to noise_sigma.  Kept below 1 so the
# shared pair latent survives attention pooling over kernel positions.
JITTER_SCALE = 0.5


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 8
    music_dim: int = 512
    speech_dim: int = 512
    text_dim: int = 512
    fused_dim: int = 512
    seq_len_range: tuple[int, int] = (30, 45)
    noise_sigma: float = 0.3
    n_train: int = 256
    n_eval: int = 64
    seed: int = 0

    def __post_init__(self):
        for name in ("num_classes", "music_dim", "speech_dim", "text_dim", "fused_dim", "n_train", "n_eval"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1, got {getattr(self, name)}")
        lo, hi = self.seq_len_range
        if not (1 <= lo <= hi):
            raise DataError(f"invalid seq_len_range {self.seq_len_range}")
        if self.noise_sigma < 0:
            raise DataError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    def scaled(self, dim: int) -> "SynthConfig":
        """Copy with every source/fused dimension set to ``dim``."""
        return replace(self, music_dim=dim, speech_dim=dim, text_dim=dim, fused_dim=dim)


@dataclass
class SynthPair:
    music: np.ndarray  # (T, music_dim)
    speech: np.ndarray  # (T, speech_dim)
    text: np.ndarray  # (text_dim,)
    label: int

    @property
    def seq_len(self) -> int:
        return self.music.shape[0]


@dataclass
class SynthDataset:
    train: list[SynthPair] = field(default_factory=list)
    eval: list[SynthPair] = field(default_factory=list)
    config: SynthConfig = field(default_factory=SynthConfig)
    # generator internals, kept so tests can verify pair identifiability
    music_mix: np.ndarray | None = None
    speech_mix: np.ndarray | None = None


def _unit_prototypes(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    protos = rng.normal(size=(count, dim))
    return protos / np.linalg.norm(protos, axis=1, keepdims=True)


def synth_dataset(cfg: SynthConfig) -> SynthDataset:
    """Generate train and eval pair lists, deterministic given cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    protos_music = _unit_prototypes(rng, cfg.num_classes, cfg.music_dim)
    protos_speech = _unit_prototypes(rng, cfg.num_classes, cfg.speech_dim)
    protos_text = _unit_prototypes(rng, cfg.num_classes, cfg.text_dim)
    # Fixed dataset-level mixing of the text-space pair latent into each
    # audio space; 1/sqrt(text_dim) keeps the mixed noise at sigma scale.
    mix_music = rng.normal(size=(cfg.text_dim, cfg.music_dim)) / np.sqrt(cfg.text_dim)
    mix_speech = rng.normal(size=(cfg.text_dim, cfg.speech_dim)) / np.sqrt(cfg.text_dim)

    lo, hi = cfg.seq_len_range
    jitter = cfg.noise_sigma * JITTER_SCALE

    def draw() -> SynthPair:
        label = int(rng.integers(cfg.num_classes))
        latent = rng.normal(size=cfg.text_dim) * cfg.noise_sigma
        text = protos_text[label] + latent
        seq_len = int(rng.integers(lo, hi + 1))
        music = (
            protos_music[label]
            + latent @ mix_music
            + rng.normal(size=(seq_len, cfg.music_dim)) * jitter
        )
        speech = (
            protos_speech[label]
            + latent @ mix_speech
            + rng.normal(size=(seq_len, cfg.speech_dim)) * jitter
        )
        return SynthPair(music=music, speech=speech, text=text, label=label)

    train = [draw() for _ in range(cfg.n_train)]
    eval_ = [draw() for _ in range(cfg.n_eval)]
    return SynthDataset(
        train=train, eval=eval_, config=cfg, music_mix=mix_music, speech_mix=mix_speech
    )


def emit_stores(dataset: SynthDataset, out_dir: str | Path) -> dict[str, Path]:
    """Write a dataset as CESF stores plus a JSONL manifest.

    Produces texts.cesf (one vector per pair), audio_music.cesf and
    audio_speech.cesf (one sequence per pair, same ids in both), and
    pairs.jsonl mapping text ids to audio ids per split.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text_records, music_records, speech_records, entries = [], [], [], []
    for split, pairs in (("train", dataset.train), ("eval", dataset.eval)):
        for idx, pair in enumerate(pairs):
            text_id = f"t_{split}_{idx:05d}"
            audio_id = f"a_{split}_{idx:05d}"
            text_records.append(EmbeddingRecord(text_id, Modality.TEXT, pair.text[None, :]))
            music_records.append(EmbeddingRecord(audio_id, Modality.AUDIO, pair.music))
            speech_records.append(EmbeddingRecord(audio_id, Modality.AUDIO, pair.speech))
            entries.append(PairEntry(text_id, audio_id, split))
    paths = {
        "texts": out_dir / "texts.cesf",
        "audio_music": out_dir / "audio_music.cesf",
        "audio_speech": out_dir / "audio_speech.cesf",
        "manifest": out_dir / "pairs.jsonl",
    }
    write_store(text_records, paths["texts"])
    write_store(music_records, paths["audio_music"])
    write_store(speech_records, paths["audio_speech"])
    write_manifest(PairManifest(entries), paths["manifest"])
    return paths
