"""Training the white-box target model.

SGD with momentum, global gradient-norm clipping and a linear learning-rate
decay on mean cross-entropy.
Each epoch draws ``batches_per_epoch`` mini-batches of chunks cut at random
offsets from the training utterances (the usual SincNet recipe), so an epoch
costs the same regardless of corpus size. The per-epoch history reports the
running accuracy over that epoch's batches as ``train_acc`` and the accuracy
on a fixed, evenly strided subset of test chunks as ``test_acc``; use
``accuracy`` for the full-split figure.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffnet
from .corpus import CorpusError, CorpusManifest, derive_seed
from .diffnet import Architecture, SpeakerModel

log = logging.getLogger(__name__)


class TrainConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    shuffle: bool = True
    batches_per_epoch: int = 30
    clip_norm: float = 5.0
    eval_chunks: int = 400
    final_lr_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise TrainConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.batches_per_epoch < 1:
            raise TrainConfigError("batches_per_epoch must be >= 1")
        if not self.learning_rate >= 0:
            raise TrainConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise TrainConfigError("momentum must be in [0, 1)")
        if not 0 < self.final_lr_fraction <= 1:
            raise TrainConfigError("final_lr_fraction must be in (0, 1]")

    def lr_at(self, epoch: int) -> float:
        """Linear decay from ``learning_rate`` to ``final_lr_fraction * learning_rate``."""
        if self.epochs == 1:
            return self.learning_rate
        frac = (epoch - 1) / (self.epochs - 1)
        return self.learning_rate * (1.0 - (1.0 - self.final_lr_fraction) * frac)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float


@dataclass
class TrainResult:
    model: SpeakerModel
    history: list = field(default_factory=list)


def accuracy(model: SpeakerModel, manifest: CorpusManifest, split: str, hop=None) -> float:
    """Fraction of chunks whose argmax (lowest index on ties) is the true speaker."""
    x, y = manifest.dataset(split, hop)
    if len(x) == 0:
        raise CorpusError(f"split {split!r} is empty")
    return float(np.mean(diffnet.predict(model, x) == y))


def _clip(grads, max_norm):
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if not np.isfinite(total):
        raise FloatingPointError("non-finite gradient norm")
    if total > max_norm:
        scale = max_norm / total
        return {k: g * scale for k, g in grads.items()}, total
    return grads, total


class _Sampler:
    """Random fixed-length crops from the training utterances."""

    def __init__(self, manifest: CorpusManifest, chunk_len: int, rng):
        self.rng = rng
        self.chunk_len = chunk_len
        self.waves, self.labels = [], []
        for i, sp in enumerate(manifest.speaker_ids):
            for p in manifest.utterance_paths(sp, "train"):
                w = manifest.waveform(p)
                if len(w) >= chunk_len:
                    self.waves.append(w)
                    self.labels.append(i)
        if not self.waves:
            raise CorpusError("no training utterance is as long as one chunk")
        self.labels = np.asarray(self.labels, dtype=np.int64)

    def batch(self, n):
        idx = self.rng.integers(0, len(self.waves), size=n)
        x = np.empty((n, self.chunk_len))
        for j, u in enumerate(idx):
            w = self.waves[u]
            start = self.rng.integers(0, len(w) - self.chunk_len + 1)
            x[j] = w[start:start + self.chunk_len]
        return x, self.labels[idx]


def train(arch: Architecture, manifest: CorpusManifest, cfg: TrainConfig, eval_hop=None) -> TrainResult:
    if arch.num_classes != manifest.n_speakers:
        raise TrainConfigError(
            f"architecture has {arch.num_classes} classes but corpus has {manifest.n_speakers} speakers"
        )
    if arch.input_window_len != manifest.chunk_len:
        raise TrainConfigError(f"window {arch.input_window_len} != corpus chunk_len {manifest.chunk_len}")
    model = diffnet.init_model(arch, derive_seed(cfg.seed, 1))
    rng = np.random.Generator(np.random.Philox(derive_seed(cfg.seed, 2)))
    sampler = _Sampler(manifest, arch.input_window_len, rng)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    x_test, y_test = manifest.dataset("test", eval_hop)
    if len(x_test) > cfg.eval_chunks:
        keep = np.linspace(0, len(x_test) - 1, cfg.eval_chunks).round().astype(int)
        x_test, y_test = x_test[keep], y_test[keep]
    history = []
    for epoch in range(1, cfg.epochs + 1):
        losses, correct, seen = [], 0, 0
        lr = cfg.lr_at(epoch)
        for _ in range(cfg.batches_per_epoch):
            x, y = sampler.batch(cfg.batch_size)
            loss, grads, logits = diffnet.loss_and_grad_params(model, x, y, return_logits=True)
            correct += int(np.sum(np.argmax(logits, axis=1) == y))
            seen += len(y)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            grads, _ = _clip(grads, cfg.clip_norm)
            if lr > 0:
                for k in model.params:
                    velocity[k] = cfg.momentum * velocity[k] - lr * grads[k]
                    model.params[k] = model.params[k] + velocity[k]
            losses.append(loss)
        train_acc = correct / seen
        test_acc = float(np.mean(diffnet.predict(model, x_test) == y_test))
        stats = EpochStats(epoch, float(np.mean(losses)), train_acc, test_acc)
        history.append(stats)
        log.info("epoch %d loss %.4f train %.3f test %.3f", epoch, stats.loss, train_acc, test_acc)
    return TrainResult(model, history)


def write_history(path, history) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "train_acc", "test_acc"])
        for h in history:
            w.writerow([h.epoch, f"{h.loss:.9f}", f"{h.train_acc:.9f}", f"{h.test_acc:.9f}"])
    return path
