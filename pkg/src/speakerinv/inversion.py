"""Model-inversion attacks: standard, sliding-window and d-vector (head-only).

All three share one descent loop. Starting from ``x0`` the loop takes plain
gradient steps on ``c(x) = 1 - p_target`` and stops when

* patience: the new cost is >= every one of the previous ``beta`` costs
  (all previous costs, ``x0`` included, while fewer than ``beta`` exist),
* threshold: the new cost is <= ``gamma``, or
* the iteration budget ``alpha`` is used up,

in that order of precedence. It returns the lowest-cost iterate seen, ``x0``
included; ties go to the earliest iterate.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import diffnet, init_zoo
from .corpus import derive_seed
from .diffnet import SpeakerModel
from .init_zoo import InitSpec
from .wav import save_wav

log = logging.getLogger(__name__)

ATTACKS = ("standard", "sliding", "dvector")

# Learning rates reported for TIMIT/SincNet, (standard, sliding). Starting
# points only; desk-scale optima come from a sweep.
PAPER_LR = {
    "ones": (1e-5, 0.2),
    "zeros": (1e-8, 0.5),
    "gumbel": (0.01, 0.01),
    "laplace": (0.005, 0.005),
    "white": (0.2, 0.2),
    "brown": (0.01, 0.05),
    "external": (0.001, 0.2),
    "external_mix": (0.005, 0.01),
}


class MIConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    """Cost became non-finite; ``last_finite`` is the last iterate with a finite cost."""

    def __init__(self, msg, last_finite, last_cost, iteration, best_input=None, best_cost=None):
        super().__init__(msg)
        self.last_finite = last_finite
        self.last_cost = last_cost
        self.iteration = iteration
        self.best_input = last_finite if best_input is None else best_input
        self.best_cost = last_cost if best_cost is None else best_cost


class StopReason(str, Enum):
    MAX_ITERS = "max_iters"
    PATIENCE = "patience"
    THRESHOLD = "threshold"
    FAILED = "numerical_failure"


@dataclass(frozen=True)
class MIConfig:
    alpha: int = 1000
    beta: int = 10
    gamma: float = 0.001
    lr: float = 0.01

    def __post_init__(self):
        if self.alpha < 1:
            raise MIConfigError(f"alpha must be >= 1, got {self.alpha}")
        if self.beta < 1:
            raise MIConfigError(f"beta must be >= 1, got {self.beta}")
        if not 0 <= self.gamma <= 1:
            raise MIConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if not self.lr >= 0:
            raise MIConfigError(f"lr must be >= 0, got {self.lr}")

    def with_lr(self, lr: float) -> "MIConfig":
        return MIConfig(self.alpha, self.beta, self.gamma, float(lr))


@dataclass(frozen=True)
class SlidingConfig:
    length: int = 6400
    stride: int = 500
    window: int = 3200
    inner: MIConfig = field(default_factory=MIConfig)

    def __post_init__(self):
        if self.window > self.length:
            raise MIConfigError(f"window {self.window} exceeds length {self.length}")
        if not 1 <= self.stride <= self.window:
            raise MIConfigError(f"stride must be in [1, {self.window}], got {self.stride}")
        if self.window % 2:
            raise MIConfigError("window must be even")

    @classmethod
    def for_output(cls, out_len: int, stride: int = 500, window: int = 3200, inner: MIConfig | None = None):
        """Working length chosen so the trimmed result has ``out_len`` samples."""
        return cls(out_len + window, stride, window, inner or MIConfig())

    @property
    def output_length(self) -> int:
        return self.length - self.window

    def window_starts(self) -> list:
        return list(range(0, self.length - self.window + 1, self.stride))


@dataclass
class InversionResult:
    best_input: np.ndarray
    best_cost: float
    iterations_run: int
    stop_reason: StopReason
    costs: list = field(default_factory=list)

    @property
    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(np.asarray(self.costs))


@dataclass
class SlidingResult:
    audio: np.ndarray  # trimmed output
    working: np.ndarray  # full working vector after the last window
    windows: list  # InversionResult per window start
    best_cost: float
    stop_reason: StopReason = StopReason.MAX_ITERS

    @property
    def best_input(self) -> np.ndarray:
        return self.audio

    @property
    def iterations_run(self) -> int:
        return sum(w.iterations_run for w in self.windows)


# -- the descent loop -------------------------------------------------------------------

def descend(cost_grad, x0, cfg: MIConfig) -> InversionResult:
    """Algorithm-1 style gradient descent on an arbitrary ``cost_grad(x) -> (c, g)``."""
    x = np.array(x0, dtype=np.float64, copy=True)
    if not np.all(np.isfinite(x)):
        raise MIConfigError("initial vector contains non-finite values")
    c, g = cost_grad(x)
    if not math.isfinite(c):
        raise NumericalFailure("non-finite cost at the initial vector", x, c, 0)
    costs = [c]
    best_x, best_c = x, c
    reason = StopReason.MAX_ITERS
    i = 0
    for i in range(1, cfg.alpha + 1):
        prev_x, prev_c = x, c
        x = x - cfg.lr * g
        c, g = cost_grad(x)
        if not (math.isfinite(c) and np.all(np.isfinite(g))):
            raise NumericalFailure(f"non-finite cost/gradient at iteration {i}", prev_x, prev_c, i, best_x, best_c)
        costs.append(c)
        if c < best_c:
            best_x, best_c = x, c
        if c >= max(costs[max(0, i - cfg.beta):i]):
            reason = StopReason.PATIENCE
            break
        if c <= cfg.gamma:
            reason = StopReason.THRESHOLD
            break
    return InversionResult(best_x.copy(), float(best_c), i, reason, costs)


def cost(model: SpeakerModel, x, target: int) -> float:
    """``1 - p_target`` for a chunk (full model) or a d-vector (head only)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == model.input_window_len:
        p = diffnet.forward_full(model, x)
    elif x.shape[-1] == model.dvector_dim:
        p = diffnet.forward_head(model, x)
    else:
        raise diffnet.InvalidInput(
            f"input length {x.shape[-1]} matches neither the window ({model.input_window_len}) "
            f"nor the d-vector ({model.dvector_dim})"
        )
    if not 0 <= int(target) < model.num_classes:
        raise diffnet.InvalidInput(f"target {target} outside [0, {model.num_classes})")
    return float(1.0 - p[..., int(target)])


def standard_mi(model: SpeakerModel, x0, target: int, cfg: MIConfig) -> InversionResult:
    if np.shape(x0) != (model.input_window_len,):
        raise diffnet.InvalidInput(f"x0 must have {model.input_window_len} samples, got {np.shape(x0)}")
    return descend(lambda x: diffnet.cost_and_grad_full(model, x, target), x0, cfg)


def dvector_mi(model: SpeakerModel, x0, target: int, cfg: MIConfig) -> InversionResult:
    if np.shape(x0) != (model.dvector_dim,):
        raise diffnet.InvalidInput(f"x0 must have {model.dvector_dim} entries, got {np.shape(x0)}")
    return descend(lambda d: diffnet.cost_and_grad_head(model, d, target), x0, cfg)


def audio_probabilities(model: SpeakerModel, audio) -> np.ndarray:
    """Mean class probabilities over consecutive model windows of ``audio``."""
    from .corpus import chunk_waveform

    chunks = chunk_waveform(audio, model.input_window_len, model.input_window_len)
    if len(chunks) == 0:
        raise diffnet.InvalidInput(f"audio shorter than one window ({model.input_window_len})")
    return diffnet.forward_full(model, chunks).mean(axis=0)


def sliding_mi(model: SpeakerModel, target: int, scfg: SlidingConfig, init) -> SlidingResult:
    """Invert overlapping windows left to right, writing each result back.

    ``init`` is an ``InitSpec`` (drawn at the working length) or an explicit
    working vector of ``scfg.length`` samples.
    """
    if scfg.window != model.input_window_len:
        raise MIConfigError(f"window {scfg.window} != model input length {model.input_window_len}")
    if isinstance(init, InitSpec):
        working = init_zoo.generate(init, scfg.length)
    else:
        working = np.array(init, dtype=np.float64, copy=True)
        if working.shape != (scfg.length,):
            raise MIConfigError(f"initial vector must have {scfg.length} samples")
    w = scfg.window
    windows = []
    for k in scfg.window_starts():
        res = standard_mi(model, working[k:k + w], target, scfg.inner)
        working[k:k + w] = res.best_input
        windows.append(res)
    audio = working[w // 2: scfg.length - w // 2].copy()
    if len(audio) >= w:
        final = 1.0 - float(audio_probabilities(model, audio)[target])
    else:  # trimmed output shorter than one window: fall back to the last window's cost
        final = windows[-1].best_cost
    return SlidingResult(audio, working, windows, final, windows[-1].stop_reason)


# -- batch driver -----------------------------------------------------------------------

def class_seed(base_seed: int, class_index: int) -> int:
    return derive_seed(base_seed, class_index, 0x1417)


def _invert_one(model, attack, init: InitSpec, cfg, target):
    spec = init.with_seed(class_seed(init.seed, target))
    try:
        if attack == "standard":
            return standard_mi(model, init_zoo.generate(spec, model.input_window_len), target, cfg)
        if attack == "dvector":
            return dvector_mi(model, init_zoo.generate(spec, model.dvector_dim), target, cfg)
        if attack == "sliding":
            return sliding_mi(model, target, cfg, spec)
    except NumericalFailure as exc:
        log.warning("class %d: %s", target, exc)
        return InversionResult(np.asarray(exc.best_input).copy(), float(exc.best_cost), exc.iteration,
                               StopReason.FAILED, [])
    raise MIConfigError(f"unknown attack {attack!r}; valid: {', '.join(ATTACKS)}")


def invert_all_speakers(model: SpeakerModel, attack: str, init: InitSpec, cfg, workers: int = 1,
                        classes=None) -> dict:
    """One inversion per class, keyed by class index.

    Per-class seeds are derived from ``init.seed`` and the class index, so the
    result does not depend on ``workers``. Numerical failures are recorded as
    results with ``StopReason.FAILED`` instead of aborting the batch.
    """
    if attack not in ATTACKS:
        raise MIConfigError(f"unknown attack {attack!r}; valid: {', '.join(ATTACKS)}")
    if attack == "sliding" and not isinstance(cfg, SlidingConfig):
        raise MIConfigError("sliding attack needs a SlidingConfig")
    if attack != "sliding" and not isinstance(cfg, MIConfig):
        raise MIConfigError(f"{attack} attack needs an MIConfig")
    classes = list(range(model.num_classes)) if classes is None else list(classes)
    if workers <= 1:
        out = [_invert_one(model, attack, init, cfg, t) for t in classes]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(lambda t: _invert_one(model, attack, init, cfg, t), classes))
    return dict(zip(classes, out))


def predicted_class(model: SpeakerModel, x) -> int:
    x = np.asarray(x, dtype=np.float64)
    if x.shape == (model.dvector_dim,) and model.dvector_dim != model.input_window_len:
        return int(np.argmax(diffnet.forward_head(model, x)))
    return int(np.argmax(audio_probabilities(model, x)))


# -- export -------------------------------------------------------------------------------

def export_audio(out_dir, name: str, audio, sample_rate: int, meta: dict) -> Path:
    """WAV (hard-clipped to [-1, 1]) + lossless ``.npy`` + JSON sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    audio = np.asarray(audio, dtype=np.float64)
    clip_rate = float(np.mean(np.abs(audio) > 1.0))
    if clip_rate > 0:
        log.warning("%s: clipping %.2f%% of samples for WAV export", name, 100 * clip_rate)
    save_wav(out_dir / f"{name}.wav", np.clip(audio, -1.0, 1.0), sample_rate)
    np.save(out_dir / f"{name}.npy", audio)
    meta = {**meta, "clip_rate": clip_rate}
    (out_dir / f"{name}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out_dir / f"{name}.wav"


def export_dvector(out_dir, name: str, dvec, meta: dict) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    np.save(out_dir / f"{name}.npy", np.asarray(dvec, dtype=np.float64))
    (out_dir / f"{name}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out_dir / f"{name}.npy"
