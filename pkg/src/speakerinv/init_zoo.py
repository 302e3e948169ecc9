"""Starting vectors for the inversion attacks.

Four families: constant vectors, tanh-squashed colored noise, i.i.d. draws
from parametric distributions, and audio taken from an external corpus
(optionally averaged or blended with white noise).

All randomness comes from a Philox (counter-based) generator keyed by the
spec's seed, so outputs are reproducible across platforms.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

NOISE_EXPONENTS = {"white": 0.0, "pink": -1.0, "brown": -2.0, "blue": 1.0, "violet": 2.0}

DIST_DEFAULTS = {
    "uniform01": {"low": 0.0, "high": 1.0},
    "uniform11": {"low": -1.0, "high": 1.0},
    "gaussian": {"mu": 0.0, "sigma": 0.2},
    "laplace": {"mu": 0.0, "b": 0.07},
    "gumbel": {"mu": 0.0, "beta": 0.1},
    "vonmises": {"mu": 0.0, "kappa": 0.1},
}

PLAIN_NAMES = {"zeros": 0.0, "ones": 1.0, "minus_ones": -1.0}


class InitConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Plain:
    value: float

    def __post_init__(self):
        if self.value not in (0.0, 1.0, -1.0):
            raise InitConfigError(f"plain value must be 0, 1 or -1, got {self.value}")


@dataclass(frozen=True)
class Noise:
    color: str

    def __post_init__(self):
        if self.color not in NOISE_EXPONENTS:
            raise InitConfigError(f"unknown noise color {self.color!r}; valid: {sorted(NOISE_EXPONENTS)}")


@dataclass(frozen=True)
class Dist:
    family: str
    params: dict = field(default_factory=dict, hash=False, compare=True)

    def __post_init__(self):
        if self.family not in DIST_DEFAULTS:
            raise InitConfigError(f"unknown distribution {self.family!r}; valid: {sorted(DIST_DEFAULTS)}")
        merged = {**DIST_DEFAULTS[self.family], **dict(self.params)}
        unknown = set(merged) - set(DIST_DEFAULTS[self.family])
        if unknown:
            raise InitConfigError(f"{self.family}: unknown parameters {sorted(unknown)}")
        object.__setattr__(self, "params", merged)
        _check_dist_params(self.family, merged)


@dataclass(frozen=True)
class External:
    """Audio from a corpus tree: one chunk, the mean of ``n`` chunks, or a noise blend."""

    source: str
    mode: str = "single"  # single | mean | mix
    n: int = 1
    weight_signal: float = 0.85
    weight_noise: float = 0.15

    def __post_init__(self):
        if self.mode not in ("single", "mean", "mix"):
            raise InitConfigError(f"external mode must be single, mean or mix, got {self.mode!r}")
        if self.n < 1:
            raise InitConfigError("external n must be >= 1")
        if self.mode == "mix" and abs(self.weight_signal + self.weight_noise - 1.0) > 1e-12:
            raise InitConfigError("mix weights must sum to 1")


@dataclass(frozen=True)
class InitSpec:
    kind: Plain | Noise | Dist | External
    seed: int = 0

    @property
    def name(self) -> str:
        k = self.kind
        if isinstance(k, Plain):
            return {0.0: "zeros", 1.0: "ones", -1.0: "minus_ones"}[k.value]
        if isinstance(k, Noise):
            return k.color
        if isinstance(k, Dist):
            return k.family
        base = "external" if k.n == 1 else f"external_mean{k.n}"
        return base + ("_mix" if k.mode == "mix" else "")

    def with_seed(self, seed: int) -> "InitSpec":
        return InitSpec(self.kind, int(seed))

    def describe(self) -> dict:
        k = self.kind
        d = {"name": self.name, "seed": self.seed, "family": type(k).__name__.lower()}
        if isinstance(k, Dist):
            d["params"] = dict(k.params)
        if isinstance(k, External):
            d.update(source=k.source, mode=k.mode, n=k.n, weight_signal=k.weight_signal, weight_noise=k.weight_noise)
        return d


def _check_dist_params(family, p):
    if family.startswith("uniform"):
        if not p["low"] < p["high"]:
            raise InitConfigError("uniform requires low < high")
    for key in ("sigma", "b", "beta", "kappa"):
        if key in p and not p[key] > 0:
            raise InitConfigError(f"{family}: {key} must be > 0, got {p[key]}")


def valid_names() -> list:
    return sorted(PLAIN_NAMES) + sorted(NOISE_EXPONENTS) + sorted(DIST_DEFAULTS) + [
        "external", "external_meanN", "external_mix", "external_meanN_mix",
    ]


_EXTERNAL_RE = re.compile(r"^external(?:_mean(\d+))?(_mix)?$")


def parse_init(name: str, seed: int = 0, source=None) -> InitSpec:
    """Build a spec from a short name such as ``laplace`` or ``external_mean50``."""
    key = name.strip().lower().replace("-", "_")
    if key == "white_tanh":
        key = "white"
    if key in PLAIN_NAMES:
        return InitSpec(Plain(PLAIN_NAMES[key]), seed)
    if key in NOISE_EXPONENTS:
        return InitSpec(Noise(key), seed)
    if key in DIST_DEFAULTS:
        return InitSpec(Dist(key), seed)
    m = _EXTERNAL_RE.match(key)
    if m:
        if source is None:
            raise InitConfigError(f"{name!r} needs an external corpus path")
        n = int(m.group(1) or 1)
        mode = "mix" if m.group(2) else ("mean" if n > 1 else "single")
        return InitSpec(External(str(source), mode=mode, n=n), seed)
    raise InitConfigError(f"unknown init {name!r}; valid kinds: {', '.join(valid_names())}")


# -- generators ---------------------------------------------------------------------

def _rng(seed):
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def _open_uniform(rng, n):
    """Uniforms on the open interval (0, 1)."""
    u = rng.random(n)
    return np.where(u == 0.0, 2.0**-54, u)


def colored_noise(color: str, length: int, seed: int) -> np.ndarray:
    """Zero-mean, unit-variance noise whose PSD follows f**exponent.

    White Gaussian noise is shaped in the frequency domain by f**(exponent/2)
    with the DC bin zeroed.
    """
    if color not in NOISE_EXPONENTS:
        raise InitConfigError(f"unknown noise color {color!r}")
    if length < 16:
        raise InitConfigError("colored noise needs length >= 16")
    white = _rng(seed).standard_normal(length)
    spec = np.fft.rfft(white)
    f = np.fft.rfftfreq(length)
    gain = np.zeros_like(f)
    gain[1:] = f[1:] ** (NOISE_EXPONENTS[color] / 2.0)
    y = np.fft.irfft(spec * gain, n=length)
    y -= y.mean()
    return y / y.std()


def sample_dist(family: str, params: dict | None, length: int, seed: int) -> np.ndarray:
    p = Dist(family, params or {}).params
    rng = _rng(seed)
    if family.startswith("uniform"):
        return p["low"] + (p["high"] - p["low"]) * rng.random(length)
    if family == "gaussian":
        return p["mu"] + p["sigma"] * rng.standard_normal(length)
    if family == "laplace":
        u = _open_uniform(rng, length) - 0.5
        return p["mu"] - p["b"] * np.sign(u) * np.log1p(-2.0 * np.abs(u))
    if family == "gumbel":
        u = _open_uniform(rng, length)
        return p["mu"] - p["beta"] * np.log(-np.log(u))
    if family == "vonmises":
        return _vonmises(rng, p["mu"], p["kappa"], length) / np.pi
    raise InitConfigError(f"unknown distribution {family!r}")


def _vonmises(rng, mu, kappa, n):
    """Angles in [-pi, pi) via Best-Fisher rejection on a prefix-stable uniform pool."""
    pool = 3 * n + 64
    state = rng.bit_generator.state
    while True:
        rng.bit_generator.state = state
        u = rng.random(pool)
        theta, used = kernels.vonmises_angles(kappa, u, n)
        if used >= 0:
            break
        pool *= 2
    return np.mod(theta + mu + np.pi, 2.0 * np.pi) - np.pi


def _external_chunks(source, length):
    from .corpus import chunk_waveform, load_manifest

    root = Path(source)
    if not root.exists():
        raise FileNotFoundError(f"external corpus not found: {root}")
    manifest = load_manifest(root)
    chunks = []
    for sp in manifest.speaker_ids:
        for u in manifest.utterances[sp]:
            chunks.append(chunk_waveform(manifest.waveform(root / u.path), length, length))
    chunks = np.concatenate(chunks, axis=0) if chunks else np.empty((0, length))
    if len(chunks) == 0:
        raise FileNotFoundError(f"no audio of length >= {length} under {root}")
    return chunks


def generate(spec: InitSpec, length: int) -> np.ndarray:
    if length < 1:
        raise InitConfigError("length must be >= 1")
    k = spec.kind
    if isinstance(k, Plain):
        return np.full(length, float(k.value))
    if isinstance(k, Noise):
        return np.tanh(colored_noise(k.color, max(length, 16), spec.seed)[:length])
    if isinstance(k, Dist):
        return sample_dist(k.family, k.params, length, spec.seed)
    chunks = _external_chunks(k.source, length)
    rng = _rng(spec.seed)
    n = min(k.n, len(chunks))
    pick = rng.choice(len(chunks), size=n, replace=False)
    signal = chunks[np.sort(pick)].mean(axis=0)
    if k.mode != "mix":
        return signal
    noise = generate(InitSpec(Noise("white"), spec.seed), length)
    return k.weight_signal * signal + k.weight_noise * noise
