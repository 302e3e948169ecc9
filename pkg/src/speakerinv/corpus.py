"""Deterministic synthetic multi-speaker corpus, chunking and per-speaker averages.

Each synthetic speaker is a harmonic source (12 harmonics of a fixed
fundamental with a slight vibrato) shaped by three formant resonances. Every
utterance draws its own syllable envelope, pauses, harmonic phases and noise
floor, so utterances of one speaker differ while sharing the voice.

On disk a corpus is::

    <root>/manifest.json
    <root>/<speaker_id>/utt_0000.wav
    ...
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .wav import load_wav, save_wav

GENDER_THRESHOLD_HZ = 165.0
MALE_RANGE_HZ = (85.0, 160.0)
FEMALE_RANGE_HZ = (170.0, 290.0)
MIN_F0_SPACING_HZ = 3.0
N_HARMONICS = 12


class CorpusConfigError(ValueError):
    pass


class CorpusError(ValueError):
    """Unknown speaker, empty split and similar lookup failures."""


def derive_seed(*parts: int) -> int:
    """Stable 64-bit seed from integer parts."""
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts]).generate_state(1, np.uint64)[0])


def gender_of(fundamental_hz: float) -> str:
    return "male" if fundamental_hz < GENDER_THRESHOLD_HZ else "female"


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    fundamental_hz: float
    formant_centers_hz: tuple
    vibrato_rate_hz: float
    seed: int
    gender_label: str = ""

    def __post_init__(self):
        if not 80.0 <= self.fundamental_hz <= 300.0:
            raise CorpusConfigError(f"{self.speaker_id}: fundamental {self.fundamental_hz} outside [80, 300] Hz")
        f = tuple(float(v) for v in self.formant_centers_hz)
        if len(f) != 3 or not (f[0] < f[1] < f[2]):
            raise CorpusConfigError(f"{self.speaker_id}: formants must be 3 ascending values")
        object.__setattr__(self, "formant_centers_hz", f)
        object.__setattr__(self, "gender_label", gender_of(self.fundamental_hz))

    @property
    def is_male(self) -> bool:
        return self.gender_label == "male"


@dataclass
class Utterance:
    path: str  # relative to the corpus root
    split: str


@dataclass
class CorpusManifest:
    sample_rate: int
    chunk_len: int
    speakers: list
    utterances: dict
    seed: int | None = None
    root: Path | None = field(default=None, compare=False, repr=False)
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        for sp in self.speaker_ids:
            utts = self.utterances.get(sp, [])
            splits = {u.split for u in utts}
            if not splits <= {"train", "test"}:
                raise CorpusError(f"{sp}: unknown split tag in {sorted(splits)}")
            if {"train", "test"} - splits:
                raise CorpusError(f"{sp}: needs at least one train and one test utterance")

    @property
    def speaker_ids(self) -> list:
        return [s.speaker_id if isinstance(s, SpeakerProfile) else s["speaker_id"] for s in self.speakers]

    @property
    def n_speakers(self) -> int:
        return len(self.speakers)

    def profile(self, speaker_id):
        for s in self.speakers:
            if isinstance(s, SpeakerProfile) and s.speaker_id == speaker_id:
                return s
        return None

    def class_index(self, speaker_id) -> int:
        try:
            return self.speaker_ids.index(speaker_id)
        except ValueError:
            raise CorpusError(f"unknown speaker {speaker_id!r}") from None

    def genders(self) -> list:
        """Gender label per class index ('' when unknown)."""
        out = []
        for s in self.speakers:
            out.append(s.gender_label if isinstance(s, SpeakerProfile) else s.get("gender_label", ""))
        return out

    def utterance_paths(self, speaker_id, split):
        if speaker_id not in self.utterances:
            raise CorpusError(f"unknown speaker {speaker_id!r}")
        return [self.root / u.path for u in self.utterances[speaker_id] if u.split == split]

    def waveform(self, rel_or_abs):
        key = str(rel_or_abs)
        if key not in self._cache:
            samples, rate = load_wav(rel_or_abs)
            if rate != self.sample_rate:
                raise CorpusError(f"{key}: sample rate {rate} != corpus rate {self.sample_rate}")
            self._cache[key] = samples
        return self._cache[key]

    def speaker_chunks(self, speaker_id, split, hop=None) -> np.ndarray:
        hop = hop or self.chunk_len
        parts = [chunk_waveform(self.waveform(p), self.chunk_len, hop) for p in self.utterance_paths(speaker_id, split)]
        if not parts:
            return np.empty((0, self.chunk_len))
        return np.concatenate(parts, axis=0)

    def dataset(self, split, hop=None):
        """All chunks of a split with integer speaker labels (class index order)."""
        xs, ys = [], []
        for i, sp in enumerate(self.speaker_ids):
            c = self.speaker_chunks(sp, split, hop)
            xs.append(c)
            ys.append(np.full(len(c), i, dtype=np.int64))
        x = np.concatenate(xs, axis=0)
        if len(x) == 0:
            raise CorpusError(f"split {split!r} has no chunks")
        return x, np.concatenate(ys)

    def to_json(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "chunk_len": self.chunk_len,
            "seed": self.seed,
            "speakers": [asdict(s) if isinstance(s, SpeakerProfile) else dict(s) for s in self.speakers],
            "utterances": {k: [asdict(u) for u in v] for k, v in self.utterances.items()},
        }

    def write(self, root=None) -> Path:
        root = Path(root or self.root)
        root.mkdir(parents=True, exist_ok=True)
        path = root / "manifest.json"
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _profile_from_json(d):
    if "fundamental_hz" not in d:
        return dict(d)
    d = dict(d)
    d.pop("gender_label", None)
    d["formant_centers_hz"] = tuple(d["formant_centers_hz"])
    return SpeakerProfile(**d)


def load_manifest(root) -> CorpusManifest:
    """Open a corpus directory; without ``manifest.json`` the layout is scanned."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {root}")
    path = root / "manifest.json"
    if not path.exists():
        return scan_corpus(root)
    doc = json.loads(path.read_text(encoding="utf-8"))
    return CorpusManifest(
        sample_rate=doc["sample_rate"],
        chunk_len=doc["chunk_len"],
        seed=doc.get("seed"),
        speakers=[_profile_from_json(s) for s in doc["speakers"]],
        utterances={k: [Utterance(**u) for u in v] for k, v in doc["utterances"].items()},
        root=root,
    )


def scan_corpus(root, chunk_len=3200, test_fraction=0.25) -> CorpusManifest:
    """Build a manifest for an external ``<root>/<speaker>/*.wav`` tree."""
    root = Path(root)
    speakers, utts, rate = [], {}, None
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        files = sorted(d.glob("*.wav"))
        if len(files) < 2:
            continue
        n_test = max(1, int(round(test_fraction * len(files))))
        utts[d.name] = [
            Utterance(str(f.relative_to(root)), "test" if i >= len(files) - n_test else "train")
            for i, f in enumerate(files)
        ]
        speakers.append({"speaker_id": d.name})
        if rate is None:
            rate = load_wav(files[0])[1]
    if not speakers:
        raise CorpusError(f"no speaker directories with >=2 WAV files under {root}")
    return CorpusManifest(sample_rate=rate, chunk_len=chunk_len, speakers=speakers, utterances=utts, root=root)


# -- synthesis ---------------------------------------------------------------------

def make_profiles(seed: int, n_speakers: int) -> list:
    """Speaker voices with alternating genders and well-separated fundamentals."""
    if n_speakers < 2:
        raise CorpusConfigError("need at least 2 speakers")
    n_male = n_speakers // 2
    n_female = n_speakers - n_male
    rng = np.random.Generator(np.random.Philox(derive_seed(seed, 0xC0)))

    def spread(lo, hi, n):
        step = (hi - lo) / n
        if step < MIN_F0_SPACING_HZ:
            raise CorpusConfigError(
                f"cannot place {n} fundamentals in [{lo}, {hi}] Hz with >= {MIN_F0_SPACING_HZ} Hz spacing"
            )
        slack = (step - MIN_F0_SPACING_HZ) / 2.0
        centers = lo + (np.arange(n) + 0.5) * step
        return centers + rng.uniform(-slack, slack, size=n)

    male = spread(*MALE_RANGE_HZ, n_male)
    female = spread(*FEMALE_RANGE_HZ, n_female)
    # interleave so class indices alternate gender; permute within gender
    male = male[rng.permutation(n_male)]
    female = female[rng.permutation(n_female)]
    profiles = []
    mi = fi = 0
    for i in range(n_speakers):
        use_male = (i % 2 == 0 and mi < n_male) or fi >= n_female
        if use_male:
            f0, scale = float(male[mi]), 1.0
            mi += 1
        else:
            f0, scale = float(female[fi]), 1.17
            fi += 1
        formants = (
            rng.uniform(300.0, 800.0) * scale,
            rng.uniform(1000.0, 2000.0) * scale,
            rng.uniform(2300.0, 3000.0) * scale,
        )
        profiles.append(
            SpeakerProfile(
                speaker_id=f"spk{i:03d}",
                fundamental_hz=f0,
                formant_centers_hz=formants,
                vibrato_rate_hz=float(rng.uniform(4.5, 5.5)),
                seed=derive_seed(seed, i, 0x5EED),
            )
        )
    return profiles


def harmonic_amplitudes(profile: SpeakerProfile, sample_rate: int) -> np.ndarray:
    """Formant-shaped harmonic weights; the fundamental always dominates."""
    k = np.arange(1, N_HARMONICS + 1, dtype=np.float64)
    freqs = k * profile.fundamental_hz
    bandwidths = np.array([90.0, 130.0, 200.0])
    centers = np.array(profile.formant_centers_hz)
    res = (1.0 / (1.0 + ((freqs[:, None] - centers[None, :]) / bandwidths[None, :]) ** 2)).sum(axis=1)
    amps = 0.75 * k ** -0.3 * (0.15 + 0.85 * np.minimum(res, 1.0))
    amps[0] = 1.0
    amps[freqs >= 0.45 * sample_rate] = 0.0
    return amps


def _envelope(rng, n, sample_rate):
    """Syllable-like amplitude envelope with pauses covering about 10% of the time."""
    env = np.zeros(n)
    pos = 0
    while pos < n:
        if rng.random() < 0.25:
            pos += int(rng.uniform(0.06, 0.14) * sample_rate)  # pause
            continue
        length = int(rng.uniform(0.12, 0.30) * sample_rate)
        seg = np.sin(np.pi * np.arange(length) / length) ** 0.6
        stop = min(n, pos + length)
        env[pos:stop] = rng.uniform(0.5, 1.0) * seg[: stop - pos]
        pos = stop
    return env


def synth_utterance(profile: SpeakerProfile, utterance_seed: int, seconds: float, sample_rate: int = 16000) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(derive_seed(profile.seed, utterance_seed)))
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    vib = 1.0 + 0.004 * np.sin(2.0 * np.pi * profile.vibrato_rate_hz * t + rng.uniform(0, 2 * np.pi))
    phase = 2.0 * np.pi * np.cumsum(profile.fundamental_hz * vib) / sample_rate
    amps = harmonic_amplitudes(profile, sample_rate)
    offsets = rng.uniform(0.0, 2.0 * np.pi, size=N_HARMONICS)
    voiced = np.zeros(n)
    for k in range(N_HARMONICS):
        if amps[k] > 0:
            voiced += amps[k] * np.sin((k + 1) * phase + offsets[k])
    voiced *= _envelope(rng, n, sample_rate)
    rms = np.sqrt(np.mean(voiced**2)) or 1.0
    noise = rng.standard_normal(n)
    noise = np.convolve(noise, np.array([0.5, 0.3, 0.2]), mode="same")  # gentle low-pass tilt
    noise *= 0.1 * rms / np.sqrt(np.mean(noise**2))  # ~20 dB SNR
    out = voiced + noise
    peak = np.max(np.abs(out))
    return out * (rng.uniform(0.5, 0.95) / peak)


def generate_corpus(
    root,
    seed: int = 7,
    n_speakers: int = 20,
    utterances_per_speaker: int = 20,
    utterance_seconds: float = 3.0,
    sample_rate: int = 16000,
    chunk_len: int = 3200,
    test_fraction: float = 0.25,
) -> CorpusManifest:
    """Synthesize and write a corpus tree; returns its manifest."""
    if utterance_seconds < 1:
        raise CorpusConfigError("utterance_seconds must be >= 1")
    if utterances_per_speaker < 2:
        raise CorpusConfigError("need at least 2 utterances per speaker (one train, one test)")
    root = Path(root)
    profiles = make_profiles(seed, n_speakers)
    n_test = min(utterances_per_speaker - 1, max(1, int(round(test_fraction * utterances_per_speaker))))
    utts = {}
    for prof in profiles:
        entries = []
        for u in range(utterances_per_speaker):
            rel = f"{prof.speaker_id}/utt_{u:04d}.wav"
            save_wav(root / rel, synth_utterance(prof, u, utterance_seconds, sample_rate), sample_rate)
            entries.append(Utterance(rel, "test" if u >= utterances_per_speaker - n_test else "train"))
        utts[prof.speaker_id] = entries
    manifest = CorpusManifest(
        sample_rate=sample_rate, chunk_len=chunk_len, speakers=profiles, utterances=utts, seed=seed, root=root
    )
    manifest.write(root)
    return manifest


# -- chunking -------------------------------------------------------------------------

def chunk_waveform(waveform, chunk_len: int, hop: int | None = None) -> np.ndarray:
    """Windows starting at 0, hop, 2*hop, ...; a trailing partial window is dropped."""
    x = np.asarray(waveform, dtype=np.float64)
    hop = hop or chunk_len
    if hop < 1:
        raise ValueError("hop must be >= 1")
    if len(x) < chunk_len:
        return np.empty((0, chunk_len))
    n = (len(x) - chunk_len) // hop + 1
    idx = np.arange(n)[:, None] * hop + np.arange(chunk_len)[None, :]
    return x[idx]


def average_speaker_chunks(manifest: CorpusManifest, speaker_id, split, hop=None) -> np.ndarray:
    """Element-wise mean over every chunk of the speaker in ``split``."""
    chunks = manifest.speaker_chunks(speaker_id, split, hop)
    if len(chunks) == 0:
        raise CorpusError(f"{speaker_id!r} has no chunks in split {split!r}")
    return chunks.mean(axis=0)
