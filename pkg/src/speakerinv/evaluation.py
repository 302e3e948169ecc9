"""Attack metrics, baselines, PCA and the gender-leakage probe, plus report files.

Distances live in d-vector space. An inverted audio sample maps to a d-vector
through the model (averaged over windows if it is longer than one window); an
inverted d-vector is used as is. Row-level distance statistics only include
"successful" inversions (classified as their target) and pool per-speaker mean
distances: the row reports the mean and standard deviation of those means.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffnet
from .corpus import CorpusError, CorpusManifest, average_speaker_chunks
from .diffnet import SpeakerModel
from .inversion import predicted_class

COHORTS = ("orig-female", "orig-male", "inv-female", "inv-male")
EVAL_COLUMNS = (
    "init", "attack", "learning_rate", "mi_accuracy", "n_correct_speakers", "mean_euclidean", "std_euclidean",
)


class EvalError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else f"{float(v):.9f}"
    return str(v)


@dataclass
class EvalRow:
    init: str
    attack: str
    learning_rate: float
    mi_accuracy: float
    n_correct_speakers: int
    mean_euclidean: float
    std_euclidean: float

    def __post_init__(self):
        if not 0.0 <= self.mi_accuracy <= 1.0:
            raise EvalError(f"mi_accuracy {self.mi_accuracy} outside [0, 1]")
        if not (math.isnan(self.std_euclidean) or self.std_euclidean >= 0):
            raise EvalError("std_euclidean must be >= 0")


# -- d-vectors of originals -------------------------------------------------------------

class DVectorBank:
    """Lazily computed d-vectors of every original chunk, per (speaker, split)."""

    def __init__(self, model: SpeakerModel, manifest: CorpusManifest, hop=None):
        self.model = model
        self.manifest = manifest
        self.hop = hop
        self._cache = {}

    def get(self, speaker_id, split) -> np.ndarray:
        key = (speaker_id, split)
        if key not in self._cache:
            chunks = self.manifest.speaker_chunks(speaker_id, split, self.hop)
            if len(chunks) == 0:
                raise CorpusError(f"{speaker_id!r} has no chunks in split {split!r}")
            self._cache[key] = diffnet.forward_dvector(self.model, chunks)
        return self._cache[key]

    def split(self, split):
        """All d-vectors of a split with class labels."""
        xs, ys = [], []
        for i, sp in enumerate(self.manifest.speaker_ids):
            d = self.get(sp, split)
            xs.append(d)
            ys.append(np.full(len(d), i, dtype=np.int64))
        return np.concatenate(xs), np.concatenate(ys)


def as_dvector(model: SpeakerModel, sample) -> np.ndarray:
    """d-vector of an inverted sample (audio or already a d-vector)."""
    x = np.asarray(sample, dtype=np.float64)
    if x.shape == (model.dvector_dim,) and model.dvector_dim != model.input_window_len:
        return x
    from .corpus import chunk_waveform

    chunks = chunk_waveform(x, model.input_window_len, model.input_window_len)
    if len(chunks) == 0:
        raise EvalError(f"sample of length {len(x)} is shorter than one window")
    return diffnet.forward_dvector(model, chunks).mean(axis=0)


def _sample_of(result):
    return result.best_input if hasattr(result, "best_input") else result


# -- metrics ------------------------------------------------------------------------------

def mi_accuracy(model: SpeakerModel, inverted: dict):
    """``(fraction, count)`` of classes whose inverted sample is classified as that class."""
    if not inverted:
        raise EvalError("empty inversion map")
    correct = sum(1 for t, r in inverted.items() if predicted_class(model, _sample_of(r)) == int(t))
    return correct / len(inverted), correct


def dvector_distance(model: SpeakerModel, sample, manifest: CorpusManifest, speaker_id, split="train",
                     bank: DVectorBank | None = None):
    """Mean and std of Euclidean distances to the speaker's original chunk d-vectors."""
    if speaker_id not in manifest.speaker_ids:
        raise EvalError(f"unknown speaker {speaker_id!r}")
    bank = bank or DVectorBank(model, manifest)
    orig = bank.get(speaker_id, split)
    d = np.linalg.norm(orig - as_dvector(model, sample)[None, :], axis=1)
    return float(d.mean()), float(d.std())


def _mean_pairwise(v):
    diff = v[:, None, :] - v[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    iu = np.triu_indices(len(v), k=1)
    return float(np.mean(dist[iu]))


def within_speaker_baseline(model: SpeakerModel, manifest: CorpusManifest, split="train",
                            bank: DVectorBank | None = None) -> float:
    """Mean over speakers of the mean pairwise d-vector distance among their chunks."""
    bank = bank or DVectorBank(model, manifest)
    per = []
    for sp in manifest.speaker_ids:
        v = bank.get(sp, split)
        if len(v) < 2:
            raise EvalError(f"speaker {sp!r} has fewer than 2 chunks in split {split!r}")
        per.append(_mean_pairwise(v))
    return float(np.mean(per))


def averaged_sample_baseline(model: SpeakerModel, manifest: CorpusManifest, hop=None):
    """Accuracy on per-speaker mean chunks, ``(train, test)``."""
    out = []
    for split in ("train", "test"):
        means = np.stack([average_speaker_chunks(manifest, sp, split, hop) for sp in manifest.speaker_ids])
        pred = diffnet.predict(model, means)
        out.append(float(np.mean(pred == np.arange(manifest.n_speakers))))
    return tuple(out)


def evaluate_inversions(model, manifest, inverted: dict, attack: str, init_name: str, lr: float,
                        split="train", bank=None) -> EvalRow:
    """Table-style row: MI accuracy plus distance stats over successful inversions."""
    frac, count = mi_accuracy(model, inverted)
    bank = bank or DVectorBank(model, manifest)
    means = []
    for t, r in sorted(inverted.items()):
        sample = _sample_of(r)
        if predicted_class(model, sample) != int(t):
            continue
        means.append(dvector_distance(model, sample, manifest, manifest.speaker_ids[int(t)], split, bank)[0])
    mean = float(np.mean(means)) if means else float("nan")
    std = float(np.std(means)) if means else float("nan")
    return EvalRow(init_name, attack, float(lr), frac, count, mean, std)


# -- PCA ---------------------------------------------------------------------------------------

@dataclass
class PCAModel:
    mean: np.ndarray
    components: np.ndarray  # (k, dim), orthonormal rows
    explained_variance: np.ndarray  # descending

    @property
    def k(self) -> int:
        return self.components.shape[0]


def pca_fit(vectors, k: int = 2) -> PCAModel:
    """Top-``k`` eigenvectors of the sample covariance (n - 1 normalisation)."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise EvalError("pca_fit expects a 2-D array")
    n, dim = x.shape
    if k < 1 or k > dim:
        raise EvalError(f"k must be in [1, {dim}], got {k}")
    if n < k + 1:
        raise EvalError(f"need at least {k + 1} vectors, got {n}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:k]
    comps = vecs[:, order].T
    # sign convention: the largest-magnitude loading of each component is positive
    flip = np.sign(comps[np.arange(k), np.argmax(np.abs(comps), axis=1)])
    comps = comps * np.where(flip == 0, 1.0, flip)[:, None]
    return PCAModel(mean, comps, np.maximum(vals[order], 0.0))


def pca_project(pca: PCAModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return (x - pca.mean) @ pca.components.T


# -- gender probe ---------------------------------------------------------------------------

@dataclass
class LinearProbe:
    weights: np.ndarray
    bias: float
    mu: np.ndarray
    sigma: np.ndarray

    def predict(self, x) -> np.ndarray:
        z = ((np.asarray(x) - self.mu) / self.sigma) @ self.weights + self.bias
        return (z > 0).astype(np.int64)


def fit_probe(x, y, epochs: int = 500, lr: float = 0.1) -> LinearProbe:
    """Logistic regression by full-batch gradient descent on standardised features."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise EvalError("probe training set must contain both classes")
    mu = x.mean(axis=0)
    sigma = x.std(axis=0)
    sigma[sigma < 1e-12] = 1.0
    xs = (x - mu) / sigma
    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(epochs):
        z = xs @ w + b
        p = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
        g = p - y
        w -= lr * (xs.T @ g) / len(y)
        b -= lr * float(g.mean())
    return LinearProbe(w, b, mu, sigma)


def gender_probe(train_x, train_y, test_x, test_y, epochs: int = 500, lr: float = 0.1) -> float:
    """Fit on original d-vectors, return accuracy on (inverted) ``test_x``."""
    probe = fit_probe(train_x, train_y, epochs, lr)
    return float(np.mean(probe.predict(test_x) == np.asarray(test_y)))


def gender_codes(labels) -> np.ndarray:
    """female -> 1, male -> 0."""
    codes = []
    for g in labels:
        if g not in ("male", "female"):
            raise EvalError(f"unknown gender label {g!r}")
        codes.append(1 if g == "female" else 0)
    return np.asarray(codes, dtype=np.int64)


def pca_scatter(model, manifest, inverted_dvectors: dict, bank=None, k=2, split="test"):
    """PCA fitted on original d-vectors; rows (x, y, cohort) for originals and inversions."""
    bank = bank or DVectorBank(model, manifest)
    orig, labels = bank.split(split)
    genders = manifest.genders()
    pca = pca_fit(orig, k)
    rows = []
    for xy, lab in zip(pca_project(pca, orig), labels):
        rows.append((float(xy[0]), float(xy[1]) if k > 1 else 0.0, f"orig-{genders[lab]}"))
    for t, r in sorted(inverted_dvectors.items()):
        xy = pca_project(pca, as_dvector(model, _sample_of(r)))
        rows.append((float(xy[0]), float(xy[1]) if k > 1 else 0.0, f"inv-{genders[int(t)]}"))
    return pca, rows


# -- report files -------------------------------------------------------------------------------

@dataclass
class Baselines:
    averaged_train_acc: float
    averaged_test_acc: float
    within_speaker_distance: float
    extra: dict = field(default_factory=dict)


def write_rows_csv(path, rows, baselines: Baselines | None = None, extra_columns=None) -> Path:
    """EvalRow CSV (9-decimal floats); baselines go in ``#``-prefixed footer lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    extra_columns = extra_columns or {}
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(EVAL_COLUMNS) + list(extra_columns))
        for i, r in enumerate(rows):
            d = asdict(r)
            w.writerow([_fmt(d[c]) for c in EVAL_COLUMNS] + [_fmt(v[i]) for v in extra_columns.values()])
        if baselines is not None:
            fh.write(f"# averaged_sample_train_acc={_fmt(baselines.averaged_train_acc)}\n")
            fh.write(f"# averaged_sample_test_acc={_fmt(baselines.averaged_test_acc)}\n")
            fh.write(f"# within_speaker_distance={_fmt(baselines.within_speaker_distance)}\n")
            for k, v in sorted(baselines.extra.items()):
                fh.write(f"# {k}={_fmt(v)}\n")
    return path


def read_rows_csv(path):
    """Inverse of ``write_rows_csv``: ``(rows, footer dict)``."""
    rows, footer = [], {}
    with Path(path).open(encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    for ln in lines:
        if ln.startswith("# ") and "=" in ln:
            k, v = ln[2:].split("=", 1)
            footer[k] = float(v)
    for rec in csv.DictReader(body):
        rows.append(EvalRow(
            rec["init"], rec["attack"], float(rec["learning_rate"]), float(rec["mi_accuracy"]),
            int(rec["n_correct_speakers"]), float(rec["mean_euclidean"]), float(rec["std_euclidean"]),
        ))
    return rows, footer


def write_scatter_csv(path, points) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "cohort"])
        for x, y, c in points:
            if c not in COHORTS:
                raise EvalError(f"unknown cohort {c!r}")
            w.writerow([_fmt(float(x)), _fmt(float(y)), c])
    return path


def render_report(rows, baselines: Baselines, out_dir, configs: dict | None = None, scatter=None,
                  notes: dict | None = None) -> dict:
    """Write ``results.csv``, ``report.json`` and (optionally) ``pca_scatter.csv``."""
    if not rows:
        raise EvalError("no rows to report")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"csv": write_rows_csv(out_dir / "results.csv", rows, baselines)}
        doc = {
            "rows": [asdict(r) for r in rows],
            "baselines": asdict(baselines),
            "configs": configs or {},
            "notes": {
                "distance_pooling": "mean and std over per-speaker mean distances of successful inversions",
                "tie_break": "argmax ties resolve to the lowest class index",
                **(notes or {}),
            },
        }
        (out_dir / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n",
                                             encoding="utf-8")
        paths["json"] = out_dir / "report.json"
        if scatter is not None:
            paths["scatter"] = write_scatter_csv(out_dir / "pca_scatter.csv", scatter)
    except OSError as exc:
        raise OSError(f"writing report under {out_dir}: {exc}") from exc
    return paths


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"not serialisable: {type(o).__name__}")
