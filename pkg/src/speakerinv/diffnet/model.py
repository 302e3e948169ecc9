"""Desk-scale SincNet-style speaker recogniser split into three submodels.

    waveform --[sinc front end + conv]--> features --[MLP]--> d-vector --[head]--> p

The split points are public: attacks either differentiate through the whole
pipeline (``grad_input_full``) or only through the head (``grad_input_head``).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor


class InvalidInput(ValueError):
    """Shape, class index or batch errors on model entry points."""


@dataclass(frozen=True)
class Architecture:
    input_window_len: int = 3200
    sample_rate: int = 16000
    n_filters: int = 32
    sinc_len: int = 129
    pool1: int = 4
    conv_channels: int = 32
    conv_len: int = 5
    pool2: int = 4
    hidden: int = 256
    dvector_dim: int = 128
    num_classes: int = 20
    leak: float = 0.2
    ln_eps: float = 1e-5
    min_low_hz: float = 30.0
    nyquist_margin_hz: float = 50.0

    def __post_init__(self):
        if self.sinc_len % 2 != 1:
            raise ValueError("sinc_len must be odd")
        if self.num_classes < 1 or self.dvector_dim < 1:
            raise ValueError("num_classes and dvector_dim must be positive")
        if self.flat_dim() <= 0:
            raise ValueError("input window too short for the configured front end")

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2.0

    def front_lengths(self):
        t1 = (self.input_window_len - self.sinc_len + 1) // self.pool1
        t2 = (t1 - self.conv_len + 1) // self.pool2
        return t1, t2

    def flat_dim(self) -> int:
        return self.conv_channels * self.front_lengths()[1]

    def param_shapes(self) -> dict:
        t1, _ = self.front_lengths()
        f, c = self.n_filters, self.conv_channels
        return {
            "sinc.low": (f,),
            "sinc.band": (f,),
            "ln1.gain": (f, 1),
            "ln1.bias": (f, 1),
            "conv.weight": (c, f, self.conv_len),
            "conv.bias": (c,),
            "mlp1.weight": (self.hidden, self.flat_dim()),
            "mlp1.bias": (self.hidden,),
            "mlp2.weight": (self.dvector_dim, self.hidden),
            "mlp2.bias": (self.dvector_dim,),
            "head.weight": (self.num_classes, self.dvector_dim),
            "head.bias": (self.num_classes,),
        }


@dataclass
class SpeakerModel:
    """Architecture metadata plus named float64 parameter arrays."""

    arch: Architecture
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.arch.param_shapes()
        if set(shapes) != set(self.params):
            missing = set(shapes) ^ set(self.params)
            raise ValueError(f"parameter set mismatch: {sorted(missing)}")
        for name, shape in shapes.items():
            arr = np.ascontiguousarray(self.params[name], dtype=np.float64)
            if arr.shape != tuple(shape):
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.params[name] = arr

    @property
    def num_classes(self) -> int:
        return self.arch.num_classes

    @property
    def dvector_dim(self) -> int:
        return self.arch.dvector_dim

    @property
    def input_window_len(self) -> int:
        return self.arch.input_window_len

    @property
    def sample_rate(self) -> int:
        return self.arch.sample_rate

    def names(self):
        return list(self.arch.param_shapes())

    def copy(self) -> "SpeakerModel":
        return SpeakerModel(self.arch, {k: v.copy() for k, v in self.params.items()})

    def equals(self, other: "SpeakerModel") -> bool:
        """Bit-exact comparison of architecture and parameters."""
        if self.arch != other.arch:
            return False
        return all(
            np.array_equal(self.params[k].view(np.uint64), other.params[k].view(np.uint64))
            for k in self.params
        )

    def describe(self) -> dict:
        return asdict(self.arch)


# -- construction ------------------------------------------------------------------

def _hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + hz / 700.0)


def _mel_to_hz(mel):
    return 700.0 * (10.0 ** (mel / 2595.0) - 1.0)


def _logit(p):
    return np.log(p) - np.log1p(-p)


def init_model(arch: Architecture, seed: int = 0) -> SpeakerModel:
    """Random initial parameters with mel-spaced sinc bands."""
    rng = np.random.Generator(np.random.Philox(seed))
    lo_min, nyq = arch.min_low_hz, arch.nyquist
    lo_max = nyq - arch.nyquist_margin_hz
    edges = _mel_to_hz(np.linspace(_hz_to_mel(lo_min + 10.0), _hz_to_mel(lo_max - 200.0), arch.n_filters + 1))
    low_hz, high_hz = edges[:-1], edges[1:]
    a = _logit((low_hz - lo_min) / (lo_max - lo_min))
    b = _logit((high_hz - low_hz) / (nyq - low_hz))

    def he(shape, fan_in):
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    f, c = arch.n_filters, arch.conv_channels
    params = {
        "sinc.low": a,
        "sinc.band": b,
        "ln1.gain": np.ones((f, 1)),
        "ln1.bias": np.zeros((f, 1)),
        "conv.weight": he((c, f, arch.conv_len), f * arch.conv_len),
        "conv.bias": np.zeros(c),
        "mlp1.weight": he((arch.hidden, arch.flat_dim()), arch.flat_dim()),
        "mlp1.bias": np.zeros(arch.hidden),
        "mlp2.weight": he((arch.dvector_dim, arch.hidden), arch.hidden),
        "mlp2.bias": np.zeros(arch.dvector_dim),
        "head.weight": he((arch.num_classes, arch.dvector_dim), arch.dvector_dim) * 0.5,
        "head.bias": np.zeros(arch.num_classes),
    }
    return SpeakerModel(arch, params)


# -- graph pieces ------------------------------------------------------------------

def _tensors(model, requires_grad=False):
    return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in model.params.items()}


def cutoffs(arch: Architecture, low_param: Tensor, band_param: Tensor):
    """Map unconstrained reals to cutoffs in Hz with 0 < f1 < f2 < nyquist."""
    lo_min, nyq = arch.min_low_hz, arch.nyquist
    span = nyq - arch.nyquist_margin_hz - lo_min
    f1 = T.sigmoid(low_param) * span + lo_min
    f2 = f1 + T.sigmoid(band_param) * (nyq - f1)
    return f1, f2


def _tap_grid(arch):
    half = arch.sinc_len // 2
    n = np.arange(-half, half + 1, dtype=np.float64)
    window = 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(arch.sinc_len) / (arch.sinc_len - 1))
    return n, window


def _sinc_kernels(arch, p):
    f1, f2 = cutoffs(arch, p["sinc.low"], p["sinc.band"])
    n, window = _tap_grid(arch)
    inv_fs = 1.0 / arch.sample_rate
    return T.sinc_bandpass(f1 * inv_fs, f2 * inv_fs, n, window)


def sinc_kernels_hz(low_hz, high_hz, arch: Architecture | None = None) -> np.ndarray:
    """Band-pass kernels for explicit cutoffs in Hz, shape (F, sinc_len)."""
    arch = arch or Architecture()
    n, window = _tap_grid(arch)
    lo = Tensor(np.atleast_1d(np.asarray(low_hz, dtype=np.float64)) / arch.sample_rate)
    hi = Tensor(np.atleast_1d(np.asarray(high_hz, dtype=np.float64)) / arch.sample_rate)
    return T.sinc_bandpass(lo, hi, n, window).data


def build_sinc_filters(model: SpeakerModel) -> np.ndarray:
    """Current front-end kernels, shape (n_filters, sinc_len)."""
    return _sinc_kernels(model.arch, _tensors(model)).data


def filter_cutoffs_hz(model: SpeakerModel):
    p = _tensors(model)
    f1, f2 = cutoffs(model.arch, p["sinc.low"], p["sinc.band"])
    return f1.data.copy(), f2.data.copy()


def _dvector_graph(arch, p, x):
    """x: (B, T) waveform tensor -> (B, dvector_dim)."""
    bsz = x.shape[0]
    h = T.reshape(x, (bsz, 1, arch.input_window_len))
    kern = T.reshape(_sinc_kernels(arch, p), (arch.n_filters, 1, arch.sinc_len))
    h = T.conv1d(h, kern)
    h = T.maxpool1d(h, arch.pool1)
    h = T.layer_norm(h, p["ln1.gain"], p["ln1.bias"], arch.ln_eps)
    h = T.leaky_relu(h, arch.leak)
    h = T.conv1d(h, p["conv.weight"], p["conv.bias"])
    h = T.maxpool1d(h, arch.pool2)
    h = T.leaky_relu(h, arch.leak)
    h = T.reshape(h, (bsz, arch.flat_dim()))
    h = T.leaky_relu(T.dense(h, p["mlp1.weight"], p["mlp1.bias"]), arch.leak)
    return T.leaky_relu(T.dense(h, p["mlp2.weight"], p["mlp2.bias"]), arch.leak)


def _logits_graph(arch, p, d):
    return T.dense(d, p["head.weight"], p["head.bias"])


# -- input validation ----------------------------------------------------------------

def _as_batch(x, width, what):
    arr = np.asarray(x, dtype=np.float64)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != width:
        raise InvalidInput(f"{what}: expected length {width}, got shape {np.shape(x)}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{what}: non-finite values")
    return arr, squeeze


def _check_target(model, target):
    if not (0 <= int(target) < model.num_classes) or int(target) != target:
        raise InvalidInput(f"target {target!r} outside [0, {model.num_classes})")
    return int(target)


# -- public forward / gradient API -------------------------------------------------

def forward_dvector(model: SpeakerModel, chunk) -> np.ndarray:
    """d-vector(s) for one chunk (1-D) or a batch (2-D)."""
    x, squeeze = _as_batch(chunk, model.input_window_len, "chunk")
    d = _dvector_graph(model.arch, _tensors(model), Tensor(x)).data
    return d[0] if squeeze else d


def logits_head(model: SpeakerModel, d) -> np.ndarray:
    dv, squeeze = _as_batch(d, model.dvector_dim, "d-vector")
    z = _logits_graph(model.arch, _tensors(model), Tensor(dv)).data
    return z[0] if squeeze else z


def forward_head(model: SpeakerModel, d) -> np.ndarray:
    """Class probabilities from d-vector(s)."""
    dv, squeeze = _as_batch(d, model.dvector_dim, "d-vector")
    p = T.softmax(_logits_graph(model.arch, _tensors(model), Tensor(dv))).data
    return p[0] if squeeze else p


def forward_full(model: SpeakerModel, chunk) -> np.ndarray:
    """Class probabilities for a chunk; literally head(dvector(chunk))."""
    return forward_head(model, forward_dvector(model, chunk))


def predict(model: SpeakerModel, chunks, batch_size: int = 64) -> np.ndarray:
    """Argmax class per chunk; ties resolve to the lowest index."""
    x, _ = _as_batch(chunks, model.input_window_len, "chunks")
    out = np.empty(len(x), dtype=np.int64)
    for i in range(0, len(x), batch_size):
        out[i:i + batch_size] = np.argmax(forward_full(model, x[i:i + batch_size]), axis=1)
    return out


def cost_and_grad_full(model: SpeakerModel, chunk, target: int):
    """``(1 - p_target, d cost / d chunk)`` for a single chunk."""
    target = _check_target(model, target)
    x, _ = _as_batch(chunk, model.input_window_len, "chunk")
    xt = Tensor(x, requires_grad=True)
    p = T.softmax(_logits_graph(model.arch, _tensors(model), _dvector_graph(model.arch, _tensors(model), xt)))
    c = 1.0 - T.select(p, target)
    c.backward()
    return float(c.data[0]), xt.grad[0]


def cost_and_grad_head(model: SpeakerModel, d, target: int):
    target = _check_target(model, target)
    dv, _ = _as_batch(d, model.dvector_dim, "d-vector")
    dt = Tensor(dv, requires_grad=True)
    p = T.softmax(_logits_graph(model.arch, _tensors(model), dt))
    c = 1.0 - T.select(p, target)
    c.backward()
    return float(c.data[0]), dt.grad[0]


def grad_input_full(model: SpeakerModel, chunk, target: int) -> np.ndarray:
    """d(1 - p_target)/d chunk."""
    return cost_and_grad_full(model, chunk, target)[1]


def grad_input_head(model: SpeakerModel, d, target: int) -> np.ndarray:
    """d(1 - p_target)/d d-vector."""
    return cost_and_grad_head(model, d, target)[1]


def loss_and_grad_params(model: SpeakerModel, chunks, labels, return_logits=False):
    """Mean cross-entropy over the batch and its gradient for every parameter."""
    x, _ = _as_batch(chunks, model.input_window_len, "chunks")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(x) == 0:
        raise InvalidInput("empty batch")
    if len(labels) != len(x):
        raise InvalidInput(f"{len(x)} chunks but {len(labels)} labels")
    if labels.min() < 0 or labels.max() >= model.num_classes:
        raise InvalidInput("label outside class range")
    p = _tensors(model, requires_grad=True)
    z = _logits_graph(model.arch, p, _dvector_graph(model.arch, p, Tensor(x)))
    loss = T.cross_entropy(z, labels)
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in p.items()}
    if return_logits:
        return float(loss.data), grads, z.data
    return float(loss.data), grads


def grad_params(model: SpeakerModel, chunks, labels) -> dict:
    return loss_and_grad_params(model, chunks, labels)[1]


def batch_loss(model: SpeakerModel, chunks, labels) -> float:
    x, _ = _as_batch(chunks, model.input_window_len, "chunks")
    z = _logits_graph(model.arch, _tensors(model), _dvector_graph(model.arch, _tensors(model), Tensor(x)))
    return float(T.cross_entropy(z, labels).data)
