"""16-bit PCM mono WAV reading and writing."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np


class WavFormatError(ValueError):
    """Unsupported or malformed WAV file; the message names the byte offset."""

    def __init__(self, msg, offset):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


def load_wav(path):
    """Return ``(samples, sample_rate)`` with samples as float64 in [-1, 1)."""
    buf = Path(path).read_bytes()
    if len(buf) < 12 or buf[:4] != b"RIFF" or buf[8:12] != b"WAVE":
        raise WavFormatError("not a RIFF/WAVE file", 0)
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(buf):
        cid = buf[pos:pos + 4]
        (size,) = struct.unpack_from("<I", buf, pos + 4)
        body = pos + 8
        if body + size > len(buf):
            raise WavFormatError(f"chunk {cid!r} declares {size} bytes past end of file", pos + 4)
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError("fmt chunk shorter than 16 bytes", pos + 4)
            tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", buf, body)
            if tag not in (1, 0xFFFE):
                raise WavFormatError(f"unsupported format tag {tag}, expected PCM", body)
            if channels != 1:
                raise WavFormatError(f"expected mono, file has {channels} channels", body + 2)
            if bits != 16:
                raise WavFormatError(f"unsupported bit depth {bits}, expected 16", body + 14)
            fmt = rate
        elif cid == b"data":
            if fmt is None:
                raise WavFormatError("data chunk before fmt chunk", pos)
            data = buf[body:body + size - (size % 2)]
        pos = body + size + (size % 2)
    if fmt is None:
        raise WavFormatError("missing fmt chunk", pos)
    if data is None:
        raise WavFormatError("missing data chunk", pos)
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    return samples, fmt


def quantize(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    return np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")


def save_wav(path, samples, sample_rate: int) -> Path:
    """Write samples (expected in [-1, 1]) as 16-bit PCM; out-of-range values are clipped."""
    pcm = quantize(samples).tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(pcm)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, int(sample_rate), 2 * int(sample_rate), 2, 16)
    header += b"data" + struct.pack("<I", len(pcm))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + pcm)
    return path
