"""WAV decoding, resampling and fixed-length segmentation.

Only RIFF/WAVE is supported: integer PCM (8/16/24/32 bit) and 32-bit IEEE
float, mono or stereo. Compressed formats are converted offline.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ClipTooShort, EmptyAudio, MalformedContainer, UnsupportedEncoding

CANONICAL_RATE = 22050
SEGMENT_SECONDS = 5.0

_FORMAT_PCM = 0x0001
_FORMAT_FLOAT = 0x0003
_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform in [-1, 1] with its sample rate."""

    samples: np.ndarray
    sample_rate: int
    source_path: str = ""

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class _WavFormat:
    tag: int
    channels: int
    rate: int
    bits: int
    extra: dict = field(default_factory=dict)


def _parse_fmt(body: bytes) -> _WavFormat:
    if len(body) < 16:
        raise MalformedContainer("fmt chunk shorter than 16 bytes")
    tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", body, 0)
    if tag == _FORMAT_EXTENSIBLE:
        if len(body) < 40:
            raise MalformedContainer("extensible fmt chunk shorter than 40 bytes")
        # first two bytes of the sub-format GUID carry the real format tag
        (tag,) = struct.unpack_from("<H", body, 24)
    return _WavFormat(tag, channels, rate, bits)


def decode_wav(data: bytes, source_path: str = "") -> AudioClip:
    """Decode a RIFF/WAVE byte string into a mono clip at its native rate."""
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedContainer("missing RIFF/WAVE header")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body_start = pos + 8
        body_end = body_start + size
        if cid == b"data":
            if body_end > len(data):
                raise MalformedContainer(
                    f"data chunk declares {size} bytes, only {len(data) - body_start} present")
            payload = data[body_start:body_end]
            break
        if body_end > len(data):
            raise MalformedContainer(f"chunk {cid!r} runs past end of file")
        if cid == b"fmt ":
            fmt = _parse_fmt(data[body_start:body_end])
        pos = body_end + (size & 1)

    if fmt is None:
        raise MalformedContainer("missing fmt chunk")
    if payload is None:
        raise MalformedContainer("missing data chunk")
    if fmt.channels not in (1, 2):
        raise UnsupportedEncoding(f"{fmt.channels} channels not supported")
    if fmt.rate <= 0:
        raise MalformedContainer("sample rate must be positive")

    if fmt.tag == _FORMAT_PCM:
        if fmt.bits not in (8, 16, 24, 32):
            raise UnsupportedEncoding(f"{fmt.bits}-bit PCM not supported")
    elif fmt.tag == _FORMAT_FLOAT:
        if fmt.bits != 32:
            raise UnsupportedEncoding(f"{fmt.bits}-bit float not supported")
    else:
        raise UnsupportedEncoding(f"format tag 0x{fmt.tag:04x} not supported")

    width = fmt.bits // 8
    frame_bytes = width * fmt.channels
    n_frames = len(payload) // frame_bytes
    if n_frames == 0:
        raise EmptyAudio("data chunk holds no complete frames")
    payload = payload[:n_frames * frame_bytes]

    samples = _unpack(payload, fmt)
    samples = samples.reshape(n_frames, fmt.channels).mean(axis=1)
    np.clip(samples, -1.0, 1.0, out=samples)
    return AudioClip(samples, fmt.rate, source_path)


def _unpack(payload: bytes, fmt: _WavFormat) -> np.ndarray:
    if fmt.tag == _FORMAT_FLOAT:
        out = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        return np.nan_to_num(out, nan=0.0, posinf=1.0, neginf=-1.0)
    scale = 1.0 / (1 << (fmt.bits - 1))
    if fmt.bits == 8:
        # 8-bit WAV is unsigned with a 128 offset
        raw = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) - 128.0
    elif fmt.bits == 16:
        raw = np.frombuffer(payload, dtype="<i2").astype(np.float64)
    elif fmt.bits == 24:
        b = np.frombuffer(payload, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        raw = (b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16))
        raw = np.where(raw >= 1 << 23, raw - (1 << 24), raw).astype(np.float64)
    else:
        raw = np.frombuffer(payload, dtype="<i4").astype(np.float64)
    return raw * scale


def encode_wav(clip: AudioClip, bits: int = 16) -> bytes:
    """Encode a mono clip as integer PCM (16 or 24 bit)."""
    if bits not in (16, 24):
        raise UnsupportedEncoding(f"cannot encode {bits}-bit PCM")
    full = 1 << (bits - 1)
    q = np.clip(np.round(np.asarray(clip.samples, dtype=np.float64) * full), -full, full - 1)
    q = q.astype(np.int64)
    if bits == 16:
        payload = q.astype("<i2").tobytes()
    else:
        u = q & 0xFFFFFF
        payload = np.stack([u & 0xFF, (u >> 8) & 0xFF, (u >> 16) & 0xFF], axis=1).astype(np.uint8).tobytes()
    width = bits // 8
    fmt = struct.pack("<HHIIHH", _FORMAT_PCM, 1, clip.sample_rate,
                      clip.sample_rate * width, width, bits)
    chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt
    chunks += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        chunks += b"\x00"
    return b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks


def read_wav(path) -> AudioClip:
    path = Path(path)
    return decode_wav(path.read_bytes(), str(path))


def write_wav(path, clip: AudioClip, bits: int = 16) -> None:
    Path(path).write_bytes(encode_wav(clip, bits))


def resample(clip: AudioClip, target_rate: int, taps: int = 32) -> AudioClip:
    """Hann-windowed sinc interpolation to ``target_rate``.

    ``taps`` zero crossings of the interpolation kernel are used on each side.
    When downsampling the kernel is stretched so its cutoff sits at the new
    Nyquist frequency. Weights are renormalized per output sample, which keeps
    DC exact even near the clip edges.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return AudioClip(np.array(clip.samples, dtype=np.float64, copy=True),
                         clip.sample_rate, clip.source_path)

    x = np.asarray(clip.samples, dtype=np.float64)
    ratio = target_rate / clip.sample_rate
    cutoff = min(1.0, ratio)
    half = int(np.ceil(taps / cutoff))
    n_out = int(round(len(x) * ratio))
    out = np.empty(n_out)
    offsets = np.arange(-half + 1, half + 1)

    chunk = 8192
    for start in range(0, n_out, chunk):
        m = np.arange(start, min(start + chunk, n_out))
        pos = m / ratio
        base = np.floor(pos).astype(np.int64)
        idx = base[:, None] + offsets[None, :]
        dist = pos[:, None] - idx
        w = cutoff * np.sinc(cutoff * dist) * (0.5 + 0.5 * np.cos(np.pi * dist / half))
        valid = (idx >= 0) & (idx < len(x))
        w = np.where(valid, w, 0.0)
        vals = x[np.clip(idx, 0, len(x) - 1)]
        norm = w.sum(axis=1)
        norm[norm == 0] = 1.0
        out[m] = (w * vals).sum(axis=1) / norm

    np.clip(out, -1.0, 1.0, out=out)
    return AudioClip(out, target_rate, clip.source_path)


def segment(clip: AudioClip, seg_seconds: float = SEGMENT_SECONDS) -> list[AudioClip]:
    """Cut a clip into consecutive non-overlapping segments of equal length.

    A trailing remainder shorter than half a segment is dropped; a longer one
    is zero-padded.
    """
    if seg_seconds <= 0:
        raise ValueError("seg_seconds must be positive")
    seg_len = int(round(seg_seconds * clip.sample_rate))
    x = np.asarray(clip.samples, dtype=np.float64)
    n_full, rem = divmod(len(x), seg_len)
    if n_full == 0 and 2 * rem < seg_len:
        raise ClipTooShort(
            f"{clip.duration:.3f} s clip is shorter than half of a {seg_seconds} s segment")

    pieces = [x[i * seg_len:(i + 1) * seg_len] for i in range(n_full)]
    if 2 * rem >= seg_len:
        tail = np.zeros(seg_len)
        tail[:rem] = x[n_full * seg_len:]
        pieces.append(tail)
    return [AudioClip(p.copy(), clip.sample_rate, clip.source_path) for p in pieces]


def load_segments(path, sample_rate: int = CANONICAL_RATE,
                  seg_seconds: float = SEGMENT_SECONDS) -> list[AudioClip]:
    """Decode, resample to the canonical rate and segment a WAV file."""
    return segment(resample(read_wav(path), sample_rate), seg_seconds)
