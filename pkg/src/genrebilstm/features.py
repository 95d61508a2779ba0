"""Per-frame acoustic features: MFCC, delta-MFCC and chroma.

The model input for every frame is ``[13 MFCC | 13 delta | 12 chroma]``
(38 columns). Zero crossing rate, spectral centroid, roll-off, bandwidth and
RMS energy are computed by :func:`aux_descriptors` for the baselines but are
not part of that vector.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .audio_io import AudioClip
from .errors import DegenerateBand, FeatureFileError, FrameLongerThanClip

FRAME_LEN = 2048
HOP = 512
N_MELS = 40
N_MFCC = 13
DELTA_WIDTH = 4
LOG_FLOOR = 1e-10
ROLLOFF = 0.85
AUX_NAMES = ("zcr", "centroid", "rolloff", "bandwidth", "rms")

FEATURE_MAGIC = b"BMFX1\n"


@dataclass(frozen=True)
class FrameMatrix:
    frames: np.ndarray  # (T, frame_len), unwindowed
    frame_len: int
    hop: int
    sample_rate: int

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class MelFilterBank:
    weights: np.ndarray  # (n_mels, n_fft // 2 + 1)
    fmin: float
    fmax: float
    sample_rate: int


@dataclass
class FeatureSequence:
    """T x d feature matrix for one segment, plus its label and provenance."""

    x: np.ndarray
    label: Optional[str] = None
    source: str = ""
    aux: Optional[np.ndarray] = None  # (T, 5) descriptors, kept for baselines

    @property
    def shape(self):
        return self.x.shape


@dataclass
class NormStats:
    mu: np.ndarray
    sigma: np.ndarray


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def frame_signal(clip: AudioClip, frame_len: int = FRAME_LEN, hop: int = HOP) -> FrameMatrix:
    x = np.asarray(clip.samples, dtype=np.float64)
    if hop <= 0:
        raise ValueError("hop must be positive")
    if frame_len > len(x):
        raise FrameLongerThanClip(f"frame of {frame_len} samples exceeds clip of {len(x)}")
    frames = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop]
    return FrameMatrix(np.ascontiguousarray(frames), frame_len, hop, clip.sample_rate)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window (DFT-even), the usual choice for STFT analysis."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_power(frames: FrameMatrix) -> np.ndarray:
    """One-sided power spectrum |X_t[k]|^2 of Hann-windowed frames."""
    spec = np.fft.rfft(frames.frames * hann(frames.frame_len), axis=1)
    return spec.real ** 2 + spec.imag ** 2


def fft_frequencies(n_fft: int, sample_rate: int) -> np.ndarray:
    return np.arange(n_fft // 2 + 1) * sample_rate / n_fft


def build_mel_filterbank(n_mels: int = N_MELS, n_fft: int = FRAME_LEN,
                         sample_rate: int = 22050, fmin: float = 0.0,
                         fmax: Optional[float] = None) -> MelFilterBank:
    """Triangular filters on the HTK mel scale, peak weight 1 at each centre bin."""
    if fmax is None:
        fmax = sample_rate / 2
    if not 0 <= fmin < fmax <= sample_rate / 2:
        raise ValueError(f"need 0 <= fmin < fmax <= sr/2, got fmin={fmin}, fmax={fmax}")
    if n_mels < 2:
        raise ValueError("n_mels must be at least 2")

    mels = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    bins = np.round(mel_to_hz(mels) * n_fft / sample_rate).astype(int)
    if np.any(np.diff(bins) == 0):
        bad = int(np.flatnonzero(np.diff(bins) == 0)[0])
        raise DegenerateBand(f"mel points {bad} and {bad + 1} share FFT bin {bins[bad]}")

    k = np.arange(n_fft // 2 + 1)
    weights = np.zeros((n_mels, len(k)))
    for m in range(n_mels):
        lo, mid, hi = bins[m:m + 3]
        up = (k - lo) / (mid - lo)
        down = (hi - k) / (hi - mid)
        weights[m] = np.maximum(0.0, np.minimum(up, down))
    return MelFilterBank(weights, float(fmin), float(fmax), sample_rate)


def dct_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Orthonormal DCT-II basis, shape (n_out, n_in)."""
    n = np.arange(n_in)
    k = np.arange(n_out)[:, None]
    basis = np.cos(np.pi * k * (2 * n + 1) / (2 * n_in))
    basis[0] *= np.sqrt(1.0 / n_in)
    basis[1:] *= np.sqrt(2.0 / n_in)
    return basis


def mfcc(spec: np.ndarray, bank: MelFilterBank, n_mfcc: int = N_MFCC) -> np.ndarray:
    if spec.shape[1] != bank.weights.shape[1]:
        raise ValueError(
            f"spectrum has {spec.shape[1]} bins, filterbank expects {bank.weights.shape[1]}")
    log_energy = np.log(spec @ bank.weights.T + LOG_FLOOR)
    return log_energy @ dct_matrix(bank.weights.shape[0], n_mfcc).T


def delta(feat: np.ndarray, half_width: int = DELTA_WIDTH) -> np.ndarray:
    """Regression slope over +-half_width frames, edges replicated."""
    if half_width < 1:
        raise ValueError("half_width must be >= 1")
    feat = np.asarray(feat, dtype=np.float64)
    n_frames = feat.shape[0]
    padded = np.pad(feat, ((half_width, half_width), (0, 0)), mode="edge")
    out = np.zeros_like(feat)
    for n in range(1, half_width + 1):
        ahead = padded[half_width + n:half_width + n + n_frames]
        behind = padded[half_width - n:half_width - n + n_frames]
        out += n * (ahead - behind)
    return out / (2 * sum(n * n for n in range(1, half_width + 1)))


def chroma_map(n_fft: int, sample_rate: int) -> np.ndarray:
    """Pitch class (0 = C) for every bin; bin 0 gets -1 and is ignored."""
    freqs = fft_frequencies(n_fft, sample_rate)
    classes = np.full(len(freqs), -1)
    semis = np.round(12.0 * np.log2(freqs[1:] / 440.0)).astype(int)
    classes[1:] = (semis + 9) % 12
    return classes


def chroma(spec: np.ndarray, sample_rate: int) -> np.ndarray:
    n_fft = 2 * (spec.shape[1] - 1)
    classes = chroma_map(n_fft, sample_rate)
    fold = np.zeros((spec.shape[1], 12))
    fold[np.arange(1, spec.shape[1]), classes[1:]] = 1.0
    out = spec @ fold
    peak = out.max(axis=1, keepdims=True)
    return np.divide(out, peak, out=np.zeros_like(out), where=peak > 0)


def aux_descriptors(frames: FrameMatrix, spec: np.ndarray) -> np.ndarray:
    """Columns: ZCR, centroid (Hz), roll-off (Hz), bandwidth (Hz), RMS."""
    if frames.n_frames != spec.shape[0]:
        raise ValueError("frames and spectrogram disagree on T")
    x = frames.frames
    positive = x >= 0
    zcr = np.count_nonzero(positive[:, 1:] != positive[:, :-1], axis=1) / (frames.frame_len - 1)

    freqs = fft_frequencies(2 * (spec.shape[1] - 1), frames.sample_rate)
    total = spec.sum(axis=1)
    live = total > 0
    safe_total = np.where(live, total, 1.0)
    centroid = np.where(live, spec @ freqs / safe_total, 0.0)
    spread = (spec * (freqs[None, :] - centroid[:, None]) ** 2).sum(axis=1) / safe_total
    bandwidth = np.where(live, np.sqrt(spread), 0.0)

    cum = np.cumsum(spec, axis=1)
    roll_idx = np.argmax(cum >= ROLLOFF * total[:, None], axis=1)
    rolloff = np.where(live, freqs[roll_idx], 0.0)

    rms = np.sqrt(np.mean(x * x, axis=1))
    return np.column_stack([zcr, centroid, rolloff, bandwidth, rms])


class FeatureExtractor:
    """Caches the filterbank so many segments can be processed cheaply."""

    def __init__(self, sample_rate: int = 22050, frame_len: int = FRAME_LEN, hop: int = HOP,
                 n_mels: int = N_MELS, n_mfcc: int = N_MFCC, delta_width: int = DELTA_WIDTH):
        self.sample_rate = sample_rate
        self.frame_len = frame_len
        self.hop = hop
        self.n_mfcc = n_mfcc
        self.delta_width = delta_width
        self.bank = build_mel_filterbank(n_mels, frame_len, sample_rate)

    @property
    def dim(self) -> int:
        return 2 * self.n_mfcc + 12

    def __call__(self, clip: AudioClip, label=None,
                 extra: Optional[Callable[[AudioClip, FrameMatrix], np.ndarray]] = None
                 ) -> FeatureSequence:
        if clip.sample_rate != self.sample_rate:
            raise ValueError(f"expected {self.sample_rate} Hz audio, got {clip.sample_rate}")
        frames = frame_signal(clip, self.frame_len, self.hop)
        spec = stft_power(frames)
        ceps = mfcc(spec, self.bank, self.n_mfcc)
        parts = [ceps, delta(ceps, self.delta_width), chroma(spec, self.sample_rate)]
        if extra is not None:
            # hook for side-channel frame features (e.g. lyric embeddings)
            more = np.asarray(extra(clip, frames), dtype=np.float64)
            if more.ndim != 2 or more.shape[0] != frames.n_frames:
                raise ValueError("extra features must be a (T, k) matrix")
            parts.append(more)
        x = np.hstack(parts)
        return FeatureSequence(x, label, clip.source_path, aux_descriptors(frames, spec))


def assemble(clip: AudioClip, label=None, extra=None) -> FeatureSequence:
    """Feature sequence of a canonical segment under default settings."""
    return _default_extractor(clip.sample_rate)(clip, label, extra)


_EXTRACTORS: dict = {}


def _default_extractor(sample_rate: int) -> FeatureExtractor:
    if sample_rate not in _EXTRACTORS:
        _EXTRACTORS[sample_rate] = FeatureExtractor(sample_rate)
    return _EXTRACTORS[sample_rate]


def fit_normalizer(train: list[FeatureSequence]) -> NormStats:
    if not train:
        raise ValueError("cannot fit a normalizer on an empty training set")
    stacked = np.vstack([s.x for s in train])
    return NormStats(stacked.mean(axis=0), stacked.std(axis=0))


def apply_normalizer(seq: FeatureSequence, stats: NormStats) -> FeatureSequence:
    x = (seq.x - stats.mu) / np.maximum(stats.sigma, 1e-8)
    return FeatureSequence(x, seq.label, seq.source, seq.aux)


# --- BMFX1 container -------------------------------------------------------
# magic | u32 metadata length | metadata JSON | T*d float32 little-endian


def write_matrix(path, matrix: np.ndarray, meta: dict) -> None:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError("container holds a 2-D matrix")
    meta = dict(meta, T=int(matrix.shape[0]), d=int(matrix.shape[1]))
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def read_matrix(path) -> tuple[np.ndarray, dict]:
    data = Path(path).read_bytes()
    n = len(FEATURE_MAGIC)
    if data[:n] != FEATURE_MAGIC:
        raise FeatureFileError(f"{path}: bad magic")
    if len(data) < n + 4:
        raise FeatureFileError(f"{path}: truncated header")
    (mlen,) = struct.unpack_from("<I", data, n)
    start = n + 4 + mlen
    try:
        meta = json.loads(data[n + 4:start].decode("utf-8"))
        rows, cols = int(meta["T"]), int(meta["d"])
    except (UnicodeDecodeError, ValueError, KeyError) as exc:
        raise FeatureFileError(f"{path}: unreadable metadata ({exc})") from None
    need = rows * cols * 4
    if len(data) - start != need:
        raise FeatureFileError(f"{path}: expected {need} payload bytes, found {len(data) - start}")
    matrix = np.frombuffer(data, dtype="<f4", offset=start).reshape(rows, cols)
    return matrix.astype(np.float64), meta


def save_features(path, seq: FeatureSequence, created: str, **extra_meta) -> None:
    """Write the feature matrix, plus a sibling ``.aux`` file for the descriptors."""
    meta = {"label": seq.label, "source": seq.source, "created": created, **extra_meta}
    write_matrix(path, seq.x, meta)
    if seq.aux is not None:
        write_matrix(_aux_path(path), seq.aux, dict(meta, columns=list(AUX_NAMES)))


def load_features(path) -> FeatureSequence:
    x, meta = read_matrix(path)
    aux = None
    if _aux_path(path).exists():
        aux, _ = read_matrix(_aux_path(path))
    return FeatureSequence(x, meta.get("label"), meta.get("source", ""), aux)


def _aux_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".aux")


def save_norm_stats(path, stats: NormStats, created: str = "") -> None:
    write_matrix(path, np.vstack([stats.mu, stats.sigma]),
                 {"tensors": ["mu", "sigma"], "label": None, "source": "", "created": created})


def load_norm_stats(path) -> NormStats:
    m, meta = read_matrix(path)
    if meta.get("tensors") != ["mu", "sigma"] or m.shape[0] != 2:
        raise FeatureFileError(f"{path}: not a normalizer file")
    return NormStats(m[0], m[1])
