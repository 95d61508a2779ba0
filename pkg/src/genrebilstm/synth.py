"""Seeded synthetic genre corpus used in place of real recordings.

Class ``c`` is an amplitude-modulated tone: carrier ``220 * 2**(c/3)`` Hz,
modulation rate ``1 + 0.7c`` Hz, plus Gaussian noise tilted by ``-c`` dB per
octave and scaled to a 10 dB signal-to-noise ratio. Classes therefore differ
both in spectral envelope and in temporal modulation.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio_io import AudioClip, write_wav
from .train_eval import GENRES, DatasetManifest, ManifestEntry, write_manifest

SYNTH_RATE = 22050
CLIP_SECONDS = 15.0
SNR_DB = 10.0
MOD_DEPTH = 0.8
PEAK = 0.9


def class_carrier(c: int) -> float:
    return 220.0 * 2.0 ** (c / 3.0)


def class_mod_rate(c: int) -> float:
    return 1.0 + 0.7 * c


def tilted_noise(n: int, tilt_db_per_octave: float, sample_rate: int,
                 rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    octaves = np.log2(np.maximum(freqs, 20.0) / 1000.0)
    spec *= 10.0 ** (tilt_db_per_octave * octaves / 20.0)
    spec[0] = 0.0
    return np.fft.irfft(spec, n)


def synth_clip(c: int, rng: np.random.Generator, seconds: float = CLIP_SECONDS,
               sample_rate: int = SYNTH_RATE) -> np.ndarray:
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    phase_carrier, phase_mod = rng.uniform(0, 2 * np.pi, size=2)
    envelope = 1.0 + MOD_DEPTH * np.sin(2 * np.pi * class_mod_rate(c) * t + phase_mod)
    tone = envelope * np.sin(2 * np.pi * class_carrier(c) * t + phase_carrier)
    noise = tilted_noise(n, -float(c), sample_rate, rng)
    noise *= np.sqrt(np.mean(tone ** 2) / np.mean(noise ** 2) / 10.0 ** (SNR_DB / 10.0))
    mix = tone + noise
    return PEAK * mix / np.max(np.abs(mix))


def generate_synthetic(out_dir, seed: int = 42, per_class: int = 10,
                       labels=GENRES) -> DatasetManifest:
    """Write ``per_class`` WAV clips per class plus ``manifest.csv``."""
    if per_class < 5:
        raise ValueError("per_class must be at least 5")
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    entries = []
    for c, genre in enumerate(labels):
        for k in range(per_class):
            rng = np.random.default_rng([seed, c, k])
            rel = f"audio/{genre}_{k:03d}.wav"
            write_wav(out_dir / rel, AudioClip(synth_clip(c, rng), SYNTH_RATE, rel))
            entries.append(ManifestEntry(rel, genre))
    manifest = DatasetManifest(entries, list(labels))
    write_manifest(out_dir / "manifest.csv", manifest)
    return manifest
