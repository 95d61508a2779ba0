"""Corpus-level plumbing shared by the commands: extraction to a feature
directory, loading it back, and mapping recording splits onto segments.

Feature directory layout::

    manifest.csv          recordings that produced at least one segment
    index.csv             file,genre,source,segment
    segments/*.bmfx       one BMFX1 file per segment (+ ``.aux`` sibling)
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

from .audio_io import load_segments
from .config import RunConfig
from .errors import InputError
from .features import FeatureExtractor, FeatureSequence, load_features, save_features
from .train_eval import DatasetManifest, load_manifest, stratified_split, write_manifest

log = logging.getLogger(__name__)

FIXED_TIMESTAMP = "1970-01-01T00:00:00Z"


@dataclass
class ExtractSummary:
    ok: dict  # manifest path -> number of segments
    failed: dict  # manifest path -> error message

    @property
    def n_segments(self) -> int:
        return sum(self.ok.values())


def resolve_audio(manifest_dir: Path, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else manifest_dir / p


def _safe_stem(path: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in Path(path).with_suffix("").as_posix())


def extract_corpus(manifest: DatasetManifest, manifest_dir, out_dir, config: RunConfig,
                   created: str) -> ExtractSummary:
    """Segment and featurize every recording; failures are logged, not raised."""
    out_dir = Path(out_dir)
    seg_dir = out_dir / "segments"
    seg_dir.mkdir(parents=True, exist_ok=True)
    extractor = FeatureExtractor(config.sample_rate, config.frame_len, config.hop,
                                 config.n_mels, config.n_mfcc, config.delta_width)
    ok, failed, rows, kept = {}, {}, [], []
    for entry in manifest.entries:
        try:
            segs = load_segments(resolve_audio(Path(manifest_dir), entry.path),
                                 config.sample_rate, config.seg_seconds)
        except (OSError, InputError) as exc:
            failed[entry.path] = f"{type(exc).__name__}: {exc}"
            log.warning("skip %s: %s", entry.path, failed[entry.path])
            continue
        stem = _safe_stem(entry.path)
        for k, seg in enumerate(segs):
            seq = extractor(seg, entry.genre)
            seq.source = entry.path
            name = f"{stem}_{k:03d}.bmfx"
            save_features(seg_dir / name, seq, created, segment=k)
            rows.append((f"segments/{name}", entry.genre, entry.path, k))
        ok[entry.path] = len(segs)
        kept.append(entry)
        log.info("%s: %d segments", entry.path, len(segs))

    if kept:
        write_manifest(out_dir / "manifest.csv", DatasetManifest(kept, manifest.label_set))
    with open(out_dir / "index.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "genre", "source", "segment"])
        w.writerows(rows)
    (out_dir / "labels.txt").write_text("\n".join(manifest.label_set) + "\n", encoding="utf-8")
    return ExtractSummary(ok, failed)


@dataclass
class FeatureCorpus:
    manifest: DatasetManifest
    segments: list[FeatureSequence]
    recording: list[int]  # manifest index of each segment

    @property
    def labels(self) -> list[str]:
        return self.manifest.label_set

    def select(self, recordings) -> list[FeatureSequence]:
        wanted = set(recordings)
        return [s for s, r in zip(self.segments, self.recording) if r in wanted]


def load_feature_dir(features_dir) -> FeatureCorpus:
    features_dir = Path(features_dir)
    if not (features_dir / "index.csv").is_file():
        raise InputError(f"{features_dir} is not a feature directory (no index.csv)")
    labels_file = features_dir / "labels.txt"
    labels = [g for g in labels_file.read_text(encoding="utf-8").splitlines() if g] if labels_file.exists() else None
    manifest = load_manifest(features_dir / "manifest.csv", labels)
    position = {e.path: i for i, e in enumerate(manifest.entries)}
    segments, recording = [], []
    with open(features_dir / "index.csv", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            seq = load_features(features_dir / row["file"])
            seq.label = row["genre"]
            seq.source = row["source"]
            if row["source"] not in position:
                raise InputError(f"segment {row['file']} refers to unknown recording {row['source']}")
            segments.append(seq)
            recording.append(position[row["source"]])
    if not segments:
        raise InputError(f"{features_dir} holds no segments")
    return FeatureCorpus(manifest, segments, recording)


def split_corpus(corpus: FeatureCorpus, config: RunConfig):
    split = stratified_split(corpus.manifest, config.seed, config.fractions)
    parts = {name: corpus.select(split.part(name)) for name in ("train", "val", "test")}
    return split, parts

