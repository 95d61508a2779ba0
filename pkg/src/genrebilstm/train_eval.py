"""Dataset manifests, grouped stratified splits, training loop and metrics."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import nn_core
from .audio_io import AudioClip, segment
from .config import RunConfig
from .errors import (
    DuplicatePath,
    EmptyManifest,
    GenreTooSmall,
    ParseError,
    UnknownGenre,
)
from .features import FeatureExtractor, FeatureSequence, NormStats, apply_normalizer, fit_normalizer

log = logging.getLogger(__name__)

GENRES = (
    "bangla_hiphop", "bangla_metal", "bangla_rock", "deshattobodhok", "palligiti",
    "lalon_giti", "nazrul_sangeet", "rabindra_sangeet", "folk", "hamdnaat",
)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    genre: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    label_set: list[str] = field(default_factory=lambda: list(GENRES))

    def __len__(self):
        return len(self.entries)

    def label_index(self, genre: str) -> int:
        return self.label_set.index(genre)


def parse_manifest(text: str, label_set: Optional[Sequence[str]] = None) -> DatasetManifest:
    labels = list(label_set or GENRES)
    if len(set(labels)) != len(labels):
        raise ValueError("label set contains duplicates")
    lines = text.splitlines()
    if not any(line.strip() for line in lines):
        raise EmptyManifest("manifest is empty")
    if [c.strip() for c in lines[0].split(",")] != ["path", "genre"]:
        raise ParseError("header must be 'path,genre'", line=1)

    entries, seen = [], set()
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        cols = raw.split(",")
        if len(cols) != 2:
            raise ParseError(f"expected 2 columns, got {len(cols)} (commas in paths are not allowed)",
                             line=lineno)
        path, genre = cols[0].strip(), cols[1].strip()
        if not path:
            raise ParseError("empty path", line=lineno)
        if genre not in labels:
            raise UnknownGenre(f"unknown genre {genre!r}", line=lineno)
        if path in seen:
            raise DuplicatePath(f"duplicate path {path!r}", line=lineno)
        seen.add(path)
        entries.append(ManifestEntry(path, genre))
    if not entries:
        raise EmptyManifest("manifest has a header but no rows")
    return DatasetManifest(entries, labels)


def load_manifest(path, label_set: Optional[Sequence[str]] = None) -> DatasetManifest:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"manifest is not UTF-8: {exc}") from None
    return parse_manifest(text, label_set)


def write_manifest(path, manifest: DatasetManifest) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("path,genre\n")
        for e in manifest.entries:
            if "," in e.path:
                raise ValueError(f"path contains a comma: {e.path!r}")
            fh.write(f"{e.path},{e.genre}\n")


# --- splits -------------------------------------------------------------------


@dataclass
class SplitAssignment:
    """Indices of manifest entries (recordings) per partition."""

    train: list[int]
    val: list[int]
    test: list[int]
    seed: int
    fractions: tuple = (0.70, 0.15, 0.15)

    def part(self, name: str) -> list[int]:
        if name == "all":
            return sorted(self.train + self.val + self.test)
        return {"train": self.train, "val": self.val, "test": self.test}[name]

    def digest(self) -> str:
        blob = json.dumps([self.train, self.val, self.test, self.seed])
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def largest_remainder(n: int, fractions: Sequence[float], offset: int = 0) -> list[int]:
    """Integer counts summing to ``n`` proportional to ``fractions``.

    Ties between equal remainders are broken in rotating order starting at
    ``offset`` so that, over many genres, no partition is favoured. When
    ``n >= len(fractions)`` every partition receives at least one item.
    """
    quotas = [n * f for f in fractions]
    counts = [int(np.floor(q + 1e-9)) for q in quotas]
    left = n - sum(counts)
    rems = [round(q - c, 9) for q, c in zip(quotas, counts)]
    order = []
    for r in sorted(set(rems), reverse=True):
        tied = [j for j in range(len(fractions)) if rems[j] == r]
        shift = offset % len(tied)
        order += tied[shift:] + tied[:shift]
    for j in order[:left]:
        counts[j] += 1
    if n >= len(fractions):
        for j in range(len(counts)):
            if counts[j] == 0:
                counts[int(np.argmax(counts))] -= 1
                counts[j] = 1
    return counts


def stratified_split(manifest: DatasetManifest, seed: int = 42,
                     fractions: Sequence[float] = (0.70, 0.15, 0.15)) -> SplitAssignment:
    """Shuffle recordings within each genre and cut by ``fractions``.

    Splitting whole recordings keeps every segment of one source in a single
    partition.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[], [], []]
    for g, genre in enumerate(manifest.label_set):
        members = [i for i, e in enumerate(manifest.entries) if e.genre == genre]
        if not members:
            continue
        if len(members) < 3:
            raise GenreTooSmall(f"genre {genre!r} has {len(members)} recordings, need at least 3")
        members = [members[j] for j in rng.permutation(len(members))]
        counts = largest_remainder(len(members), fractions, offset=g)
        start = 0
        for p, c in enumerate(counts):
            parts[p].extend(members[start:start + c])
            start += c
    return SplitAssignment(sorted(parts[0]), sorted(parts[1]), sorted(parts[2]), seed, fractions)


# --- training -------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    wall_seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    def __len__(self):
        return len(self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,train_loss,train_acc,val_loss,val_acc,wall_seconds\n")
        for r in self.records:
            buf.write(f"{r.epoch},{r.train_loss:.8f},{r.train_acc:.6f},{r.val_loss:.8f},"
                      f"{r.val_acc:.6f},{r.wall_seconds:.3f}\n")
        return buf.getvalue()


@dataclass
class TrainResult:
    params: nn_core.ModelParams
    norm: NormStats
    history: TrainHistory


def _stack(seqs: Sequence[FeatureSequence], labels: Sequence[str]):
    X = np.stack([s.x for s in seqs])
    y = np.array([labels.index(s.label) for s in seqs], dtype=np.int64)
    return X, y


def batched_proba(params: nn_core.ModelParams, X: np.ndarray, batch: int = 64) -> np.ndarray:
    return np.concatenate([nn_core.predict_proba(params, X[i:i + batch])
                           for i in range(0, len(X), batch)])


def _loss_acc(params, X, y, batch=64):
    probs = batched_proba(params, X, batch)
    loss = nn_core.cross_entropy(probs, y)
    return loss, float(np.mean(argmax_lowest(probs) == y))


def argmax_lowest(probs: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ``np.argmax`` already returns the first maximum."""
    return np.argmax(probs, axis=-1)


def train(train_set: Sequence[FeatureSequence], val_set: Sequence[FeatureSequence],
          labels: Sequence[str], config: RunConfig, bidirectional: bool = True,
          history_path=None) -> TrainResult:
    """Mini-batch Adam with early stopping on validation loss.

    The normalizer is fitted on ``train_set`` only. Parameters from the epoch
    with the lowest validation loss are returned. When ``history_path`` is
    given the history CSV is rewritten after every epoch.
    """
    labels = list(labels)
    norm = fit_normalizer(list(train_set))
    Xtr, ytr = _stack([apply_normalizer(s, norm) for s in train_set], labels)
    Xva, yva = _stack([apply_normalizer(s, norm) for s in val_set], labels) if val_set else (None, None)

    rng = np.random.default_rng(config.seed)
    spec = nn_core.ModelSpec(Xtr.shape[2], config.hidden, config.layers, config.dense,
                             len(labels), config.mode, bidirectional)
    params = nn_core.init_params(spec, rng)
    state = nn_core.AdamState()
    history = TrainHistory()
    best, best_loss, stale = params.copy(), np.inf, 0

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(Xtr))
        loss_sum, hits = 0.0, 0
        for start in range(0, len(order), config.batch):
            idx = order[start:start + config.batch]
            loss, grads, trace = nn_core.loss_and_grads(params, Xtr[idx], ytr[idx])
            grads = nn_core.gradient_clip(grads, config.clip)
            nn_core.adam_step(params.tensors, grads, state, config.lr)
            params.tensors.update(trace.running)
            probs = trace.probs.mean(axis=1) if spec.mode == "frame" else trace.probs
            loss_sum += loss * len(idx)
            hits += int(np.sum(argmax_lowest(probs) == ytr[idx]))
        train_loss, train_acc = loss_sum / len(order), hits / len(order)

        if Xva is not None:
            val_loss, val_acc = _loss_acc(params, Xva, yva)
        else:
            val_loss, val_acc = train_loss, train_acc
        wall = 0.0 if config.deterministic else time.perf_counter() - t0
        history.records.append(EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc, wall))
        log.info("epoch %d  train %.4f/%.3f  val %.4f/%.3f", epoch, train_loss, train_acc,
                 val_loss, val_acc)
        if history_path is not None:
            Path(history_path).write_text(history.to_csv())

        if val_loss < best_loss - config.min_delta:
            best, best_loss, stale = params.copy(), val_loss, 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                log.info("early stop at epoch %d (best %d)", epoch, history.best_epoch)
                break
    return TrainResult(best, norm, history)


# --- evaluation ---------------------------------------------------------------


def f1_score(precision: float, recall: float) -> float:
    total = precision + recall
    return 0.0 if total == 0 else 2.0 * precision * recall / total


@dataclass
class EvalReport:
    labels: list[str]
    confusion: np.ndarray  # rows true, columns predicted
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def per_class(self) -> dict:
        return {g: {"precision": float(self.precision[i]), "recall": float(self.recall[i]),
                    "f1": float(self.f1[i]), "support": int(self.support[i])}
                for i, g in enumerate(self.labels)}

    def format_table(self) -> str:
        width = max(12, max(len(g) for g in self.labels))
        lines = [f"{'':<{width}}  precision  recall  f1-score  support"]
        for i, g in enumerate(self.labels):
            lines.append(f"{g:<{width}}  {self.precision[i]:9.2f}  {self.recall[i]:6.2f}  "
                         f"{self.f1[i]:8.2f}  {int(self.support[i]):7d}")
        lines.append("")
        lines.append(f"{'accuracy':<{width}}  {'':9}  {'':6}  {self.accuracy:8.4f}  {self.total:7d}")
        return "\n".join(lines)

    def report_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["genre", "precision", "recall", "f1", "support"])
        for i, g in enumerate(self.labels):
            w.writerow([g, f"{self.precision[i]:.6f}", f"{self.recall[i]:.6f}",
                        f"{self.f1[i]:.6f}", int(self.support[i])])
        return buf.getvalue()

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred"] + list(self.labels))
        for i, g in enumerate(self.labels):
            w.writerow([g] + [int(v) for v in self.confusion[i]])
        return buf.getvalue()


def report_from_predictions(y_true, y_pred, labels: Sequence[str]) -> EvalReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    n = len(labels)
    confusion = np.zeros((n, n), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    tp = np.diag(confusion).astype(np.float64)
    col = confusion.sum(axis=0)
    row = confusion.sum(axis=1)
    precision = np.divide(tp, col, out=np.zeros(n), where=col > 0)
    recall = np.divide(tp, row, out=np.zeros(n), where=row > 0)
    f1 = np.array([f1_score(p, r) for p, r in zip(precision, recall)])
    total = confusion.sum()
    accuracy = float(tp.sum() / total) if total else 0.0
    return EvalReport(list(labels), confusion, precision, recall, f1, row, accuracy)


def evaluate(params: nn_core.ModelParams, norm: NormStats, segments: Sequence[FeatureSequence],
             labels: Sequence[str]) -> EvalReport:
    if not segments:
        raise ValueError("nothing to evaluate")
    labels = list(labels)
    X, y = _stack([apply_normalizer(s, norm) for s in segments], labels)
    pred = argmax_lowest(batched_proba(params, X))
    return report_from_predictions(y, pred, labels)


# --- whole-clip prediction ------------------------------------------------------


@dataclass
class ClipPrediction:
    segment_probs: np.ndarray  # (n_segments, G)
    label_index: int
    label: str

    def ranked(self, labels: Sequence[str]) -> list[list[tuple[str, float]]]:
        out = []
        for row in self.segment_probs:
            order = sorted(range(len(row)), key=lambda i: (-row[i], i))
            out.append([(labels[i], float(row[i])) for i in order])
        return out


def majority_vote(segment_probs: np.ndarray) -> int:
    """Most frequent segment argmax; ties go to the higher mean probability,
    then the lower class index."""
    segment_probs = np.atleast_2d(segment_probs)
    votes = np.bincount(argmax_lowest(segment_probs), minlength=segment_probs.shape[1])
    mean = segment_probs.mean(axis=0)
    tied = np.flatnonzero(votes == votes.max())
    return int(min(tied, key=lambda c: (-mean[c], c)))


def predict(params: nn_core.ModelParams, norm: NormStats, clip: AudioClip, labels: Sequence[str],
            config: RunConfig, extractor: Optional[FeatureExtractor] = None) -> ClipPrediction:
    from .audio_io import resample

    extractor = extractor or FeatureExtractor(config.sample_rate, config.frame_len, config.hop,
                                              config.n_mels, config.n_mfcc, config.delta_width)
    clip = resample(clip, config.sample_rate)
    segs = segment(clip, config.seg_seconds)
    X = np.stack([apply_normalizer(extractor(s), norm).x for s in segs])
    probs = batched_proba(params, X)
    idx = majority_vote(probs)
    return ClipPrediction(probs, idx, labels[idx])
