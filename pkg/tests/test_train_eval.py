import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genrebilstm import nn_core
from genrebilstm.audio_io import AudioClip
from genrebilstm.config import ConfigError, RunConfig, load_config, parse_config_text
from genrebilstm.errors import (
    ClipTooShort,
    DuplicatePath,
    EmptyManifest,
    GenreTooSmall,
    ParseError,
    UnknownGenre,
)
from genrebilstm.features import FeatureSequence, NormStats, apply_normalizer
from genrebilstm.train_eval import (
    GENRES,
    DatasetManifest,
    ManifestEntry,
    argmax_lowest,
    batched_proba,
    evaluate,
    f1_score,
    largest_remainder,
    load_manifest,
    majority_vote,
    parse_manifest,
    predict,
    report_from_predictions,
    stratified_split,
    train,
    write_manifest,
)

SMALL = RunConfig(hidden=6, layers=1, dense=8, batch=8, epochs=15, patience=4, lr=1e-2,
                  deterministic=True)


def toy_sequences(n_per_class, seed, n_classes=3, T=10, d=4):
    """Class c has mean offset c on every column plus unit noise."""
    rng = np.random.default_rng(seed)
    labels = [f"g{c}" for c in range(n_classes)]
    seqs = []
    for c in range(n_classes):
        for _ in range(n_per_class):
            seqs.append(FeatureSequence(rng.normal(size=(T, d)) * 0.5 + 2.0 * c, labels[c]))
    return seqs, labels


class TestManifest:
    def test_two_rows(self):
        m = parse_manifest("path,genre\na.wav,folk\nb.wav,bangla_rock\n")
        assert m.entries == [ManifestEntry("a.wav", "folk"), ManifestEntry("b.wav", "bangla_rock")]

    def test_unknown_genre_line(self):
        with pytest.raises(UnknownGenre) as err:
            parse_manifest("path,genre\na.wav,folk\nb.wav,jazz\n")
        assert err.value.line == 3

    def test_empty(self, tmp_path):
        (tmp_path / "m.csv").write_text("")
        with pytest.raises(EmptyManifest):
            load_manifest(tmp_path / "m.csv")
        with pytest.raises(EmptyManifest):
            parse_manifest("path,genre\n")

    def test_duplicate(self):
        with pytest.raises(DuplicatePath):
            parse_manifest("path,genre\na.wav,folk\na.wav,folk\n")

    def test_comma_in_path(self):
        with pytest.raises(ParseError) as err:
            parse_manifest("path,genre\na,b.wav,folk\n")
        assert err.value.line == 2

    def test_bad_header(self):
        with pytest.raises(ParseError):
            parse_manifest("file,label\na.wav,folk\n")

    def test_roundtrip(self, tmp_path):
        m = DatasetManifest([ManifestEntry(f"x/{i}.wav", GENRES[i % 10]) for i in range(20)])
        write_manifest(tmp_path / "m.csv", m)
        assert load_manifest(tmp_path / "m.csv").entries == m.entries

    def test_custom_label_set(self):
        m = parse_manifest("path,genre\na.wav,jazz\n", ["jazz", "blues"])
        assert m.label_index("jazz") == 0


def ten_by_ten():
    return DatasetManifest([ManifestEntry(f"{g}/{k}.wav", g) for g in GENRES for k in range(10)])


class TestSplit:
    def test_ten_by_ten(self):
        split = stratified_split(ten_by_ten(), 42)
        assert (len(split.train), len(split.val), len(split.test)) == (70, 15, 15)
        m = ten_by_ten()
        for g in GENRES:
            counts = tuple(sum(m.entries[i].genre == g for i in split.part(p))
                           for p in ("train", "val", "test"))
            assert counts in ((7, 1, 2), (7, 2, 1))

    def test_deterministic(self):
        a, b = stratified_split(ten_by_ten(), 7), stratified_split(ten_by_ten(), 7)
        assert a == b and a.digest() == b.digest()
        assert stratified_split(ten_by_ten(), 8).digest() != a.digest()

    def test_genre_too_small(self):
        m = DatasetManifest([ManifestEntry("a", "folk"), ManifestEntry("b", "folk")])
        with pytest.raises(GenreTooSmall):
            stratified_split(m, 1)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 200), st.integers(0, 9))
    def test_largest_remainder_sums(self, n, offset):
        counts = largest_remainder(n, (0.7, 0.15, 0.15), offset)
        assert sum(counts) == n
        if n >= 3:
            assert min(counts) >= 1
        if n >= 7:
            assert all(abs(c - n * f) < 1 for c, f in zip(counts, (0.7, 0.15, 0.15)))

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(3, 12), min_size=1, max_size=10), st.integers(0, 1000))
    def test_partition_property(self, sizes, seed):
        entries = [ManifestEntry(f"{GENRES[g]}/{k}", GENRES[g]) for g, n in enumerate(sizes) for k in range(n)]
        split = stratified_split(DatasetManifest(entries), seed)
        everything = split.train + split.val + split.test
        assert sorted(everything) == list(range(len(entries)))
        for g, n in enumerate(sizes):
            # every genre with >= 3 recordings lands in every partition
            for part in ("train", "val", "test"):
                assert any(entries[i].genre == GENRES[g] for i in split.part(part))


class TestMetrics:
    def test_lalon_row(self):
        assert round(f1_score(0.85, 0.98), 2) == 0.91
        assert f1_score(0.85, 0.98) == pytest.approx(2 * 0.85 * 0.98 / 1.83, rel=1e-15)

    def test_perfect(self):
        y = [0, 1, 2, 2, 1]
        r = report_from_predictions(y, y, ["a", "b", "c"])
        assert np.array_equal(r.confusion, np.diag([1, 2, 2]))
        assert r.accuracy == 1.0 and np.all(r.f1 == 1.0)

    def test_never_predicted(self):
        r = report_from_predictions([0, 1, 2], [0, 1, 1], ["a", "b", "c"])
        assert r.precision[2] == 0.0 and r.recall[2] == 0.0 and r.f1[2] == 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=80))
    def test_report_invariants(self, pairs):
        y_true, y_pred = map(np.array, zip(*pairs))
        r = report_from_predictions(y_true, y_pred, list("abcde"))
        assert r.accuracy == pytest.approx(np.mean(y_true == y_pred))
        assert np.array_equal(r.confusion.sum(axis=1), r.support)
        micro_recall = np.trace(r.confusion) / r.confusion.sum()
        assert micro_recall == pytest.approx(r.accuracy)
        for row in csv.DictReader(io.StringIO(r.report_csv())):
            p, rc, f = float(row["precision"]), float(row["recall"]), float(row["f1"])
            assert f == pytest.approx(f1_score(p, rc), abs=2e-6)

    def test_confusion_csv_header(self):
        r = report_from_predictions([0, 1], [1, 1], ["a", "b"])
        lines = r.confusion_csv().splitlines()
        assert lines[0].split(",")[1:] == ["a", "b"]
        assert lines[1] == "a,0,1"


class TestVoting:
    def test_single_segment(self):
        assert majority_vote(np.array([[0.1, 0.7, 0.2]])) == 1

    def test_two_to_one(self):
        p = np.array([[0.9, 0.1], [0.6, 0.4], [0.2, 0.8]])
        assert majority_vote(p) == 0

    def test_tie_uses_mean_probability(self):
        # one vote each; mean probabilities 0.6 and 0.4
        assert majority_vote(np.array([[0.8, 0.2], [0.4, 0.6]])) == 0
        assert majority_vote(np.array([[0.6, 0.4], [0.2, 0.8]])) == 1

    def test_argmax_lowest(self):
        assert argmax_lowest(np.array([[0.5, 0.5], [0.2, 0.8]])).tolist() == [0, 1]


class TestTrain:
    def test_learns_toy_problem(self):
        tr, labels = toy_sequences(12, 0)
        va, _ = toy_sequences(4, 1)
        result = train(tr, va, labels, SMALL)
        report = evaluate(result.params, result.norm, va, labels)
        assert report.accuracy == 1.0
        assert len(result.history) >= 1

    def test_history_file_and_best_params(self, tmp_path):
        tr, labels = toy_sequences(6, 2)
        va, _ = toy_sequences(3, 3)
        cfg = SMALL.with_overrides({"min_delta": 1e6, "epochs": 30, "patience": 3})
        result = train(tr, va, labels, cfg, history_path=tmp_path / "h.csv")
        h = result.history
        # nothing can beat the first epoch by min_delta, so patience runs out
        assert h.best_epoch == 1 and len(h) == 1 + cfg.patience
        text = (tmp_path / "h.csv").read_text()
        assert text == h.to_csv()
        assert text.splitlines()[0] == "epoch,train_loss,train_acc,val_loss,val_acc,wall_seconds"
        assert len(text.splitlines()) == len(h) + 1
        Xva = np.stack([apply_normalizer(s, result.norm).x for s in va])
        yva = np.array([labels.index(s.label) for s in va])
        loss = nn_core.cross_entropy(batched_proba(result.params, Xva), yva)
        assert loss == pytest.approx(h.records[h.best_epoch - 1].val_loss, rel=1e-12)

    def test_normalizer_from_train_only(self):
        tr, labels = toy_sequences(5, 4)
        va, _ = toy_sequences(5, 5)
        for s in va:
            s.x = s.x + 100.0
        result = train(tr, va, labels, SMALL.with_overrides({"epochs": 1}))
        stacked = np.vstack([s.x for s in tr])
        np.testing.assert_allclose(result.norm.mu, stacked.mean(axis=0), rtol=1e-12)

    def test_deterministic(self):
        tr, labels = toy_sequences(5, 6)
        va, _ = toy_sequences(2, 7)
        cfg = SMALL.with_overrides({"epochs": 3})
        a, b = train(tr, va, labels, cfg), train(tr, va, labels, cfg)
        assert a.history.to_csv() == b.history.to_csv()
        assert all(np.array_equal(a.params.tensors[k], b.params.tensors[k]) for k in a.params.tensors)

    def test_frame_mode_trains(self):
        tr, labels = toy_sequences(6, 8)
        result = train(tr, tr, labels, SMALL.with_overrides({"mode": "frame", "epochs": 5}))
        assert evaluate(result.params, result.norm, tr, labels).accuracy == 1.0

    def test_evaluate_is_pure(self):
        tr, labels = toy_sequences(4, 9)
        result = train(tr, tr, labels, SMALL.with_overrides({"epochs": 1}))
        a = evaluate(result.params, result.norm, tr, labels)
        b = evaluate(result.params, result.norm, tr, labels)
        assert a.report_csv() == b.report_csv() and np.array_equal(a.confusion, b.confusion)


class TestPredict:
    def _model(self):
        spec = nn_core.ModelSpec(input_dim=38, hidden=4, n_layers=1, dense=4, n_classes=2)
        params = nn_core.init_params(spec, np.random.default_rng(0))
        return params, NormStats(np.zeros(38), np.ones(38))

    def test_segments_and_vote(self):
        params, norm = self._model()
        clip = AudioClip(0.1 * np.sin(np.arange(22050 * 11) * 0.05), 22050)
        out = predict(params, norm, clip, ["a", "b"], RunConfig())
        assert out.segment_probs.shape == (2, 2)
        np.testing.assert_allclose(out.segment_probs.sum(axis=1), 1.0, atol=1e-12)
        assert out.label_index == majority_vote(out.segment_probs)
        ranked = out.ranked(["a", "b"])
        assert ranked[0][0][1] >= ranked[0][1][1]

    def test_resamples_input(self):
        params, norm = self._model()
        clip = AudioClip(np.zeros(44100 * 5), 44100)
        assert predict(params, norm, clip, ["a", "b"], RunConfig()).segment_probs.shape == (1, 2)

    def test_too_short(self):
        params, norm = self._model()
        with pytest.raises(ClipTooShort):
            predict(params, norm, AudioClip(np.zeros(1000), 22050), ["a", "b"], RunConfig())


class TestConfig:
    def test_defaults_validate(self):
        cfg = RunConfig().validate()
        assert cfg.hidden == 64 and cfg.fractions == (0.70, 0.15, 0.15)

    def test_text_roundtrip(self, tmp_path):
        cfg = RunConfig(seed=7, mode="frame", deterministic=True, fractions=(0.6, 0.2, 0.2))
        (tmp_path / "c").write_text(cfg.to_text())
        assert load_config(tmp_path / "c") == cfg

    def test_dict_roundtrip(self):
        cfg = RunConfig(lr=0.5)
        assert RunConfig.from_dict(cfg.to_dict()) == cfg

    def test_comments_and_overrides(self, tmp_path):
        (tmp_path / "c").write_text("# comment\nhidden = 16  # inline\n\nepochs=3\n")
        cfg = load_config(tmp_path / "c", {"epochs": "5"})
        assert cfg.hidden == 16 and cfg.epochs == 5

    @pytest.mark.parametrize("bad", [{"hidden": "0"}, {"mode": "chunk"}, {"nope": "1"},
                                     {"fractions": "0.5,0.5,0.5"}, {"lr": "fast"},
                                     {"deterministic": "maybe"}, {"n_mfcc": "50"}])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            load_config(None, bad)

    def test_parse_error(self):
        with pytest.raises(ConfigError):
            parse_config_text("hidden 3")


def test_uniform_probs_loss_is_log_g():
    assert nn_core.cross_entropy(np.full((1, 10), 0.1), [3]) == pytest.approx(math.log(10))
