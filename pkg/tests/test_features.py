import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genrebilstm.audio_io import AudioClip
from genrebilstm.errors import DegenerateBand, FeatureFileError, FrameLongerThanClip
from genrebilstm.features import (
    FeatureExtractor,
    FeatureSequence,
    NormStats,
    apply_normalizer,
    assemble,
    aux_descriptors,
    build_mel_filterbank,
    chroma,
    chroma_map,
    delta,
    dct_matrix,
    fit_normalizer,
    frame_signal,
    hz_to_mel,
    load_features,
    load_norm_stats,
    mel_to_hz,
    mfcc,
    read_matrix,
    save_features,
    save_norm_stats,
    stft_power,
    write_matrix,
)
from oracles import (
    chroma_argmax_oracle,
    direct_dct,
    direct_power,
    explicit_filterbank,
    hann_periodic,
    pitch_class,
)

SR = 22050
N_SEG = 110250


def tone(freq, n=N_SEG, amp=0.5, sr=SR):
    return AudioClip(amp * np.sin(2 * np.pi * freq * np.arange(n) / sr), sr)


def one_frame(x, sr=SR):
    return frame_signal(AudioClip(np.asarray(x, dtype=float), sr), len(x), len(x))


class TestFraming:
    def test_ramp(self):
        fm = frame_signal(AudioClip(np.arange(10.0), 8), 4, 2)
        assert fm.frames.tolist() == [[0, 1, 2, 3], [2, 3, 4, 5], [4, 5, 6, 7], [6, 7, 8, 9]]

    def test_segment_has_212_frames(self):
        assert frame_signal(AudioClip(np.zeros(N_SEG), SR)).n_frames == 212

    def test_frame_longer_than_clip(self):
        with pytest.raises(FrameLongerThanClip):
            frame_signal(AudioClip(np.zeros(100), SR), 2048, 512)


class TestStft:
    def test_silence(self):
        assert not stft_power(frame_signal(AudioClip(np.zeros(4096), SR))).any()

    def test_bin_centred_sine_matches_direct_dft(self):
        n = 2048
        x = 0.7 * np.sin(2 * np.pi * 32 * np.arange(n) / n + 0.4)
        got = stft_power(one_frame(x))[0]
        want = direct_power(x[None, :], n)[0]
        assert int(np.argmax(got)) == 32
        live = want > 1e-12 * want.max()
        np.testing.assert_allclose(got[live], want[live], rtol=1e-9)
        # periodic Hann leaks a sinusoid into exactly its two neighbours
        assert np.all(got[~live] < 1e-12 * want.max())
        assert set(np.flatnonzero(live)) == {31, 32, 33}

    def test_dc_frame(self):
        # periodic Hann of length 2048 sums to 1024; its DFT also puts
        # a quarter of the peak amplitude into bin 1
        assert hann_periodic(2048).sum() == pytest.approx(1024.0, abs=1e-9)
        got = stft_power(one_frame(np.full(2048, 0.25)))[0]
        assert got[0] == pytest.approx(65536.0, rel=1e-12)
        assert got[1] == pytest.approx(16384.0, rel=1e-12)
        assert np.all(got[2:] < 1e-12)


class TestMelBank:
    def test_matches_explicit_construction(self):
        bank = build_mel_filterbank(40, 2048, SR, 0.0, 11025.0)
        assert bank.weights.shape == (40, 1025)
        assert np.all(bank.weights.sum(axis=1) > 0)
        np.testing.assert_allclose(bank.weights, explicit_filterbank(40, 2048, SR), atol=1e-15)
        assert np.all(bank.weights.max(axis=1) == 1.0)

    def test_mel_scale(self):
        assert float(hz_to_mel(700.0)) == pytest.approx(781.1728387480312, rel=1e-15)
        assert float(mel_to_hz(hz_to_mel(1234.5))) == pytest.approx(1234.5, rel=1e-12)

    def test_fmin_equals_fmax(self):
        with pytest.raises(ValueError):
            build_mel_filterbank(40, 2048, SR, 500.0, 500.0)

    def test_too_many_bands(self):
        with pytest.raises(DegenerateBand):
            build_mel_filterbank(128, 256, SR)


class TestMfcc:
    def test_dct_is_orthonormal(self):
        D = dct_matrix(40, 40)
        np.testing.assert_allclose(D @ D.T, np.eye(40), atol=1e-12)
        row = np.random.default_rng(1).normal(size=40)
        np.testing.assert_allclose(dct_matrix(40, 13) @ row, direct_dct(row, 13), atol=1e-12)

    def test_flat_mel_energies(self):
        bank = build_mel_filterbank()
        c = 3.0
        # a spectrum whose mel energies are all c: solve per filter on its peak bin only
        spec = np.zeros((1, 1025))
        for m in range(40):
            spec[0, int(np.argmax(bank.weights[m]))] = c
        assert np.allclose(spec @ bank.weights.T, c)
        out = mfcc(spec, bank)[0]
        assert out[0] == pytest.approx(math.sqrt(40) * math.log(c + 1e-10), rel=1e-12)
        assert np.all(np.abs(out[1:]) < 1e-12)

    def test_silence(self):
        seq = assemble(AudioClip(np.zeros(N_SEG), SR))
        assert seq.x.shape == (212, 38)
        assert np.allclose(seq.x[:, 0], math.sqrt(40) * math.log(1e-10), rtol=1e-12)
        assert np.all(np.abs(seq.x[:, 1:13]) < 1e-9)
        assert not seq.x[:, 13:].any()

    def test_sine_matches_oracle(self):
        # oracle works on a 1 s excerpt to keep the O(N^2) DFT cheap
        clip = tone(1000.0, n=SR)
        bank = build_mel_filterbank()
        got = mfcc(stft_power(frame_signal(clip)), bank)
        from oracles import mfcc_oracle
        want, _ = mfcc_oracle(clip.samples)
        np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-9)


class TestDelta:
    def test_constant(self):
        assert not delta(np.full((20, 3), 7.0)).any()

    def test_ramp_interior(self):
        t = np.arange(30.0)[:, None]
        d = delta(2.5 * t)
        np.testing.assert_allclose(d[4:-4, 0], 2.5, rtol=1e-14)

    def test_single_frame(self):
        assert not delta(np.array([[1.0, -2.0]])).any()

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 40), st.integers(1, 5), st.floats(-100, 100))
    def test_constant_property(self, T, k, value):
        assert not delta(np.full((T, k), value)).any()


class TestChroma:
    def test_bin_mapping_agrees_with_oracle(self):
        classes = chroma_map(2048, SR)
        assert classes[0] == -1
        assert [pitch_class(k * SR / 2048) for k in range(1, 1025)] == classes[1:].tolist()

    def test_a440(self):
        seq = assemble(tone(440.0))
        assert np.all(np.argmax(seq.x[:, 26:38], axis=1) == 9)

    def test_c4(self):
        spec = stft_power(frame_signal(tone(261.63)))
        assert np.all(np.argmax(chroma(spec, SR), axis=1) == 0)

    def test_silence(self):
        assert not chroma(np.zeros((3, 1025)), SR).any()

    @settings(max_examples=15, deadline=None)
    @given(st.floats(0.01, 1.0), st.integers(0, 2 ** 16))
    def test_amplitude_invariance(self, scale, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1, 1, 8192) + np.sin(2 * np.pi * rng.uniform(100, 4000) * np.arange(8192) / SR)
        x = x / np.max(np.abs(x))
        base = np.argmax(chroma(stft_power(frame_signal(AudioClip(x, SR))), SR), axis=1)
        scaled = np.argmax(chroma(stft_power(frame_signal(AudioClip(scale * x, SR))), SR), axis=1)
        assert np.array_equal(base, scaled)

    def test_matches_argmax_oracle(self):
        clip = tone(523.25, n=8192)
        power = direct_power(np.array([clip.samples[i:i + 2048] for i in range(0, 6145, 512)]))
        want = chroma_argmax_oracle(power)
        got = np.argmax(chroma(stft_power(frame_signal(clip)), SR), axis=1)
        assert np.array_equal(got, want)


class TestAux:
    def test_alternating_zcr(self):
        x = np.tile([1.0, -1.0], 1024)
        fm = one_frame(x)
        assert aux_descriptors(fm, stft_power(fm))[0, 0] == 1.0

    def test_bin_centred_tone(self):
        n = 2048
        x = np.sin(2 * np.pi * 32 * np.arange(n) / n)
        fm = one_frame(x)
        zcr, centroid, rolloff, bandwidth, rms = aux_descriptors(fm, stft_power(fm))[0]
        f32 = 32 * SR / n
        assert abs(centroid - f32) < SR / n
        assert bandwidth < SR / n
        assert rms == pytest.approx(math.sqrt(0.5), rel=1e-9)

    def test_silence(self):
        fm = one_frame(np.zeros(2048))
        assert not aux_descriptors(fm, stft_power(fm)).any()


class TestAssemble:
    def test_shape_and_determinism(self):
        x = np.random.default_rng(3).uniform(-1, 1, N_SEG)
        a = assemble(AudioClip(x, SR), "rock")
        b = assemble(AudioClip(x.copy(), SR), "rock")
        assert a.x.shape == (212, 38) and a.aux.shape == (212, 5)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.aux, b.aux)

    def test_finite_for_extremes(self):
        for x in (np.ones(N_SEG), -np.ones(N_SEG), np.tile([1.0, -1.0], N_SEG // 2 + 1)[:N_SEG]):
            assert np.all(np.isfinite(assemble(AudioClip(x, SR)).x))

    def test_extra_hook(self):
        seq = assemble(AudioClip(np.zeros(N_SEG), SR), extra=lambda clip, fm: np.ones((fm.n_frames, 3)))
        assert seq.x.shape == (212, 41)
        assert np.all(seq.x[:, 38:] == 1.0)

    def test_extra_hook_wrong_rows(self):
        with pytest.raises(ValueError):
            assemble(AudioClip(np.zeros(N_SEG), SR), extra=lambda clip, fm: np.ones((3, 1)))

    def test_wrong_rate(self):
        with pytest.raises(ValueError):
            FeatureExtractor(SR)(AudioClip(np.zeros(N_SEG), 16000))


class TestNormalizer:
    def test_constant_dataset(self):
        seqs = [FeatureSequence(np.full((4, 3), 2.0)) for _ in range(3)]
        stats = fit_normalizer(seqs)
        assert not apply_normalizer(seqs[0], stats).x.any()

    def test_two_values(self):
        seqs = [FeatureSequence(np.zeros((1, 1))), FeatureSequence(np.full((1, 1), 2.0))]
        stats = fit_normalizer(seqs)
        assert stats.mu[0] == 1.0 and stats.sigma[0] == 1.0
        assert [apply_normalizer(s, stats).x[0, 0] for s in seqs] == [-1.0, 1.0]

    def test_refit_is_standard(self):
        rng = np.random.default_rng(5)
        seqs = [FeatureSequence(rng.normal(3, 7, size=(20, 4))) for _ in range(5)]
        stats = fit_normalizer(seqs)
        again = fit_normalizer([apply_normalizer(s, stats) for s in seqs])
        np.testing.assert_allclose(again.mu, 0, atol=1e-6)
        np.testing.assert_allclose(again.sigma, 1, atol=1e-6)


class TestContainer:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        seq = FeatureSequence(rng.normal(size=(5, 38)).astype(np.float32).astype(float),
                              "rock", "a.wav", rng.normal(size=(5, 5)).astype(np.float32).astype(float))
        save_features(tmp_path / "s.bmfx", seq, "2026-01-01T00:00:00Z")
        back = load_features(tmp_path / "s.bmfx")
        assert np.array_equal(back.x, seq.x) and np.array_equal(back.aux, seq.aux)
        assert back.label == "rock" and back.source == "a.wav"
        raw = (tmp_path / "s.bmfx").read_bytes()
        assert raw.startswith(b"BMFX1\n")
        _, meta = read_matrix(tmp_path / "s.bmfx")
        assert {"T", "d", "label", "source", "created"} <= set(meta)

    def test_payload_is_little_endian_f32(self, tmp_path):
        write_matrix(tmp_path / "m", np.array([[1.0, -2.0]]), {})
        assert (tmp_path / "m").read_bytes()[-8:] == np.array([1.0, -2.0], dtype="<f4").tobytes()

    def test_truncated(self, tmp_path):
        write_matrix(tmp_path / "m", np.ones((3, 3)), {})
        data = (tmp_path / "m").read_bytes()
        (tmp_path / "m").write_bytes(data[:-2])
        with pytest.raises(FeatureFileError):
            read_matrix(tmp_path / "m")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "m").write_bytes(b"NOPE!!" + b"\x00" * 10)
        with pytest.raises(FeatureFileError):
            read_matrix(tmp_path / "m")

    def test_norm_stats(self, tmp_path):
        stats = NormStats(np.array([0.5, 1.5]), np.array([2.0, 0.25]))
        save_norm_stats(tmp_path / "n.bmfx", stats)
        back = load_norm_stats(tmp_path / "n.bmfx")
        assert np.array_equal(back.mu, stats.mu) and np.array_equal(back.sigma, stats.sigma)
        with pytest.raises(FeatureFileError):
            write_matrix(tmp_path / "x", np.ones((2, 2)), {})
            load_norm_stats(tmp_path / "x")
