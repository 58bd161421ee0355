"""Tests for the audio frontend."""

import numpy as np
import pytest
import soundfile as sf

from mfhca.core.errors import AudioError, DataError
from mfhca.core.frontend import (
    AudioSegment,
    FeatureStats,
    FrontendConfig,
    Spectrogram,
    dft_magnitude,
    load_wav,
    log_spectrogram,
    normalize_spectrogram,
    segment,
    write_wav,
)


def _tone(freq, seconds=3.0, rate=16000, amplitude=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return AudioSegment(amplitude * np.sin(2 * np.pi * freq * t), rate)


def test_three_second_segment_shape():
    spec = log_spectrogram(_tone(440.0))
    assert spec.shape == (297, 200)
    assert spec.frames.dtype == np.float32
    assert FrontendConfig().spectrogram_shape == (297, 200)


def test_window_and_hop_lengths():
    config = FrontendConfig()
    assert config.win_length == 640
    assert config.hop_length == 160
    assert config.segment_samples == 48000
    assert config.feature_stride == 150


def test_sine_peaks_at_expected_bin():
    # Bins are 20 Hz apart (16 kHz / 800-point DFT).
    spec = log_spectrogram(_tone(1000.0))
    assert np.all(spec.frames.argmax(axis=1) == 50)


def test_silence_gives_log_floor():
    spec = log_spectrogram(AudioSegment(np.zeros(48000)))
    np.testing.assert_allclose(spec.frames, np.log(1e-10), rtol=1e-6)


def test_segment_pads_last_window():
    audio = AudioSegment(np.ones(16000 * 7))
    pieces = segment(audio, 3.0)
    assert len(pieces) == 3
    assert all(len(p.samples) == 48000 for p in pieces)
    assert pieces[-1].samples[16000:].sum() == 0.0
    assert pieces[-1].samples[:16000].sum() == 16000.0


def test_segment_short_audio_is_one_padded_window():
    pieces = segment(AudioSegment(np.ones(100)), 3.0)
    assert len(pieces) == 1
    assert log_spectrogram(pieces[0]).shape == (297, 200)


def test_segment_rejects_empty_audio():
    with pytest.raises(DataError):
        segment(AudioSegment(np.zeros(0)))


def test_segment_shorter_than_window():
    with pytest.raises(DataError, match="shorter than one"):
        log_spectrogram(AudioSegment(np.zeros(100)))


def test_wav_roundtrip(tmp_path):
    path = tmp_path / "tone.wav"
    tone = _tone(300.0, seconds=0.5)
    write_wav(path, tone)
    loaded = load_wav(path)
    assert loaded.sample_rate == 16000
    np.testing.assert_allclose(loaded.samples, tone.samples, atol=1 / 16384)


def test_stereo_is_averaged(tmp_path):
    path = tmp_path / "stereo.wav"
    left = np.full(1600, 0.5)
    right = np.full(1600, -0.25)
    sf.write(str(path), np.stack([left, right], axis=1), 16000, subtype="FLOAT")
    loaded = load_wav(path)
    np.testing.assert_allclose(loaded.samples, 0.125, atol=1e-6)


def test_wrong_sample_rate(tmp_path):
    path = tmp_path / "8k.wav"
    sf.write(str(path), np.zeros(800), 8000, subtype="PCM_16")
    with pytest.raises(AudioError, match="sample rate"):
        load_wav(path)


def test_unsupported_encoding(tmp_path):
    path = tmp_path / "pcm24.wav"
    sf.write(str(path), np.zeros(800), 16000, subtype="PCM_24")
    with pytest.raises(AudioError, match="PCM16 or float32"):
        load_wav(path)


def test_not_a_wav(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"not a riff header at all")
    with pytest.raises(AudioError):
        load_wav(path)


def test_feature_stats_normalize():
    frames = np.array([[1.0, 3.0], [5.0, 7.0]], dtype=np.float32)
    stats = FeatureStats.fit([frames])
    assert stats.mean == pytest.approx(4.0)
    assert stats.std == pytest.approx(np.sqrt(5.0))
    normalized = normalize_spectrogram(Spectrogram(frames), stats).frames
    assert normalized.mean() == pytest.approx(0.0, abs=1e-6)
    assert normalized.std() == pytest.approx(1.0, abs=1e-6)


def test_feature_stats_rejects_constant_input():
    with pytest.raises(DataError, match="standard deviation"):
        FeatureStats.fit([np.zeros((3, 3))])
    with pytest.raises(DataError):
        FeatureStats.fit([])


def test_frame_count_over_lengths():
    config = FrontendConfig()
    for length in [*range(640, 64001, 97), 64000]:
        spec = log_spectrogram(AudioSegment(np.zeros(length)), config)
        assert spec.shape == ((length - 640) // 160 + 1, 200), length
        assert config.frame_count(length) == spec.shape[0]


def test_white_noise_spectrum_is_flat():
    rng = np.random.default_rng(5)
    power = np.mean(
        [
            np.exp(log_spectrogram(AudioSegment(rng.standard_normal(48000))).frames).mean(axis=0)
            for _ in range(10)
        ],
        axis=0,
    )
    assert power.shape == (200,)
    assert power.max() / power.min() < 2.0


@pytest.mark.parametrize("length", [1, 47999, 48000, 48001, 130_123])
def test_segments_concatenate_back_to_the_input(length):
    samples = np.random.default_rng(length).standard_normal(length)
    pieces = segment(AudioSegment(samples))
    joined = np.concatenate([p.samples for p in pieces])
    assert len(joined) == 48000 * len(pieces)
    np.testing.assert_array_equal(joined[:length], samples)
    assert not joined[length:].any()


def test_impulse_has_flat_magnitude():
    frames = np.zeros((1, 640))
    frames[0, 0] = 1.0
    np.testing.assert_allclose(dft_magnitude(frames, 800, 200), np.ones((1, 200)), rtol=1e-12)


def test_pcm16_full_scale(tmp_path):
    path = tmp_path / "full.wav"
    sf.write(str(path), np.array([32767, -32768, 0], dtype=np.int16), 16000, subtype="PCM_16")
    audio = load_wav(path)
    np.testing.assert_array_equal(audio.samples, [32767 / 32768, -1.0, 0.0])
