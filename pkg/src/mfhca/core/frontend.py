"""Waveform loading, segmentation and log-spectrogram extraction."""

from __future__ import annotations

import logging
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import soundfile as sf
from numpy.lib.stride_tricks import sliding_window_view

from .errors import AudioError, DataError

logger = logging.getLogger(__name__)

SUPPORTED_SUBTYPES = {"PCM_16", "FLOAT"}


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = 16000
    segment_seconds: float = 3.0
    frame_ms: float = 40.0
    hop_ms: float = 10.0
    dft_len: int = 800
    n_bins: int = 200
    log_floor: float = 1e-10
    mel_bins: int = 0
    # Frame rate of the external feature sequences (20 ms hop).
    feature_rate_hz: float = 50.0

    @property
    def win_length(self) -> int:
        return int(round(self.frame_ms * self.sample_rate / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000))

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_seconds * self.sample_rate))

    @property
    def feature_stride(self) -> int:
        """Feature frames between the starts of consecutive segments."""
        return int(round(self.segment_seconds * self.feature_rate_hz))

    def frame_count(self, samples: int) -> int:
        return (samples - self.win_length) // self.hop_length + 1

    @property
    def spectrogram_shape(self) -> tuple[int, int]:
        """Frames × bins of one segment's spectrogram."""
        bins = self.mel_bins if self.mel_bins > 0 else self.n_bins
        return (self.frame_count(self.segment_samples), bins)


@dataclass
class AudioSegment:
    samples: np.ndarray
    sample_rate: int = 16000

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class Spectrogram:
    frames: np.ndarray  # T × bins
    frame_ms: float = 40.0
    hop_ms: float = 10.0
    dft_len: int = 800

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.frames.shape[0]), int(self.frames.shape[1]))


def load_wav(path: str | Path, sample_rate: int = 16000) -> AudioSegment:
    """Read a PCM16 or float32 RIFF/WAVE file, averaging stereo channels."""
    path = Path(path)
    try:
        info = sf.info(str(path))
    except (sf.LibsndfileError, RuntimeError) as e:
        raise AudioError(f"{path}: unreadable RIFF/WAVE header (RIFF/fmt chunk): {e}") from e
    if info.format != "WAV":
        raise AudioError(f"{path}: RIFF chunk is not WAVE (format {info.format})")
    if info.subtype not in SUPPORTED_SUBTYPES:
        raise AudioError(f"{path}: fmt chunk encoding {info.subtype} is not PCM16 or float32")
    if info.samplerate != sample_rate:
        raise AudioError(
            f"{path}: sample rate {info.samplerate} Hz differs from configured {sample_rate} Hz"
        )
    try:
        data, _ = sf.read(str(path), dtype="float64", always_2d=True)
    except (sf.LibsndfileError, RuntimeError) as e:
        raise AudioError(f"{path}: corrupt data chunk: {e}") from e
    logger.debug("loaded %s: %d frames, %d channel(s)", path, data.shape[0], data.shape[1])
    return AudioSegment(samples=data.mean(axis=1), sample_rate=sample_rate)


def write_wav(path: str | Path, audio: AudioSegment) -> None:
    """Write samples in [-1, 1] as 16-bit PCM."""
    clipped = np.clip(audio.samples, -1.0, 32767 / 32768)
    sf.write(str(path), clipped, audio.sample_rate, subtype="PCM_16")


def segment(audio: AudioSegment, seg_seconds: float = 3.0) -> list[AudioSegment]:
    """Cut into consecutive non-overlapping windows, zero-padding the last one."""
    if len(audio.samples) == 0:
        raise DataError("cannot segment empty audio")
    width = int(round(seg_seconds * audio.sample_rate))
    count = -(-len(audio.samples) // width)
    padded = np.zeros(count * width, dtype=audio.samples.dtype)
    padded[: len(audio.samples)] = audio.samples
    return [
        AudioSegment(padded[i * width : (i + 1) * width].copy(), audio.sample_rate)
        for i in range(count)
    ]


def dft_magnitude(frames: np.ndarray, dft_len: int, n_bins: int) -> np.ndarray:
    """|DFT| of each row zero-padded to ``dft_len``, first ``n_bins`` bins."""
    return np.abs(np.fft.rfft(frames, n=dft_len, axis=-1))[..., :n_bins]


def log_spectrogram(seg: AudioSegment, config: FrontendConfig | None = None) -> Spectrogram:
    """Hamming-windowed log power spectrogram of one segment."""
    config = config or FrontendConfig(sample_rate=seg.sample_rate)
    win, hop = config.win_length, config.hop_length
    if len(seg.samples) < win:
        raise DataError(
            f"segment of {len(seg.samples)} samples is shorter than one {win}-sample window"
        )
    frames = sliding_window_view(seg.samples, win)[::hop] * np.hamming(win)
    if config.mel_bins > 0:
        power = np.abs(np.fft.rfft(frames, n=config.dft_len, axis=-1)) ** 2
        power = power @ mel_filterbank(config).T
    else:
        power = dft_magnitude(frames, config.dft_len, config.n_bins) ** 2
    log_power = np.log(power + config.log_floor).astype(np.float32)
    return Spectrogram(log_power, config.frame_ms, config.hop_ms, config.dft_len)


def mel_filterbank(config: FrontendConfig) -> np.ndarray:
    """Mel weights (mel_bins × dft_len/2+1); needs the optional ``librosa`` extra."""
    try:
        import librosa
    except ImportError as e:
        raise DataError("mel_bins > 0 requires librosa (pip install 'mfhca[mel]')") from e
    return librosa.filters.mel(sr=config.sample_rate, n_fft=config.dft_len, n_mels=config.mel_bins)


@dataclass(frozen=True)
class FeatureStats:
    """Global scalar mean/std used to standardize spectrograms."""

    mean: float
    std: float

    def __post_init__(self) -> None:
        if not self.std > 0:
            raise DataError(f"spectrogram standard deviation must be positive, got {self.std}")

    @classmethod
    def fit(cls, spectrograms: Iterable[np.ndarray]) -> FeatureStats:
        arrays = [np.asarray(frames, dtype=np.float64) for frames in spectrograms]
        count = sum(a.size for a in arrays)
        if count == 0:
            raise DataError("cannot compute spectrogram statistics from an empty set")
        if min(a.min() for a in arrays) == max(a.max() for a in arrays):
            return cls(mean=float(arrays[0].flat[0]), std=0.0)
        mean = sum(a.sum() for a in arrays) / count
        var = sum(((a - mean) ** 2).sum() for a in arrays) / count
        return cls(mean=float(mean), std=float(np.sqrt(var)))


def normalize_spectrogram(spec: Spectrogram, stats: FeatureStats) -> Spectrogram:
    frames = ((spec.frames - stats.mean) / stats.std).astype(np.float32)
    return Spectrogram(frames, spec.frame_ms, spec.hop_ms, spec.dft_len)
