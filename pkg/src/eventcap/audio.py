"""Acoustic feature extraction.

Raw WAV clips are turned into a T x M matrix of log-Mel energies using a
Hamming window with 50% overlap and a triangular Mel filterbank, then
reduced to a single M-dim vector by temporal (column) averaging.
Alternatively a precomputed 2048-dim acoustic embedding is ingested from an
ACT1 tensor file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensorio import load_tensor, save_tensor

LOG_FLOOR_EPS = 1e-10
LMA_DIM = 64
PRETRAINED_DIM = 2048


class WavFormatError(ValueError):
    """Raised for malformed or unsupported WAV files."""


class AudioError(ValueError):
    """Raised for clips that violate an operation's preconditions."""


@dataclass(frozen=True)
class AudioClip:
    """Mono audio samples in [-1, 1] with their source sample rate."""

    samples: np.ndarray
    sample_rate: int
    clip_id: str = ""

    def __post_init__(self):
        if self.samples.size == 0:
            raise AudioError("clip has no samples")
        if self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("clip contains non-finite samples")


@dataclass(frozen=True)
class LogMelMatrix:
    """T x M matrix of natural-log Mel energies (floored at LOG_FLOOR_EPS)."""

    values: np.ndarray

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FeatureVector:
    """Per-clip acoustic feature: 64-dim averaged log-Mel or 2048-dim pretrained."""

    values: np.ndarray
    kind: str  # "lma" | "pretrained"

    def __post_init__(self):
        if self.kind not in ("lma", "pretrained"):
            raise AudioError(f"unknown feature kind {self.kind!r}")
        if not np.all(np.isfinite(self.values)):
            raise AudioError("feature vector contains non-finite entries")


def _decode_pcm(payload: bytes, bits: int, audio_format: int) -> np.ndarray:
    if audio_format == 1:  # integer PCM
        if bits == 8:
            # 8-bit WAV is unsigned
            raw = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
            return (raw - 128.0) / 128.0
        if bits == 16:
            raw = np.frombuffer(payload, dtype="<i2").astype(np.float64)
            return raw / 32768.0
        if bits == 24:
            if len(payload) % 3:
                raise WavFormatError("24-bit payload length not a multiple of 3")
            as_bytes = np.frombuffer(payload, dtype=np.uint8).reshape(-1, 3)
            raw = (
                as_bytes[:, 0].astype(np.int32)
                | (as_bytes[:, 1].astype(np.int32) << 8)
                | (as_bytes[:, 2].astype(np.int32) << 16)
            )
            raw = np.where(raw >= 1 << 23, raw - (1 << 24), raw).astype(np.float64)
            return raw / float(1 << 23)
        raise WavFormatError(f"unsupported PCM bit depth {bits}")
    if audio_format == 3:  # IEEE float
        if bits != 32:
            raise WavFormatError(f"unsupported float bit depth {bits}")
        return np.frombuffer(payload, dtype="<f4").astype(np.float64)
    raise WavFormatError(f"unsupported codec (audio format {audio_format})")


def load_wav(path: str | Path) -> AudioClip:
    """Load a RIFF/WAVE file as a mono clip normalized to [-1, 1].

    Accepts 8/16/24-bit integer PCM and 32-bit IEEE float. Multi-channel
    audio is downmixed by the arithmetic channel mean.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: malformed RIFF/WAVE header")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (chunk_size,) = struct.unpack("<I", data[pos + 4 : pos + 8])
        body = data[pos + 8 : pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise WavFormatError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif chunk_id == b"data":
            payload = body
        # chunks are word-aligned
        pos += 8 + chunk_size + (chunk_size & 1)

    if fmt is None:
        raise WavFormatError(f"{path}: missing fmt chunk")
    if payload is None:
        raise WavFormatError(f"{path}: missing data chunk")
    audio_format, channels, sample_rate, _, _, bits = fmt
    if channels < 1:
        raise WavFormatError(f"{path}: invalid channel count {channels}")
    if len(payload) == 0:
        raise WavFormatError(f"{path}: zero-length payload")

    samples = _decode_pcm(payload, bits, audio_format)
    if samples.size % channels:
        raise WavFormatError(f"{path}: payload not divisible into {channels} channels")
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    samples = np.clip(samples, -1.0, 1.0)
    return AudioClip(samples=samples, sample_rate=sample_rate, clip_id=path.stem)


def hz_to_mel(f):
    """Mel scale: 2595 * log10(1 + f / 700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular, area-normalized Mel filterbank of shape (n_mels, n_fft//2 + 1).

    Band edges are equally spaced in Mel between 0 Hz and Nyquist; each
    triangle is scaled by 2 / bandwidth so filter areas match.
    """
    n_bins = n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * (sample_rate / n_fft)
    mel_edges = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_edges = mel_to_hz(mel_edges)

    bank = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, center, hi = hz_edges[m], hz_edges[m + 1], hz_edges[m + 2]
        up = (fft_freqs - lo) / (center - lo)
        down = (hi - fft_freqs) / (hi - center)
        bank[m] = np.maximum(0.0, np.minimum(up, down))
        bank[m] *= 2.0 / (hi - lo)
    return bank


def frame_count(n_samples: int, window: int, hop: int) -> int:
    """Number of full hops: floor((N - W) / H) + 1."""
    if n_samples < window:
        return 0
    return (n_samples - window) // hop + 1


def compute_log_mel(
    clip: AudioClip,
    window_ms: float = 96.0,
    overlap: float = 0.5,
    n_mels: int = LMA_DIM,
) -> LogMelMatrix:
    """Hamming-windowed magnitude spectrogram through a Mel filterbank, log-floored.

    Window length is round(window_ms/1000 * sample_rate) samples, hop is half
    the window (50% overlap); trailing partial frames are dropped. FFT size is
    the next power of two >= window length.
    """
    if n_mels < 1:
        raise AudioError(f"n_mels must be >= 1, got {n_mels}")
    window = int(round(window_ms / 1000.0 * clip.sample_rate))
    hop = max(1, int(window * (1.0 - overlap)))
    n = clip.samples.size
    if n < window:
        raise AudioError(
            f"clip of {n} samples is shorter than one {window}-sample window"
        )
    n_frames = frame_count(n, window, hop)
    n_fft = 1
    while n_fft < window:
        n_fft *= 2

    ham = np.hamming(window)
    bank = mel_filterbank(n_mels, n_fft, clip.sample_rate)
    out = np.empty((n_frames, n_mels))
    for t in range(n_frames):
        frame = clip.samples[t * hop : t * hop + window] * ham
        spectrum = np.abs(np.fft.rfft(frame, n_fft))
        out[t] = np.log(bank @ spectrum + LOG_FLOOR_EPS)
    return LogMelMatrix(values=out)


def temporal_average(mel: LogMelMatrix) -> FeatureVector:
    """Column mean over frames: out[m] = (1/T) * sum_t values[t, m]."""
    if mel.frames < 1:
        raise AudioError("log-Mel matrix has no frames")
    return FeatureVector(values=mel.values.mean(axis=0), kind="lma")


def load_pretrained_vector(path: str | Path) -> FeatureVector:
    """Load a rank-1, 2048-dim pretrained acoustic vector from an ACT1 file."""
    arr = load_tensor(path)
    if arr.ndim != 1 or arr.shape[0] != PRETRAINED_DIM:
        raise AudioError(
            f"{path}: expected a rank-1 tensor of length {PRETRAINED_DIM}, "
            f"got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise AudioError(f"{path}: non-finite entries")
    return FeatureVector(values=arr.astype(np.float64), kind="pretrained")


def save_feature_vector(path: str | Path, feature: FeatureVector) -> None:
    save_tensor(path, feature.values)


def load_feature_vector(path: str | Path, kind: str) -> FeatureVector:
    return FeatureVector(values=load_tensor(path).astype(np.float64), kind=kind)
