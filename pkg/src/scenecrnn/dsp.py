"""Audio front end: framing, filterbanks, noise-floor tracking and the
two-channel log spectral images fed to the network.

Images are stored channel-first, ``(K, M, T)``: channel, frequency bin, frame.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.ndimage import minimum_filter1d
from scipy.signal import lfilter

LOG_EPS = 1e-10
SPECTRAL_FLOOR = 0.01
NOISE_ALPHA = 0.85
NOISE_WINDOW_S = 1.5
NOISE_BIAS = 1.5

STFI_MAGIC = b"STFI"


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {self.samples.shape}")
        if self.samples.size == 0:
            raise ValueError("samples must be non-empty")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class FrameParams:
    """Framing derived from a frame duration and overlap fraction."""

    frame_len: int
    hop: int
    n_fft: int

    @classmethod
    def from_ms(cls, sample_rate: int, frame_ms: float = 50.0, overlap_fraction: float = 0.5):
        if not 0.0 <= overlap_fraction < 1.0:
            raise ValueError(f"overlap_fraction must be in [0, 1), got {overlap_fraction}")
        frame_len = int(round(frame_ms * sample_rate / 1000.0))
        if frame_len < 1:
            raise ValueError(f"frame of {frame_ms} ms is shorter than one sample")
        hop = max(1, int(round(frame_len * (1.0 - overlap_fraction))))
        n_fft = 1 << (frame_len - 1).bit_length()
        return cls(frame_len, hop, n_fft)

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1


def hann(n: int) -> np.ndarray:
    # periodic Hann
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def n_frames(length: int, frame_len: int, hop: int) -> int:
    return (length - frame_len) // hop + 1


def stft(clip: AudioClip, frame_ms: float = 50.0, overlap_fraction: float = 0.5,
         pad_end: bool = True) -> np.ndarray:
    """Short-time Fourier transform, returning a ``(n_fft//2 + 1, frames)`` complex matrix.

    With ``pad_end`` the clip is zero-padded by ``frame_len - hop`` samples
    (split across both ends) so a clip of ``L`` samples yields ``L // hop``
    frames, e.g. 80 frames for 2 s at 22050 Hz with 50 ms / 50 % framing.
    Without it the frame count is ``(L - frame_len) // hop + 1``.
    """
    fp = FrameParams.from_ms(clip.sample_rate, frame_ms, overlap_fraction)
    x = clip.samples
    if x.size < fp.frame_len:
        raise ValueError(f"clip too short: {x.size} samples < frame length {fp.frame_len}")
    if pad_end:
        pad = fp.frame_len - fp.hop
        x = np.pad(x, (pad // 2, pad - pad // 2))
    count = n_frames(x.size, fp.frame_len, fp.hop)
    frames = np.lib.stride_tricks.sliding_window_view(x, fp.frame_len)[:: fp.hop][:count]
    return np.fft.rfft(frames * hann(fp.frame_len), n=fp.n_fft, axis=1).T


def power_spectrogram(clip: AudioClip, frame_ms: float = 50.0, overlap_fraction: float = 0.5) -> np.ndarray:
    return np.abs(stft(clip, frame_ms, overlap_fraction)) ** 2


# ---------------------------------------------------------------------------
# filterbanks


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def erb_bandwidth(fc):
    """Equivalent rectangular bandwidth (Glasberg & Moore) in Hz."""
    return 24.7 * (4.37 * np.asarray(fc, dtype=np.float64) / 1000.0 + 1.0)


def hz_to_erb_rate(f):
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f, dtype=np.float64))


def erb_rate_to_hz(e):
    return (10.0 ** (np.asarray(e, dtype=np.float64) / 21.4) - 1.0) / 0.00437


@dataclass
class FilterBank:
    weights: np.ndarray  # (M, n_fft // 2 + 1)
    kind: str
    fmin: float
    fmax: float
    sample_rate: int
    n_fft: int
    centers: np.ndarray

    @property
    def n_filters(self) -> int:
        return self.weights.shape[0]

    def apply(self, power: np.ndarray) -> np.ndarray:
        return self.weights @ power


def _ensure_support(weights: np.ndarray, centers: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    # filters narrower than the bin spacing fall between bins; pin them to the nearest bin
    for m in np.flatnonzero(weights.max(axis=1) <= 0.0):
        weights[m, np.argmin(np.abs(freqs - centers[m]))] = 1.0
    return weights


def build_filterbank(kind: str, n_filters: int, sample_rate: int, fmin: float, fmax: float,
                     n_fft: int) -> FilterBank:
    """Mel (triangular) or gammatone (4th-order magnitude response) filterbank over rfft bins."""
    if n_filters < 1:
        raise ValueError(f"need at least one filter, got {n_filters}")
    nyquist = sample_rate / 2.0
    if fmax > nyquist:
        raise ValueError(f"fmax {fmax} Hz exceeds the Nyquist frequency {nyquist} Hz")
    if not 0.0 < fmin < fmax:
        raise ValueError(f"need 0 < fmin < fmax, got fmin={fmin}, fmax={fmax}")
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    kind = kind.lower()
    if kind == "mel":
        edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
        lo, centers, hi = edges[:-2], edges[1:-1], edges[2:]
        rising = (freqs[None, :] - lo[:, None]) / (centers - lo)[:, None]
        falling = (hi[:, None] - freqs[None, :]) / (hi - centers)[:, None]
        weights = np.maximum(0.0, np.minimum(rising, falling))
    elif kind == "gammatone":
        centers = erb_rate_to_hz(np.linspace(hz_to_erb_rate(fmin), hz_to_erb_rate(fmax), n_filters + 2))[1:-1]
        b = 1.019 * erb_bandwidth(centers)
        weights = (1.0 + ((freqs[None, :] - centers[:, None]) / b[:, None]) ** 2) ** -2.0
        weights /= weights.max(axis=1, keepdims=True)
    else:
        raise ValueError(f"unknown filterbank kind {kind!r}; expected 'mel' or 'gammatone'")
    weights = _ensure_support(weights, centers, freqs)
    return FilterBank(weights, kind, float(fmin), float(fmax), int(sample_rate), int(n_fft), centers)


# ---------------------------------------------------------------------------
# spectra


def log_compress(power: np.ndarray) -> np.ndarray:
    return np.log(power + LOG_EPS)


def log_spectrogram(clip: AudioClip, bank: FilterBank, frame_ms: float = 50.0,
                    overlap_fraction: float = 0.5) -> np.ndarray:
    """``log(bank @ |STFT|^2 + 1e-10)``, shape ``(M, T)``."""
    power = power_spectrogram(clip, frame_ms, overlap_fraction)
    _check_bank(bank, clip.sample_rate, power.shape[0])
    return log_compress(bank.apply(power))


def _check_bank(bank: FilterBank, sample_rate: int, n_bins: int):
    if bank.sample_rate != sample_rate or bank.weights.shape[1] != n_bins:
        raise ValueError(
            f"filterbank built for {bank.sample_rate} Hz / {bank.weights.shape[1]} bins, "
            f"clip gives {sample_rate} Hz / {n_bins} bins")


def estimate_noise_floor(power_spec: np.ndarray, hop_seconds: float = 0.025,
                         alpha: float = NOISE_ALPHA, window_seconds: float = NOISE_WINDOW_S,
                         bias: float = NOISE_BIAS) -> np.ndarray:
    """Per-bin stationary noise power from a ``(bins, frames)`` power spectrogram.

    Simplified minimum statistics: each bin's power is smoothed with a
    first-order recursion, the running minimum over a sliding window is
    tracked, and its time average (scaled by ``bias``) is the estimate.
    Short loud events raise the smoothed track only locally, so they
    rarely reach the windowed minimum.
    """
    power_spec = np.asarray(power_spec, dtype=np.float64)
    if power_spec.ndim != 2:
        raise ValueError(f"power_spec must be (bins, frames), got shape {power_spec.shape}")
    if power_spec.shape[1] == 0:
        return np.zeros(power_spec.shape[0])
    zi = alpha * power_spec[:, :1]
    smoothed, _ = lfilter([1.0 - alpha], [1.0, -alpha], power_spec, axis=1, zi=zi)
    width = max(1, int(round(window_seconds / hop_seconds)))
    minima = minimum_filter1d(smoothed, size=width, axis=1, mode="nearest")
    return bias * minima.mean(axis=1)


def subtract_noise(power_spec: np.ndarray, noise: np.ndarray, floor: float = SPECTRAL_FLOOR) -> np.ndarray:
    power_spec = np.asarray(power_spec, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != power_spec.shape[:1]:
        raise ValueError(f"noise shape {noise.shape} does not match {power_spec.shape[0]} bins")
    return np.maximum(power_spec - noise[:, None], floor * power_spec)


# ---------------------------------------------------------------------------
# network input


@dataclass(frozen=True)
class FeatureConfig:
    kind: str = "mel"
    n_filters: int = 64
    sample_rate: int = 22050
    fmin: float = 50.0
    fmax: float | None = None  # Nyquist
    frame_ms: float = 50.0
    overlap_fraction: float = 0.5
    segment_seconds: float = 2.0

    @property
    def frames(self) -> FrameParams:
        return FrameParams.from_ms(self.sample_rate, self.frame_ms, self.overlap_fraction)

    @property
    def hop_seconds(self) -> float:
        return self.frames.hop / self.sample_rate

    def filterbank(self) -> FilterBank:
        fmax = self.sample_rate / 2.0 if self.fmax is None else self.fmax
        return build_filterbank(self.kind, self.n_filters, self.sample_rate, self.fmin, fmax,
                                self.frames.n_fft)

    def key(self) -> str:
        return (f"{self.kind}-M{self.n_filters}-sr{self.sample_rate}-f{self.fmin:g}-{self.fmax}"
                f"-w{self.frame_ms:g}-o{self.overlap_fraction:g}-s{self.segment_seconds:g}"
                f"-a{NOISE_ALPHA:g}-nw{NOISE_WINDOW_S:g}-b{NOISE_BIAS:g}-fl{SPECTRAL_FLOOR:g}")


FEATURE_KINDS = {"logmel": "mel", "loggam": "gammatone"}


def feature_config(name: str, **overrides) -> FeatureConfig:
    if name not in FEATURE_KINDS:
        raise ValueError(f"unknown feature kind {name!r}; expected one of {sorted(FEATURE_KINDS)}")
    return FeatureConfig(kind=FEATURE_KINDS[name], **overrides)


def make_input(clip: AudioClip, bank: FilterBank, noise: np.ndarray | None = None,
               frame_ms: float = 50.0, overlap_fraction: float = 0.5) -> np.ndarray:
    """Two-channel image ``(2, M, T)``: the log spectrogram and its noise-subtracted twin.

    ``noise`` is a per-rfft-bin noise power; when omitted it is estimated
    from the clip itself.
    """
    power = power_spectrogram(clip, frame_ms, overlap_fraction)
    _check_bank(bank, clip.sample_rate, power.shape[0])
    if noise is None:
        hop = FrameParams.from_ms(clip.sample_rate, frame_ms, overlap_fraction).hop
        noise = estimate_noise_floor(power, hop / clip.sample_rate)
    clean = subtract_noise(power, noise)
    return np.stack([log_compress(bank.apply(power)), log_compress(bank.apply(clean))])


def segment(recording: AudioClip, seg_seconds: float = 2.0) -> list[AudioClip]:
    seg_len = int(round(seg_seconds * recording.sample_rate))
    if seg_len < 1 or len(recording) < seg_len:
        raise ValueError(
            f"recording of {len(recording)} samples is shorter than one {seg_seconds} s segment")
    count = len(recording) // seg_len
    return [AudioClip(recording.samples[i * seg_len:(i + 1) * seg_len], recording.sample_rate)
            for i in range(count)]


def recording_inputs(recording: AudioClip, config: FeatureConfig, bank: FilterBank | None = None) -> np.ndarray:
    """Images for every segment of a recording, shape ``(n_segments, 2, M, T)``.

    The noise floor is estimated once over the whole recording, which gives
    the windowed minimum more context than a single segment would.
    """
    if recording.sample_rate != config.sample_rate:
        raise ValueError(f"recording is {recording.sample_rate} Hz, features expect {config.sample_rate} Hz")
    bank = bank or config.filterbank()
    segs = segment(recording, config.segment_seconds)
    powers = [power_spectrogram(s, config.frame_ms, config.overlap_fraction) for s in segs]
    _check_bank(bank, recording.sample_rate, powers[0].shape[0])
    noise = estimate_noise_floor(np.concatenate(powers, axis=1), config.hop_seconds)
    out = []
    for p in powers:
        clean = subtract_noise(p, noise)
        out.append(np.stack([log_compress(bank.apply(p)), log_compress(bank.apply(clean))]))
    return np.stack(out)


# ---------------------------------------------------------------------------
# I/O


def read_wav(path) -> AudioClip:
    """Read 16-bit PCM or 32-bit float WAV; stereo is averaged to mono."""
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported WAV sample type {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioClip(samples, rate)


def write_wav(path, clip: AudioClip, dtype=np.float32):
    data = clip.samples
    if np.dtype(dtype) == np.int16:
        data = np.clip(np.round(data * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = data.astype(dtype)
    wavfile.write(path, clip.sample_rate, data)


def save_image(path, image: np.ndarray):
    """Write a ``(K, M, T)`` image in the STFI cache format (float32, little-endian)."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise ValueError(f"image must be (K, M, T), got shape {image.shape}")
    k, m, t = image.shape
    with open(path, "wb") as fh:
        fh.write(STFI_MAGIC + struct.pack("<III", m, t, k))
        fh.write(np.ascontiguousarray(image, dtype="<f4").tobytes())


def load_image(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != STFI_MAGIC:
        raise ValueError(f"{path}: not an STFI file")
    m, t, k = struct.unpack("<III", raw[4:16])
    data = np.frombuffer(raw, dtype="<f4", offset=16)
    if data.size != m * t * k:
        raise ValueError(f"{path}: expected {m * t * k} values, found {data.size}")
    return data.reshape(k, m, t).astype(np.float32)
