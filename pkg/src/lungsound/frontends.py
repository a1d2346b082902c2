"""Spectrogram front-ends: log-Mel, gammatone, stacked MFCC, and CQT.

Every front-end resamples to 16 kHz upstream, emits exactly 64 frequency rows
on a common 256-sample (16 ms) frame grid, and log-compresses with the same
floor, so downstream patching is front-end-agnostic.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dct, fft, ifft, next_fast_len
from scipy.signal import firwin, lfilter, upfirdn

from .audio import AudioClip, AudioError, ClipSource

TARGET_RATE = 16000
N_BINS = 64
LOG_FLOOR = 1e-10

FRONTENDS = ("logmel", "gamma", "mfcc", "cqt")


@dataclass(frozen=True)
class StftConfig:
    window_length: int = 1024
    hop: int = 256
    fft_length: int = 2048

    def __post_init__(self):
        if not (self.hop <= self.window_length <= self.fft_length):
            raise ValueError("need hop <= window_length <= fft_length")


@dataclass(frozen=True)
class FrontendConfig:
    """Knobs the four front-ends expose; defaults give the standard pipeline."""

    stft: StftConfig = field(default_factory=StftConfig)
    mel_bands: int = 128          # filterbank size before pairwise pooling
    direct_mel: bool = False      # 64 mel bands directly, no pooling stage
    gamma_order: int = 4
    gamma_fmin: float = 50.0
    gamma_fmax: float = 8000.0
    cqt_fmin: float = 32.70
    cqt_bins_per_octave: int = 8
    znorm: bool = False           # per-spectrogram z-normalization after log


@dataclass
class Spectrogram:
    """64 x T real matrix on the common frame grid."""

    values: np.ndarray
    frontend: str
    frame_hop: float = 256.0 / TARGET_RATE
    source: ClipSource = field(default_factory=ClipSource)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.shape[0] != N_BINS:
            raise ValueError(f"spectrogram must have {N_BINS} rows, got {self.values.shape}")
        if self.values.shape[1] < 1:
            raise ValueError("spectrogram must have at least one frame")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("spectrogram contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def _require_16k(clip: AudioClip) -> np.ndarray:
    if clip.sample_rate != TARGET_RATE:
        raise ValueError(f"expected a {TARGET_RATE} Hz clip, got {clip.sample_rate} Hz")
    return np.asarray(clip.samples, dtype=np.float64)


def resample(clip: AudioClip, target: int = TARGET_RATE) -> AudioClip:
    """Band-limited polyphase resampling with a Kaiser-windowed-sinc kernel.

    Cutoff sits at 0.95 * min(native, target)/2.  Input already at the target
    rate passes through bit-identically.
    """
    if len(clip) == 0:
        raise AudioError("cannot resample an empty clip")
    native = clip.sample_rate
    if not (4000 <= native <= 48000):
        raise AudioError(f"native rate {native} Hz outside supported 4-48 kHz")
    if native == target:
        return clip

    g = math.gcd(native, target)
    up, down = target // g, native // g
    upsampled_rate = native * up
    cutoff = 0.95 * min(native, target) / 2.0
    # Half-width a multiple of `down` so the filter delay lands on the output grid.
    half = int(math.ceil(16 * max(up, down) / down)) * down
    taps = firwin(2 * half + 1, cutoff, fs=upsampled_rate, window=("kaiser", 8.6))
    full = upfirdn(taps * up, clip.samples, up=up, down=down)
    offset = half // down
    n_out = int(round(len(clip) * up / down))
    out = full[offset : offset + n_out]
    resampled = AudioClip(out, target, clip.source)
    return resampled


def frame_count(n_samples: int, cfg: StftConfig = StftConfig()) -> int:
    n = max(n_samples, cfg.window_length)
    return 1 + (n - cfg.window_length) // cfg.hop


def _padded(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    if len(x) < cfg.window_length:
        x = np.pad(x, (0, cfg.window_length - len(x)))
    return x


def power_stft(clip: AudioClip, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Magnitude-squared STFT, shape (fft_length/2 + 1, T).

    Frame t covers samples [t*hop, t*hop + window_length); a Hann window is
    applied before the zero-padded FFT.
    """
    x = _padded(_require_16k(clip), cfg)
    n_frames = frame_count(len(x), cfg)
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.window_length)[:: cfg.hop]
    frames = frames[:n_frames]
    window = np.hanning(cfg.window_length)
    spec = np.fft.rfft(frames * window, n=cfg.fft_length, axis=1)
    return (spec.real**2 + spec.imag**2).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_bands: int,
    sr: int = TARGET_RATE,
    n_fft: int = 2048,
    fmin: float = 0.0,
    fmax: float = None,
) -> np.ndarray:
    """Triangular mel filterbank (HTK mel scale), area-normalized, (n_bands, n_fft//2+1)."""
    if fmax is None:
        fmax = sr / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_bands + 2))
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sr)
    fb = np.zeros((n_bands, len(freqs)))
    for i in range(n_bands):
        lo, center, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - freqs) / max(hi - center, 1e-12)
        fb[i] = np.clip(np.minimum(rising, falling), 0.0, None)
        fb[i] *= 2.0 / (hi - lo)  # unit area
    return fb


def mel_band_centers(n_bands: int, fmin: float = 0.0, fmax: float = TARGET_RATE / 2) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_bands + 2))
    return edges[1:-1]


def log_mel(
    power: np.ndarray,
    sr: int = TARGET_RATE,
    n_out: int = N_BINS,
    cfg: FrontendConfig = FrontendConfig(),
) -> np.ndarray:
    """Mel filterbank energies pooled to ``n_out`` rows, then log-compressed.

    The default path applies a 128-band filterbank and average-pools adjacent
    band pairs; ``cfg.direct_mel`` switches to a 64-band filterbank directly.
    """
    if cfg.direct_mel:
        fb = mel_filterbank(n_out, sr=sr, n_fft=2 * (power.shape[0] - 1), fmax=sr / 2)
        banded = fb @ power
    else:
        fb = mel_filterbank(cfg.mel_bands, sr=sr, n_fft=2 * (power.shape[0] - 1), fmax=sr / 2)
        banded = fb @ power
        pool = cfg.mel_bands // n_out
        banded = banded.reshape(n_out, pool, -1).mean(axis=1)
    return np.log(banded + LOG_FLOOR)


def logmel_spec(clip: AudioClip, cfg: FrontendConfig = FrontendConfig()) -> Spectrogram:
    values = log_mel(power_stft(clip, cfg.stft), cfg=cfg)
    return _finish(values, "logmel", clip, cfg)


def erb_rate(f):
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f, dtype=np.float64))


def erb_rate_inverse(e):
    return (10.0 ** (np.asarray(e, dtype=np.float64) / 21.4) - 1.0) / 0.00437


def erb_space(fmin: float, fmax: float, n: int) -> np.ndarray:
    """n center frequencies equally spaced on the ERB-rate scale, endpoints inclusive."""
    centers = erb_rate_inverse(np.linspace(erb_rate(fmin), erb_rate(fmax), n))
    centers[0], centers[-1] = fmin, fmax  # pin endpoints against roundoff
    return centers


def gammatone_spec(clip: AudioClip, cfg: FrontendConfig = FrontendConfig()) -> Spectrogram:
    """Gammatone filterbank energies on the common frame grid.

    Each channel is an order-``gamma_order`` cascade of complex one-pole
    sections (pole radius from the channel's ERB bandwidth), gain-normalized
    to 1 at its center frequency.  Channel energy is the mean |y|^2 over
    1024-sample windows at 256-sample hops, matching the STFT framing.
    """
    x = _padded(_require_16k(clip), cfg.stft)
    sr = TARGET_RATE
    centers = erb_space(cfg.gamma_fmin, cfg.gamma_fmax, N_BINS)
    n_frames = frame_count(len(x), cfg.stft)
    win, hop = cfg.stft.window_length, cfg.stft.hop
    values = np.empty((N_BINS, n_frames))
    for ch, fc in enumerate(centers):
        bw = 1.019 * 24.7 * (1.0 + 0.00437 * fc)  # Glasberg-Moore ERB
        radius = math.exp(-2.0 * math.pi * bw / sr)
        pole = radius * np.exp(2j * math.pi * fc / sr)
        y = x.astype(np.complex128)
        for _ in range(cfg.gamma_order):
            y = lfilter([1.0], [1.0, -pole], y)
        y *= (1.0 - radius) ** cfg.gamma_order  # unit gain at fc
        energy = y.real**2 + y.imag**2
        cum = np.concatenate(([0.0], np.cumsum(energy)))
        starts = np.arange(n_frames) * hop
        values[ch] = (cum[starts + win] - cum[starts]) / win
    return _finish(np.log(values + LOG_FLOOR), "gamma", clip, cfg)


def mfcc_stack(clip: AudioClip, cfg: FrontendConfig = FrontendConfig()) -> Spectrogram:
    """First 64 DCT-II coefficients of the 128-band log-mel frames."""
    power = power_stft(clip, cfg.stft)
    fb = mel_filterbank(cfg.mel_bands, n_fft=cfg.stft.fft_length)
    logmel = np.log(fb @ power + LOG_FLOOR)
    coeffs = dct(logmel, type=2, axis=0, norm="ortho")[:N_BINS]
    return _finish(coeffs, "mfcc", clip, cfg)


def cqt_center_frequencies(cfg: FrontendConfig = FrontendConfig()) -> np.ndarray:
    k = np.arange(N_BINS)
    return cfg.cqt_fmin * 2.0 ** (k / cfg.cqt_bins_per_octave)


def cqt_spec(clip: AudioClip, cfg: FrontendConfig = FrontendConfig()) -> Spectrogram:
    """Constant-Q magnitudes on the fixed 256-hop frame grid.

    Every bin is sampled at every hop ("rectangular" layout): bin k correlates
    the signal with a Hann-windowed complex exponential of length Q*sr/f_k
    centered on each analysis frame.  Centers are exactly geometric from
    ``cqt_fmin``; the top bin (7.68 kHz) stays below Nyquist.
    """
    x = _padded(_require_16k(clip), cfg.stft)
    sr = TARGET_RATE
    centers = cqt_center_frequencies(cfg)
    q = 1.0 / (2.0 ** (1.0 / cfg.cqt_bins_per_octave) - 1.0)
    lengths = [int(round(q * sr / fc)) | 1 for fc in centers]  # odd lengths

    pad = lengths[0] // 2 + 1
    xpad = np.concatenate([np.zeros(pad), x, np.zeros(pad)])
    nfft = next_fast_len(len(xpad))
    spectrum = fft(xpad, nfft)

    n_frames = frame_count(len(x), cfg.stft)
    frame_centers = np.arange(n_frames) * cfg.stft.hop + cfg.stft.window_length // 2
    values = np.empty((N_BINS, n_frames))
    for k, (fc, n_k) in enumerate(zip(centers, lengths)):
        t = np.arange(n_k) - (n_k - 1) / 2.0
        window = np.hanning(n_k)
        kernel = window * np.exp(2j * math.pi * fc * t / sr) / window.sum()
        corr = ifft(spectrum * np.conj(fft(kernel, nfft)), nfft)
        values[k] = np.abs(corr[frame_centers + pad - (n_k - 1) // 2])
    return _finish(np.log(values + LOG_FLOOR), "cqt", clip, cfg)


def _finish(values: np.ndarray, frontend: str, clip: AudioClip, cfg: FrontendConfig) -> Spectrogram:
    if cfg.znorm:
        values = (values - values.mean()) / (values.std() + 1e-8)
    return Spectrogram(values, frontend, source=clip.source)


_DISPATCH = {
    "logmel": logmel_spec,
    "gamma": gammatone_spec,
    "mfcc": mfcc_stack,
    "cqt": cqt_spec,
}


def compute_frontend(
    clip: AudioClip, frontend: str, cfg: FrontendConfig = FrontendConfig()
) -> Spectrogram:
    if frontend not in _DISPATCH:
        raise ValueError(f"unknown frontend {frontend!r}; choose from {FRONTENDS}")
    return _DISPATCH[frontend](clip, cfg)


# Feature cache container: header (magic, version, frontend tag, rows, cols,
# hop) + row-major float32 little-endian payload + trailing payload CRC32.
CACHE_MAGIC = b"LSFC"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sH8sIId")


class CacheError(RuntimeError):
    pass


def save_feature(path, spec: Spectrogram) -> None:
    """Write a feature cache file atomically (tmp file + rename)."""
    path = Path(path)
    rows, cols = spec.values.shape
    payload = np.ascontiguousarray(spec.values, dtype="<f4").tobytes()
    header = _HEADER.pack(
        CACHE_MAGIC, CACHE_VERSION, spec.frontend.encode().ljust(8, b"\0"),
        rows, cols, spec.frame_hop,
    )
    crc = struct.pack("<I", zlib.crc32(payload))
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(header + payload + crc)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_feature(path) -> Spectrogram:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + 4:
        raise CacheError(f"cache file truncated: {path}")
    magic, version, tag, rows, cols, hop = _HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC:
        raise CacheError(f"bad magic in {path}")
    if version != CACHE_VERSION:
        raise CacheError(f"unsupported cache version {version} in {path}")
    if len(raw) != _HEADER.size + rows * cols * 4 + 4:
        raise CacheError(f"cache length mismatch: {path}")
    payload = raw[_HEADER.size : _HEADER.size + rows * cols * 4]
    (crc,) = struct.unpack_from("<I", raw, _HEADER.size + rows * cols * 4)
    if zlib.crc32(payload) != crc:
        raise CacheError(f"cache payload corrupt: {path}")
    values = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()
    return Spectrogram(values, tag.rstrip(b"\0").decode(), frame_hop=hop)


def cache_is_valid(path, frontend: str) -> bool:
    try:
        return load_feature(path).frontend == frontend
    except (CacheError, OSError, ValueError):
        return False
