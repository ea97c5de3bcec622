"""Preprocessing front end: bandpass, normalization, STFT/mel, vibration FFT,
thermal resizing and stereo balance.

Tensor layout everywhere is (channels, height, width) with height = frequency
(low bins at row 0) and width = time.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .signal_core import (
    AudioWindow,
    InvalidArgument,
    ThermalFrame,
    VibrationWindow,
    make_windows,
    rms,
)

TENSOR_SIZE = 64
DB_FLOOR = -80.0
MAG_EPS = 1e-10
SILENCE_RMS = 1e-6

BAND_LOW_HZ = 100.0
BAND_HIGH_HZ = 1000.0
STFT_SIZE = 512
STFT_HOP = 256
N_MELS = 64
MEL_FMIN_HZ = 50.0
MEL_FMAX_HZ = 2000.0
VIB_FFT_SIZE = 256
VIB_HOP = 48  # four frames tile a 400-sample (2 s @ 200 Hz) window exactly


class Scale(enum.Enum):
    LINEAR = "linear"
    MEL = "mel"


@dataclass(frozen=True)
class FilterCoeffs:
    sections: np.ndarray  # (n_sections, 5): b0, b1, b2, a1, a2 with a0 == 1
    low_hz: float
    high_hz: float
    sample_rate_hz: float

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots([1.0, s[3], s[4]]) for s in self.sections])


@dataclass(frozen=True)
class Spectrogram:
    mags: np.ndarray  # (n_frames, n_bins)
    bin_hz: float
    hop_s: float
    scale: Scale = Scale.LINEAR

    @property
    def n_frames(self) -> int:
        return self.mags.shape[0]

    @property
    def n_bins(self) -> int:
        return self.mags.shape[1]


# -- filtering ---------------------------------------------------------------

def design_bandpass(low_hz: float, high_hz: float, sample_rate_hz: float) -> FilterCoeffs:
    """4th-order Butterworth bandpass as two biquads (bilinear transform, prewarped edges)."""
    fs = float(sample_rate_hz)
    if not (0 < low_hz < high_hz < fs / 2):
        raise InvalidArgument(
            f"band must satisfy 0 < low < high < fs/2, got ({low_hz}, {high_hz}, {fs})"
        )
    w1 = 2 * fs * math.tan(math.pi * low_hz / fs)
    w2 = 2 * fs * math.tan(math.pi * high_hz / fs)
    bw = w2 - w1
    w0sq = w1 * w2
    # upper-half-plane pole of the 2nd-order lowpass prototype; its conjugate
    # yields the conjugate pole pairs, so one root pair fixes both sections
    proto = complex(-math.sqrt(0.5), math.sqrt(0.5))
    disc = np.sqrt(complex(proto * bw) ** 2 - 4 * w0sq)
    analog = [(proto * bw + disc) / 2, (proto * bw - disc) / 2]
    fs2 = 2 * fs
    digital = [(fs2 + p) / (fs2 - p) for p in analog]
    # analog BP: k = bw^2, zeros {0, 0}, poles analog + conj(analog); two zeros at infinity -> z = -1
    all_poles = analog + [p.conjugate() for p in analog]
    gain = bw ** 2 * fs2 ** 2 / np.prod([fs2 - p for p in all_poles]).real
    section_gain = math.sqrt(abs(gain))
    sections = []
    for i, z in enumerate(digital):
        g = section_gain if i == 0 else math.copysign(section_gain, gain)
        sections.append([g, 0.0, -g, -2.0 * z.real, abs(z) ** 2])
    return FilterCoeffs(np.array(sections), float(low_hz), float(high_hz), fs)


def filter_apply(coeffs: FilterCoeffs, signal) -> np.ndarray:
    """Causal DF2T biquad cascade with zero initial state."""
    x = np.ascontiguousarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidArgument("filter_apply expects a 1-D signal")
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("non-finite input sample")
    return _kernels.biquad_cascade(np.ascontiguousarray(coeffs.sections, dtype=np.float64), x)


def frequency_response(coeffs: FilterCoeffs, freqs_hz) -> np.ndarray:
    """Complex response of the cascade at the given frequencies."""
    zinv = np.exp(-2j * np.pi * np.asarray(freqs_hz, dtype=np.float64) / coeffs.sample_rate_hz)
    h = np.ones_like(zinv)
    for b0, b1, b2, a1, a2 in coeffs.sections:
        h *= (b0 + b1 * zinv + b2 * zinv ** 2) / (1 + a1 * zinv + a2 * zinv ** 2)
    return h


def normalize_peak(signal) -> np.ndarray:
    x = np.asarray(signal, dtype=np.float64)
    if x.size == 0:
        raise InvalidArgument("normalize_peak of an empty signal")
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("non-finite input sample")
    peak = np.max(np.abs(x))
    if peak == 0.0:
        return x.copy()
    return x / peak


# -- spectra -----------------------------------------------------------------

def hann(n: int) -> np.ndarray:
    """Periodic Hann window (the DFT-even variant used for STFT analysis)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(signal, sample_rate_hz: float, fft_size: int = STFT_SIZE, hop: int = STFT_HOP) -> Spectrogram:
    x = np.asarray(signal, dtype=np.float64)
    if x.size < fft_size:
        raise InvalidArgument(f"signal of {x.size} samples is shorter than fft_size {fft_size}")
    frames = np.stack(make_windows(x, fft_size, hop))
    mags = np.abs(np.fft.rfft(frames * hann(fft_size), axis=1))
    return Spectrogram(mags, sample_rate_hz / fft_size, hop / sample_rate_hz, Scale.LINEAR)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_bins: int, bin_hz: float, n_mels: int = N_MELS,
                   fmin_hz: float = MEL_FMIN_HZ, fmax_hz: float = MEL_FMAX_HZ) -> np.ndarray:
    """Triangular filters, shape (n_mels, n_bins), peak weight 1 at each center.

    Each triangle's half-width is at least one bin so that no filter falls
    between bin centers and comes out empty.
    """
    if fmax_hz <= fmin_hz:
        raise InvalidArgument("fmax must exceed fmin")
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), n_mels + 2))
    freqs = np.arange(n_bins) * bin_hz
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        center = edges[m + 1]
        lo = min(edges[m], center - bin_hz)
        hi = max(edges[m + 2], center + bin_hz)
        rising = (freqs - lo) / (center - lo)
        falling = (hi - freqs) / (hi - center)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def mel_project(spec: Spectrogram, n_mels: int = N_MELS, fmin_hz: float = MEL_FMIN_HZ,
                fmax_hz: float = MEL_FMAX_HZ) -> Spectrogram:
    if spec.scale is not Scale.LINEAR:
        raise InvalidArgument("mel_project needs a linear-scale spectrogram")
    if fmax_hz <= fmin_hz:
        raise InvalidArgument("fmax must exceed fmin")
    nyquist = spec.bin_hz * (spec.n_bins - 1)
    if fmax_hz > nyquist + 1e-9:
        raise InvalidArgument(f"fmax {fmax_hz} Hz exceeds Nyquist {nyquist} Hz")
    fb = mel_filterbank(spec.n_bins, spec.bin_hz, n_mels, fmin_hz, fmax_hz)
    return Spectrogram(spec.mags @ fb.T, spec.bin_hz, spec.hop_s, Scale.MEL)


# -- tensors -----------------------------------------------------------------

def _resize_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Bilinear (half-pixel centers, edge-clamped) interpolation weights, (n_out, n_in)."""
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.minimum(np.floor(src).astype(int), n_in - 2)
    frac = src - i0
    rows = np.arange(n_out)
    m[rows, i0] = 1.0 - frac
    m[rows, i0 + 1] += frac
    return m


def resize_bilinear(img: np.ndarray, height: int = TENSOR_SIZE, width: int = TENSOR_SIZE) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return _resize_matrix(height, img.shape[0]) @ img @ _resize_matrix(width, img.shape[1]).T


def mags_to_unit(mags) -> np.ndarray:
    """Magnitude -> dB clipped to [-80, 0] -> affine map onto [0, 1]."""
    db = 20.0 * np.log10(np.asarray(mags, dtype=np.float64) + MAG_EPS)
    return (np.clip(db, DB_FLOOR, 0.0) - DB_FLOOR) / -DB_FLOOR


def spectrogram_to_tensor(spec: Spectrogram) -> np.ndarray:
    """(1, 64, 64) tensor; frequency on the height axis, time on the width axis."""
    if spec.mags.size == 0:
        raise InvalidArgument("empty spectrogram")
    img = mags_to_unit(spec.mags).T
    return np.clip(resize_bilinear(img), 0.0, 1.0)[None].astype(np.float32)


def vibration_fft(win: VibrationWindow, fft_size: int = VIB_FFT_SIZE) -> np.ndarray:
    """Per-axis magnitude spectra, shape (3, fft_size // 2 + 1).

    Each axis uses its most recent ``fft_size`` samples, mean removed and
    Hann windowed.
    """
    if len(win) < fft_size:
        raise InvalidArgument(f"vibration window of {len(win)} samples is shorter than {fft_size}")
    w = hann(fft_size)
    out = []
    for axis in win.axes:
        seg = axis[-fft_size:]
        out.append(np.abs(np.fft.rfft((seg - seg.mean()) * w)))
    return np.stack(out)


def vibration_to_tensor(win: VibrationWindow, fft_size: int = VIB_FFT_SIZE, hop: int = VIB_HOP) -> np.ndarray:
    """(3, 64, 64) tensor: one short-time vibration spectrum grid per axis.

    Frames of ``fft_size`` every ``hop`` samples each go through
    ``vibration_fft``; magnitudes are scaled by the window sum so a sine of
    amplitude A g peaks near A/2.
    """
    if len(win) < fft_size:
        raise InvalidArgument(f"vibration window of {len(win)} samples is shorter than {fft_size}")
    n_frames = (len(win) - fft_size) // hop + 1
    frames = []
    for i in range(n_frames):
        sl = slice(i * hop, i * hop + fft_size)
        sub = VibrationWindow(win.x[sl], win.y[sl], win.z[sl], win.sample_rate_hz, win.start_ts_ms)
        frames.append(vibration_fft(sub, fft_size))
    grid = np.stack(frames, axis=1) / (fft_size / 2)  # (3, frames, bins)
    chans = [np.clip(resize_bilinear(mags_to_unit(g).T), 0.0, 1.0) for g in grid]
    return np.stack(chans).astype(np.float32)


def thermal_to_tensor(frame: ThermalFrame) -> np.ndarray:
    return np.clip(resize_bilinear(frame.pixels), 0.0, 1.0)[None].astype(np.float32)


def channel_balance_db(win: AudioWindow) -> float:
    """20*log10(rms(left)/rms(right)); 0 when either channel is silent."""
    l, r = rms(win.left), rms(win.right)
    if l <= SILENCE_RMS or r <= SILENCE_RMS:
        return 0.0
    return 20.0 * math.log10(l / r)


# -- per-modality pipelines ----------------------------------------------------

_BANDPASS_CACHE: dict[float, FilterCoeffs] = {}


def audio_bandpass(sample_rate_hz: float) -> FilterCoeffs:
    if sample_rate_hz not in _BANDPASS_CACHE:
        _BANDPASS_CACHE[sample_rate_hz] = design_bandpass(BAND_LOW_HZ, BAND_HIGH_HZ, sample_rate_hz)
    return _BANDPASS_CACHE[sample_rate_hz]


def audio_spectrogram(win: AudioWindow, filtered: bool = True) -> Spectrogram:
    """Linear STFT of the mono mix (optionally bandpassed first), unit-normalized
    by the window sum so a full-scale sine peaks near 0.5."""
    if filtered:
        coeffs = audio_bandpass(win.sample_rate_hz)
        mono = 0.5 * (filter_apply(coeffs, win.left) + filter_apply(coeffs, win.right))
    else:
        mono = win.mono
    spec = stft(normalize_peak(mono), win.sample_rate_hz)
    return Spectrogram(spec.mags / (STFT_SIZE / 2), spec.bin_hz, spec.hop_s, spec.scale)


def audio_to_tensor(win: AudioWindow) -> np.ndarray:
    """Bandpass -> mono -> peak normalize -> STFT -> mel(64) -> (1, 64, 64)."""
    return spectrogram_to_tensor(mel_project(audio_spectrogram(win)))


def filtered_balance_db(win: AudioWindow) -> float:
    coeffs = audio_bandpass(win.sample_rate_hz)
    return channel_balance_db(AudioWindow(filter_apply(coeffs, win.left),
                                          filter_apply(coeffs, win.right),
                                          win.sample_rate_hz, win.start_ts_ms))


def prepost_spectrograms(win: AudioWindow) -> tuple[Spectrogram, Spectrogram]:
    """Unfiltered and bandpassed spectrograms of the mono mix under one shared
    gain, so the pair shows what the filter removed."""
    mono = win.mono
    peak = float(np.max(np.abs(mono)))
    gain = 1.0 / peak if peak > 0 else 1.0
    filtered = filter_apply(audio_bandpass(win.sample_rate_hz), mono)
    out = []
    for sig in (mono, filtered):
        spec = stft(sig * gain, win.sample_rate_hz)
        out.append(Spectrogram(spec.mags / (STFT_SIZE / 2), spec.bin_hz, spec.hop_s, spec.scale))
    return out[0], out[1]
