"""Linear-frequency cepstral features and their rendering as a colour image."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
import scipy.fft

from .tensor import DTYPE

ENERGY_FLOOR = 1e-10
LUT_FILE = "viridis_v1.lut"


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 1:
            raise ValueError(f"audio must be mono (1-D), got shape {s.shape}")
        if s.size == 0:
            raise ValueError("audio signal is empty")
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")


@dataclass(frozen=True)
class LfccParams:
    frame_len_ms: float = 25.0
    hop_ms: float = 10.0
    pre_emphasis: float = 0.97
    fft_size: int | None = None  # next power of two >= frame length
    num_filters: int = 40
    num_ceps: int = 40
    use_dct: bool = True

    def __post_init__(self):
        if not 0 < self.hop_ms <= self.frame_len_ms:
            raise ValueError("need 0 < hop_ms <= frame_len_ms")
        if not 0 <= self.pre_emphasis < 1:
            raise ValueError("pre_emphasis must be in [0, 1)")
        if not 1 <= self.num_ceps <= self.num_filters:
            raise ValueError("need 1 <= num_ceps <= num_filters")

    def frame_samples(self, rate: int) -> tuple[int, int]:
        return (int(round(self.frame_len_ms * rate / 1000)),
                int(round(self.hop_ms * rate / 1000)))

    def nfft(self, rate: int) -> int:
        frame, _ = self.frame_samples(rate)
        if self.fft_size is None:
            return 1 << max(0, (frame - 1).bit_length())
        if self.fft_size < frame or self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two >= {frame}")
        return self.fft_size


def num_frames(n: int, frame: int, hop: int) -> int:
    if n < frame:
        raise ValueError(f"signal of {n} samples is shorter than one frame ({frame})")
    return 1 + (n - frame) // hop


def frame_signal(x: np.ndarray, frame: int, hop: int) -> np.ndarray:
    count = num_frames(len(x), frame, hop)
    idx = np.arange(frame)[None, :] + hop * np.arange(count)[:, None]
    return x[idx]


def filter_centers(num_filters: int, sample_rate: int) -> np.ndarray:
    """Centre frequencies (Hz): equally spaced over (0, sample_rate / 2)."""
    edges = np.linspace(0.0, sample_rate / 2, num_filters + 2)
    return edges[1:-1]


def linear_filterbank(num_filters: int, nfft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters [num_filters, nfft // 2 + 1] on a linear frequency axis.

    Filter k rises from edge k to its centre at edge k + 1 and falls to zero at
    edge k + 2, with edges equally spaced from 0 to Nyquist.
    """
    edges = np.linspace(0.0, sample_rate / 2, num_filters + 2)
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.clip(np.minimum(rising, falling), 0.0, None)


def lfcc_features(signal: AudioSignal, params: LfccParams = LfccParams()) -> np.ndarray:
    """LFCC matrix [frames, num_ceps] (log filterbank energies if ``use_dct`` is off)."""
    rate = signal.sample_rate
    x = np.asarray(signal.samples, dtype=np.float64)
    frame, hop = params.frame_samples(rate)
    nfft = params.nfft(rate)

    emphasized = np.append(x[0], x[1:] - params.pre_emphasis * x[:-1])
    frames = frame_signal(emphasized, frame, hop) * np.hamming(frame)
    power = np.abs(np.fft.rfft(frames, n=nfft, axis=1)) ** 2
    energies = power @ linear_filterbank(params.num_filters, nfft, rate).T
    log_e = np.log(energies + ENERGY_FLOOR)
    if not params.use_dct:
        return log_e.astype(DTYPE)
    ceps = scipy.fft.dct(log_e, type=2, norm="ortho", axis=1)[:, :params.num_ceps]
    return ceps.astype(DTYPE)


@lru_cache(maxsize=1)
def load_colormap() -> np.ndarray:
    """The shipped 256-entry RGB table, [256, 3] in [0, 1]."""
    text = resources.files("icanet").joinpath("data", LUT_FILE).read_text()
    lut = np.array([[float(v) for v in line.split()] for line in text.splitlines() if line.strip()])
    if lut.shape != (256, 3):
        raise ValueError(f"colormap table must be 256x3, got {lut.shape}")
    lut.setflags(write=False)
    return lut


def normalize(features: np.ndarray) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    lo, hi = f.min(), f.max()
    if hi == lo:
        return np.full(f.shape, 0.5)
    return (f - lo) / (hi - lo)


def render_spectrogram(features, size: int = 224, colormap: np.ndarray | None = None) -> np.ndarray:
    """Render [T, F] features as a [3, size, size] image.

    Time runs along x, feature index along y with index 0 on the bottom row.
    Resampling is nearest-neighbour; normalised values pick LUT entries by
    rounding ``v * 255``.
    """
    f = np.asarray(features)
    if f.ndim != 2 or 0 in f.shape:
        raise ValueError(f"features must be a non-empty 2-D matrix, got shape {f.shape}")
    lut = load_colormap() if colormap is None else np.asarray(colormap)
    t_count, f_count = f.shape
    norm = normalize(f)
    t_idx = np.arange(size) * t_count // size
    f_idx = (size - 1 - np.arange(size)) * f_count // size
    grid = norm[t_idx[None, :], f_idx[:, None]]  # [y, x]
    levels = np.floor(grid * 255 + 0.5).astype(np.intp)
    return lut[levels].transpose(2, 0, 1).astype(DTYPE)


def lut_index(value: float) -> int:
    return int(math.floor(value * 255 + 0.5))
