"""Micro-Doppler spectrograms: per-cell STFT over slow time and reduction.

A cropped range-angle-time cube becomes a 4-D complex spectrogram tensor
[N_res_s, N_res_theta, N_fft, N_fft] (frequency x frame per spatial cell),
then a real 3-D stack [N_bin, N_fft, N_fft] for the classifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rva import raised_cosine_window

NORM_MODES = ("linear", "log1p", "minmax", "log1p_minmax")


@dataclass(frozen=True)
class StftParams:
    """Short-time transform geometry.

    window: analysis window length (the chirps-per-frame count).
    n_overlap: samples shared by consecutive windows; hop = window - n_overlap.
    n_fft: DFT length per frame, also the cap on the frame count so the
        spectrogram comes out square.
    """

    window: int = 128
    n_overlap: int = 125
    n_fft: int = 128

    @property
    def hop(self) -> int:
        return self.window - self.n_overlap

    def validate(self) -> None:
        if self.window < 1:
            raise ValueError("window length must be >= 1")
        if self.hop <= 0:
            raise ValueError(
                f"hop = window - n_overlap = {self.hop} must be > 0")
        if self.n_fft < self.window:
            raise ValueError("n_fft must be >= window length")

    def n_frames(self, n_time: int) -> int:
        """Frame count for a series of n_time samples, capped at n_fft."""
        if n_time < self.window:
            raise ValueError(
                f"series of {n_time} samples is shorter than the "
                f"{self.window}-sample window")
        return min((n_time - self.window) // self.hop + 1, self.n_fft)


def stft_cell(series: np.ndarray, params: StftParams) -> np.ndarray:
    """Windowed short-time DFT of one slow-time series.

    Only whole windows are transformed (no padding), and at most n_fft
    frames are kept. Returns complex [n_fft, n_frames].
    """
    params.validate()
    series = np.asarray(series)
    if series.ndim != 1:
        raise ValueError(f"expected a 1-D series, got shape {series.shape}")
    n_frames = params.n_frames(series.size)
    starts = np.arange(n_frames) * params.hop
    frames = series[starts[:, None] + np.arange(params.window)[None, :]]
    frames = frames * raised_cosine_window(params.window)[None, :]
    return np.fft.fft(frames, n=params.n_fft, axis=1).T


def build_mds(bbox: np.ndarray, params: StftParams) -> np.ndarray:
    """STFT of every spatial cell of a cropped cube.

    Args:
        bbox: complex [N_res_s, N_res_theta, N_time] (crop_and_stack output).
    Returns:
        complex [N_res_s, N_res_theta, n_fft, n_frames].
    """
    bbox = np.asarray(bbox)
    if bbox.ndim != 3:
        raise ValueError(f"expected a 3-D cropped cube, got shape {bbox.shape}")
    params.validate()
    n_s, n_theta, n_time = bbox.shape
    n_frames = params.n_frames(n_time)
    starts = np.arange(n_frames) * params.hop
    # gather windows for all cells at once: [n_s, n_theta, n_frames, window]
    idx = starts[:, None] + np.arange(params.window)[None, :]
    frames = bbox[:, :, idx] * raised_cosine_window(params.window)
    spec = np.fft.fft(frames, n=params.n_fft, axis=3)
    return spec.transpose(0, 1, 3, 2)


def reduce_dim(mds: np.ndarray, norm_mode: str = "log1p_minmax") -> np.ndarray:
    """Magnitude + flatten of the spatial axes into a real slice stack.

    The (n_s, n_theta) cell grid is flattened row-major (range-major, angle
    fastest), so slice b corresponds to cell (b // N_res_theta,
    b % N_res_theta). Normalization modes:
        linear        magnitudes as-is
        log1p         log(1 + |S|)
        minmax        per-sample rescale of |S| to [0, 1]
        log1p_minmax  log(1 + |S|) then per-sample rescale (default)
    A constant tensor maps to all zeros under the minmax modes.
    """
    if norm_mode not in NORM_MODES:
        raise ValueError(f"norm_mode must be one of {NORM_MODES}, got {norm_mode!r}")
    mds = np.asarray(mds)
    if mds.ndim != 4:
        raise ValueError(f"expected a 4-D spectrogram tensor, got shape {mds.shape}")
    mag = np.abs(mds).reshape(-1, mds.shape[2], mds.shape[3])
    if norm_mode in ("log1p", "log1p_minmax"):
        mag = np.log1p(mag)
    if norm_mode in ("minmax", "log1p_minmax"):
        lo = mag.min()
        span = mag.max() - lo
        mag = (mag - lo) / span if span > 0 else np.zeros_like(mag)
    return mag


def bin_to_cell(b: int, n_res_theta: int) -> tuple[int, int]:
    """Invert the reduce_dim flattening: slice index -> (n_s, n_theta)."""
    return b // n_res_theta, b % n_res_theta
