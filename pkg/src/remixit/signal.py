"""Waveform primitives: normalization, SNR mixing, STFT/ISTFT, mixture consistency.

Arrays are plain numpy. A waveform is a 1-D float array, a batch is ``(B, T)``,
and source estimates are stacked as ``(M, B, T)``. Transforms operate on the
last axis, so any leading shape is accepted.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import SignalError

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 512
    hop: int = 128
    window: str = "hann"

    def __post_init__(self):
        if self.fft_size <= 0 or self.hop <= 0:
            raise ValueError("fft_size and hop must be positive")
        if self.fft_size % 2:
            raise ValueError("fft_size must be even")
        if self.fft_size % self.hop:
            raise ValueError(f"hop={self.hop} must divide fft_size={self.fft_size}")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")
        if self.fft_size // self.hop < 2:
            # periodic Hann is only COLA-invertible with overlap
            raise ValueError("hop must be at most fft_size / 2")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        padded = n_samples + self.fft_size
        return 1 + (padded - self.fft_size) // self.hop


def check_waveform(x, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise SignalError(f"{name} must be 1-D, got shape {x.shape}")
    if x.size == 0:
        raise SignalError(f"{name} is empty")
    if not np.all(np.isfinite(x)):
        raise SignalError(f"{name} contains non-finite samples")
    return x


def check_batch(x, name: str = "x") -> np.ndarray:
    """Validate a ``(B, T)`` batch; a single waveform is promoted to ``(1, T)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise SignalError(f"{name} must be (B, T), got shape {x.shape}")
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise SignalError(f"{name} is empty")
    if not np.all(np.isfinite(x)):
        raise SignalError(f"{name} contains non-finite samples")
    return x


def normalize(x) -> tuple[np.ndarray, NormStats]:
    """Zero-mean, unit (population) std. Constant inputs get the std floor."""
    x = check_waveform(x)
    mean = float(x.mean())
    std = max(float(x.std()), STD_FLOOR)
    return (x - mean) / std, NormStats(mean, std)


def normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise :func:`normalize` for a batch; returns ``(y, means, stds)``."""
    mean = x.mean(axis=-1, keepdims=True)
    std = np.maximum(x.std(axis=-1, keepdims=True), STD_FLOOR)
    return (x - mean) / std, mean[..., 0], std[..., 0]


def denormalize(y, stats: NormStats) -> np.ndarray:
    return np.asarray(y, dtype=np.float64) * stats.std + stats.mean


def mix_plain(s, n) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    if s.shape != n.shape:
        raise SignalError(f"length mismatch: {s.shape} vs {n.shape}")
    return s + n


def mix_at_snr(s, n, snr_db: float) -> tuple[np.ndarray, np.ndarray]:
    """Rescale ``n`` so that ``10 log10(|s|^2 / |n|^2) == snr_db``; return (mixture, scaled noise)."""
    s = check_waveform(s, "s")
    n = check_waveform(n, "n")
    if s.shape != n.shape:
        raise SignalError(f"length mismatch: {s.shape} vs {n.shape}")
    ps = float(np.dot(s, s))
    pn = float(np.dot(n, n))
    if ps <= 0.0 or pn <= 0.0:
        raise SignalError("degenerate source: zero energy")
    gain = np.sqrt(ps / (pn * 10.0 ** (snr_db / 10.0)))
    n_scaled = n * gain
    return s + n_scaled, n_scaled


@lru_cache(maxsize=None)
def _window(fft_size: int) -> np.ndarray:
    # periodic Hann
    k = np.arange(fft_size)
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * k / fft_size)
    w.setflags(write=False)
    return w


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    """Overlap-add ``(..., N, fft)`` frames with stride ``hop``."""
    *lead, n_frames, fft_size = frames.shape
    r = fft_size // hop
    blocks = frames.reshape(*lead, n_frames, r, hop)
    out = np.zeros((*lead, n_frames + r - 1, hop), dtype=frames.dtype)
    for j in range(r):
        out[..., j:j + n_frames, :] += blocks[..., :, j, :]
    return out.reshape(*lead, (n_frames + r - 1) * hop)


@lru_cache(maxsize=64)
def _window_sumsquare(fft_size: int, hop: int, n_frames: int) -> np.ndarray:
    w2 = np.broadcast_to(_window(fft_size) ** 2, (n_frames, fft_size))
    wss = _overlap_add(np.ascontiguousarray(w2), hop)
    wss.setflags(write=False)
    return wss


def stft(x, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Complex STFT of the last axis, shape ``(..., F, N)``, reflection-padded by fft/2."""
    x = np.asarray(x, dtype=np.float64)
    pad = cfg.fft_size // 2
    if x.shape[-1] <= pad:
        raise SignalError(f"signal of {x.shape[-1]} samples too short for fft_size={cfg.fft_size}")
    widths = [(0, 0)] * (x.ndim - 1) + [(pad, pad)]
    xp = np.pad(x, widths, mode="reflect")
    frames = sliding_window_view(xp, cfg.fft_size, axis=-1)[..., ::cfg.hop, :]
    spec = np.fft.rfft(frames * _window(cfg.fft_size), axis=-1)
    return np.swapaxes(spec, -1, -2)


def _istft_span(cfg: StftConfig, n_frames: int, out_len: int) -> tuple[np.ndarray, slice]:
    pad = cfg.fft_size // 2
    wss = _window_sumsquare(cfg.fft_size, cfg.hop, n_frames)
    span = slice(pad, pad + out_len)
    if pad + out_len > wss.shape[0]:
        raise SignalError(f"out_len={out_len} exceeds reconstructable span of {n_frames} frames")
    denom = wss[span]
    if np.any(denom < 1e-10):
        raise SignalError(f"out_len={out_len} exceeds reconstructable span of {n_frames} frames")
    return denom, span


def istft(spec, cfg: StftConfig = StftConfig(), out_len: int | None = None) -> np.ndarray:
    """Inverse of :func:`stft` by weighted overlap-add; exact for unmodified spectra."""
    spec = np.asarray(spec)
    n_frames = spec.shape[-1]
    if spec.shape[-2] != cfg.n_bins:
        raise SignalError(f"expected {cfg.n_bins} bins, got {spec.shape[-2]}")
    if out_len is None:
        out_len = (n_frames - 1) * cfg.hop
    denom, span = _istft_span(cfg, n_frames, out_len)
    frames = np.fft.irfft(np.swapaxes(spec, -1, -2), n=cfg.fft_size, axis=-1)
    y = _overlap_add(frames * _window(cfg.fft_size), cfg.hop)
    return y[..., span] / denom


def istft_adjoint(g, cfg: StftConfig, n_frames: int) -> np.ndarray:
    """Backpropagate through :func:`istft` for a real-valued mask.

    For ``y = istft(mask * X)`` and upstream gradient ``g = dL/dy`` this returns
    the complex array ``A`` (shape ``(..., F, N)``) with ``dL/dmask = Re(X * A)``.
    """
    g = np.asarray(g, dtype=np.float64)
    out_len = g.shape[-1]
    denom, span = _istft_span(cfg, n_frames, out_len)
    total = (n_frames - 1) * cfg.hop + cfg.fft_size
    full = np.zeros((*g.shape[:-1], total))
    full[..., span] = g / denom
    frames = sliding_window_view(full, cfg.fft_size, axis=-1)[..., ::cfg.hop, :]
    frame_spec = np.fft.rfft(frames * _window(cfg.fft_size), axis=-1)
    # irfft counts interior bins twice (Hermitian pair), DC and Nyquist once
    weight = np.full(cfg.n_bins, 2.0 / cfg.fft_size)
    weight[0] = weight[-1] = 1.0 / cfg.fft_size
    return np.swapaxes(np.conj(frame_spec) * weight, -1, -2)


def mixture_consistency(estimates, mixture) -> np.ndarray:
    """Project ``(M, B, T)`` estimates so they sum to ``mixture`` (residual split uniformly)."""
    estimates = np.asarray(estimates, dtype=np.float64)
    mixture = np.asarray(mixture, dtype=np.float64)
    if estimates.ndim < 2 or estimates.shape[0] < 2:
        raise SignalError("mixture consistency needs at least two estimates")
    if estimates.shape[1:] != mixture.shape:
        raise SignalError(f"shape mismatch: estimates {estimates.shape}, mixture {mixture.shape}")
    residual = mixture - estimates.sum(axis=0)
    return estimates + residual / estimates.shape[0]
