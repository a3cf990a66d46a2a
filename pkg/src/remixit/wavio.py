"""Mono WAV reading/writing (PCM16 or IEEE float32)."""
from __future__ import annotations

import numpy as np
from scipy.io import wavfile

from .exceptions import CorpusError


def read_wav(path) -> tuple[np.ndarray, int]:
    """Return ``(samples, sample_rate)`` with PCM16 scaled by 1/32768."""
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError) as exc:
        raise CorpusError(f"unreadable wav file {path}: {exc}") from exc
    if data.ndim != 1:
        raise CorpusError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise CorpusError(f"{path}: unsupported sample format {data.dtype}")
    return samples, int(rate)


def write_wav(path, samples, sample_rate: int, pcm16: bool = False) -> None:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ValueError("only mono audio is supported")
    if pcm16:
        data = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    else:
        data = samples.astype("<f4")
    wavfile.write(path, int(sample_rate), data)
