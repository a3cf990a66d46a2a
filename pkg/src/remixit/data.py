"""Synthetic two-domain corpora, WAV ingestion, regime splits and batch sampling."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy import signal as sps

from .exceptions import CorpusError
from .metrics import si_sdr
from .signal import mix_at_snr
from .wavio import read_wav, write_wav

PEAK = 0.9
KINDS = ("paired", "noise_only", "mixture_only")


@dataclass
class CorpusItem:
    mixture: np.ndarray | None = None
    speech: np.ndarray | None = None
    noise: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


@dataclass
class Corpus:
    items: list[CorpusItem]
    kind: str
    domain_tag: str = ""
    sample_rate: int = 8000

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CorpusError(f"unknown corpus kind {self.kind!r}")

    def __len__(self) -> int:
        return len(self.items)

    def _stack(self, attr: str) -> np.ndarray:
        rows = [getattr(it, attr) for it in self.items]
        if any(r is None for r in rows):
            raise CorpusError(f"{self.kind} corpus has no {attr} signals")
        if len({len(r) for r in rows}) > 1:
            raise CorpusError("items have unequal lengths")
        return np.stack(rows)

    @property
    def mixtures(self) -> np.ndarray:
        return self._stack("mixture")

    @property
    def speech(self) -> np.ndarray:
        return self._stack("speech")

    @property
    def noise(self) -> np.ndarray:
        return self._stack("noise")

    def subset(self, indices, kind: str | None = None) -> "Corpus":
        kind = kind or self.kind
        items = []
        for i in indices:
            it = self.items[int(i)]
            if kind == "mixture_only":
                it = CorpusItem(mixture=it.mixture, meta=dict(it.meta))
            elif kind == "noise_only":
                it = CorpusItem(noise=it.noise, meta=dict(it.meta))
            items.append(it)
        return Corpus(items, kind, self.domain_tag, self.sample_rate)


# -- synthesis ----------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic corpus.

    ``snr_db`` is ``None`` for natural mixing (peak-normalized sources summed
    as-is), a number for a fixed SNR, or a ``(lo, hi)`` pair for a per-item
    uniform draw.
    """

    n_items: int = 64
    duration_s: float = 1.0
    sample_rate: int = 8000
    noise_domain: str = "A"
    snr_db: float | tuple[float, float] | None = None
    domain_tag: str | None = None

    def __post_init__(self):
        if self.n_items < 1:
            raise ValueError("n_items must be positive")
        if self.noise_domain not in ("A", "B"):
            raise ValueError(f"noise_domain must be 'A' or 'B', got {self.noise_domain!r}")
        if isinstance(self.snr_db, list):
            object.__setattr__(self, "snr_db", tuple(self.snr_db))

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate))


def _peak(x: np.ndarray) -> np.ndarray:
    return PEAK * x / np.max(np.abs(x))


def synth_speech(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    """Harmonic stack with 1/k rolloff, slow pitch drift and syllabic modulation."""
    t = np.arange(n) / sr
    f0 = rng.uniform(100.0, 300.0)
    drift = 1.0 + 0.06 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 * drift) / sr
    n_partials = int(rng.integers(3, 9))
    x = np.zeros(n)
    for k in range(1, n_partials + 1):
        if k * f0 * 1.06 >= sr / 2:
            break
        x += np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k
    rate = rng.uniform(2.0, 8.0)
    env = np.sin(np.pi * rate * t + rng.uniform(0, np.pi)) ** 2
    return _peak(x * env)


def synth_noise_a(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    """Low-pass filtered white noise, cutoff 500-1500 Hz."""
    cutoff = rng.uniform(500.0, 1500.0)
    sos = sps.butter(6, cutoff, btype="low", fs=sr, output="sos")
    return _peak(sps.sosfilt(sos, rng.standard_normal(n)))


def synth_noise_b(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    """Amplitude-modulated 1-3 kHz band noise plus Poisson impulsive clicks."""
    t = np.arange(n) / sr
    sos = sps.butter(6, [1000.0, min(3000.0, 0.45 * sr)], btype="band", fs=sr, output="sos")
    band = sps.sosfilt(sos, rng.standard_normal(n))
    band *= 1.0 + 0.8 * np.sin(2 * np.pi * rng.uniform(0.5, 4.0) * t + rng.uniform(0, 2 * np.pi))
    band /= np.max(np.abs(band))
    clicks = np.zeros(n)
    n_clicks = rng.poisson(rng.uniform(3.0, 15.0) * n / sr)
    decay = np.exp(-np.arange(int(0.004 * sr)) / (0.001 * sr))
    for pos in rng.integers(0, n, size=n_clicks):
        burst = rng.standard_normal(decay.size) * decay * rng.uniform(0.3, 1.0)
        end = min(n, pos + burst.size)
        clicks[pos:end] += burst[:end - pos]
    return _peak(band + clicks)


def item_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def synth_item(spec: SynthSpec, seed: int, index: int) -> CorpusItem:
    rng = item_rng(seed, index)
    n, sr = spec.n_samples, spec.sample_rate
    speech = synth_speech(rng, n, sr)
    noise = (synth_noise_a if spec.noise_domain == "A" else synth_noise_b)(rng, n, sr)
    if spec.snr_db is None:
        mixture = speech + noise
    else:
        if isinstance(spec.snr_db, tuple):
            target = float(rng.uniform(*spec.snr_db))
        else:
            target = float(spec.snr_db)
        mixture, noise = mix_at_snr(speech, noise, target)
    meta = {
        "snr_db": float(10 * np.log10(np.dot(speech, speech) / np.dot(noise, noise))),
        "input_si_sdr_db": float(si_sdr(mixture, speech)),
    }
    return CorpusItem(mixture=mixture, speech=speech, noise=noise, meta=meta)


def generate_corpus(spec: SynthSpec, seed: int = 0) -> Corpus:
    """Paired corpus; each item depends only on ``(seed, index)``."""
    items = [synth_item(spec, seed, i) for i in range(spec.n_items)]
    return Corpus(items, "paired", spec.domain_tag or spec.noise_domain, spec.sample_rate)


def spectral_centroid(x: np.ndarray, sr: int) -> float:
    mag = np.abs(np.fft.rfft(x))
    freqs = np.fft.rfftfreq(len(x), 1.0 / sr)
    return float(np.sum(freqs * mag) / np.sum(mag))


# -- regime splits ------------------------------------------------------------

@dataclass
class RegimeSplit:
    train: dict[str, Corpus]
    test: Corpus | None = None


def split_for_regime(corpus: Corpus, regime: str, seed: int = 0, test_fraction: float = 0.0,
                     mixture_fraction: float = 0.8) -> RegimeSplit:
    """Arrange a paired corpus into the data roles a training regime may see.

    ``mixit``: ``mixture_fraction`` of the training items become unlabeled
    mixtures, the rest contribute only their isolated noise.
    ``supervised``: full pairs. ``remixit_student``: mixtures only.
    """
    if corpus.kind != "paired":
        raise CorpusError("regime splits need a paired corpus")
    if len(corpus) < 5:
        raise CorpusError(f"corpus too small ({len(corpus)} items, need at least 5)")
    order = np.random.default_rng(seed).permutation(len(corpus))
    n_test = int(round(test_fraction * len(corpus)))
    test = corpus.subset(order[:n_test]) if n_test else None
    pool = order[n_test:]
    if regime == "supervised":
        train = {"paired": corpus.subset(pool)}
    elif regime == "mixit":
        n_mix = int(round(mixture_fraction * len(pool)))
        train = {
            "mixtures": corpus.subset(pool[:n_mix], "mixture_only"),
            "noise": corpus.subset(pool[n_mix:], "noise_only"),
        }
    elif regime == "remixit_student":
        train = {"mixtures": corpus.subset(pool, "mixture_only")}
    else:
        raise ValueError(f"unknown regime {regime!r}")
    return RegimeSplit(train, test)


# -- files ----------------------------------------------------------------------

def load_wav_dir(path, role: str = "mixture") -> Corpus:
    """Directory of mono WAVs -> ``mixture_only`` (role='mixture') or ``noise_only`` corpus."""
    if role not in ("mixture", "noise"):
        raise ValueError(f"role must be 'mixture' or 'noise', got {role!r}")
    files = sorted(Path(path).glob("*.wav"))
    if not files:
        raise CorpusError(f"empty corpus: no .wav files in {path}")
    items, rates = [], set()
    for f in files:
        x, sr = read_wav(f)
        rates.add(sr)
        meta = {"file": f.name}
        items.append(CorpusItem(mixture=x, meta=meta) if role == "mixture" else CorpusItem(noise=x, meta=meta))
    if len(rates) > 1:
        raise CorpusError(f"mixed sample rates in {path}: {sorted(rates)}")
    kind = "mixture_only" if role == "mixture" else "noise_only"
    return Corpus(items, kind, Path(path).name, rates.pop())


_ROLES = ("speech", "noise", "mixture")


def write_corpus(corpus: Corpus, out_dir, pcm16: bool = False) -> Path:
    """Write every signal as ``{index:05d}_{role}.wav`` plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, it in enumerate(corpus.items):
        for role in _ROLES:
            sig = getattr(it, role)
            if sig is None:
                continue
            name = f"{i:05d}_{role}.wav"
            write_wav(out / name, sig, corpus.sample_rate, pcm16=pcm16)
            entry = {"file": name, "role": role, "item": i}
            if "snr_db" in it.meta:
                entry["snr_db"] = round(float(it.meta["snr_db"]), 6)
            entries.append(entry)
    manifest = {
        "domain_tag": corpus.domain_tag,
        "kind": corpus.kind,
        "sample_rate": corpus.sample_rate,
        "items": entries,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path) -> Corpus:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusError(f"cannot read manifest {path}: {exc}") from exc
    grouped: dict[int, CorpusItem] = {}
    rates = set()
    for n, entry in enumerate(manifest.get("items", [])):
        key = int(entry.get("item", n))
        it = grouped.setdefault(key, CorpusItem())
        x, sr = read_wav(path.parent / entry["file"])
        rates.add(sr)
        if entry["role"] not in _ROLES:
            raise CorpusError(f"unknown role {entry['role']!r} in {path}")
        setattr(it, entry["role"], x)
        if "snr_db" in entry:
            it.meta["snr_db"] = entry["snr_db"]
    if not grouped:
        raise CorpusError(f"empty corpus: {path}")
    if len(rates) > 1:
        raise CorpusError(f"mixed sample rates in {path}")
    items = [grouped[k] for k in sorted(grouped)]
    return Corpus(items, manifest["kind"], manifest.get("domain_tag", ""), rates.pop())


# -- sampling -------------------------------------------------------------------

@dataclass
class Batch:
    mixture: np.ndarray | None
    speech: np.ndarray | None = None
    noise: np.ndarray | None = None
    indices: np.ndarray | None = None


class BatchSampler:
    """Deterministic per-epoch shuffling with drop-last batching.

    For paired corpora ``snr_db`` controls remixing: ``None`` keeps the stored
    mixtures, a number or ``(lo, hi)`` range re-mixes each item at a fresh SNR
    drawn per epoch.
    """

    def __init__(self, corpus: Corpus, batch_size: int, seed: int = 0, snr_db=None):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if batch_size > len(corpus):
            raise CorpusError(f"batch size {batch_size} exceeds corpus size {len(corpus)}")
        if snr_db is not None and corpus.kind != "paired":
            raise CorpusError("SNR resampling needs a paired corpus")
        self.corpus = corpus
        self.batch_size = batch_size
        self.seed = seed
        self.snr_db = tuple(snr_db) if isinstance(snr_db, (list, tuple)) else snr_db
        self.epoch = 0
        self._pending: Iterator[Batch] | None = None
        attrs = {"paired": ("mixture", "speech", "noise"), "mixture_only": ("mixture",),
                 "noise_only": ("noise",)}[corpus.kind]
        self._arrays = {a: corpus.mixtures if a == "mixture" else getattr(corpus, a) for a in attrs}

    @property
    def batches_per_epoch(self) -> int:
        return len(self.corpus) // self.batch_size

    def _make(self, idx: np.ndarray, epoch: int) -> Batch:
        get = self._arrays.get
        mixture, speech, noise = get("mixture"), get("speech"), get("noise")
        mixture = mixture[idx] if mixture is not None else None
        speech = speech[idx] if speech is not None else None
        noise = noise[idx] if noise is not None else None
        if self.snr_db is not None:
            rows_m, rows_n = [], []
            for i, s, n in zip(idx, speech, noise):
                rng = np.random.default_rng([self.seed, epoch, int(i), 1])
                if isinstance(self.snr_db, tuple):
                    target = rng.uniform(*self.snr_db)
                else:
                    target = float(self.snr_db)
                m, n2 = mix_at_snr(s, n, target)
                rows_m.append(m)
                rows_n.append(n2)
            mixture, noise = np.stack(rows_m), np.stack(rows_n)
        return Batch(mixture, speech, noise, idx)

    def epoch_batches(self) -> Iterator[Batch]:
        """Yield the current epoch's batches, then advance the epoch counter."""
        epoch = self.epoch
        order = np.random.default_rng([self.seed, epoch]).permutation(len(self.corpus))
        self.epoch += 1
        for b in range(self.batches_per_epoch):
            yield self._make(order[b * self.batch_size:(b + 1) * self.batch_size], epoch)

    def next_batch(self) -> Batch:
        while True:
            if self._pending is None:
                self._pending = self.epoch_batches()
            try:
                return next(self._pending)
            except StopIteration:
                self._pending = None
