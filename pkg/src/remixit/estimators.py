"""scikit-learn compatible wrappers around the training regimes.

Rows of ``X`` are equal-length waveforms. ``transform`` returns the enhanced
speech, ``separate`` the full ``(M, n, T)`` source stack and ``score`` the mean
SI-SDR of the speech estimate against clean references.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import Corpus, CorpusItem
from .exceptions import SignalError
from .metrics import si_sdr
from .model import MaskNetParams, ModelArch, separate
from .optim import LrSchedule
from .selftrain import TeacherProtocol, TrainConfig, run_remixit, train_mixit, train_supervised, zero_shot_adapt


def check_waveforms(X, name: str = "X") -> np.ndarray:
    """Validate a 2-D array of finite, equal-length waveforms."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise SignalError(f"{name} must be a non-empty 2-D array (n_signals, n_samples), got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise SignalError(f"{name} contains NaN or infinite samples")
    return X


def _rows_to_corpus(kind: str, sample_rate: int, **signals) -> Corpus:
    n = len(next(iter(signals.values())))
    items = [CorpusItem(**{k: v[i] for k, v in signals.items()}) for i in range(n)]
    return Corpus(items, kind, "array", sample_rate)


class _MaskNetEstimator(TransformerMixin, BaseEstimator):
    n_sources = 2

    def __init__(self, depth=2, hidden_dim=128, context=1, fft_size=512, hop=128, epochs=10,
                 batch_size=2, learning_rate=1e-3, halve_every_epochs=6, sample_rate=8000, random_state=0):
        self.depth = depth
        self.hidden_dim = hidden_dim
        self.context = context
        self.fft_size = fft_size
        self.hop = hop
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.halve_every_epochs = halve_every_epochs
        self.sample_rate = sample_rate
        self.random_state = random_state

    def _arch(self) -> ModelArch:
        schedule = tuple(sorted({self.depth, 2 * self.depth, 4 * self.depth}))
        return ModelArch(self.n_sources, self.depth, self.hidden_dim, self.context, self.fft_size,
                         self.hop, schedule)

    def _config(self, regime: str, **kw) -> TrainConfig:
        return TrainConfig(
            regime=regime, epochs=self.epochs, batch_size=self.batch_size, seed=self.random_state,
            lr=LrSchedule(self.learning_rate, self.halve_every_epochs), arch=self._arch(), **kw,
        )

    def _finish(self, result) -> None:
        self.params_ = result.params
        self.records_ = result.records

    def separate(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        return separate(self.params_, check_waveforms(X))

    def transform(self, X) -> np.ndarray:
        return self.separate(X)[0]

    def predict(self, X) -> np.ndarray:
        return self.transform(X)

    def score(self, X, y) -> float:
        """Mean SI-SDR (dB) of the speech estimate against clean speech ``y``."""
        y = check_waveforms(y, "y")
        return float(np.mean(si_sdr(self.transform(X), y)))


class SupervisedEnhancer(_MaskNetEstimator):
    """Fit on noisy mixtures ``X`` with clean speech ``y``; noise targets are ``X - y``."""

    def fit(self, X, y):
        X = check_waveforms(X)
        y = check_waveforms(y, "y")
        if X.shape != y.shape:
            raise SignalError(f"X and y shapes differ: {X.shape} vs {y.shape}")
        corpus = _rows_to_corpus("paired", self.sample_rate, mixture=X, speech=y, noise=X - y)
        self._finish(train_supervised(corpus, self._config("supervised")))
        return self


class MixITEnhancer(_MaskNetEstimator):
    """Three-slot model trained on mixtures ``X`` plus isolated noise recordings ``y``.

    ``y`` may hold a different number of rows than ``X``.
    """

    n_sources = 3

    def fit(self, X, y):
        X = check_waveforms(X)
        y = check_waveforms(y, "y")
        if X.shape[1] != y.shape[1]:
            raise SignalError("mixtures and noise recordings must have equal length")
        mixtures = _rows_to_corpus("mixture_only", self.sample_rate, mixture=X)
        noise = _rows_to_corpus("noise_only", self.sample_rate, noise=y)
        self._finish(train_mixit(mixtures, noise, self._config("mixit")))
        return self


class RemixITEnhancer(_MaskNetEstimator):
    """Self-train a student on unlabeled mixtures from a pretrained ``teacher``.

    ``teacher`` is a fitted enhancer or :class:`MaskNetParams`. With
    ``warm_start=True`` the student starts from the teacher's weights (zero-shot
    adaptation; the protocol is forced to EMA).
    """

    def __init__(self, teacher=None, protocol="sequential", period_epochs=20, gamma=0.01, warm_start=False,
                 depth=2, hidden_dim=128, context=1, fft_size=512, hop=128, epochs=10, batch_size=2,
                 learning_rate=1e-3, halve_every_epochs=6, sample_rate=8000, random_state=0):
        super().__init__(depth, hidden_dim, context, fft_size, hop, epochs, batch_size, learning_rate,
                         halve_every_epochs, sample_rate, random_state)
        self.teacher = teacher
        self.protocol = protocol
        self.period_epochs = period_epochs
        self.gamma = gamma
        self.warm_start = warm_start

    def _teacher_params(self) -> MaskNetParams:
        if isinstance(self.teacher, MaskNetParams):
            return self.teacher
        if self.teacher is None:
            raise ValueError("RemixITEnhancer needs a pretrained teacher")
        check_is_fitted(self.teacher, "params_")
        return self.teacher.params_

    def fit(self, X, y=None):
        X = check_waveforms(X)
        teacher = self._teacher_params()
        mixtures = _rows_to_corpus("mixture_only", self.sample_rate, mixture=X)
        protocol = TeacherProtocol(self.protocol, self.period_epochs, self.gamma)
        if self.warm_start:
            config = self._config("adapt", protocol=protocol)
            config = replace(config, arch=teacher.arch)
            result = zero_shot_adapt(teacher, mixtures, config)
        else:
            result = run_remixit(teacher, mixtures, self._config("remixit", protocol=protocol))
        self._finish(result)
        self.teacher_params_ = result.teacher
        self.teacher_generation_ = result.teacher_gen
        return self
