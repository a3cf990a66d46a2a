"""Teacher/student diagnostics: performance brackets, the empirical-mean-student
sweep and per-item error decompositions. Each writes a plot-ready CSV."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import Corpus
from .exceptions import AnalysisError
from .metrics import EPS, ErrorDecomposition, error_decomposition, si_sdr, snr
from .model import MaskNetParams, separate, speech_noise

DEFAULT_EDGES = (-30.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0, np.inf)
DEFAULT_B_VALUES = (1, 2, 4, 8, 16, 32, 64)


def _speech_noise_of(model, mixtures) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(model, MaskNetParams):
        out = separate(model, mixtures)
    else:
        out = np.asarray(model(mixtures))
    return speech_noise(out)


def _require_paired(corpus: Corpus) -> None:
    if corpus.kind != "paired":
        raise AnalysisError("analysis needs a paired corpus (ground-truth speech)")


# -- brackets -----------------------------------------------------------------

@dataclass
class Bracket:
    lo: float
    hi: float
    count: int = 0
    mean: float | None = None
    median: float | None = None
    q25: float | None = None
    q75: float | None = None


@dataclass
class BracketReport:
    brackets: list[Bracket] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(b.count for b in self.brackets)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bracket_lo", "bracket_hi", "count", "mean_delta", "median_delta", "q25", "q75"])
            for b in self.brackets:
                stats = ["" if v is None else repr(v) for v in (b.mean, b.median, b.q25, b.q75)]
                w.writerow([repr(b.lo), repr(b.hi), b.count, *stats])


def bracket_analysis(teacher, student, corpus: Corpus, edges=DEFAULT_EDGES) -> BracketReport:
    """Group items by teacher SI-SDR and summarize the student's gain per group.

    Items outside ``[edges[0], edges[-1])`` are folded into the first or last
    bracket so counts always sum to the corpus size.
    """
    _require_paired(corpus)
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise AnalysisError("bracket edges must be strictly increasing with at least two values")
    mixtures, speech = corpus.mixtures, corpus.speech
    teacher_sdr = si_sdr(_speech_noise_of(teacher, mixtures)[0], speech)
    if teacher is student:
        delta = np.zeros_like(teacher_sdr)
    else:
        delta = si_sdr(_speech_noise_of(student, mixtures)[0], speech) - teacher_sdr
    idx = np.clip(np.searchsorted(edges, teacher_sdr, side="right") - 1, 0, len(edges) - 2)
    report = BracketReport()
    for k in range(len(edges) - 1):
        vals = delta[idx == k]
        b = Bracket(float(edges[k]), float(edges[k + 1]), int(vals.size))
        if vals.size:
            b.mean = float(vals.mean())
            b.median = float(np.median(vals))
            b.q25, b.q75 = (float(q) for q in np.percentile(vals, [25, 75]))
        report.brackets.append(b)
    return report


# -- empirical mean student -------------------------------------------------

@dataclass
class SweepPoint:
    B: int
    mean_snr_improvement_db: float
    correlation_term: float


@dataclass
class MeanStudentSweep:
    points: list[SweepPoint]
    n_probe: int

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["B", "mean_snr_improvement_db", "correlation_term"])
            for p in self.points:
                w.writerow([p.B, repr(p.mean_snr_improvement_db), repr(p.correlation_term)])


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), EPS)


def mean_student_sweep(teacher, student, corpus: Corpus, b_values=DEFAULT_B_VALUES, seed: int = 0,
                       max_teacher_snr_db: float | None = 5.0, scale_invariant: bool = False,
                       unit_norm: bool = True) -> MeanStudentSweep:
    """Average a fixed student over bootstrapped mixtures sharing one teacher speech estimate.

    For each probe item the teacher's speech estimate is remixed with the
    teacher's noise estimates of ``B`` other items (seeded order, no
    replacement); the student's speech outputs are averaged and scored against
    the clean speech relative to the teacher. The correlation term is the
    inner product between the teacher error and the mean student error,
    computed on unit-norm signals when ``unit_norm`` is set.
    Probe items are restricted to those where the teacher SNR is below
    ``max_teacher_snr_db`` (``None`` keeps all).
    """
    _require_paired(corpus)
    b_values = sorted({int(b) for b in b_values})
    if not b_values or b_values[0] < 1:
        raise AnalysisError("B values must be positive integers")
    n = len(corpus)
    if b_values[-1] > n - 1:
        raise AnalysisError(f"B={b_values[-1]} exceeds the {n - 1} distinct noise estimates available")
    mixtures, speech = corpus.mixtures, corpus.speech
    s_t, n_t = _speech_noise_of(teacher, mixtures)
    metric = si_sdr if scale_invariant else snr
    teacher_score = metric(s_t, speech)
    probe = np.arange(n)
    if max_teacher_snr_db is not None:
        probe = probe[snr(s_t, speech) < max_teacher_snr_db]
    if probe.size == 0:
        raise AnalysisError("no probe items satisfy the teacher-SNR filter")

    b_max = b_values[-1]
    improvements = np.zeros((len(b_values), probe.size))
    correlations = np.zeros_like(improvements)
    for j, i in enumerate(probe):
        rng = np.random.default_rng([seed, int(i)])
        others = rng.permutation(np.delete(np.arange(n), i))[:b_max]
        remixed = s_t[i][None, :] + n_t[others]
        s_hat = _speech_noise_of(student, remixed)[0]                 # (b_max, T)
        running = np.cumsum(s_hat, axis=0)
        ref = speech[i]
        t_err = (_unit(s_t[i]) - _unit(ref)) if unit_norm else (s_t[i] - ref)
        for k, b in enumerate(b_values):
            mean_est = running[b - 1] / b
            improvements[k, j] = metric(mean_est, ref) - teacher_score[i]
            if unit_norm:
                s_err = _unit(s_hat[:b]).mean(axis=0) - _unit(ref)
            else:
                s_err = mean_est - ref
            correlations[k, j] = float(t_err @ s_err)
    points = [SweepPoint(b, float(improvements[k].mean()), float(correlations[k].mean()))
              for k, b in enumerate(b_values)]
    return MeanStudentSweep(points, int(probe.size))


# -- error decomposition ----------------------------------------------------

def decomposition_trace(teacher, student, corpus: Corpus, unit_norm: bool = True) -> list[ErrorDecomposition]:
    """Per-item decomposition of the student-teacher distance on the original mixtures."""
    _require_paired(corpus)
    mixtures, speech = corpus.mixtures, corpus.speech
    s_t = _speech_noise_of(teacher, mixtures)[0]
    s_s = s_t if teacher is student else _speech_noise_of(student, mixtures)[0]
    return [error_decomposition(s_s[i], s_t[i], speech[i], unit_norm=unit_norm) for i in range(len(corpus))]


def write_decomposition_csv(rows: list[ErrorDecomposition], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item", "total", "student_err_sq", "teacher_err_sq", "correlation"])
        for i, r in enumerate(rows):
            w.writerow([i, repr(r.total), repr(r.student_err_sq), repr(r.teacher_err_sq), repr(r.correlation)])
