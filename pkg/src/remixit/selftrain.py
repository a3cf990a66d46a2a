"""Supervised, MixIT and RemixIT training plus teacher-update protocols."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .data import Batch, BatchSampler, Corpus
from .exceptions import CorpusError, DivergenceError
from .metrics import neg_sisdr_grad, si_sdr, snr
from .model import (
    MaskNetParams,
    ModelArch,
    backward,
    forward,
    grow_depth,
    init_params,
    save_checkpoint,
    separate,
    speech_noise,
)
from .optim import AdamState, LrSchedule, adam_step, lr_at

log = logging.getLogger(__name__)

Separator = Callable[[np.ndarray], np.ndarray]
MIXIT_PERMS = ((1, 2), (2, 1))


@dataclass(frozen=True)
class TeacherProtocol:
    kind: str = "sequential"
    period_epochs: int = 20
    gamma: float = 0.01
    grow: bool = True

    def __post_init__(self):
        if self.kind not in ("static", "sequential", "ema"):
            raise ValueError(f"unknown teacher protocol {self.kind!r}")
        if self.period_epochs < 1:
            raise ValueError("period_epochs must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


@dataclass(frozen=True)
class TrainConfig:
    regime: str = "supervised"
    epochs: int = 10
    batch_size: int = 2
    seed: int = 0
    lr: LrSchedule = LrSchedule()
    protocol: TeacherProtocol = TeacherProtocol()
    arch: ModelArch = ModelArch()
    eval_every: int = 0
    snr_db: float | tuple[float, float] | None = None
    reset_optimizer_on_swap: bool = True

    def __post_init__(self):
        if self.regime not in ("supervised", "mixit", "remixit", "adapt"):
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class TrainRecord:
    epoch: int
    step: int
    lr: float
    loss_total: float
    loss_speech: float
    loss_noise: float
    teacher_gen: int = 0
    eval_si_sdr: float | None = None
    eval_delta_si_sdr: float | None = None


CSV_HEADER = [f.name for f in fields(TrainRecord)]


def write_log(records: Iterable[TrainRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v
                        for v in (getattr(r, k) for k in CSV_HEADER)])


@dataclass
class TrainResult:
    params: MaskNetParams
    records: list[TrainRecord]
    optimizer: AdamState
    teacher: MaskNetParams | None = None
    teacher_gen: int = 0
    history: list[dict] = field(default_factory=list)


# -- losses -------------------------------------------------------------------

@dataclass
class LossTerms:
    total: float
    speech: float
    noise: float
    grad: np.ndarray          # dL/d(estimates), (M, B, T)
    perms: np.ndarray | None = None


def _finite(value: float, what: str = "diverged") -> float:
    if not np.isfinite(value):
        raise DivergenceError(what)
    return float(value)


def paired_loss(estimates: np.ndarray, speech, noise) -> LossTerms:
    """Batch-mean of ``L(s_hat, s) + L(n_hat, n)`` with L = negative SI-SDR."""
    speech = np.asarray(speech, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    n_batch = speech.shape[0]
    ls = -si_sdr(estimates[0], speech)
    ln = -si_sdr(estimates[1], noise)
    grad = np.zeros_like(estimates)
    grad[0] = neg_sisdr_grad(estimates[0], speech) / n_batch
    grad[1] = neg_sisdr_grad(estimates[1], noise) / n_batch
    return LossTerms(float(np.mean(ls + ln)), float(np.mean(ls)), float(np.mean(ln)), grad)


def mixit_loss(estimates: np.ndarray, mixture, noise) -> LossTerms:
    """Per item, the better of the two noise-slot assignments.

    Slot 0 plus one noise slot reconstructs the noisy ``mixture``; the other
    noise slot reconstructs the added ``noise`` recording.
    """
    mixture = np.asarray(mixture, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    n_batch = mixture.shape[0]
    terms = []
    for a, b in MIXIT_PERMS:
        lm = -si_sdr(estimates[0] + estimates[a], mixture)
        ln = -si_sdr(estimates[b], noise)
        terms.append((lm, ln))
    totals = np.stack([lm + ln for lm, ln in terms])           # (2, B)
    choice = np.argmin(totals, axis=0)
    grad = np.zeros_like(estimates)
    lm_sel = np.empty(n_batch)
    ln_sel = np.empty(n_batch)
    for i in range(n_batch):
        a, b = MIXIT_PERMS[choice[i]]
        g_m = neg_sisdr_grad(estimates[0, i] + estimates[a, i], mixture[i]) / n_batch
        grad[0, i] += g_m
        grad[a, i] += g_m
        grad[b, i] += neg_sisdr_grad(estimates[b, i], noise[i]) / n_batch
        lm_sel[i], ln_sel[i] = terms[choice[i]][0][i], terms[choice[i]][1][i]
    return LossTerms(float(np.mean(lm_sel + ln_sel)), float(np.mean(lm_sel)),
                     float(np.mean(ln_sel)), grad, choice)


# -- single steps -------------------------------------------------------------

def _apply(params: MaskNetParams, grads, state: AdamState, lr: float):
    tensors, state = adam_step(params.tensors, grads, state, lr)
    return MaskNetParams(params.arch, tensors), state


def supervised_step(params: MaskNetParams, batch: Batch, state: AdamState, lr: float):
    """Forward on ``batch.mixture``, regress onto (speech, noise), one Adam step."""
    if params.arch.n_sources != 2:
        raise ValueError("supervised training uses M=2")
    est, tape = forward(params, batch.mixture)
    terms = paired_loss(est, batch.speech, batch.noise)
    _finite(terms.total)
    params, state = _apply(params, backward(params, tape, terms.grad), state, lr)
    return params, state, terms


def mixit_step(params: MaskNetParams, mixture, noise, state: AdamState, lr: float):
    """Train on mixtures of mixtures ``mixture + noise`` with the MixIT loss."""
    if params.arch.n_sources != 3:
        raise ValueError("MixIT requires M=3")
    mixture = np.asarray(mixture, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if mixture.shape != noise.shape:
        raise ValueError("mixture and noise batches must have equal shapes")
    est, tape = forward(params, mixture + noise)
    terms = mixit_loss(est, mixture, noise)
    _finite(terms.total)
    params, state = _apply(params, backward(params, tape, terms.grad), state, lr)
    return params, state, terms


def as_separator(teacher) -> Separator:
    if isinstance(teacher, MaskNetParams):
        return lambda m: forward(teacher, m, keep_tape=False)[0]
    return teacher


def teacher_estimates(teacher, mixture) -> tuple[np.ndarray, np.ndarray]:
    """Teacher (speech, noise) for a batch; 3-slot outputs get their noise summed."""
    out = np.asarray(as_separator(teacher)(mixture))
    if not np.all(np.isfinite(out)):
        raise DivergenceError("teacher divergence")
    return speech_noise(out)


def sample_permutation(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform over all n! orderings (identity included)."""
    return rng.permutation(n)


def bootstrap_remix(teacher, mixture, rng: np.random.Generator) -> Batch:
    """Remix teacher speech with batch-permuted teacher noise.

    The returned batch holds the bootstrapped mixtures and their pseudo-targets;
    ``indices`` carries the permutation.
    """
    s_t, n_t = teacher_estimates(teacher, mixture)
    perm = sample_permutation(rng, s_t.shape[0])
    n_perm = n_t[perm]
    return Batch(s_t + n_perm, s_t, n_perm, perm)


def remixit_step(teacher, student: MaskNetParams, mixture, state: AdamState, lr: float,
                 rng: np.random.Generator):
    remixed = bootstrap_remix(teacher, mixture, rng)
    return supervised_step(student, remixed, state, lr)


# -- protocols ----------------------------------------------------------------

def ema_update(teacher: MaskNetParams, student: MaskNetParams, gamma: float) -> MaskNetParams:
    if teacher.tensors.keys() != student.tensors.keys() or any(
        teacher.tensors[k].shape != student.tensors[k].shape for k in teacher.tensors
    ):
        raise ValueError("incompatible shapes for EMA")
    return MaskNetParams(teacher.arch, {
        k: gamma * student.tensors[k] + (1 - gamma) * teacher.tensors[k] for k in teacher.tensors
    })


def update_teacher(protocol: TeacherProtocol, teacher: MaskNetParams, student: MaskNetParams,
                   epoch: int, seed: int = 0):
    """Apply ``protocol`` after ``epoch`` completed epochs.

    Returns ``(teacher, new_student)``; ``new_student`` is ``None`` unless a
    sequential swap spawned a fresh (deeper) student.
    """
    if protocol.kind == "static":
        return teacher, None
    if protocol.kind == "ema":
        return ema_update(teacher, student, protocol.gamma), None
    if epoch > 0 and epoch % protocol.period_epochs == 0:
        arch = grow_depth(student.arch) if protocol.grow else student.arch
        fresh = init_params(arch, seed=int(np.random.SeedSequence([seed, epoch, 7]).generate_state(1)[0]),
                            dtype=student.dtype)
        return student.copy(), fresh
    return teacher, None


# -- evaluation ---------------------------------------------------------------

def evaluate(model, corpus: Corpus, chunk: int = 32) -> dict:
    """Mean SI-SDR, ΔSI-SDR (vs. the unprocessed mixture) and SNR of the speech slot."""
    if corpus.kind != "paired":
        raise CorpusError("evaluation needs a paired corpus")
    mixtures, speech = corpus.mixtures, corpus.speech
    if isinstance(model, MaskNetParams):
        est = separate(model, mixtures, chunk)
    else:
        est = np.asarray(model(mixtures))
    s_hat = est[0]
    out_sdr = si_sdr(s_hat, speech)
    in_sdr = si_sdr(mixtures, speech)
    return {
        "mean_si_sdr_db": float(np.mean(out_sdr)),
        "mean_delta_si_sdr_db": float(np.mean(out_sdr - in_sdr)),
        "mean_snr_db": float(np.mean(snr(s_hat, speech))),
        "n_items": int(len(corpus)),
    }


# -- training loops -----------------------------------------------------------

def _record(epoch, step, lr, terms: LossTerms, gen=0) -> TrainRecord:
    return TrainRecord(epoch, step, float(lr), terms.total, terms.speech, terms.noise, gen)


def _attach_eval(records, params, eval_corpus, epoch, config):
    if eval_corpus is None or not config.eval_every or not records:
        return
    if (epoch + 1) % config.eval_every:
        return
    m = evaluate(params, eval_corpus)
    records[-1].eval_si_sdr = m["mean_si_sdr_db"]
    records[-1].eval_delta_si_sdr = m["mean_delta_si_sdr_db"]


def train_supervised(corpus: Corpus, config: TrainConfig, params: MaskNetParams | None = None,
                     eval_corpus: Corpus | None = None) -> TrainResult:
    if corpus.kind != "paired":
        raise CorpusError("supervised training needs a paired corpus")
    arch = replace(config.arch, n_sources=2)
    params = params if params is not None else init_params(arch, config.seed)
    state = AdamState()
    sampler = BatchSampler(corpus, config.batch_size, config.seed, config.snr_db)
    records, step = [], 0
    for epoch in range(config.epochs):
        lr = lr_at(config.lr, epoch)
        for batch in sampler.epoch_batches():
            params, state, terms = supervised_step(params, batch, state, lr)
            records.append(_record(epoch, step, lr, terms))
            step += 1
        _attach_eval(records, params, eval_corpus, epoch, config)
    return TrainResult(params, records, state)


def train_mixit(mixtures: Corpus, noise: Corpus, config: TrainConfig, params: MaskNetParams | None = None,
                eval_corpus: Corpus | None = None) -> TrainResult:
    if config.arch.n_sources != 3:
        raise ValueError("MixIT requires M=3")
    if mixtures.kind == "noise_only" or noise.kind == "mixture_only":
        raise CorpusError("MixIT needs a mixture set and a noise-only set")
    params = params if params is not None else init_params(config.arch, config.seed)
    state = AdamState()
    mix_sampler = BatchSampler(mixtures.subset(range(len(mixtures)), "mixture_only"), config.batch_size, config.seed)
    noise_sampler = BatchSampler(noise.subset(range(len(noise)), "noise_only"), config.batch_size, config.seed + 1)
    records, step = [], 0
    for epoch in range(config.epochs):
        lr = lr_at(config.lr, epoch)
        for batch in mix_sampler.epoch_batches():
            n2 = noise_sampler.next_batch().noise
            params, state, terms = mixit_step(params, batch.mixture, n2, state, lr)
            records.append(_record(epoch, step, lr, terms))
            step += 1
        _attach_eval(records, params, eval_corpus, epoch, config)
    return TrainResult(params, records, state)


def pretrain_teacher(config: TrainConfig, roles: dict[str, Corpus], eval_corpus: Corpus | None = None) -> TrainResult:
    """Pretrain a teacher with the supervised (``paired`` role) or MixIT
    (``mixtures`` + ``noise`` roles) recipe."""
    if config.regime == "supervised":
        if "paired" not in roles:
            raise CorpusError("supervised pretraining needs a 'paired' corpus")
        return train_supervised(roles["paired"], config, eval_corpus=eval_corpus)
    if config.regime == "mixit":
        if config.arch.n_sources != 3:
            raise ValueError("MixIT requires M=3")
        missing = {"mixtures", "noise"} - roles.keys()
        if missing:
            raise CorpusError(f"MixIT pretraining is missing roles: {sorted(missing)}")
        return train_mixit(roles["mixtures"], roles["noise"], config, eval_corpus=eval_corpus)
    raise ValueError(f"teacher pretraining supports supervised or mixit, not {config.regime!r}")


def remixit_epoch(teacher, student: MaskNetParams, sampler: BatchSampler, state: AdamState, lr: float,
                  rng: np.random.Generator, epoch: int = 0, step: int = 0, gen: int = 0):
    """One pass over the mixtures; only the student is updated."""
    records = []
    for batch in sampler.epoch_batches():
        student, state, terms = remixit_step(teacher, student, batch.mixture, state, lr, rng)
        records.append(_record(epoch, step, lr, terms, gen))
        step += 1
    return student, state, records


def run_remixit(teacher: MaskNetParams, mixtures: Corpus, config: TrainConfig,
                student: MaskNetParams | None = None, eval_corpus: Corpus | None = None,
                checkpoint_dir=None) -> TrainResult:
    """Self-train a student on ``mixtures`` from ``teacher`` under ``config.protocol``.

    A sequential swap is skipped at the very end of training so the returned
    student is always a trained one.
    """
    if len(mixtures) < config.batch_size:
        raise CorpusError(f"corpus of {len(mixtures)} items is smaller than one batch")
    protocol = config.protocol
    if student is None:
        student = init_params(replace(config.arch, n_sources=2), config.seed)
    if student.arch.n_sources != 2:
        raise ValueError("the RemixIT student must have M=2")
    teacher = teacher.copy()
    mix_only = mixtures if mixtures.kind == "mixture_only" else mixtures.subset(range(len(mixtures)), "mixture_only")
    sampler = BatchSampler(mix_only, config.batch_size, config.seed)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 5]))
    state = AdamState()
    schedule_start, gen, step = 0, 0, 0
    records: list[TrainRecord] = []
    history = []
    ckpt = Path(checkpoint_dir) if checkpoint_dir else None
    for epoch in range(config.epochs):
        lr = lr_at(config.lr, epoch - schedule_start)
        student, state, recs = remixit_epoch(teacher, student, sampler, state, lr, rng, epoch, step, gen)
        records.extend(recs)
        step += len(recs)
        _attach_eval(records, student, eval_corpus, epoch, config)
        done = epoch + 1
        if protocol.kind == "sequential" and done == config.epochs:
            break
        teacher, fresh = update_teacher(protocol, teacher, student, done, config.seed)
        if fresh is not None:
            gen += 1
            history.append({"epoch": done, "teacher_gen": gen, "student_depth": fresh.arch.depth})
            log.info("epoch %d: teacher <- student, new student depth %d", done, fresh.arch.depth)
            student = fresh
            if config.reset_optimizer_on_swap:
                state = AdamState()
                schedule_start = done
            if ckpt is not None:
                save_checkpoint(teacher, ckpt / f"teacher_gen{gen}.ckpt")
    return TrainResult(student, records, state, teacher, gen, history)


def zero_shot_adapt(teacher: MaskNetParams, mixtures: Corpus, config: TrainConfig,
                    eval_corpus: Corpus | None = None, checkpoint_dir=None) -> TrainResult:
    """Initialize the student from the teacher and self-train with an EMA teacher."""
    if mixtures.kind == "noise_only":
        raise CorpusError("adaptation needs mixtures")
    if teacher.arch.n_sources != 2:
        raise ValueError("zero-shot adaptation copies the teacher, which must have M=2")
    if config.protocol.kind != "ema":
        config = replace(config, protocol=TeacherProtocol("ema", gamma=config.protocol.gamma))
    return run_remixit(teacher, mixtures, config, student=teacher.copy(), eval_corpus=eval_corpus,
                       checkpoint_dir=checkpoint_dir)
