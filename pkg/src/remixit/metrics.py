"""SI-SDR / SNR, the negative SI-SDR training loss and the error decomposition."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import SignalError

EPS = 1e-8
_DB = 20.0 / np.log(10.0)


@dataclass(frozen=True)
class LossValue:
    value: float
    per_item: np.ndarray


@dataclass(frozen=True)
class ErrorDecomposition:
    """``total = student_err_sq + teacher_err_sq - 2 * correlation``."""

    total: float
    student_err_sq: float
    teacher_err_sq: float
    correlation: float

    @property
    def residual(self) -> float:
        return abs(self.total - (self.student_err_sq + self.teacher_err_sq - 2.0 * self.correlation))


def _pair(est, ref) -> tuple[np.ndarray, np.ndarray]:
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise SignalError(f"length mismatch: {est.shape} vs {ref.shape}")
    if np.any(np.einsum("...t,...t->...", ref, ref) <= 0.0):
        raise SignalError("zero-energy reference")
    return est, ref


def _sdr_db(est, ref, scale_invariant: bool) -> np.ndarray:
    est, ref = _pair(est, ref)
    ref_energy = np.einsum("...t,...t->...", ref, ref)
    if scale_invariant:
        alpha = np.einsum("...t,...t->...", est, ref) / ref_energy
    else:
        alpha = np.ones(ref_energy.shape)
    target = alpha[..., None] * ref
    num = np.linalg.norm(target, axis=-1)
    # the floor scales with |alpha| so a perfect estimate caps at the same value at any gain
    den = np.linalg.norm(target - est, axis=-1) + EPS * np.abs(alpha)
    # an all-zero estimate has no projection onto ref: -inf dB rather than 0/0
    ratio = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    with np.errstate(divide="ignore"):
        return _DB * np.log(ratio)


def si_sdr(est, ref) -> float | np.ndarray:
    """Scale-invariant SDR in dB along the last axis (returns a float for 1-D input)."""
    out = _sdr_db(est, ref, True)
    return float(out) if out.ndim == 0 else out


def snr(est, ref) -> float | np.ndarray:
    """SI-SDR with the scale factor pinned to 1."""
    out = _sdr_db(est, ref, False)
    return float(out) if out.ndim == 0 else out


def neg_sisdr_loss(est_batch, ref_batch) -> LossValue:
    per_item = -np.atleast_1d(_sdr_db(est_batch, ref_batch, True))
    return LossValue(float(per_item.mean()), per_item)


def neg_sisdr_grad(est, ref) -> np.ndarray:
    """Analytic gradient of ``-si_sdr(est, ref)`` w.r.t. ``est`` (last axis, batched)."""
    est, ref = _pair(est, ref)
    ref_energy = np.einsum("...t,...t->...", ref, ref)[..., None]
    dot = np.einsum("...t,...t->...", est, ref)[..., None]
    alpha = dot / ref_energy
    err = alpha * ref - est
    r = np.linalg.norm(err, axis=-1, keepdims=True)
    # d(err)/d(est) = ref ref^T / |ref|^2 - I
    err_ref = np.einsum("...t,...t->...", err, ref)[..., None]
    # |err| is not differentiable at a perfect estimate; use the zero subgradient there
    dr = np.divide(err_ref * ref / ref_energy - err, r, out=np.zeros_like(err), where=r > 0)
    # loss = -DB * (log|alpha| + log|ref| - log(r + eps |alpha|))
    d_floor = EPS * np.sign(alpha) * ref / ref_energy
    return -_DB * (ref / dot - (dr + d_floor) / (r + EPS * np.abs(alpha)))


def error_decomposition(student_est, teacher_est, clean_ref, unit_norm: bool = False) -> ErrorDecomposition:
    """Split ``|student - teacher|^2`` into student error, teacher error and their correlation."""
    vecs = [np.asarray(v, dtype=np.float64) for v in (student_est, teacher_est, clean_ref)]
    if not (vecs[0].shape == vecs[1].shape == vecs[2].shape):
        raise SignalError("length mismatch in error decomposition")
    if unit_norm:
        vecs = [v / max(np.linalg.norm(v), EPS) for v in vecs]
    s_hat, s_tilde, s = vecs
    r_s = s_hat - s
    r_t = s_tilde - s
    diff = s_hat - s_tilde
    return ErrorDecomposition(
        total=float(diff @ diff),
        student_err_sq=float(r_s @ r_s),
        teacher_err_sq=float(r_t @ r_t),
        correlation=float(r_s @ r_t),
    )
