"""Training objectives with analytic gradients w.r.t. the student logits.

Every loss averages over valid pixels only.  Invalid pixels contribute
nothing to the value and receive exactly zero gradient.  Teacher targets are
constants.
"""
from dataclasses import dataclass

import numpy as np

from .grids import IGNORE, log_softmax, one_hot, softmax


@dataclass
class LossValue:
    value: float
    grad: np.ndarray
    valid_count: int


def _require_pixels(n, what):
    if n == 0:
        raise ValueError(f"{what}: no valid pixels")


def supervised_ce(logits, target):
    """Mean cross-entropy against a hard label mask; IGNORE pixels are skipped."""
    logits = np.asarray(logits, dtype=np.float64)
    num_classes = logits.shape[0]
    if logits.shape[1:] != np.shape(target):
        raise ValueError("logits and target shapes differ")
    onehot, valid = one_hot(target, num_classes)
    n = int(valid.sum())
    _require_pixels(n, "supervised_ce")
    logp = log_softmax(logits)
    ii, jj = np.nonzero(valid)
    t = np.asarray(target)[ii, jj]
    value = -float(logp[t, ii, jj].sum()) / n
    grad = np.zeros_like(logits)
    grad[:, ii, jj] = (np.exp(logp[:, ii, jj]) - onehot[:, ii, jj]) / n
    return LossValue(value, grad, n)


def consistency_ce(student, teacher, valid):
    """Soft-target cross-entropy ``-sum_c q_c log softmax(z)_c`` over valid pixels."""
    student = np.asarray(student, dtype=np.float64)
    teacher = np.asarray(teacher, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if student.shape != teacher.shape or student.shape[1:] != valid.shape:
        raise ValueError("student, teacher and validity shapes differ")
    n = int(valid.sum())
    _require_pixels(n, "consistency_ce")
    logp = log_softmax(student)[:, valid]
    q = teacher[:, valid]
    value = max(-float((q * logp).sum()) / n, 0.0)
    grad = np.zeros_like(student)
    grad[:, valid] = (np.exp(logp) * q.sum(axis=0) - q) / n
    return LossValue(value, grad, n)


def spatial_mse(student, teacher_aligned, valid):
    """Squared distance between student softmax and the aligned teacher map.

    ``value = (1/n) * sum_valid sum_c (s_c - q_c)^2``; the gradient is pushed
    through the softmax Jacobian: ``dz_k = s_k (g_k - sum_c g_c s_c)`` with
    ``g = 2 (s - q) / n``.
    """
    student = np.asarray(student, dtype=np.float64)
    q = np.asarray(teacher_aligned, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if student.shape != q.shape or student.shape[1:] != valid.shape:
        raise ValueError("student, teacher and validity shapes differ")
    n = int(valid.sum())
    _require_pixels(n, "spatial_mse")
    s = softmax(student)[:, valid]
    diff = s - q[:, valid]
    value = float((diff * diff).sum()) / n
    g = 2.0 * diff / n
    grad = np.zeros_like(student)
    grad[:, valid] = s * (g - (g * s).sum(axis=0, keepdims=True))
    return LossValue(value, grad, n)


def hard_targets(teacher):
    """One-hot of the teacher argmax, the hard-label variant of the consistency target."""
    teacher = np.asarray(teacher)
    return one_hot(np.argmax(teacher, axis=0), teacher.shape[0])[0]


def total_loss(l_sup, l_unsup, lam=0.5):
    """``L = L_sup + lam * L_unsup``; both gradients must live in the same space."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if np.shape(l_sup.grad) != np.shape(l_unsup.grad):
        raise ValueError("branch gradients have different shapes")
    return LossValue(
        l_sup.value + lam * l_unsup.value,
        l_sup.grad + lam * l_unsup.grad,
        l_sup.valid_count + l_unsup.valid_count,
    )


__all__ = [
    "IGNORE",
    "LossValue",
    "consistency_ce",
    "hard_targets",
    "spatial_mse",
    "supervised_ce",
    "total_loss",
]
