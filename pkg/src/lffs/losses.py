"""Training losses over logit batches.

All losses reduce to a scalar by averaging over the batch dimension and use
natural logarithms. Gradients are hand-derived closed forms rather than
compositions of primitives, which keeps the training loop lean.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeMismatch, Tensor, _accum, _result


def _log_softmax(z: np.ndarray) -> np.ndarray:
    s = z - z.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or logits.shape[1] < 2:
        raise ShapeMismatch("cross_entropy", logits.shape, labels.shape)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeMismatch("cross_entropy", logits.shape, labels.shape)
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(
            f"cross_entropy: label out of range [0, {c}): "
            f"min={labels.min()} max={labels.max()}"
        )
    logp = _log_softmax(logits.data)
    rows = np.arange(b)
    val = -logp[rows, labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        _accum(logits, (g / b) * p)

    return _result(np.asarray(val, dtype=logits.data.dtype), (logits,), backward)


def entropy_loss(logits: Tensor) -> Tensor:
    """Mean Shannon entropy of the softmax rows."""
    if logits.data.ndim != 2 or logits.shape[1] < 2:
        raise ShapeMismatch("entropy_loss", logits.shape, ())
    b = logits.shape[0]
    logp = _log_softmax(logits.data)
    p = np.exp(logp)
    val = -(p * logp).sum(axis=-1).mean()

    def backward(g):
        # dH/dz = -p * (logp + H_row) per row; averaged over the batch.
        h_row = -(p * logp).sum(axis=-1, keepdims=True)
        _accum(logits, (g / b) * (-p * (logp + h_row)))

    return _result(np.asarray(val, dtype=logits.data.dtype), (logits,), backward)


def cosine_similarity(a: Tensor, b: Tensor, eps: float = 1e-8) -> Tensor:
    """Mean row-wise cosine similarity between two [B, C] batches."""
    if a.shape != b.shape or a.data.ndim != 2:
        raise ShapeMismatch("cosine_similarity", a.shape, b.shape)
    if eps <= 0:
        raise ValueError("cosine_similarity: eps must be positive")
    bsz = a.shape[0]
    na = np.maximum(np.sqrt((a.data**2).sum(axis=-1, keepdims=True)), eps)
    nb = np.maximum(np.sqrt((b.data**2).sum(axis=-1, keepdims=True)), eps)
    ah = a.data / na
    bh = b.data / nb
    cos = (ah * bh).sum(axis=-1, keepdims=True)
    val = cos.mean()

    def backward(g):
        if a.requires_grad:
            _accum(a, (g / bsz) * (bh - cos * ah) / na)
        if b.requires_grad:
            _accum(b, (g / bsz) * (ah - cos * bh) / nb)

    return _result(np.asarray(val, dtype=a.data.dtype), (a, b), backward)


def kl_div_loss(student_logits: Tensor, teacher_logits: Tensor) -> Tensor:
    """Mean KL(softmax(teacher) || softmax(student)) over the batch.

    Drop-in alternative to :func:`cosine_similarity` for frequency
    regularization; note it is minimized (not maximized) when distributions
    match.
    """
    if student_logits.shape != teacher_logits.shape:
        raise ShapeMismatch(
            "kl_div_loss", student_logits.shape, teacher_logits.shape
        )
    b = student_logits.shape[0]
    ls = _log_softmax(student_logits.data)
    lt = _log_softmax(teacher_logits.data)
    pt = np.exp(lt)
    per_row = (pt * (lt - ls)).sum(axis=-1, keepdims=True)
    val = per_row.mean()

    def backward(g):
        if student_logits.requires_grad:
            ps = np.exp(ls)
            _accum(student_logits, (g / b) * (ps - pt))
        if teacher_logits.requires_grad:
            _accum(teacher_logits, (g / b) * pt * ((lt - ls) - per_row))

    return _result(
        np.asarray(val, dtype=student_logits.data.dtype),
        (student_logits, teacher_logits),
        backward,
    )
