"""Softmax cross-entropy with a closed-form gradient."""

import numpy as np


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log softmax, stabilized by max subtraction."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: np.ndarray, targets, weights=None):
    """Weighted negative log likelihood of integer targets.

    With no weights the loss is the mean over rows. With weights w the loss
    is sum_n w_n * nll_n and the returned gradient matches; this is what the
    teacher-forced decoder loss uses to average over variable-length
    sequences.

    Returns (loss, grad_wrt_logits).
    """
    targets = np.asarray(targets, dtype=np.int64)
    n, k = logits.shape
    if targets.shape != (n,):
        raise IndexError(f"targets must have shape ({n},), got {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        bad = targets[(targets < 0) | (targets >= k)][0]
        raise IndexError(f"target class {int(bad)} outside [0, {k})")
    if weights is None:
        weights = np.full(n, 1.0 / n)
    else:
        weights = np.asarray(weights, dtype=np.float64)
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = float(-(weights * logp[rows, targets]).sum())
    grad = np.exp(logp) * weights[:, None]
    grad[rows, targets] -= weights
    return loss, grad
