"""Batch alignment loss over modulus spectra.

Same-label samples are pulled toward identical magnitude spectra, while
different-label samples are pushed at least a margin xi apart.  Distance
between two samples is the per-entry mean absolute difference of their
modulus vectors, so xi does not have to change with the spectrum size:

    loss = mean over unordered same-label pairs of dist(a, b)
         + mean over unordered different-label pairs of max(0, xi - dist(a, b))

Either term is 0 when it has no pairs.  Gradients are exact subgradients,
with sign(0) = 0 and no gradient through inactive hinges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["AlignmentBatch", "fsa_loss"]


@dataclass(frozen=True)
class AlignmentBatch:
    moduli: np.ndarray  # B x m, entries >= 0
    labels: np.ndarray  # length B, values in {0, 1}
    xi: float = 1.0

    def __post_init__(self):
        moduli = np.atleast_2d(np.asarray(self.moduli, dtype=np.float64))
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "moduli", moduli)
        object.__setattr__(self, "labels", labels)
        if labels.ndim != 1 or moduli.shape[0] != labels.size:
            raise ValueError("mismatched lengths")
        if labels.size < 1:
            raise ValueError("empty batch")
        if not np.all((labels == 0) | (labels == 1)):
            raise ValueError("labels must be 0 or 1")
        if not np.all(np.isfinite(moduli)) or np.any(moduli < 0):
            raise ValueError("moduli must be finite and nonnegative")
        if not (self.xi > 0 and np.isfinite(self.xi)):
            raise ValueError("xi must be positive")


def fsa_loss(batch: AlignmentBatch) -> tuple[float, np.ndarray]:
    """Return (loss, grads) where grads has the batch's B x m shape."""
    R = batch.moduli
    y = batch.labels
    b, m = R.shape

    diff = R[:, None, :] - R[None, :, :]
    dist = np.mean(np.abs(diff), axis=2)  # B x B, symmetric, zero diagonal
    sgn = np.sign(diff)

    iu, ju = np.triu_indices(b, k=1)
    same = y[iu] == y[ju]
    n_pos = int(np.sum(same))
    n_neg = same.size - n_pos

    loss = 0.0
    grads = np.zeros_like(R)

    if n_pos:
        loss += float(np.sum(dist[iu[same], ju[same]])) / n_pos
        # d dist(a,b) / da = sign(a - b) / m, each pair weighted 1/n_pos
        w = 1.0 / (n_pos * m)
        for i, j in zip(iu[same], ju[same]):
            grads[i] += w * sgn[i, j]
            grads[j] -= w * sgn[i, j]

    if n_neg:
        cross_i, cross_j = iu[~same], ju[~same]
        hinge = batch.xi - dist[cross_i, cross_j]
        active = hinge > 0.0
        loss += float(np.sum(np.maximum(hinge, 0.0))) / n_neg
        w = 1.0 / (n_neg * m)
        for i, j in zip(cross_i[active], cross_j[active]):
            grads[i] -= w * sgn[i, j]
            grads[j] += w * sgn[i, j]

    return loss, grads
