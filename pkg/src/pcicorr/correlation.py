"""Soft-HGR and PCI-masked correlation objectives.

Every objective here uses the empirical ``1/(n-1)`` estimator for both the
cross term and the covariances, and expects centered inputs.
"""

from __future__ import annotations

from itertools import permutations

import numpy as np

from .features import as_batch, covariance, require_centered


def _pair(f, g):
    f, g = as_batch(f), as_batch(g)
    if f.data.shape != g.data.shape:
        raise ValueError(f"shape mismatch: {f.data.shape} vs {g.data.shape}")
    require_centered(f, "f")
    require_centered(g, "g")
    return f, g


def mask_weights(mask, m: int) -> np.ndarray:
    """Diagonal of a mask given as a ``PciMask`` or a plain vector."""
    lam = np.asarray(getattr(mask, "weights", mask), dtype=float)
    if lam.shape != (m,):
        raise ValueError(f"mask has shape {lam.shape}, features have m={m}")
    if not np.all(np.isfinite(lam)) or lam.min() < 0.0 or lam.max() > 1.0:
        raise ValueError("infeasible mask: weights must lie in [0, 1]")
    return lam


def cross_diagonal(f, g) -> np.ndarray:
    """Per-dimension cross moments ``sum_s f[s, a] g[s, a] / (n - 1)``."""
    return np.einsum("sa,sa->a", f.data, g.data) / (f.n - 1)


def hadamard_matrix(cov_f: np.ndarray, cov_g: np.ndarray) -> np.ndarray:
    """Quadratic-form matrix of the trace term in the mask diagonal.

    ``tr(S_f L S_g L) = lam^T (S_f * S_g) lam`` for diagonal ``L``; PSD by the
    Schur product theorem.
    """
    return cov_f * cov_g


def soft_hgr(f, g) -> float:
    """``(1/(n-1)) sum_s f_s^T g_s - tr(S_f S_g) / 2``."""
    f, g = _pair(f, g)
    cross = float(np.sum(f.data * g.data)) / (f.n - 1)
    return cross - 0.5 * float(np.trace(covariance(f) @ covariance(g)))


def masked_corr(f, g, mask) -> float:
    """Soft-HGR with the diagonal mask in the cross term and the trace term."""
    f, g = _pair(f, g)
    lam = mask_weights(mask, f.m)
    if not lam.any():
        return 0.0
    quad = hadamard_matrix(covariance(f), covariance(g))
    return float(lam @ cross_diagonal(f, g)) - 0.5 * float(lam @ quad @ lam)


def _mask_for(masks, i: int, j: int):
    key = (min(i, j), max(i, j))
    try:
        return masks[key]
    except KeyError:
        raise KeyError(f"no mask for modality pair {key}") from None


def total_masked_corr(batches, masks) -> float:
    """Sum of ``masked_corr`` over all ordered pairs ``i != j``.

    Masks are shared by the two orientations of a pair, so this is twice the
    unordered sum. Terms are added in lexicographic ordered-pair order.
    """
    batches = [as_batch(b, i) for i, b in enumerate(batches)]
    if len(batches) < 2:
        raise ValueError("need at least two modalities")
    total = 0.0
    for i, j in permutations(range(len(batches)), 2):
        total += masked_corr(batches[i], batches[j], _mask_for(masks, i, j))
    return total


def correlation_loss(batches, masks) -> float:
    return -total_masked_corr(batches, masks)
