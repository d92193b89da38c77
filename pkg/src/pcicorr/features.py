"""Per-modality feature batches, centering and the unbiased covariance."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

#: Column means below this magnitude count as centered.
CENTER_TOL = 1e-10


@dataclass(frozen=True)
class FeatureBatch:
    """An ``n x m`` batch of feature vectors for one modality.

    The array is copied and frozen on construction, so a batch can be shared
    freely between threads.
    """

    data: np.ndarray
    modality_id: int = 0

    def __post_init__(self):
        arr = np.array(self.data, dtype=float, copy=True)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValueError(f"feature batch must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 2:
            raise ValueError(f"need n >= 2 samples, got {arr.shape[0]}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature batch contains NaN or Inf")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def m(self) -> int:
        return self.data.shape[1]

    def is_centered(self, tol: float = CENTER_TOL) -> bool:
        return bool(np.all(np.abs(self.data.mean(axis=0)) <= tol))


def as_batch(x, modality_id: int = 0) -> FeatureBatch:
    if isinstance(x, FeatureBatch):
        return x
    return FeatureBatch(x, modality_id)


def require_centered(batch: FeatureBatch, name: str = "batch") -> None:
    if not batch.is_centered():
        worst = float(np.max(np.abs(batch.data.mean(axis=0))))
        raise ValueError(
            f"{name} is not centered (max |column mean| = {worst:.3g}); call center() first"
        )


def center(batch) -> FeatureBatch:
    """Subtract the empirical column means."""
    batch = as_batch(batch)
    return FeatureBatch(batch.data - batch.data.mean(axis=0), batch.modality_id)


def covariance(batch) -> np.ndarray:
    """Unbiased covariance ``F^T F / (n - 1)`` of a centered batch.

    Raises ``ValueError`` when the batch is not centered; centering is the
    caller's job.
    """
    batch = as_batch(batch)
    require_centered(batch)
    f = batch.data
    cov = f.T @ f / (batch.n - 1)
    # exact symmetry regardless of BLAS summation order
    return 0.5 * (cov + cov.T)


def is_psd(matrix: np.ndarray, rel_tol: float = 1e-9) -> bool:
    eig = np.linalg.eigvalsh(matrix)
    return bool(eig.min() >= -rel_tol * max(np.trace(matrix), 0.0))


def save_csv(batch, path) -> None:
    """Write a batch as ``dim_0,...,dim_{m-1}`` CSV, one sample per line."""
    batch = as_batch(batch)
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"dim_{j}" for j in range(batch.m)])
        for row in batch.data:
            writer.writerow([repr(float(v)) for v in row])


def load_csv(path, modality_id: int = 0) -> FeatureBatch:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        expected = [f"dim_{j}" for j in range(len(header))]
        if header != expected:
            raise ValueError(f"{path}: header must be dim_0..dim_{len(header) - 1}")
        rows = [[float(v) for v in row] for row in reader if row]
    if any(len(r) != len(header) for r in rows):
        raise ValueError(f"{path}: ragged rows")
    return FeatureBatch(np.array(rows, dtype=float).reshape(len(rows), len(header)), modality_id)
