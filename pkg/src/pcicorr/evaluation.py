"""Independent oracles and recovery metrics.

Nothing here shares a code path with what it checks: the finite-difference
gradient only evaluates objectives, the brute-force projection enumerates
KKT active sets instead of bisecting, and the selective-mask-vector check
scales the features rather than inserting a mask.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from .correlation import masked_corr, soft_hgr
from .features import as_batch

BRUTE_MAX_DIM = 8


def fd_gradient(objective, point, h: float = 1e-5) -> np.ndarray:
    """Central differences ``(obj(x + h e_i) - obj(x - h e_i)) / 2h``."""
    if not h > 0:
        raise ValueError("step h must be positive")
    x = np.array(point, dtype=float).reshape(-1)
    grad = np.empty_like(x)
    for i in range(x.size):
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        hi, lo = float(objective(up)), float(objective(down))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError(f"objective is not finite around coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * h)
    return grad


_PATTERNS: dict = {}


def _patterns(m: int) -> np.ndarray:
    # 0 = at lower bound, 1 = at upper bound, 2 = interior
    if m not in _PATTERNS:
        _PATTERNS[m] = np.array(list(product((0, 1, 2), repeat=m)), dtype=np.int8)
    return _PATTERNS[m]


def brute_projection(point, c: float) -> np.ndarray:
    """Exact Euclidean projection onto ``{0 <= x <= 1, sum(x) <= c}``.

    Every assignment of coordinates to {at 0, at 1, interior} yields up to
    two candidates: the sum constraint inactive (interior coordinates keep
    their value) or active (interior coordinates shift by the multiplier that
    makes the sum equal ``c``). The nearest feasible candidate wins.
    """
    w = np.asarray(point, dtype=float).reshape(-1)
    m = w.size
    if m > BRUTE_MAX_DIM:
        raise ValueError(f"brute_projection enumerates 3^m patterns; m={m} > {BRUTE_MAX_DIM}")
    pat = _patterns(m)
    interior = pat == 2
    ones = pat == 1
    n_int = interior.sum(axis=1)
    base = np.where(ones, 1.0, 0.0)

    free = np.where(interior, w, base)
    shift = np.zeros(len(pat))
    has_int = n_int > 0
    shift[has_int] = (
        (np.where(interior, w, 0.0).sum(axis=1) + ones.sum(axis=1) - c)[has_int] / n_int[has_int]
    )
    active = np.where(interior, w - shift[:, None], base)

    cands = np.vstack([free, active[has_int]])
    tol = 1e-12
    feasible = (
        (cands.min(axis=1) >= -tol) & (cands.max(axis=1) <= 1 + tol) & (cands.sum(axis=1) <= c + tol)
    )
    cands = cands[feasible]
    best = np.argmin(((cands - w) ** 2).sum(axis=1))
    return np.clip(cands[best], 0.0, 1.0)


def gaussian_pair(rho: float, n: int, m: int = 1, seed: int = 0):
    """Centered ``(f, g)`` with unit variances and Pearson ``rho`` per dimension."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, m))
    b = rho * a + np.sqrt(1.0 - rho**2) * rng.standard_normal((n, m))
    return a - a.mean(axis=0), b - b.mean(axis=0)


def mask_lattice(m: int, c: float, step: float = 0.01) -> np.ndarray:
    """Integer points ``a`` with ``a_i <= 1/step`` and ``sum(a) * step <= c``."""
    top = int(round(1.0 / step))
    budget = int(np.floor(c / step + 1e-9))
    pts = np.zeros((1, 0), dtype=np.int16)
    left = np.array([budget])
    for _ in range(m):
        counts = np.minimum(left, top) + 1
        rep = np.repeat(np.arange(len(pts)), counts)
        offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        pts = np.hstack([pts[rep], offsets[:, None].astype(np.int16)])
        left = left[rep] - offsets
    return pts


def grid_search_mask(cross: np.ndarray, quad: np.ndarray, c: float, step: float = 0.01,
                     lattice: np.ndarray | None = None, chunk: int = 1_000_000):
    """Best ``lam`` on the feasible grid for ``lam.cross - lam^T quad lam / 2``.

    Returns ``(lam, value)``; exhaustive, so only sensible for small ``m``.
    """
    cross = np.asarray(cross, dtype=float)
    if lattice is None:
        lattice = mask_lattice(cross.size, c, step)
    best_val, best = -np.inf, None
    for start in range(0, len(lattice), chunk):
        lam = lattice[start : start + chunk].astype(float) * step
        vals = lam @ cross - 0.5 * np.einsum("pa,pa->p", lam @ quad, lam)
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best = float(vals[i]), lam[i].copy()
    return best, best_val


def svec_equivalence(f, g, s) -> tuple:
    """Soft-HGR of ``s * f, s * g`` next to ``masked_corr`` with ``diag(s^2)``."""
    f, g = as_batch(f), as_batch(g)
    s = np.asarray(s, dtype=float)
    if s.shape != (f.m,) or f.data.shape != g.data.shape:
        raise ValueError("shape mismatch between s, f and g")
    if s.min() < 0 or s.max() > 1:
        raise ValueError("selective mask entries must lie in [0, 1]")
    return soft_hgr(f.data * s, g.data * s), masked_corr(f, g, s**2)


def mean_product_term(f, g, lam) -> float:
    """``mean(f)^T L mean(g)``, the term dropped when features are centered."""
    f, g = as_batch(f), as_batch(g)
    return float(f.data.mean(axis=0) @ (np.asarray(lam) * g.data.mean(axis=0)))


def gaussian_hgr_oracle(rho: float) -> float:
    """HGR maximal correlation of a bivariate Gaussian: ``|rho|``."""
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"Pearson correlation must lie in [-1, 1], got {rho}")
    return abs(float(rho))


def planted_correlation(strength: float, noise: float) -> float:
    """Pearson correlation of ``s z + e1`` and ``s z + e2``."""
    return strength**2 / (strength**2 + noise**2)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float) - np.mean(x)
    y = np.asarray(y, dtype=float) - np.mean(y)
    return float(x @ y / np.sqrt((x @ x) * (y @ y)))


@dataclass
class RecoveryReport:
    mass_on_planted: float
    support_iou: float
    per_pair: dict = field(default_factory=dict)

    def rows(self) -> list:
        return [(p, r["mass_on_planted"], r["support_iou"]) for p, r in self.per_pair.items()]


def support(lam: np.ndarray, frac: float = 0.5) -> set:
    top = float(np.max(lam, initial=0.0))
    if top <= 0:
        return set()
    return {int(d) for d in np.flatnonzero(lam >= frac * top)}


def planted_from_encoders(encoders, ds) -> dict:
    """Planted feature dims per pair, read off the learned encoders.

    Feature ``d`` counts for pair ``(i, j)`` when its strongest loading in
    canonical coordinates (``W_i R_i``) is the same slot for both modalities
    and that slot belongs to a latent subset containing ``i`` and ``j``.
    """
    spec = ds.spec
    top = []
    for enc, rot in zip(encoders, ds.rotations):
        w = getattr(enc, "weight", enc)
        top.append(np.argmax(np.abs(w @ rot), axis=1))
    slot_members = {}
    for s, rng in zip(spec.subsets, spec.slots()):
        for slot in rng:
            slot_members[slot] = set(s.members)
    out = {}
    for i, j in spec.pairs:
        out[(i, j)] = frozenset(
            d
            for d in range(spec.m)
            if top[i][d] == top[j][d] and {i, j} <= slot_members.get(int(top[i][d]), set())
        )
    return out


def score_recovery(masks, truth, encoders=None) -> RecoveryReport:
    """Score masks against planted dims.

    ``truth`` is a ``Dataset``, a ``SynthSpec`` or a pair -> dims mapping.
    With ``encoders`` (and a ``Dataset``) the planted dims are mapped
    through the learned encoders; otherwise the oracle layout is used.
    """
    if encoders is not None:
        if not hasattr(truth, "rotations"):
            raise ValueError("mapping encoders back needs a Dataset with rotations")
        planted = planted_from_encoders(encoders, truth)
    elif hasattr(truth, "planted_dims"):
        planted = truth.planted_dims
    elif hasattr(truth, "spec"):
        planted = truth.spec.planted_dims
    else:
        planted = {tuple(p): frozenset(d) for p, d in truth.items()}

    per_pair = {}
    for pair, mk in masks.items():
        lam = np.asarray(getattr(mk, "weights", mk), dtype=float)
        if pair not in planted:
            raise ValueError(f"no ground truth for pair {pair}")
        dims = set(planted[pair])
        if dims and max(dims) >= lam.size:
            raise ValueError(f"planted dims for {pair} exceed mask dimension {lam.size}")
        if not dims:
            per_pair[pair] = {"mass_on_planted": float("nan"), "support_iou": float("nan")}
            continue
        total = lam.sum()
        mass = float(lam[sorted(dims)].sum() / total) if total > 0 else 0.0
        sup = support(lam)
        iou = len(sup & dims) / len(sup | dims)
        per_pair[pair] = {"mass_on_planted": mass, "support_iou": float(iou)}
    scored = [r for r in per_pair.values() if not np.isnan(r["mass_on_planted"])]
    if not scored:
        raise ValueError("no pair has planted dims to score")
    return RecoveryReport(
        float(np.mean([r["mass_on_planted"] for r in scored])),
        float(np.mean([r["support_iou"] for r in scored])),
        per_pair,
    )


def save_recovery_csv(report: RecoveryReport, path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["pair", "mass_on_planted", "support_iou"])
        for (i, j), mass, iou in report.rows():
            writer.writerow([f"{i}-{j}", repr(mass), repr(iou)])
        writer.writerow(["macro", repr(report.mass_on_planted), repr(report.support_iou)])
    return path
