"""PCI-masks: feasibility, the mask gradient, projection and PGD.

A PCI-mask is the diagonal ``lam`` of a matrix ``L`` with ``0 <= lam_i <= 1``
and ``sum(lam) <= c``. The projection truncates into the box and, when the
sum is too large, bisects for a uniform shift ``r`` so that
``sum(clip(w - r, 0, 1))`` lands within ``e`` of ``c``.
"""

from __future__ import annotations

import configparser
import csv
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path

import numpy as np

from .correlation import hadamard_matrix
from .features import as_batch, covariance, require_centered
from .seeding import component_rng

MAX_BISECTION_STEPS = 200


class BisectionError(RuntimeError):
    """The bisection bounds do not bracket the shift; retry with wider bounds."""

    def __init__(self, lower: float, upper: float, lower_sum: float, upper_sum: float, c: float):
        self.lower, self.upper = lower, upper
        self.lower_sum, self.upper_sum = lower_sum, upper_sum
        self.c = c
        super().__init__(
            f"bounds [{lower:g}, {upper:g}] do not bracket sum={c:g}: "
            f"sum at lower={lower_sum:g}, sum at upper={upper_sum:g}"
        )


@dataclass(frozen=True)
class PgdConfig:
    """Hyperparameters for unsupervised mask optimization.

    ``tolerable_error`` defaults to ``0.01 * sum_threshold``. When
    ``lower``/``upper`` are None the bisection bracket is ``[0, max(w)]``,
    which always brackets the shift.
    """

    sum_threshold: float
    step_size: float = 2.0
    tolerable_error: float | None = None
    lower: float | None = None
    upper: float | None = None
    max_iterations: int = 500
    stop_tolerance: float = 1e-6

    def __post_init__(self):
        if self.tolerable_error is None:
            object.__setattr__(self, "tolerable_error", 0.01 * self.sum_threshold)
        if not self.sum_threshold > 0:
            raise ValueError("sum_threshold c must be positive")
        if not self.step_size > 0:
            raise ValueError("step_size alpha must be positive")
        if not 0 < self.tolerable_error < self.sum_threshold:
            raise ValueError("tolerable_error e must satisfy 0 < e < c")
        if self.lower is not None and self.upper is not None and not self.lower < self.upper:
            raise ValueError("bisection bounds need lower < upper")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if not self.stop_tolerance > 0:
            raise ValueError("stop_tolerance must be positive")

    @property
    def c(self) -> float:
        return self.sum_threshold

    @property
    def e(self) -> float:
        return self.tolerable_error


@dataclass(frozen=True)
class PciMask:
    weights: np.ndarray
    c: float
    pair: tuple[int, int] = (0, 1)
    e: float | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, copy=True).reshape(-1)
        e = 0.01 * self.c if self.e is None else float(self.e)
        i, j = self.pair
        if not i < j:
            raise ValueError(f"pair must be ordered (i < j), got {self.pair}")
        if not np.all(np.isfinite(w)):
            raise ValueError("mask weights must be finite")
        if w.min(initial=0.0) < 0.0 or w.max(initial=0.0) > 1.0:
            raise ValueError("range constraint violated: weights must lie in [0, 1]")
        if w.sum() > self.c + e:
            raise ValueError(f"sum constraint violated: {w.sum():g} > c + e = {self.c + e:g}")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "pair", (int(i), int(j)))

    @property
    def m(self) -> int:
        return self.weights.size

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def with_weights(self, weights) -> "PciMask":
        return replace(self, weights=weights)


@dataclass(frozen=True)
class MaskSet:
    """One mask per unordered modality pair, all with the same ``m`` and ``c``."""

    masks: dict = field(default_factory=dict)
    k: int = 2

    def __post_init__(self):
        expected = set(combinations(range(self.k), 2))
        if set(self.masks) != expected:
            raise ValueError(f"MaskSet for k={self.k} needs exactly the pairs {sorted(expected)}")
        shapes = {(mk.m, mk.c) for mk in self.masks.values()}
        if len(shapes) > 1:
            raise ValueError("all masks must share dimension m and threshold c")
        for key, mk in self.masks.items():
            if mk.pair != key:
                raise ValueError(f"mask stored under {key} is labelled {mk.pair}")
        object.__setattr__(self, "masks", {p: self.masks[p] for p in sorted(self.masks)})

    def __getitem__(self, pair):
        i, j = pair
        return self.masks[(min(i, j), max(i, j))]

    def __iter__(self):
        return iter(self.masks)

    def __len__(self):
        return len(self.masks)

    def items(self):
        return self.masks.items()

    @property
    def pairs(self) -> list:
        return list(self.masks)

    @property
    def m(self) -> int:
        return next(iter(self.masks.values())).m

    def replace(self, pair, mask: PciMask) -> "MaskSet":
        masks = dict(self.masks)
        masks[pair] = mask
        return MaskSet(masks, self.k)

    @classmethod
    def constant(cls, k: int, m: int, value: float, c: float, e: float | None = None) -> "MaskSet":
        return cls(
            {p: PciMask(np.full(m, value), c, p, e) for p in combinations(range(k), 2)}, k
        )

    @classmethod
    def random(cls, k: int, m: int, cfg: PgdConfig, seed: int) -> "MaskSet":
        """Uniform ``[0, 1]`` draws, projected; one derived stream per pair."""
        masks = {}
        for p in combinations(range(k), 2):
            rng = component_rng(seed, f"mask-init-{p[0]}-{p[1]}")
            masks[p] = PciMask(project(rng.uniform(size=m), cfg), cfg.c, p, cfg.e)
        return cls(masks, k)


@dataclass(frozen=True)
class PairMoments:
    """Second moments of a centered feature pair, computed once per batch."""

    cov_f: np.ndarray
    cov_g: np.ndarray
    cross: np.ndarray  # G^T F / (n - 1)

    @classmethod
    def of(cls, f, g) -> "PairMoments":
        f, g = as_batch(f), as_batch(g)
        if f.data.shape != g.data.shape:
            raise ValueError(f"shape mismatch: {f.data.shape} vs {g.data.shape}")
        require_centered(f, "f")
        require_centered(g, "g")
        return cls(covariance(f), covariance(g), g.data.T @ f.data / (f.n - 1))

    @property
    def m(self) -> int:
        return self.cross.shape[0]

    def value(self, lam: np.ndarray) -> float:
        """``masked_corr`` from the cached moments."""
        return float(lam @ np.diag(self.cross)) - 0.5 * float(
            lam @ hadamard_matrix(self.cov_f, self.cov_g) @ lam
        )

    def gradient(self, lam: np.ndarray) -> np.ndarray:
        big_l = np.diag(lam)
        full = self.cross - 0.5 * (
            (self.cov_f @ big_l @ self.cov_g).T + (self.cov_g @ big_l @ self.cov_f).T
        )
        return np.diag(full).copy()


def mask_gradient(f, g, mask) -> np.ndarray:
    """Diagonal of ``d masked_corr / d L`` (the ascent direction).

    The full matrix is ``E[g f^T] - ((S_f L S_g)^T + (S_g L S_f)^T) / 2``
    with the cross moment estimated as ``G^T F / (n - 1)``.
    """
    moments = PairMoments.of(f, g)
    lam = np.asarray(getattr(mask, "weights", mask), dtype=float)
    if lam.shape != (moments.m,):
        raise ValueError(f"mask has shape {lam.shape}, features have m={moments.m}")
    return moments.gradient(lam)


def truncate(weights) -> np.ndarray:
    """Clamp each entry into ``[0, 1]``; entries already inside are untouched."""
    w = np.asarray(weights, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ValueError("cannot truncate non-finite weights")
    return np.clip(w, 0.0, 1.0)


def _shifted_sum(w: np.ndarray, r: float) -> float:
    return float(np.clip(w - r, 0.0, 1.0).sum())


def project(weights, cfg: PgdConfig) -> np.ndarray:
    """Projection onto ``{0 <= lam <= 1, sum(lam) <= c}`` by truncate-and-bisect.

    The final sum may exceed ``c`` by at most ``e``, the loop's stopping slack.
    A box-feasible point already within that slack is returned unchanged, so
    projecting twice is a no-op.
    """
    w = np.asarray(weights, dtype=float)
    clipped = truncate(w)
    c, e = cfg.c, cfg.e
    if clipped.sum() <= c + e:
        return clipped

    lo = 0.0 if cfg.lower is None else float(cfg.lower)
    hi = float(w.max()) if cfg.upper is None else float(cfg.upper)
    lo_sum, hi_sum = _shifted_sum(w, lo), _shifted_sum(w, hi)
    # sum(clip(w - r)) is non-increasing in r
    if lo_sum < c - e or hi_sum > c + e:
        raise BisectionError(lo, hi, lo_sum, hi_sum, c)

    result = np.clip(w - hi, 0.0, 1.0)
    for _ in range(MAX_BISECTION_STEPS):
        r = 0.5 * (lo + hi)
        cand = np.clip(w - r, 0.0, 1.0)
        s = float(cand.sum())
        if abs(s - c) <= e:
            return cand
        if s > c:
            lo = r
        else:
            hi = r
            result = cand
        if hi - lo <= np.finfo(float).eps * max(1.0, abs(hi)):
            break
    return result


def pgd_step(mask: PciMask, loss_gradient, cfg: PgdConfig) -> PciMask:
    """``project(lam - alpha * grad)``; no clamping before the projection."""
    grad = np.asarray(loss_gradient, dtype=float)
    if grad.shape != mask.weights.shape:
        raise ValueError(f"gradient has shape {grad.shape}, mask has m={mask.m}")
    stepped = mask.weights - cfg.step_size * grad
    return PciMask(project(stepped, cfg), mask.c, mask.pair, max(mask.e, cfg.e))


@dataclass
class MaskFit:
    mask: PciMask
    losses: list
    iterations: int
    converged: bool


def optimize_mask(f, g, mask: PciMask, cfg: PgdConfig) -> MaskFit:
    """Run PGD on ``-masked_corr(f, g, lam)`` for fixed features.

    ``losses[0]`` is the loss at the starting mask and ``losses[t]`` the loss
    after step ``t``. Stops once ``max|lam_{t+1} - lam_t| <= stop_tolerance``.
    """
    return run_pgd(PairMoments.of(f, g), mask, cfg)


def run_pgd(moments: PairMoments, mask: PciMask, cfg: PgdConfig) -> MaskFit:
    if mask.m != moments.m:
        raise ValueError(f"mask has m={mask.m}, features have m={moments.m}")
    losses = [-moments.value(mask.weights)]
    converged = False
    it = 0
    while it < cfg.max_iterations:
        new = pgd_step(mask, -moments.gradient(mask.weights), cfg)
        it += 1
        moved = float(np.max(np.abs(new.weights - mask.weights), initial=0.0))
        mask = new
        losses.append(-moments.value(mask.weights))
        if moved <= cfg.stop_tolerance:
            converged = True
            break
    return MaskFit(mask, losses, it, converged)


def lipschitz_estimate(f, g, iterations: int = 200, seed: int = 0) -> float:
    """Power-iteration estimate of the top eigenvalue of the Hadamard matrix."""
    f, g = as_batch(f), as_batch(g)
    quad = hadamard_matrix(covariance(f), covariance(g))
    v = np.random.default_rng(seed).uniform(0.5, 1.0, size=quad.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iterations):
        w = quad @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        est, v = float(v @ w), w / norm
    return est


# ---------------------------------------------------------------- file formats


def save_mask(mask: PciMask, path, seed: int | None = None) -> tuple[Path, Path]:
    """Write ``lambda_*`` CSV plus a ``.meta`` key-value sidecar."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"lambda_{j}" for j in range(mask.m)])
        writer.writerow([repr(float(v)) for v in mask.weights])
    meta = configparser.ConfigParser()
    meta["mask"] = {
        "pair": f"{mask.pair[0]},{mask.pair[1]}",
        "c": repr(float(mask.c)),
        "e": repr(float(mask.e)),
        "seed": "" if seed is None else str(seed),
        "sum": repr(mask.total),
    }
    sidecar = path.with_suffix(".meta")
    with sidecar.open("w", encoding="utf-8", newline="\n") as fh:
        meta.write(fh)
    return path, sidecar


def load_mask(path) -> PciMask:
    """Read a mask and its sidecar; the weights are re-projected on load."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) != 2 or rows[0] != [f"lambda_{j}" for j in range(len(rows[0]))]:
        raise ValueError(f"{path}: expected a lambda_* header and one data row")
    weights = np.array([float(v) for v in rows[1]])
    if weights.size != len(rows[0]):
        raise ValueError(f"{path}: header/data length mismatch")
    meta = configparser.ConfigParser()
    sidecar = path.with_suffix(".meta")
    if not meta.read(sidecar, encoding="utf-8"):
        raise FileNotFoundError(f"missing mask sidecar {sidecar}")
    sec = meta["mask"]
    i, j = (int(v) for v in sec["pair"].split(","))
    c, e = float(sec["c"]), float(sec["e"])
    cfg = PgdConfig(sum_threshold=c, tolerable_error=e)
    return PciMask(project(weights, cfg), c, (i, j), e)


def mask_filename(pair) -> str:
    return f"mask_{pair[0]}_{pair[1]}.csv"


def save_maskset(masks: MaskSet, directory, seed: int | None = None) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for pair, mk in masks.items():
        written.extend(save_mask(mk, directory / mask_filename(pair), seed))
    return written


def load_maskset(directory, k: int) -> MaskSet:
    directory = Path(directory)
    return MaskSet(
        {p: load_mask(directory / mask_filename(p)) for p in combinations(range(k), 2)}, k
    )


# ------------------------------------------------------------------- heatmaps


def pgm_pixels(weights) -> np.ndarray:
    """Gray levels ``round(255 * (1 - lam))``: heavier weight renders darker."""
    lam = np.clip(np.asarray(weights, dtype=float), 0.0, 1.0)
    return np.rint(255.0 * (1.0 - lam)).astype(int)


def to_pgm(rows, width: int | None = None) -> str:
    """Plain (P2) graymap, one image row per mask.

    With ``width`` set, each row keeps its first ``min(m, width)`` values.
    """
    rows = [np.asarray(r, dtype=float).reshape(-1) for r in rows]
    if width is not None:
        rows = [r[:width] for r in rows]
    w = rows[0].size
    if any(r.size != w for r in rows):
        raise ValueError("all mask rows must have the same width")
    lines = ["P2", f"{w} {len(rows)}", "255"]
    lines.extend(" ".join(str(p) for p in pgm_pixels(r)) for r in rows)
    return "\n".join(lines) + "\n"


def write_pgm(weights, path, width: int | None = None) -> Path:
    path = Path(path)
    path.write_text(to_pgm([weights], width), encoding="utf-8", newline="\n")
    return path
