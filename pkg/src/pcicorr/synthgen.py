"""Multi-modal Gaussian data with planted partial common information.

Every modality has the same canonical coordinate layout before its private
rotation: one block of ``dims`` slots per latent subset, in subset order,
followed by private slots. A slot of subset ``S`` carries
``strength * z_S + noise`` in modalities that belong to ``S`` and pure
noise elsewhere; private slots are pure noise. All noise has standard
deviation ``private_noise``. Modality ``i`` observes ``x_i = R_i u_i`` for a
seeded random orthogonal ``R_i``.

With this layout the oracle linear encoder for modality ``i`` is the first
``m`` rows of ``R_i^T`` and feature dimension ``d`` is canonical slot ``d``.
"""

from __future__ import annotations

import configparser
import csv
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.stats import ortho_group

from . import features
from .seeding import component_rng


@dataclass(frozen=True)
class Subset:
    members: tuple
    dims: int
    strength: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(sorted(int(i) for i in self.members)))


@dataclass(frozen=True)
class SynthSpec:
    k: int = 4
    d_raw: int = 16
    m: int = 16
    subsets: tuple = (
        Subset((0, 1), 4, 0.5),
        Subset((2, 3), 4, 0.5),
        Subset((0, 1, 2, 3), 4, 0.5),
    )
    private_noise: float = 0.4
    n: int = 4096
    seed: int = 0
    n_classes: int = 4
    identity_rotations: bool = False

    def __post_init__(self):
        object.__setattr__(self, "subsets", tuple(self.subsets))
        self.validate()

    def validate(self) -> None:
        if self.k < 2:
            raise ValueError(f"k={self.k}: subset size >= 2 impossible with fewer than 2 modalities")
        if not self.subsets:
            raise ValueError("at least one latent subset is required")
        for s in self.subsets:
            if len(set(s.members)) < 2:
                raise ValueError(f"subset {s.members}: subset size >= 2 required")
            if min(s.members) < 0 or max(s.members) >= self.k:
                raise ValueError(f"subset {s.members} names a modality outside [0, {self.k})")
            if s.dims < 1:
                raise ValueError(f"subset {s.members} needs at least one latent dimension")
            if not s.strength > 0:
                raise ValueError(f"subset {s.members} needs positive strength")
        if self.latent_dims > self.d_raw:
            raise ValueError(
                f"latent dims ({self.latent_dims}) + private dims exceed d_raw={self.d_raw}"
            )
        if self.latent_dims > self.m:
            raise ValueError(f"latent dims ({self.latent_dims}) exceed feature dimension m={self.m}")
        if self.m > self.d_raw:
            raise ValueError(f"m={self.m} exceeds d_raw={self.d_raw}")
        if self.private_noise < 0:
            raise ValueError("private_noise must be >= 0")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if not 2 <= self.n_classes <= self.latent_dims:
            raise ValueError("n_classes must lie in [2, latent dims]")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def latent_dims(self) -> int:
        return sum(s.dims for s in self.subsets)

    def slots(self) -> list:
        """Canonical slot ranges, one per subset."""
        out, start = [], 0
        for s in self.subsets:
            out.append(range(start, start + s.dims))
            start += s.dims
        return out

    @property
    def pairs(self) -> list:
        return list(combinations(range(self.k), 2))

    @property
    def planted_dims(self) -> dict:
        """Feature dims the oracle encoder devotes to latents shared by each pair."""
        out = {}
        for i, j in self.pairs:
            dims = set()
            for s, rng in zip(self.subsets, self.slots()):
                if i in s.members and j in s.members:
                    dims.update(rng)
            out[(i, j)] = frozenset(dims)
        return out


@dataclass
class Dataset:
    spec: SynthSpec
    raw: list
    labels: np.ndarray
    rotations: list
    latents: np.ndarray = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.labels.size

    def oracle_encoders(self) -> list:
        return [r.T[: self.spec.m].copy() for r in self.rotations]


def _rotations(spec: SynthSpec) -> list:
    if spec.identity_rotations:
        return [np.eye(spec.d_raw) for _ in range(spec.k)]
    rng = component_rng(spec.seed, "rotation")
    return [ortho_group.rvs(spec.d_raw, random_state=rng) for _ in range(spec.k)]


def _label_map(spec: SynthSpec) -> np.ndarray:
    # orthonormal rows make the class scores i.i.d. standard normal, so the
    # argmax labels are balanced in expectation
    rng = component_rng(spec.seed, "label-map")
    a = rng.standard_normal((spec.latent_dims, spec.n_classes))
    q, _ = np.linalg.qr(a)
    return q.T


def generate(spec: SynthSpec, split: str = "train", n: int | None = None) -> Dataset:
    """Draw a dataset; ``split`` selects the sample stream.

    Rotations and the label map depend only on the seed, so a ``heldout``
    split shares them with ``train``.
    """
    n = spec.n if n is None else int(n)
    rng = component_rng(spec.seed, f"samples-{split}")
    z = rng.standard_normal((n, spec.latent_dims))
    rotations = _rotations(spec)
    raw = []
    for i in range(spec.k):
        u = spec.private_noise * rng.standard_normal((n, spec.d_raw))
        for s, slot in zip(spec.subsets, spec.slots()):
            if i in s.members:
                u[:, slot.start : slot.stop] += s.strength * z[:, slot.start : slot.stop]
        raw.append(u @ rotations[i].T)
    labels = np.argmax(z @ _label_map(spec).T, axis=1)
    return Dataset(spec, raw, labels, rotations, z)


# ------------------------------------------------------------------ file I/O


def spec_to_config(spec: SynthSpec) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp["synth"] = {
        "k": str(spec.k),
        "d_raw": str(spec.d_raw),
        "m": str(spec.m),
        "private_noise": repr(spec.private_noise),
        "n": str(spec.n),
        "seed": str(spec.seed),
        "n_classes": str(spec.n_classes),
        "identity_rotations": str(spec.identity_rotations).lower(),
        "subsets": format_subsets(spec.subsets),
    }
    return cp


def format_subsets(subsets) -> str:
    return "; ".join(
        f"{'+'.join(str(i) for i in s.members)}:{s.dims}:{s.strength!r}" for s in subsets
    )


def parse_subsets(text: str) -> tuple:
    """Parse ``"0+1:4:0.5; 2+3:4:0.5"`` (members:dims:strength)."""
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        members, dims, strength = chunk.split(":")
        out.append(Subset(tuple(int(v) for v in members.split("+")), int(dims), float(strength)))
    return tuple(out)


def spec_from_section(section, **overrides) -> SynthSpec:
    """Build a spec from a ``[synth]`` mapping; missing keys keep the defaults."""
    base = SynthSpec()
    kw = {}
    casts = {"k": int, "d_raw": int, "m": int, "n": int, "seed": int, "n_classes": int,
             "private_noise": float}
    for key, cast in casts.items():
        if key in section:
            kw[key] = cast(section[key])
    if "identity_rotations" in section:
        kw["identity_rotations"] = str(section["identity_rotations"]).strip().lower() in (
            "1", "true", "yes", "on")
    if "subsets" in section:
        kw["subsets"] = parse_subsets(section["subsets"])
    kw.update({k: v for k, v in overrides.items() if v is not None})
    fields = {f: getattr(base, f) for f in base.__dataclass_fields__}
    fields.update(kw)
    return SynthSpec(**fields)


def save_matrix(matrix: np.ndarray, path, prefix: str = "col") -> Path:
    path = Path(path)
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"{prefix}_{j}" for j in range(matrix.shape[1])])
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])
    return path


def load_matrix(path) -> np.ndarray:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    return np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(
        len(rows) - 1, len(rows[0])
    )


def save_dataset(ds: Dataset, directory) -> list:
    """Write ``modality_<i>.csv``, ``labels.csv``, rotations and ``ground_truth.ini``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for i, x in enumerate(ds.raw):
        p = directory / f"modality_{i}.csv"
        features.save_csv(features.FeatureBatch(x, i), p)
        written.append(p)
    p = directory / "labels.csv"
    with p.open("w", encoding="utf-8", newline="") as fh:
        fh.write("label\n")
        fh.writelines(f"{int(v)}\n" for v in ds.labels)
    written.append(p)
    for i, r in enumerate(ds.rotations):
        written.append(save_matrix(r, directory / f"rotation_{i}.csv"))

    truth = spec_to_config(ds.spec)
    truth["ground_truth"] = {
        "layout": "subset slots in order, then private slots",
        "latent_dims": str(ds.spec.latent_dims),
    }
    for idx, (s, slot) in enumerate(zip(ds.spec.subsets, ds.spec.slots())):
        truth["ground_truth"][f"subset_{idx}"] = (
            f"members={'+'.join(map(str, s.members))} slots={slot.start}-{slot.stop - 1}"
        )
    truth["planted_dims"] = {
        f"{i},{j}": " ".join(str(d) for d in sorted(dims))
        for (i, j), dims in ds.spec.planted_dims.items()
    }
    p = directory / "ground_truth.ini"
    with p.open("w", encoding="utf-8", newline="\n") as fh:
        truth.write(fh)
    written.append(p)
    return written


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    truth = configparser.ConfigParser()
    if not truth.read(directory / "ground_truth.ini", encoding="utf-8"):
        raise FileNotFoundError(f"{directory}: missing ground_truth.ini")
    spec = spec_from_section(truth["synth"])
    raw = [features.load_csv(directory / f"modality_{i}.csv", i).data for i in range(spec.k)]
    with (directory / "labels.csv").open("r", encoding="utf-8") as fh:
        lines = fh.read().split()
    if not lines or lines[0] != "label":
        raise ValueError(f"{directory}/labels.csv: missing 'label' header")
    labels = np.array([int(v) for v in lines[1:]], dtype=int)
    rotations = [load_matrix(directory / f"rotation_{i}.csv") for i in range(spec.k)]
    n = labels.size
    for i, x in enumerate(raw):
        if x.shape != (n, spec.d_raw):
            raise ValueError(f"modality {i} has shape {x.shape}, expected {(n, spec.d_raw)}")
    return Dataset(spec, raw, labels, rotations)
