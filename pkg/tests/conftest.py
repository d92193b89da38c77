from __future__ import annotations

import functools

import numpy as np
import pytest

from pcicorr.correlation import total_masked_corr
from pcicorr.evaluation import score_recovery
from pcicorr.mask import PgdConfig
from pcicorr.synthgen import SynthSpec, generate
from pcicorr.trainer import TrainConfig, train, update_masks

ACCEPTANCE_LINES: list = []


def centered_pair(rng, n=64, m=8, link=0.7):
    f = rng.standard_normal((n, m)) * rng.uniform(0.3, 1.5, size=m)
    g = link * f + rng.standard_normal((n, m)) * rng.uniform(0.3, 1.5, size=m)
    return f - f.mean(axis=0), g - g.mean(axis=0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@functools.lru_cache(maxsize=None)
def trained_run(seed: int, theta: float) -> dict:
    """Default-spec training summary, cached for the whole session."""
    spec = SynthSpec(seed=seed)
    ds = generate(spec)
    heldout = generate(spec, "heldout")
    model = train(ds, TrainConfig(seed=seed, theta=theta))
    rec = score_recovery(model.masks, ds, model.encoders)
    feats = model.features(heldout.raw)
    tight = PgdConfig(spec.m / 4, tolerable_error=1e-9, max_iterations=5000, stop_tolerance=1e-11)
    best = update_masks(model.masks, feats, tight)
    return {
        "mass_on_planted": rec.mass_on_planted,
        "support_iou": rec.support_iou,
        "heldout_accuracy": model.accuracy(heldout),
        "heldout_total_masked_corr": total_masked_corr(feats, model.masks),
        "heldout_max_masked_corr": total_masked_corr(feats, best),
        "history": model.history,
    }


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
