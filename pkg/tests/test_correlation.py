import numpy as np
import pytest

from conftest import centered_pair
from pcicorr.correlation import (
    correlation_loss,
    hadamard_matrix,
    masked_corr,
    soft_hgr,
    total_masked_corr,
)
from pcicorr.evaluation import gaussian_pair
from pcicorr.features import center, covariance
from pcicorr.mask import MaskSet, PciMask


def test_soft_hgr_scalar_example():
    f = np.array([[1.0], [-1.0]])
    assert soft_hgr(f, f) == 0.0


def test_soft_hgr_zero_g(rng):
    f = center(rng.standard_normal((3, 2)))
    assert soft_hgr(f, np.zeros((3, 2))) == 0.0


def test_soft_hgr_gaussian_monte_carlo():
    # analytic value rho - 1/2 * var_f * var_g = 0.9 - 0.5
    values = [soft_hgr(*gaussian_pair(0.9, 10_000, 1, seed)) for seed in range(20)]
    assert np.all(np.abs(np.array(values) - 0.4) <= 0.05)
    assert abs(np.mean(values) - 0.4) <= 0.01


def test_soft_hgr_matches_direct_formula(rng):
    f, g = centered_pair(rng, n=30, m=5)
    n = f.shape[0]
    direct = np.sum(f * g) / (n - 1) - 0.5 * np.trace(np.cov(f.T) @ np.cov(g.T))
    assert soft_hgr(f, g) == pytest.approx(direct, rel=1e-12)


def test_shape_and_centering_errors(rng):
    f, g = centered_pair(rng, n=10, m=3)
    with pytest.raises(ValueError, match="shape"):
        soft_hgr(f, g[:, :2])
    with pytest.raises(ValueError, match="centered"):
        soft_hgr(f + 1.0, g)
    with pytest.raises(ValueError, match="infeasible"):
        masked_corr(f, g, np.array([1.5, 0.0, 0.0]))
    with pytest.raises(ValueError):
        masked_corr(f, g, np.ones(4))


def test_masked_corr_examples(rng):
    f, g = centered_pair(rng, n=20, m=4)
    assert masked_corr(f, g, np.zeros(4)) == 0.0
    assert masked_corr(f, g, np.ones(4)) == pytest.approx(soft_hgr(f, g), rel=1e-12)
    h = np.array([[1.0, 1.0], [-1.0, -1.0]])
    assert masked_corr(h, h, np.array([1.0, 0.0])) == 0.0


def test_masked_corr_matches_trace_form(rng):
    f, g = centered_pair(rng, n=25, m=6)
    lam = rng.uniform(size=6)
    big = np.diag(lam)
    sf, sg = covariance(f), covariance(g)
    direct = np.einsum("sa,ab,sb->", f, big, g) / 24 - 0.5 * np.trace(sf @ big @ sg @ big)
    assert masked_corr(f, g, lam) == pytest.approx(direct, rel=1e-12)


def test_symmetry_bitwise(rng):
    for _ in range(50):
        f, g = centered_pair(rng)
        lam = rng.uniform(size=8)
        assert masked_corr(f, g, lam) == masked_corr(g, f, lam)


def test_masked_dimension_is_ignored(rng):
    f, g = centered_pair(rng, n=40, m=5)
    lam = rng.uniform(size=5)
    lam[2] = 0.0
    base = masked_corr(f, g, lam)
    f2, g2 = f.copy(), g.copy()
    f2[:, 2] = rng.standard_normal(40) * 50
    g2[:, 2] = rng.standard_normal(40) * 50
    f2, g2 = center(f2).data, center(g2).data
    assert masked_corr(f2, g2, lam) == pytest.approx(base, rel=1e-12, abs=1e-14)


def test_hadamard_matrix_is_psd_on_random_instances(rng):
    for _ in range(200):
        f, g = centered_pair(rng, n=int(rng.integers(2, 50)), m=int(rng.integers(1, 12)))
        quad = hadamard_matrix(covariance(f), covariance(g))
        assert np.linalg.eigvalsh(quad).min() >= -1e-9 * np.trace(quad)


def _maskset(rng, k, m, c=2.0):
    masks = {}
    for i in range(k):
        for j in range(i + 1, k):
            w = rng.uniform(size=m)
            w *= min(1.0, c / w.sum())
            masks[(i, j)] = PciMask(w, c, (i, j))
    return MaskSet(masks, k)


def test_total_k2_is_twice_pair(rng):
    f, g = centered_pair(rng)
    masks = _maskset(rng, 2, 8)
    assert total_masked_corr([f, g], masks) == pytest.approx(
        2 * masked_corr(f, g, masks[(0, 1)]), rel=1e-12
    )


def test_total_k3_identical_identity():
    f = center(np.random.default_rng(3).standard_normal((30, 4))).data
    masks = MaskSet.constant(3, 4, 1.0, c=4.0)
    assert total_masked_corr([f, f, f], masks) == pytest.approx(6 * soft_hgr(f, f), rel=1e-12)


def test_total_matches_double_loop(rng):
    batches = [center(rng.standard_normal((32, 5))).data for _ in range(3)]
    masks = _maskset(rng, 3, 5)
    expected = 0.0
    for i in range(3):
        for j in range(3):
            if i == j:
                continue
            lam = masks[(min(i, j), max(i, j))].weights
            fi, fj = batches[i], batches[j]
            cross = np.sum(fi * lam * fj) / 31
            si, sj = np.cov(fi.T), np.cov(fj.T)
            expected += cross - 0.5 * np.trace(si @ np.diag(lam) @ sj @ np.diag(lam))
    assert total_masked_corr(batches, masks) == pytest.approx(expected, rel=1e-12)


def test_total_missing_pair_and_shape(rng):
    batches = [center(rng.standard_normal((10, 3))).data for _ in range(3)]
    with pytest.raises(KeyError):
        total_masked_corr(batches, {(0, 1): np.ones(3)})
    with pytest.raises(ValueError):
        total_masked_corr(batches[:1], {})


def test_correlation_loss_is_negation(rng):
    batches = [center(rng.standard_normal((10, 3))).data for _ in range(3)]
    masks = _maskset(rng, 3, 3)
    assert correlation_loss(batches, masks) == -total_masked_corr(batches, masks)
    assert correlation_loss(batches, MaskSet.constant(3, 3, 0.0, c=1.0)) == 0.0
    f = np.array([[1.0], [-1.0]])
    assert correlation_loss([f, f], {(0, 1): np.array([1.0])}) == 0.0
