import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sblds.errors import DomainError
from sblds.metrics import PSNR_CAP, dice, iou, psnr, psnr_report, ssim
from sblds.volume_io import MaskGrid, VolumeGrid


def brute_ssim(a, b, window=7, k1=0.01, k2=0.03, data_range=1.0):
    """Direct summation over every fully-contained window."""
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    vals = []
    ranges = [range(n - window + 1) for n in a.shape]
    for idx in itertools.product(*ranges):
        sl = tuple(slice(i, i + window) for i in idx)
        x, y = a[sl].ravel(), b[sl].ravel()
        mx, my = x.mean(), y.mean()
        vx = ((x - mx) ** 2).mean()
        vy = ((y - my) ** 2).mean()
        cxy = ((x - mx) * (y - my)).mean()
        vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def test_psnr_examples():
    a = np.random.default_rng(0).random((4, 5, 6))
    assert psnr(a, a) == PSNR_CAP
    assert psnr_report(a, a).saturated
    b = np.full((4, 4, 4), 0.5)
    assert psnr(b, b + 0.1) == pytest.approx(20.0, abs=1e-9)
    c = np.random.default_rng(1).random((4, 5, 6))
    assert psnr(a, c) == psnr(c, a)
    assert psnr(VolumeGrid(a.astype(np.float32)), VolumeGrid(a.astype(np.float32))) == PSNR_CAP
    with pytest.raises(DomainError):
        psnr(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))


def test_psnr_monotone_in_noise():
    rng = np.random.default_rng(0)
    means = []
    for amp in (0.01, 0.05, 0.1, 0.2):
        vals = []
        for _ in range(100):
            a = rng.random((8, 8, 8))
            vals.append(psnr(a, a + amp * rng.standard_normal(a.shape)))
        means.append(np.mean(vals))
    assert all(x > y for x, y in zip(means, means[1:]))


def test_ssim_examples():
    rng = np.random.default_rng(0)
    a = rng.random((8, 9, 10))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)
    b = rng.random((8, 9, 10))
    assert ssim(a, b) == ssim(b, a)
    c1, c2 = 0.01**2, 0.03**2
    expected = c1 * c2 / ((1 + c1) * c2)
    assert ssim(np.zeros((7, 7, 7)), np.ones((7, 7, 7))) == pytest.approx(expected, abs=1e-12)
    with pytest.raises(DomainError):
        ssim(np.zeros((6, 8, 8)), np.zeros((6, 8, 8)))


@pytest.mark.parametrize("shape,window", [((7, 7, 7), 7), ((8, 9, 10), 7), ((6, 5, 7), 3)])
def test_ssim_matches_direct_summation(shape, window):
    rng = np.random.default_rng(sum(shape))
    a = rng.random(shape)
    b = np.clip(a + 0.2 * rng.standard_normal(shape), 0, 1)
    assert ssim(a, b, window=window) == pytest.approx(brute_ssim(a, b, window), abs=1e-10)


def test_dice_iou_examples():
    m1 = np.zeros((2, 2, 2), np.uint8)
    m2 = np.zeros((2, 2, 2), np.uint8)
    assert dice(m1, m2) == 1.0 and iou(m1, m2) == 1.0
    m1[0, 0, :] = 1
    assert dice(m1, m1) == 1.0 and iou(MaskGrid(m1), MaskGrid(m1)) == 1.0
    m2[1, 1, 1] = 1
    assert dice(m1, m2) == 0.0 and iou(m1, m2) == 0.0
    m2[:] = 0
    m2[0, 0, 1] = m2[0, 1, 1] = 1
    assert dice(m1, m2) == 0.5
    assert iou(m1, m2) == pytest.approx(1 / 3)
    with pytest.raises(DomainError):
        dice(np.zeros((2, 2, 2)), np.zeros((2, 2, 1)))


def test_dice_iou_brute_force_trials():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        shape = tuple(rng.integers(1, 5, size=3))
        a = rng.random(shape) < rng.random()
        b = rng.random(shape) < rng.random()
        inter = sum(1 for x, y in zip(a.ravel(), b.ravel()) if x and y)
        na, nb = int(a.sum()), int(b.sum())
        union = na + nb - inter
        d, j = dice(a, b), iou(a, b)
        assert d == (1.0 if na + nb == 0 else 2 * inter / (na + nb))
        assert j == (1.0 if union == 0 else inter / union)
        assert j <= d
        assert d == pytest.approx(2 * j / (1 + j), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dice_iou_symmetric(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((3, 4, 5)) < 0.4
    b = rng.random((3, 4, 5)) < 0.4
    assert dice(a, b) == dice(b, a)
    assert iou(a, b) == iou(b, a)
