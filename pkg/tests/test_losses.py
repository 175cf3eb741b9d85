import math

import numpy as np
import pytest

from piesrgan.errors import ShapeError, ValidationError
from piesrgan.losses import (LossWeights, continuity_loss, gradient_loss, pixel_loss,
                             relativistic_adv_loss, total_loss)


# brute-force references: explicit loops over sites, no slicing tricks

def ref_pixel(R, H):
    B, D, Hh, W, C = R.shape
    total = 0.0
    for c in range(C):
        acc = 0.0
        for b in range(B):
            for i in range(D):
                for j in range(Hh):
                    for k in range(W):
                        acc += (R[b, i, j, k, c] - H[b, i, j, k, c]) ** 2
        total += acc / (B * D * Hh * W)
    return total


def _cd(a, b, i, j, k, c, axis):
    step = [0, 0, 0]
    step[axis] = 1
    return 0.5 * (a[b, i + step[0], j + step[1], k + step[2], c]
                  - a[b, i - step[0], j - step[1], k - step[2], c])


def ref_gradient(R, H):
    B, D, Hh, W, C = R.shape
    total = 0.0
    n_int = B * (D - 2) * (Hh - 2) * (W - 2)
    for c in range(C):
        for axis in range(3):
            acc = 0.0
            for b in range(B):
                for i in range(1, D - 1):
                    for j in range(1, Hh - 1):
                        for k in range(1, W - 1):
                            acc += (_cd(R, b, i, j, k, c, axis) - _cd(H, b, i, j, k, c, axis)) ** 2
            total += acc / n_int
    return total


def ref_continuity(u):
    B, D, Hh, W, _ = u.shape
    acc, cnt = 0.0, 0
    for b in range(B):
        for i in range(1, D - 1):
            for j in range(1, Hh - 1):
                for k in range(1, W - 1):
                    div = sum(_cd(u, b, i, j, k, d, d) for d in range(3))
                    acc += div * div
                    cnt += 1
    return acc / cnt


def ref_relativistic(cr, cf):
    sig = lambda a: 1.0 / (1.0 + math.exp(-a))
    mr, mf = float(np.mean(cr)), float(np.mean(cf))
    ld = -np.mean([math.log(sig(a - mf)) for a in cr]) - np.mean([math.log(1 - sig(a - mr)) for a in cf])
    lg = -np.mean([math.log(1 - sig(a - mf)) for a in cr]) - np.mean([math.log(sig(a - mr)) for a in cf])
    return ld, lg


def random_pairs(count, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        shape = (int(rng.integers(1, 3)), *rng.integers(3, 6, size=3), 4)
        yield rng.standard_normal(shape), rng.standard_normal(shape)


def test_losses_match_brute_force_references():
    for R, H in random_pairs(50):
        assert pixel_loss(R, H).item() == pytest.approx(ref_pixel(R, H), rel=1e-12, abs=1e-12)
        assert gradient_loss(R, H).item() == pytest.approx(ref_gradient(R, H), rel=1e-12, abs=1e-12)
        u = R[..., 1:4]
        assert continuity_loss(u).item() == pytest.approx(ref_continuity(u), rel=1e-12, abs=1e-12)


def test_relativistic_matches_reference():
    rng = np.random.default_rng(7)
    for _ in range(50):
        cr = rng.standard_normal((int(rng.integers(1, 6)), 1)) * 3
        cf = rng.standard_normal((int(rng.integers(1, 6)), 1)) * 3
        ld, lg = relativistic_adv_loss(cr, cf)
        rd, rg = ref_relativistic(cr.ravel(), cf.ravel())
        assert ld.item() == pytest.approx(rd, rel=1e-12)
        assert lg.item() == pytest.approx(rg, rel=1e-12)


def test_relativistic_closed_forms():
    for c in (-4.0, 0.0, 2.5):
        ld, lg = relativistic_adv_loss(np.full((3, 1), c), np.full((5, 1), c))
        assert abs(ld.item() - 2 * math.log(2)) < 1e-12
        assert abs(lg.item() - 2 * math.log(2)) < 1e-12
    a = 15.0  # differences of 2a hit the clamp at 30
    ld, lg = relativistic_adv_loss(np.full((4, 1), a), np.full((4, 1), -a))
    assert ld.item() == pytest.approx(2 * math.log1p(math.exp(-30.0)), rel=1e-12)
    assert lg.item() == pytest.approx(2 * math.log1p(math.exp(30.0)), rel=1e-12)
    assert ld.item() < 1e-12 and lg.item() == pytest.approx(60.0, rel=1e-12)
    with pytest.raises(ValidationError):
        relativistic_adv_loss(np.zeros((0, 1)), np.zeros((2, 1)))


def test_pixel_closed_forms():
    H = np.random.default_rng(1).standard_normal((2, 4, 4, 4, 4))
    assert pixel_loss(H, H).item() == 0.0
    R = H.copy()
    R[..., 2] += 0.75
    assert pixel_loss(R, H).item() == pytest.approx(0.5625, rel=1e-13)
    with pytest.raises(ShapeError):
        pixel_loss(H, H[..., :3])


def test_gradient_ramp_closed_form():
    H = np.random.default_rng(2).standard_normal((1, 6, 6, 6, 4))
    a = 0.3
    R = H.copy()
    R[..., 1] += a * np.arange(6)[None, None, :, None]
    assert gradient_loss(H, H).item() == 0.0
    assert gradient_loss(R, H).item() == pytest.approx(a * a, rel=1e-12)
    with pytest.raises(ShapeError):
        gradient_loss(H[:, :2], H[:, :2])


def test_continuity_closed_forms():
    n = 16
    x = np.arange(n) * 2 * np.pi / n
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    tg = np.stack([np.sin(X) * np.cos(Y) * np.cos(Z), -np.cos(X) * np.sin(Y) * np.cos(Z),
                   np.zeros_like(X)], axis=-1)[None]
    assert continuity_loss(tg, spacing=2 * np.pi / n).item() < 1e-3
    ramp = np.zeros((1, 5, 5, 5, 3))
    ramp[..., 0] = np.arange(5)[:, None, None]
    assert continuity_loss(ramp).item() == pytest.approx(1.0, rel=1e-14)
    assert continuity_loss(np.full((1, 5, 5, 5, 3), 2.0)).item() == 0.0
    with pytest.raises(ShapeError):
        continuity_loss(np.zeros((1, 5, 5, 5, 4)))


def test_total_loss_combination_and_guards():
    rng = np.random.default_rng(4)
    R, H = rng.standard_normal((2, 2, 6, 6, 6, 4))
    cr, cf = rng.standard_normal((2, 2, 1))
    w = LossWeights(0.3, 1.1, 0.7, 0.2)
    total, terms = total_loss(R, H, cr, cf, w)
    expect = (0.3 * relativistic_adv_loss(cr, cf)[1].item() + 1.1 * pixel_loss(R, H).item()
              + 0.7 * gradient_loss(R, H).item() + 0.2 * continuity_loss(R[..., 1:4]).item())
    assert total.item() == pytest.approx(expect, rel=1e-12)
    assert all(terms[k].item() >= 0 for k in ("pixel", "gradient", "continuity"))
    assert total_loss(H, H, None, None, LossWeights(0, 1, 0, 0))[0].item() == 0.0
    with pytest.raises(ValidationError):
        total_loss(R, None, cr, cf, w)
    s2 = w.for_stage(2)
    total, terms = total_loss(R, None, cr, cf, s2)
    nonzero = [k for k, v in terms.items() if v.item() != 0.0]
    assert sorted(nonzero) == ["adversarial", "continuity"]
    with pytest.raises(ValidationError):
        LossWeights(-1.0)
