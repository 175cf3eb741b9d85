import math

import numpy as np
import pytest

from piesrgan.errors import NumericalAbort, ValidationError
from piesrgan.fields import Field3, max_divergence, project_divfree
from piesrgan.flow import (FlowState, cfl_bound, compute_eps, compute_k, compute_re_lambda,
                           init_hit, run, step)


def grid(n, L=2 * np.pi):
    x = np.arange(n) * L / n
    return np.meshgrid(x, x, x, indexing="ij")


def taylor_green(n, nu=0.1):
    X, Y, _ = grid(n)
    u = np.stack([np.sin(X) * np.cos(Y), -np.cos(X) * np.sin(Y), np.zeros_like(X)])
    return FlowState(Field3(u), Field3(np.zeros((1, n, n, n))), 0.0, nu, nu)


def test_init_hit_properties():
    s = init_hit(16, seed=3, spectrum_peak=3.0, target_k=1.0)
    assert max_divergence(s.velocity) < 1e-10
    assert abs(compute_k(s) - 1.0) < 1e-12
    assert abs(s.scalar.data.mean()) < 1e-14
    s2 = init_hit(16, seed=3, spectrum_peak=3.0, target_k=1.0)
    assert s.velocity.data.tobytes() == s2.velocity.data.tobytes()
    assert s.scalar.data.tobytes() == s2.scalar.data.tobytes()
    s3 = init_hit(16, seed=4, spectrum_peak=3.0, target_k=1.0)
    assert not np.array_equal(s.velocity.data, s3.velocity.data)


@pytest.mark.parametrize("n", [12, 24, 8])
def test_init_hit_rejects_bad_extent(n):
    with pytest.raises(ValidationError):
        init_hit(n, seed=0)


def test_taylor_green_decay_short():
    s = taylor_green(16)
    for _ in range(100):
        s = step(s, 1e-3, scalar=False)
    amp = np.abs(s.velocity.data[0]).max()
    assert amp == pytest.approx(math.exp(-2 * 0.1 * s.time), rel=1e-6)


def test_zero_velocity_leaves_state_unchanged():
    n = 16
    rng = np.random.default_rng(0)
    z = rng.standard_normal((1, n, n, n))
    s = FlowState(Field3(np.zeros((3, n, n, n))), Field3(z), 0.0, 0.01, 0.0)
    s1 = step(s, 0.1)
    np.testing.assert_allclose(s1.scalar.data, z, atol=1e-13)
    assert np.all(s1.velocity.data == 0)
    assert s1.time == pytest.approx(0.1)


def test_uniform_scalar_stays_uniform():
    s = init_hit(16, seed=1)
    s.scalar = Field3(np.full((1, 16, 16, 16), 2.5))
    for _ in range(3):
        s = step(s, 0.5 * cfl_bound(s))
    np.testing.assert_allclose(s.scalar.data, 2.5, atol=1e-13)


def test_cfl_violation_rejected():
    s = taylor_green(16)
    with pytest.raises(ValidationError, match="CFL"):
        step(s, 10.0)


def test_nan_aborts_with_step_index():
    s = taylor_green(16)
    bad = s.velocity.data.copy()
    bad[0, 0, 0, 0] = np.nan
    s.velocity = Field3(bad)
    with pytest.raises(NumericalAbort) as info:
        step(s, 1e-3, step_index=7)
    assert info.value.index == 7


def test_projection_properties():
    rng = np.random.default_rng(2)
    n = 16
    v = Field3(rng.standard_normal((3, n, n, n)))
    p = project_divfree(v)
    assert max_divergence(p) < 1e-10
    pp = project_divfree(p)
    np.testing.assert_allclose(pp.data, p.data, atol=1e-12)
    np.testing.assert_allclose(p.data.mean(axis=(1, 2, 3)), v.data.mean(axis=(1, 2, 3)), atol=1e-14)

    X, Y, Z = grid(n)
    phi_grad = np.stack([np.cos(X) * np.sin(2 * Y), 2 * np.sin(X) * np.cos(2 * Y), np.zeros_like(X)])
    g = project_divfree(Field3(phi_grad + 0.3))
    np.testing.assert_allclose(g.data, 0.3, atol=1e-12)


def test_k_eps_single_mode():
    n, A, k0, nu = 32, 0.7, 3, 0.02
    _, Y, _ = grid(n)
    u = np.zeros((3, n, n, n))
    u[0] = A * np.sin(k0 * Y)
    vel = Field3(u)
    assert compute_k(vel) == pytest.approx(A * A / 4, rel=1e-13)
    assert compute_eps(vel, nu) == pytest.approx(nu * A * A * k0 * k0 / 2, rel=1e-13)
    uprime = math.sqrt(2 * (A * A / 4) / 3)
    lam = math.sqrt(15 * nu * uprime ** 2 / (nu * A * A * k0 * k0 / 2))
    assert compute_re_lambda(vel, nu) == pytest.approx(uprime * lam / nu, rel=1e-12)


def test_zero_velocity_stats():
    vel = Field3(np.zeros((3, 16, 16, 16)))
    assert compute_k(vel) == 0.0
    assert compute_eps(vel, 0.01) == 0.0
    assert compute_re_lambda(vel, 0.01) == math.inf


def test_decay_is_monotone_and_divergence_free_n32():
    s = init_hit(32, seed=5, spectrum_peak=3.0, target_k=0.5, nu=0.02)
    dt = 0.5 * cfl_bound(s)
    ks, divs = [], []

    def cb(i, st):
        ks.append(compute_k(st))
        divs.append(max_divergence(st.velocity))

    run(s, 40, dt, 1, callback=cb)
    assert max(divs) < 1e-10
    assert all(b < a for a, b in zip(ks, ks[1:]))


def test_energy_budget_n32():
    s = init_hit(32, seed=5, spectrum_peak=3.0, target_k=0.5, nu=0.02)
    dt = 0.5 * cfl_bound(s)
    rows = []
    run(s, 60, dt, 5, callback=lambda i, st: rows.append((st.time, compute_k(st), compute_eps(st))))
    rows = np.array(rows)
    dkdt = (rows[2:, 1] - rows[:-2, 1]) / (rows[2:, 0] - rows[:-2, 0])
    assert np.max(np.abs(dkdt + rows[1:-1, 2]) / rows[1:-1, 2]) < 0.02


def test_trajectory_determinism():
    def traj():
        s = init_hit(16, seed=9)
        return run(s, 5, 0.02).velocity.data.tobytes()
    assert traj() == traj()
