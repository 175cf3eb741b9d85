"""Pseudo-spectral solver for decaying homogeneous isotropic turbulence.

Incompressible Navier-Stokes in rotational form plus a passive scalar in a
triply periodic box, advanced with Williamson's low-storage RK3.  Quadratic
terms are formed from 2/3-truncated fields and truncated again, so the
semi-discrete system conserves kinetic energy up to viscous dissipation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericalAbort, ValidationError
from .fields import (TWO_PI, Field3, derivative_wavenumbers, integer_wavenumbers, irfft3,
                     parseval_mean, project_hat, rfft3, wavenumbers)

RK3_A = (0.0, -5.0 / 9.0, -153.0 / 128.0)
RK3_B = (1.0 / 3.0, 15.0 / 16.0, 8.0 / 15.0)


@dataclass
class FlowState:
    velocity: Field3
    scalar: Field3
    time: float = 0.0
    nu: float = 0.01
    diffusivity: float = 0.01

    @property
    def n(self) -> int:
        return self.velocity.n

    @property
    def box_length(self) -> float:
        return self.velocity.box_length


class SpectralOps:
    """Wavenumber tables and transforms for one grid size."""

    def __init__(self, n: int, box_length: float = TWO_PI):
        self.n = n
        self.box_length = box_length
        kx, ky, kz = wavenumbers(n, box_length)
        self.k = derivative_wavenumbers(n, box_length)
        self.k2 = kx * kx + ky * ky + kz * kz
        mx, my, mz = integer_wavenumbers(n)
        cut = n / 3.0
        self.dealias = (np.abs(mx) < cut) & (np.abs(my) < cut) & (np.abs(mz) < cut)

    def to_phys(self, a_hat):
        return irfft3(a_hat, self.n)

    def curl_hat(self, u_hat):
        kx, ky, kz = self.k
        return 1j * np.stack([ky * u_hat[2] - kz * u_hat[1],
                              kz * u_hat[0] - kx * u_hat[2],
                              kx * u_hat[1] - ky * u_hat[0]])

    def rhs(self, u_hat, z_hat, nu, diff, extra_u=None, extra_z=None):
        """Time derivatives of ``(u_hat, z_hat)``; ``extra_*`` are added before projection."""
        m = self.dealias
        u = self.to_phys(u_hat * m)
        w = self.to_phys(self.curl_hat(u_hat) * m)
        cross = np.stack([u[1] * w[2] - u[2] * w[1],
                          u[2] * w[0] - u[0] * w[2],
                          u[0] * w[1] - u[1] * w[0]])
        du = rfft3(cross) * m - nu * self.k2 * u_hat
        if extra_u is not None:
            du = du + extra_u
        du = project_hat(du, self.k)

        dz = None
        if z_hat is not None:
            z = self.to_phys(z_hat * m)
            flux = rfft3(u * z) * m
            kx, ky, kz = self.k
            dz = -1j * (kx * flux[0] + ky * flux[1] + kz * flux[2]) - diff * self.k2 * z_hat
            if extra_z is not None:
                dz = dz + extra_z
        return du, dz

    def rk3(self, u_hat, z_hat, dt, nu, diff, extra_u=None, extra_z=None):
        du_acc = np.zeros_like(u_hat)
        dz_acc = None if z_hat is None else np.zeros_like(z_hat)
        for a, b in zip(RK3_A, RK3_B):
            du, dz = self.rhs(u_hat, z_hat, nu, diff, extra_u, extra_z)
            du_acc = a * du_acc + dt * du
            u_hat = u_hat + b * du_acc
            if z_hat is not None:
                dz_acc = a * dz_acc + dt * dz
                z_hat = z_hat + b * dz_acc
        return project_hat(u_hat, self.k), z_hat


_OPS_CACHE: dict = {}


def spectral_ops(n: int, box_length: float = TWO_PI) -> SpectralOps:
    key = (n, float(box_length))
    if key not in _OPS_CACHE:
        _OPS_CACHE[key] = SpectralOps(n, box_length)
    return _OPS_CACHE[key]


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def init_hit(n: int, seed: int, spectrum_peak: float = 3.0, target_k: float = 0.5,
             nu: float = 0.01, schmidt: float = 1.0, box_length: float = TWO_PI,
             scalar_variance: float | None = None) -> FlowState:
    """Random solenoidal field with ``E(k) ~ k^4 exp(-2 (k/k0)^2)`` and energy ``target_k``.

    The passive scalar gets the same spectral shape, zero mean and, unless
    given, the variance of one velocity component.
    """
    if not _is_pow2(n) or n < 16:
        raise ValidationError(f"grid extent must be a power of two >= 16, got {n}")
    ops = spectral_ops(n, box_length)
    rng = np.random.default_rng(seed)
    kmag = np.sqrt(ops.k2)
    with np.errstate(divide="ignore", invalid="ignore"):
        shape = np.where(kmag > 0,
                         np.sqrt(kmag ** 4 * np.exp(-2.0 * (kmag / spectrum_peak) ** 2)) / kmag,
                         0.0)
    shape = shape * ops.dealias

    noise = rng.standard_normal((4, n, n, n))
    u_hat = project_hat(rfft3(noise[1:]) * shape, ops.k)
    u = ops.to_phys(u_hat)
    k_now = 0.5 * np.mean(np.sum(u * u, axis=0))
    u = u * math.sqrt(target_k / k_now)

    z = ops.to_phys(rfft3(noise[0]) * shape)
    z = z - z.mean()
    var = (2.0 * target_k / 3.0) if scalar_variance is None else scalar_variance
    z = z * math.sqrt(var / np.mean(z * z))

    return FlowState(Field3(u, box_length, 0.0, ("u", "v", "w")),
                     Field3(z[None], box_length, 0.0, ("z",)),
                     0.0, nu, nu / schmidt)


def cfl_bound(state: FlowState, cfl: float = 0.5) -> float:
    speed = np.sqrt(np.sum(state.velocity.data ** 2, axis=0)).max()
    return math.inf if speed == 0 else cfl * state.velocity.spacing / speed


def step(state: FlowState, dt: float, cfl: float = 0.5, step_index: int | None = None,
         extra_u_hat=None, extra_z_hat=None, scalar: bool = True) -> FlowState:
    """Advance ``state`` by one RK3 step of size ``dt``.

    ``extra_*_hat`` are optional constant source terms in rfft layout.
    Raises :class:`ValidationError` when ``dt`` exceeds the advective CFL
    bound and :class:`NumericalAbort` when the result is not finite.
    """
    bound = cfl_bound(state, cfl)
    if dt > bound:
        raise ValidationError(f"dt={dt:g} violates the CFL bound {bound:g} (cfl={cfl})")
    ops = spectral_ops(state.n, state.box_length)
    u_hat = rfft3(state.velocity.data)
    z_hat = rfft3(state.scalar.data[0]) if scalar else None
    u_hat, z_hat = ops.rk3(u_hat, z_hat, dt, state.nu, state.diffusivity,
                           extra_u_hat, extra_z_hat)
    u = ops.to_phys(u_hat)
    z = ops.to_phys(z_hat)[None] if scalar else state.scalar.data
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(z))):
        raise NumericalAbort(f"non-finite field after step {step_index}", index=step_index)
    t = state.time + dt
    return replace(state,
                   velocity=state.velocity.with_data(u, time=t),
                   scalar=state.scalar.with_data(z, time=t),
                   time=t)


def compute_k(state_or_velocity) -> float:
    u = _velocity(state_or_velocity).data
    return float(0.5 * np.mean(np.sum(u * u, axis=0)))


def strain_rate_hat(u_hat, kvec):
    """Spectral ``s_ij = (d_j u_i + d_i u_j)/2`` as a dict keyed by (i, j), i <= j."""
    s = {}
    for i in range(3):
        for j in range(i, 3):
            s[(i, j)] = 0.5j * (kvec[j] * u_hat[i] + kvec[i] * u_hat[j])
    return s


def compute_eps(state_or_velocity, nu: float | None = None) -> float:
    """``2 nu <s_ij s_ij>`` with spectral derivatives."""
    vel = _velocity(state_or_velocity)
    if nu is None:
        nu = state_or_velocity.nu
    u_hat = rfft3(vel.data)
    total = 0.0
    for (i, j), sij in strain_rate_hat(u_hat, derivative_wavenumbers(vel.n, vel.box_length)).items():
        total += (1.0 if i == j else 2.0) * parseval_mean(sij, vel.n)
    return 2.0 * nu * total


def compute_re_lambda(state_or_velocity, nu: float | None = None) -> float:
    if nu is None:
        nu = state_or_velocity.nu
    k = compute_k(state_or_velocity)
    eps = compute_eps(state_or_velocity, nu)
    if eps == 0.0:
        return math.inf
    uprime = math.sqrt(2.0 * k / 3.0)
    lam = math.sqrt(15.0 * nu * uprime ** 2 / eps)
    return uprime * lam / nu


def _velocity(obj) -> Field3:
    return obj.velocity if isinstance(obj, FlowState) else obj


def run(state: FlowState, nsteps: int, dt: float, output_every: int = 1, cfl: float = 0.5,
        callback=None, scalar: bool = True):
    """Advance ``nsteps`` steps, calling ``callback(step_index, state)`` at the cadence.

    The callback is also invoked for the initial state (index 0).
    Returns the final state.
    """
    if callback is not None:
        callback(0, state)
    for i in range(1, nsteps + 1):
        state = step(state, dt, cfl, step_index=i, scalar=scalar)
        if callback is not None and i % output_every == 0:
            callback(i, state)
    return state
