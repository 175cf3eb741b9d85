"""Periodic cube fields and the spectral helpers the solver and diagnostics share."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ShapeError, ValidationError

TWO_PI = 2.0 * np.pi
CHANNELS = ("z", "u", "v", "w")


@dataclass
class Field3:
    """Scalar or vector field on an ``n**3`` periodic grid.

    ``data`` has shape ``(components, n, n, n)`` and axis order (x, y, z).
    """

    data: np.ndarray
    box_length: float = TWO_PI
    time: float = 0.0
    names: tuple = field(default=())

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 3:
            data = data[None]
        if data.ndim != 4 or not (data.shape[1] == data.shape[2] == data.shape[3]):
            raise ShapeError(f"Field3 needs (components, n, n, n) data, got {data.shape}")
        self.data = data
        if self.names and len(self.names) != data.shape[0]:
            raise ShapeError(f"{len(self.names)} channel names for {data.shape[0]} components")
        self.names = tuple(self.names)

    @property
    def n(self) -> int:
        return self.data.shape[1]

    @property
    def components(self) -> int:
        return self.data.shape[0]

    @property
    def spacing(self) -> float:
        return self.box_length / self.n

    def with_data(self, data, **kw) -> "Field3":
        return replace(self, data=data, **kw)

    def channel(self, i) -> "Field3":
        names = (self.names[i],) if self.names else ()
        return Field3(self.data[i:i + 1].copy(), self.box_length, self.time, names)


def stack_fields(fields, names=CHANNELS) -> Field3:
    """Concatenate fields along components (e.g. scalar + velocity -> z,u,v,w)."""
    first = fields[0]
    data = np.concatenate([f.data for f in fields], axis=0)
    return Field3(data, first.box_length, first.time, names if len(names) == data.shape[0] else ())


def wavenumbers(n: int, box_length: float = TWO_PI, real: bool = True):
    """Broadcastable wavenumber arrays ``(kx, ky, kz)`` for (r)fftn layouts."""
    scale = TWO_PI / box_length
    k = np.fft.fftfreq(n, 1.0 / n) * scale
    kz = np.fft.rfftfreq(n, 1.0 / n) * scale if real else k
    return k[:, None, None], k[None, :, None], kz[None, None, :]


def derivative_wavenumbers(n: int, box_length: float = TWO_PI, real: bool = True):
    """Like :func:`wavenumbers` but with the Nyquist entries zeroed.

    First derivatives of the Nyquist mode have no real representation, so
    gradient, divergence, curl and projection all use these tables.
    """
    out = []
    for k in wavenumbers(n, box_length, real):
        k = k.copy()
        if n % 2 == 0:
            k[np.isclose(np.abs(k), np.abs(k).max()) & (np.abs(k) > 0)] = 0.0
        out.append(k)
    return tuple(out)


def integer_wavenumbers(n: int, real: bool = True):
    k = np.fft.fftfreq(n, 1.0 / n)
    kz = np.fft.rfftfreq(n, 1.0 / n) if real else k
    return k[:, None, None], k[None, :, None], kz[None, None, :]


def rfft3(a: np.ndarray) -> np.ndarray:
    return np.fft.rfftn(a, axes=(-3, -2, -1))


def irfft3(a: np.ndarray, n: int) -> np.ndarray:
    return np.fft.irfftn(a, s=(n, n, n), axes=(-3, -2, -1))


def hermitian_weights(n: int) -> np.ndarray:
    """Multiplicity of each rfft mode in the full spectrum (1 or 2)."""
    w = np.full(n // 2 + 1, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w[None, None, :]


def parseval_mean(a_hat: np.ndarray, n: int) -> float:
    """Volume mean of ``a**2`` from rfft coefficients of a real field."""
    return float((hermitian_weights(n) * np.abs(a_hat) ** 2).sum() / float(n) ** 6)


def project_hat(u_hat: np.ndarray, kvec) -> np.ndarray:
    """Helmholtz projection ``(I - k k^T / k^2) u`` per mode; the mean mode is kept."""
    kx, ky, kz = kvec
    k2 = kx * kx + ky * ky + kz * kz
    inv = np.where(k2 == 0.0, 0.0, 1.0 / np.where(k2 == 0.0, 1.0, k2))
    kdotu = kx * u_hat[0] + ky * u_hat[1] + kz * u_hat[2]
    return np.stack([u_hat[0] - kx * kdotu * inv,
                     u_hat[1] - ky * kdotu * inv,
                     u_hat[2] - kz * kdotu * inv])


def project_divfree(v: Field3) -> Field3:
    """Remove the gradient part of a 3-component field spectrally."""
    if v.components != 3:
        raise ShapeError(f"project_divfree needs 3 components, got {v.components}")
    kvec = derivative_wavenumbers(v.n, v.box_length)
    out = irfft3(project_hat(rfft3(v.data), kvec), v.n)
    return v.with_data(out)


def divergence_hat(u_hat: np.ndarray, kvec) -> np.ndarray:
    kx, ky, kz = kvec
    return 1j * (kx * u_hat[0] + ky * u_hat[1] + kz * u_hat[2])


def max_divergence(v: Field3, relative: bool = True) -> float:
    """``max |i k . u_hat|``, optionally relative to ``max |u_hat|``."""
    u_hat = rfft3(v.data)
    div = np.abs(divergence_hat(u_hat, derivative_wavenumbers(v.n, v.box_length))).max()
    if not relative:
        return float(div)
    scale = np.abs(u_hat).max()
    return float(div / scale) if scale > 0 else 0.0


def _resample(data: np.ndarray, n_to: int) -> np.ndarray:
    """Copy the modes ``|m| < min(n, n_to)/2`` between fft layouts of two sizes."""
    n = data.shape[-1]
    half = min(n, n_to) // 2
    idx = np.r_[0:half, n - half + 1:n]
    oidx = np.r_[0:half, n_to - half + 1:n_to]
    full = np.fft.fftn(data, axes=(-3, -2, -1))
    sub = full[..., idx, :, :][..., :, idx, :][..., :, :, idx]
    out = np.zeros(data.shape[:-3] + (n_to,) * 3, dtype=complex)
    lead = tuple(np.arange(s) for s in data.shape[:-3])
    out[np.ix_(*lead, oidx, oidx, oidx)] = sub
    return np.fft.ifftn(out, axes=(-3, -2, -1)).real * (n_to / n) ** 3


def coarsen(data: np.ndarray, n_to: int) -> np.ndarray:
    """Spectral truncation of ``(..., n, n, n)`` data to ``n_to**3``.

    Modes with ``|m| < n_to/2`` on every axis are kept; the coarse Nyquist
    plane is dropped so that :func:`prolong` inverts this exactly.
    """
    n = data.shape[-1]
    if n_to > n or n % n_to:
        raise ValidationError(f"cannot coarsen {n}^3 to {n_to}^3")
    return data.copy() if n_to == n else _resample(data, n_to)


def prolong(data: np.ndarray, n_to: int) -> np.ndarray:
    """Spectral zero-padding interpolation of ``(..., n, n, n)`` data to ``n_to**3``.

    The source Nyquist plane is discarded; it has no unique real
    continuation on the finer mesh.
    """
    n = data.shape[-1]
    if n_to < n or n_to % n:
        raise ValidationError(f"cannot prolong {n}^3 to {n_to}^3")
    return data.copy() if n_to == n else _resample(data, n_to)
