"""Shell spectra, spectral comparison and 2-D slice export."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .fields import Field3, integer_wavenumbers
from .pifd import atomic_write_bytes, atomic_write_text


@dataclass
class SpectrumResult:
    shells: np.ndarray
    energy: np.ndarray

    @property
    def total(self) -> float:
        return float(self.energy.sum())

    def to_text(self) -> str:
        rows = "".join(f"{int(k)} {e:.17g}\n" for k, e in zip(self.shells, self.energy))
        return "# shell energy\n" + rows


def energy_spectrum(f: Field3) -> SpectrumResult:
    """``|u_hat|^2 / 2`` summed over components and binned into nearest-integer shells.

    Modes beyond ``n/2`` (cube corners) are folded into the last shell so
    the shells sum to the volume average of ``|u|^2 / 2``.
    """
    n = f.n
    u_hat = np.fft.fftn(f.data, axes=(1, 2, 3)) / n ** 3
    density = 0.5 * np.sum(np.abs(u_hat) ** 2, axis=0)
    mx, my, mz = integer_wavenumbers(n, real=False)
    shell = np.rint(np.sqrt(mx * mx + my * my + mz * mz)).astype(int)
    top = n // 2
    shell = np.minimum(shell, top)
    energy = np.bincount(shell.ravel(), weights=density.ravel(), minlength=top + 1)
    return SpectrumResult(np.arange(top + 1), energy)


def spectral_error(test: SpectrumResult, ref: SpectrumResult, band) -> float:
    """Mean of ``|log10 S_test - log10 S_ref|`` over shells ``band[0]..band[1]``."""
    lo, hi = int(band[0]), int(band[1])
    if len(test.shells) != len(ref.shells) or not np.array_equal(test.shells, ref.shells):
        raise ValidationError("spectra live on different shell grids")
    if lo < 0 or hi >= len(ref.shells) or lo > hi:
        raise ValidationError(f"band {band} outside shells 0..{len(ref.shells) - 1}")
    s_ref = ref.energy[lo:hi + 1]
    s_test = test.energy[lo:hi + 1]
    if np.any(s_ref <= 0):
        raise ValidationError("reference spectrum has an empty shell in the band")
    if np.any(s_test <= 0):
        return float("inf")
    return float(np.mean(np.abs(np.log10(s_test) - np.log10(s_ref))))


SLICE_AXES = {"x": 0, "y": 1, "z": 2}


def extract_slice(f: Field3, component: int, axis, index: int) -> np.ndarray:
    ax = SLICE_AXES.get(axis, axis)
    if ax not in (0, 1, 2):
        raise ValidationError(f"unknown slice axis {axis!r}")
    if not 0 <= index < f.n:
        raise ValidationError(f"slice index {index} outside 0..{f.n - 1}")
    if not 0 <= component < f.components:
        raise ValidationError(f"component {component} outside 0..{f.components - 1}")
    return np.take(f.data[component], index, axis=ax)


def slice_export(f: Field3, axis, index: int, path, component: int = 0, pgm_path=None) -> np.ndarray:
    """Write one plane as CSV (17 significant digits) and optionally as 8-bit PGM.

    For a slice normal to x the rows run over y and the columns over z;
    normal to y: rows x, columns z; normal to z: rows x, columns y.
    """
    plane = extract_slice(f, component, axis, index)
    ax = SLICE_AXES.get(axis, axis)
    rows, cols = [n for i, n in enumerate("xyz") if i != ax]
    buf = io.StringIO()
    buf.write(f"# component {component} normal {'xyz'[ax]} index {index}; "
              f"rows {rows}, columns {cols}\n")
    writer = csv.writer(buf, lineterminator="\n")
    for row in plane:
        writer.writerow([f"{v:.17g}" for v in row])
    atomic_write_text(path, buf.getvalue())
    if pgm_path is not None:
        lo, hi = plane.min(), plane.max()
        scaled = np.zeros_like(plane) if hi == lo else (plane - lo) / (hi - lo)
        pixels = np.rint(scaled * 255).astype(np.uint8)
        header = f"P5\n{plane.shape[1]} {plane.shape[0]}\n255\n".encode()
        atomic_write_bytes(pgm_path, header + pixels.tobytes())
    return plane


def read_slice_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
