import numpy as np
import pytest

from piesrgan.diagnostics import (SpectrumResult, energy_spectrum, read_slice_csv, slice_export,
                                  spectral_error)
from piesrgan.errors import ValidationError
from piesrgan.fields import Field3
from piesrgan.flow import compute_k, init_hit
from piesrgan.pipeline import FilterSpec, apply_filter


def test_single_mode_spectrum():
    n, A = 16, 0.9
    y = np.arange(n) * 2 * np.pi / n
    u = np.zeros((3, n, n, n))
    u[0] = A * np.sin(y)[None, :, None]
    s = energy_spectrum(Field3(u))
    assert s.energy[1] == pytest.approx(A * A / 4, rel=1e-13)
    assert np.abs(np.delete(s.energy, 1)).max() < 1e-28
    assert list(s.shells) == list(range(9))


def test_constant_field_only_shell_zero():
    s = energy_spectrum(Field3(np.full((3, 8, 8, 8), 2.0)))
    assert s.energy[0] == pytest.approx(6.0, rel=1e-14)
    assert np.abs(s.energy[1:]).max() < 1e-28


def test_parseval_on_random_fields():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.choice([4, 6, 8, 10]))
        f = Field3(rng.standard_normal((3, n, n, n)))
        assert energy_spectrum(f).total == pytest.approx(compute_k(f), rel=1e-10)


def test_spectral_error_examples():
    ref = SpectrumResult(np.arange(5), np.array([1.0, 2.0, 3.0, 4.0, 5.0]))
    assert spectral_error(ref, ref, (1, 4)) == 0.0
    ten = SpectrumResult(ref.shells, ref.energy * 10)
    assert spectral_error(ten, ref, (1, 4)) == pytest.approx(1.0, rel=1e-14)
    with pytest.raises(ValidationError):
        spectral_error(ref, SpectrumResult(ref.shells, np.array([1.0, 0, 1, 1, 1])), (1, 3))
    with pytest.raises(ValidationError):
        spectral_error(ref, ref, (0, 9))


def test_filtered_spectral_error_shrinks_with_width():
    s = init_hit(32, seed=2)
    ref = energy_spectrum(s.velocity)
    h = s.velocity.spacing
    errs = [spectral_error(energy_spectrum(apply_filter(s.velocity, FilterSpec(width=w * h))), ref, (2, 8))
            for w in (8, 4, 2, 1)]
    assert errs[0] > 0 and all(b < a for a, b in zip(errs, errs[1:]))


def test_slice_examples(tmp_path):
    n = 8
    x = np.arange(n, dtype=float)
    ramp = Field3(np.broadcast_to(x[:, None, None], (n, n, n))[None].copy())
    plane = slice_export(ramp, "z", 3, tmp_path / "s.csv", pgm_path=tmp_path / "s.pgm")
    assert np.all(plane == plane[:, :1])           # rows run over x, columns over y
    back = read_slice_csv(tmp_path / "s.csv")
    assert np.array_equal(back, plane)
    assert (tmp_path / "s.pgm").read_bytes().startswith(b"P5\n8 8\n255\n")
    assert "rows x, columns y" in (tmp_path / "s.csv").read_text().splitlines()[0]

    const = Field3(np.full((1, n, n, n), 1.25))
    assert np.all(slice_export(const, "x", 0, tmp_path / "c.csv") == 1.25)
    rnd = Field3(np.random.default_rng(1).standard_normal((2, n, n, n)))
    slice_export(rnd, "y", 5, tmp_path / "r.csv", component=1)
    assert np.array_equal(read_slice_csv(tmp_path / "r.csv"), rnd.data[1][:, 5, :])
    with pytest.raises(ValidationError):
        slice_export(rnd, "y", n, tmp_path / "bad.csv")
