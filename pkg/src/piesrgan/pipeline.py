"""Filtering, normalization and subbox batching of solver output.

Training pairs live on the fine mesh: the filtered input keeps the fine
grid and the network maps it to a same-size reconstruction.  Both the
input and the target of a pair are normalized with the *filtered* field's
per-channel statistics so that a reconstruction can be denormalized
without knowing the unfiltered field.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeError, StageMismatchError, ValidationError
from .fields import CHANNELS, Field3, coarsen, irfft3, prolong, rfft3, wavenumbers
from .pifd import atomic_write_text, read_pifd

FILTER_KINDS = ("gaussian_spectral", "box_spectral")


@dataclass(frozen=True)
class FilterSpec:
    kind: str = "gaussian_spectral"
    width: float = 8 * 2 * math.pi / 64
    coarsen_factor: int = 1

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise ValidationError(f"unknown filter kind {self.kind!r}")
        if self.width <= 0:
            raise ValidationError("filter width must be positive")
        if int(self.coarsen_factor) != self.coarsen_factor or self.coarsen_factor < 1:
            raise ValidationError("coarsen_factor must be an integer >= 1")

    def as_dict(self) -> dict:
        return {"kind": self.kind, "width": float(self.width),
                "coarsen_factor": int(self.coarsen_factor)}

    @classmethod
    def from_dict(cls, d) -> "FilterSpec":
        return cls(d["kind"], float(d["width"]), int(d["coarsen_factor"]))


def transfer_function(spec: FilterSpec, n: int, box_length: float) -> np.ndarray:
    """Filter kernel in rfft layout."""
    kx, ky, kz = wavenumbers(n, box_length)
    if spec.kind == "gaussian_spectral":
        k2 = kx * kx + ky * ky + kz * kz
        return np.exp(-k2 * spec.width ** 2 / 24.0)
    cut = math.pi / spec.width * (1 + 1e-12)
    return ((np.abs(kx) <= cut) & (np.abs(ky) <= cut) & (np.abs(kz) <= cut)).astype(float)


def apply_filter(f: Field3, spec: FilterSpec) -> Field3:
    """Spectral low-pass filter, then optional truncation to ``n / coarsen_factor``."""
    if spec.width < f.spacing * (1 - 1e-12):
        raise ValidationError(f"filter width {spec.width:g} is below the grid spacing {f.spacing:g}")
    if f.n % spec.coarsen_factor:
        raise ValidationError(f"n={f.n} is not divisible by coarsen_factor={spec.coarsen_factor}")
    out = irfft3(rfft3(f.data) * transfer_function(spec, f.n, f.box_length), f.n)
    if spec.coarsen_factor > 1:
        out = coarsen(out, f.n // spec.coarsen_factor)
    return f.with_data(out)


def prolong_field(f: Field3, n_to: int) -> Field3:
    return f.with_data(prolong(f.data, n_to))


def coarsen_field(f: Field3, n_to: int) -> Field3:
    return f.with_data(coarsen(f.data, n_to))


# ---------------------------------------------------------------- normalization

def normalize(f: Field3):
    """Zero-mean, unit-variance channels.  Returns ``(field, means, variances)``."""
    means = f.data.mean(axis=(1, 2, 3))
    variances = f.data.var(axis=(1, 2, 3))
    for c, v in enumerate(variances):
        if not v > 0.0:
            raise ValidationError(f"channel {c} has zero variance; cannot normalize")
    return normalize_with(f, means, variances), means, variances


def normalize_with(f: Field3, means, variances) -> Field3:
    means = np.asarray(means, dtype=float)[:, None, None, None]
    std = np.sqrt(np.asarray(variances, dtype=float))[:, None, None, None]
    return f.with_data((f.data - means) / std)


def denormalize(f: Field3, means, variances) -> Field3:
    means = np.asarray(means, dtype=float)[:, None, None, None]
    std = np.sqrt(np.asarray(variances, dtype=float))[:, None, None, None]
    return f.with_data(f.data * std + means)


# --------------------------------------------------------------------- subboxes

@dataclass
class SamplePair:
    """One ``box**3 x C`` training sample in channels-last layout."""

    input_box: np.ndarray
    target_box: Optional[np.ndarray]
    origin: tuple
    means: np.ndarray
    variances: np.ndarray
    source: tuple = field(default=("", ""))

    @property
    def stage(self) -> int:
        return 1 if self.target_box is not None else 2


def epoch_order(count: int, seed: int, epoch: int = 0) -> np.ndarray:
    """Seeded permutation used to visit ``count`` samples in one epoch."""
    return np.random.default_rng([seed, epoch]).permutation(count)


def box_origins(n: int, box: int = 16) -> list:
    if n % box:
        raise ValidationError(f"grid extent {n} is not divisible by box size {box}")
    starts = range(0, n, box)
    return [(i, j, k) for i in starts for j in starts for k in starts]


def crop(data: np.ndarray, origin, box: int) -> np.ndarray:
    """``(C, n, n, n)`` -> channels-last ``(box, box, box, C)`` copy."""
    i, j, k = origin
    return np.ascontiguousarray(data[:, i:i + box, j:j + box, k:k + box].transpose(1, 2, 3, 0))


def extract_subboxes(fine: Optional[Field3], filtered: Field3, box: int = 16, seed: int = 0,
                     source=("", "")) -> list:
    """Cut non-overlapping aligned boxes from a filtered field and its DNS partner.

    Both fields are normalized with the filtered field's statistics.  The
    returned list is in the seeded epoch-0 order.
    """
    if fine is not None and fine.data.shape != filtered.data.shape:
        raise ShapeError(f"fine {fine.data.shape} and filtered {filtered.data.shape} differ; "
                         "pairs must share the fine mesh")
    origins = box_origins(filtered.n, box)
    f_norm, means, variances = normalize(filtered)
    h_norm = None if fine is None else normalize_with(fine, means, variances).data
    pairs = []
    for idx in epoch_order(len(origins), seed):
        o = origins[idx]
        target = None if h_norm is None else crop(h_norm, o, box)
        pairs.append(SamplePair(crop(f_norm.data, o, box), target, o, means, variances, source))
    return pairs


def assemble_subboxes(pairs: Sequence[SamplePair], n: int, which: str = "target") -> np.ndarray:
    """Inverse of :func:`extract_subboxes`: write boxes back to a ``(C, n, n, n)`` array."""
    first = pairs[0].target_box if which == "target" else pairs[0].input_box
    box, C = first.shape[0], first.shape[-1]
    out = np.full((C, n, n, n), np.nan)
    for p in pairs:
        i, j, k = p.origin
        vals = p.target_box if which == "target" else p.input_box
        out[:, i:i + box, j:j + box, k:k + box] = vals.transpose(3, 0, 1, 2)
    return out


def make_stage1_dataset(fine_fields: Sequence[Field3], spec: FilterSpec, box: int = 16,
                        seed: int = 0) -> list:
    """Filter each DNS snapshot on its own mesh and pair it with the original."""
    if spec.coarsen_factor != 1:
        raise ValidationError("training pairs are built on the fine mesh (coarsen_factor=1)")
    pairs = []
    for i, h in enumerate(fine_fields):
        pairs.extend(extract_subboxes(h, apply_filter(h, spec), box, seed + i))
    return pairs


def make_stage2_dataset(les_fields: Sequence[Field3], n_fine: Optional[int] = None,
                        box: int = 16, seed: int = 0) -> list:
    """Input-only samples from unclosed LES fields, prolonged to the training mesh."""
    pairs = []
    for i, f in enumerate(les_fields):
        if f.components != 4:
            raise ShapeError(f"stage-2 fields need 4 channels (z,u,v,w), got {f.components}")
        if n_fine is not None and n_fine != f.n:
            f = prolong_field(f, n_fine)
        pairs.extend(extract_subboxes(None, f, box, seed + i))
    return pairs


def batches(pairs: Sequence[SamplePair], batch_size: int, seed: int, epoch: int):
    """Yield ``(inputs, targets_or_None)`` arrays for one epoch in seeded order."""
    order = epoch_order(len(pairs), seed, epoch)
    for start in range(0, len(order), batch_size):
        chunk = [pairs[i] for i in order[start:start + batch_size]]
        x = np.stack([p.input_box for p in chunk])
        y = None if chunk[0].target_box is None else np.stack([p.target_box for p in chunk])
        yield x, y


# --------------------------------------------------------------------- manifests

MANIFEST_HEADER = ("# piesrgan manifest v1\n"
                   "# stage input_path target_path ox oy oz "
                   "mean_z var_z mean_u var_u mean_v var_v mean_w var_w\n")


def write_manifest(path, records: Sequence[dict], filter_spec: Optional[FilterSpec] = None) -> None:
    """Write manifest records.

    Each record has keys ``stage``, ``input``, ``target`` (path or None),
    ``origin``, ``means``, ``variances``.  Paths are stored relative to the
    manifest directory when possible.  ``filter_spec`` is kept as a comment
    line so training can label the generator with it.
    """
    base = os.path.dirname(os.path.abspath(path))
    lines = [MANIFEST_HEADER]
    if filter_spec is not None:
        lines.append(f"# filter {filter_spec.kind} {filter_spec.width!r} {filter_spec.coarsen_factor}\n")
    for r in records:
        inp = os.path.relpath(os.path.abspath(r["input"]), base)
        tgt = "-" if r["target"] is None else os.path.relpath(os.path.abspath(r["target"]), base)
        stats = " ".join(f"{m!r} {v!r}" for m, v in zip(map(float, r["means"]),
                                                          map(float, r["variances"])))
        ox, oy, oz = r["origin"]
        lines.append(f"{r['stage']} {inp} {tgt} {ox} {oy} {oz} {stats}\n")
    atomic_write_text(path, "".join(lines))


def read_manifest(path) -> list:
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 6 or (len(parts) - 6) % 2:
                raise ValidationError(f"{path}:{lineno}: malformed manifest record")
            stats = [float(x) for x in parts[6:]]
            records.append({
                "stage": int(parts[0]),
                "input": os.path.join(base, parts[1]),
                "target": None if parts[2] == "-" else os.path.join(base, parts[2]),
                "origin": tuple(int(x) for x in parts[3:6]),
                "means": np.array(stats[0::2]),
                "variances": np.array(stats[1::2]),
            })
    return records


def manifest_filter(path) -> Optional[FilterSpec]:
    with open(path) as fh:
        for line in fh:
            if line.startswith("# filter "):
                kind, width, factor = line.split()[2:5]
                return FilterSpec(kind, float(width), int(factor))
    return None


def manifest_records(pairs: Sequence[SamplePair], stage: int) -> list:
    return [{"stage": stage, "input": p.source[0], "target": p.source[1] if stage == 1 else None,
             "origin": p.origin, "means": p.means, "variances": p.variances} for p in pairs]


def load_manifest(path, box: int = 16, expect_stage: Optional[int] = None) -> list:
    """Materialize :class:`SamplePair` objects from a manifest and its PIFD files."""
    records = read_manifest(path)
    if not records:
        raise ValidationError(f"manifest {path} has no records")
    stages = {r["stage"] for r in records}
    if expect_stage is not None and stages != {expect_stage}:
        raise StageMismatchError(f"manifest {path} holds stage {sorted(stages)} samples "
                                 f"but stage {expect_stage} training was requested")
    cache: dict = {}

    def normalized(p, means, variances):
        key = (p, tuple(means), tuple(variances))
        if key not in cache:
            cache[key] = normalize_with(read_pifd(p), means, variances).data
        return cache[key]

    pairs = []
    for r in records:
        x = crop(normalized(r["input"], r["means"], r["variances"]), r["origin"], box)
        y = None
        if r["target"] is not None:
            y = crop(normalized(r["target"], r["means"], r["variances"]), r["origin"], box)
        pairs.append(SamplePair(x, y, r["origin"], r["means"], r["variances"],
                                (r["input"], r["target"] or "")))
    return pairs


def to_channels(f: Field3, names=CHANNELS) -> Field3:
    """Attach the standard (z, u, v, w) channel names to a 4-component field."""
    if f.components != len(names):
        raise ShapeError(f"expected {len(names)} components, got {f.components}")
    return Field3(f.data, f.box_length, f.time, tuple(names))
