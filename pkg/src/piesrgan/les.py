"""Reconstruct-then-filter subgrid closure for coarse-mesh LES.

Each step prolongs the coarse state to the training mesh, lets the
generator reconstruct the unresolved content, evaluates the subfilter
stress and scalar flux from the reconstruction, and advances the coarse
equations with their divergence as a source.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import FingerprintError, NumericalAbort, ValidationError
from .fields import (CHANNELS, Field3, coarsen, derivative_wavenumbers, prolong, project_divfree,
                     rfft3)
from .flow import FlowState, compute_eps, compute_k, step
from .networks import NetworkParams, generator_forward
from .pifd import atomic_write_text
from .pipeline import FilterSpec, apply_filter, denormalize, normalize

SYM_PAIRS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


@dataclass
class LesState:
    velocity: Field3
    scalar: Field3
    filter: FilterSpec
    time: float = 0.0
    nu: float = 0.01
    diffusivity: float = 0.01

    @property
    def n_coarse(self) -> int:
        return self.velocity.n

    @property
    def n_fine(self) -> int:
        return self.velocity.n * self.filter.coarsen_factor

    def flow_state(self) -> FlowState:
        return FlowState(self.velocity, self.scalar, self.time, self.nu, self.diffusivity)

    def stacked(self) -> Field3:
        return Field3(np.concatenate([self.scalar.data, self.velocity.data]),
                      self.velocity.box_length, self.time, CHANNELS)


@dataclass
class ClosureTerms:
    """Upper triangle of the subfilter stress plus the scalar flux, coarse mesh."""

    tau: np.ndarray  # (6, n, n, n) in SYM_PAIRS order
    q: np.ndarray    # (3, n, n, n)

    def stress(self, i: int, j: int) -> np.ndarray:
        return self.tau[SYM_PAIRS.index((min(i, j), max(i, j)))]

    @classmethod
    def zeros(cls, n: int) -> "ClosureTerms":
        return cls(np.zeros((6, n, n, n)), np.zeros((3, n, n, n)))


def les_from_dns(state: FlowState, spec: FilterSpec) -> LesState:
    """Filter and coarsen a DNS state; the coarse velocity is made solenoidal."""
    vel = project_divfree(apply_filter(state.velocity, spec))
    return LesState(vel, apply_filter(state.scalar, spec), spec, state.time, state.nu,
                    state.diffusivity)


def stamp_filter(gen: NetworkParams, spec: FilterSpec) -> NetworkParams:
    """Record the filter a generator was trained for."""
    out = gen.with_params(gen.params)
    out.meta["filter"] = spec.as_dict()
    return out


def check_filter(gen: NetworkParams, spec: FilterSpec) -> None:
    stored = gen.meta.get("filter")
    if stored is None:
        raise FingerprintError("generator carries no training filter; refusing to reconstruct")
    trained = FilterSpec.from_dict(stored)
    if trained.kind != spec.kind or not math.isclose(trained.width, spec.width, rel_tol=1e-12):
        raise FingerprintError(f"generator was trained with {trained.kind} width {trained.width:g}, "
                               f"run uses {spec.kind} width {spec.width:g}")


# ----------------------------------------------------------------- tiling

def tile_starts(n: int, box: int = 16, overlap: int = 4) -> list:
    """Tile origins along one periodic axis, spaced at most ``box - overlap`` apart."""
    if not 0 <= overlap < box:
        raise ValidationError(f"overlap must lie in [0, {box}), got {overlap}")
    if n < box:
        raise ValidationError(f"reconstruction mesh {n} is smaller than the {box}^3 tile")
    m = math.ceil(n / (box - overlap))
    return [j * n // m for j in range(m)]


def tile_window(box: int = 16) -> np.ndarray:
    """Trilinear tent weights, positive on every tile point."""
    t = np.arange(box) + 0.5
    w = 1.0 - np.abs(t - box / 2) / (box / 2) + 1.0 / box
    return w[:, None, None] * w[None, :, None] * w[None, None, :]


def _tile_index(n, starts, box):
    return [(a, np.arange(a, a + box) % n) for a in starts]


def reconstruct(state: LesState, gen: NetworkParams, overlap: int = 4,
                batch_size: int = 8) -> Field3:
    """Fine-mesh (z, u, v, w) reconstruction of a coarse LES state."""
    check_filter(gen, state.filter)
    return reconstruct_field(prolong_stack(state), gen, overlap, batch_size)


def prolong_stack(state: LesState) -> Field3:
    coarse = state.stacked()
    return coarse.with_data(prolong(coarse.data, state.n_fine))


def reconstruct_field(fine: Field3, gen: NetworkParams, overlap: int = 4,
                      batch_size: int = 8, box: int = 16) -> Field3:
    """Blend generator outputs over overlapping periodic tiles of ``fine``.

    The blended output has its per-channel mean removed before
    denormalization, so each channel keeps the input mean exactly.  The
    velocity is then projected onto divergence-free fields.
    """
    if fine.components != gen.config.in_channels:
        raise ValidationError(f"generator expects {gen.config.in_channels} channels, "
                              f"got {fine.components}")
    n = fine.n
    norm, means, variances = normalize(fine)
    data = norm.data
    axes = _tile_index(n, tile_starts(n, box, overlap), box)
    tiles = [(ia, ib, ic) for ia in axes for ib in axes for ic in axes]
    window = tile_window(box)
    acc = np.zeros_like(data)
    wsum = np.zeros((n, n, n))
    for start in range(0, len(tiles), batch_size):
        chunk = tiles[start:start + batch_size]
        x = np.stack([data[np.ix_(range(data.shape[0]), a[1], b[1], c[1])].transpose(1, 2, 3, 0)
                      for a, b, c in chunk])
        y = generator_forward(gen, x).data
        for (a, b, c), out in zip(chunk, y):
            sel = np.ix_(a[1], b[1], c[1])
            wsum[sel] += window
            for ch in range(data.shape[0]):
                acc[ch][sel] += window * out[..., ch]
    blended = acc / wsum
    blended -= blended.mean(axis=(1, 2, 3), keepdims=True)
    out = denormalize(norm.with_data(blended), means, variances).data
    out[1:4] = project_divfree(Field3(out[1:4], fine.box_length)).data
    return fine.with_data(out)


# ---------------------------------------------------------------- closure

def closure_terms(recon: Field3, spec: FilterSpec) -> ClosureTerms:
    """Subfilter stress and scalar flux of a fine (z, u, v, w) field.

    Products and filtered products are formed on the fine mesh and the
    difference is then truncated to the coarse mesh.
    """
    fine_spec = FilterSpec(spec.kind, spec.width, 1)
    n_c = recon.n // spec.coarsen_factor
    z, u = recon.data[0], recon.data[1:4]

    def filt(a):
        return apply_filter(Field3(a, recon.box_length), fine_spec).data

    fu, fz = filt(u), filt(z)[0]
    pairs = np.stack([u[i] * u[j] for i, j in SYM_PAIRS])
    tau = filt(pairs) - np.stack([fu[i] * fu[j] for i, j in SYM_PAIRS])
    q = filt(u * z) - fu * fz
    coarse = coarsen(np.concatenate([tau, q]), n_c)
    return ClosureTerms(coarse[:6], coarse[6:])


def closure_sources(terms: ClosureTerms, box_length: float):
    """``(-d_j tau_ij, -d_j q_j)`` in rfft layout."""
    n = terms.tau.shape[-1]
    kvec = derivative_wavenumbers(n, box_length)
    tau_hat = rfft3(terms.tau)
    q_hat = rfft3(terms.q)
    su = np.stack([-1j * sum(kvec[j] * tau_hat[SYM_PAIRS.index((min(i, j), max(i, j)))]
                             for j in range(3)) for i in range(3)])
    sz = -1j * sum(kvec[j] * q_hat[j] for j in range(3))
    return su, sz


def les_step(state: LesState, gen: Optional[NetworkParams], dt: float, cfl: float = 0.5,
             closure: Optional[ClosureTerms] = None, step_index: Optional[int] = None):
    """Advance one step; returns ``(state, closure_used)``.

    ``gen=None`` runs the unclosed coarse solver.  A precomputed ``closure``
    is reused as is, which allows evaluating the generator less often than
    every step.  Closure sources are frozen over the RK substeps.
    """
    if closure is None:
        if gen is None:
            closure = ClosureTerms.zeros(state.n_coarse)
        else:
            closure = closure_terms(reconstruct(state, gen), state.filter)
    su, sz = closure_sources(closure, state.velocity.box_length)
    try:
        fs = step(state.flow_state(), dt, cfl, step_index, su, sz)
    except NumericalAbort as exc:
        raise NumericalAbort(str(exc), index=exc.index, payload=closure) from exc
    new = replace(state, velocity=fs.velocity, scalar=fs.scalar, time=fs.time)
    return new, closure


@dataclass
class AposterioriResult:
    times: np.ndarray
    k: np.ndarray
    eps: np.ndarray
    ref_times: Optional[np.ndarray] = None
    ref_k: Optional[np.ndarray] = None
    ref_eps: Optional[np.ndarray] = None
    final: Optional[LesState] = None

    def log_k_error(self) -> float:
        """RMS of ``log k - log k_ref`` over shared output times."""
        if self.ref_k is None:
            raise ValidationError("no reference trajectory")
        return float(np.sqrt(np.mean((np.log(self.k) - np.log(self.ref_k)) ** 2)))


def filtered_reference(states: Sequence[FlowState], spec: FilterSpec):
    """``(t, k, eps)`` of filtered-and-coarsened DNS states."""
    rows = []
    for s in states:
        les = les_from_dns(s, spec)
        rows.append((s.time, compute_k(les.velocity), compute_eps(les.velocity, s.nu)))
    return np.array(rows).reshape(-1, 3)


def run_aposteriori(initial: FlowState, gen: Optional[NetworkParams], spec: FilterSpec,
                    nsteps: int, dt: float, output_every: int = 1, cfl: float = 0.5,
                    closure_every: int = 1, reference: Optional[Sequence[FlowState]] = None,
                    callback: Optional[Callable] = None) -> AposterioriResult:
    """Advance the filtered initial state and log ``k``/``eps`` at the output cadence.

    ``reference`` holds DNS states at the output times; they are filtered
    with ``spec`` before their statistics are taken.
    """
    if closure_every < 1:
        raise ValidationError("closure_every must be >= 1")
    state = les_from_dns(initial, spec)
    rows = [(state.time, compute_k(state.velocity), compute_eps(state.velocity, state.nu))]
    closure = None
    for i in range(1, nsteps + 1):
        reuse = closure if (i - 1) % closure_every else None
        state, closure = les_step(state, gen, dt, cfl, reuse, step_index=i)
        if i % output_every == 0:
            rows.append((state.time, compute_k(state.velocity),
                         compute_eps(state.velocity, state.nu)))
            if callback is not None:
                callback(i, state)
    rows = np.array(rows)
    result = AposterioriResult(rows[:, 0], rows[:, 1], rows[:, 2], final=state)
    if reference is not None:
        ref = filtered_reference(reference, spec)
        if ref.shape[0] != rows.shape[0] or not np.allclose(ref[:, 0], rows[:, 0], atol=1e-9):
            raise ValidationError("reference states do not match the LES output times")
        result.ref_times, result.ref_k, result.ref_eps = ref[:, 0], ref[:, 1], ref[:, 2]
    return result


def write_timeseries(path, times, k, eps) -> None:
    lines = ["# t k eps\n"] + [f"{t:.17g} {a:.17g} {b:.17g}\n" for t, a, b in zip(times, k, eps)]
    atomic_write_text(path, "".join(lines))
