"""Network primitives: 3-D convolution, dense layer, dropout, batch norm.

Field tensors use channels-last layout ``(batch, depth, height, width,
channels)``; kernels are ``(kd, kh, kw, c_in, c_out)``.
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .core import Tensor, _record, as_tensor

PADDING_MODES = {"periodic": "wrap", "replicate": "edge"}


def _pad(x: np.ndarray, pads: tuple, mode: str) -> np.ndarray:
    if not any(pads):
        return x
    width = [(0, 0)] + [(p, p) for p in pads] + [(0, 0)]
    return np.pad(x, width, mode=PADDING_MODES[mode])


def _fold_pad(gp: np.ndarray, pads: tuple, mode: str) -> np.ndarray:
    """Adjoint of :func:`_pad`: fold halo gradients back onto the interior."""
    g = gp
    for ax, p in zip((1, 2, 3), pads):
        if p == 0:
            continue
        n = g.shape[ax] - 2 * p
        lo = np.take(g, np.arange(0, p), axis=ax)
        hi = np.take(g, np.arange(p + n, 2 * p + n), axis=ax)
        core = np.take(g, np.arange(p, p + n), axis=ax).copy()
        idx = [slice(None)] * g.ndim
        if mode == "periodic":
            idx[ax] = slice(n - p, n)
            core[tuple(idx)] += lo
            idx[ax] = slice(0, p)
            core[tuple(idx)] += hi
        else:
            idx[ax] = slice(0, 1)
            core[tuple(idx)] += lo.sum(axis=ax, keepdims=True)
            idx[ax] = slice(n - 1, n)
            core[tuple(idx)] += hi.sum(axis=ax, keepdims=True)
        g = core
    return g


def conv3d(x, kernel, bias, padding_mode: str = "periodic", stride: int = 1) -> Tensor:
    """Same-padded 3-D convolution (cross-correlation) with bias.

    With ``stride=2`` every spatial extent is halved; extents must be even.
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    if x.ndim != 5 or kernel.ndim != 5:
        raise ShapeError(f"conv3d expects 5-d input and kernel, got {x.shape} and {kernel.shape}")
    B, D, H, W, cin = x.shape
    kd, kh, kw, kcin, cout = kernel.shape
    if kcin != cin:
        raise ShapeError(f"conv3d: input has {cin} channels but kernel expects {kcin} "
                         f"(input {x.shape}, kernel {kernel.shape})")
    if any(k % 2 == 0 for k in (kd, kh, kw)):
        raise ShapeError(f"conv3d: kernel extents must be odd, got {(kd, kh, kw)}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv3d: bias shape {bias.shape} != ({cout},)")
    if padding_mode not in PADDING_MODES:
        raise ValueError(f"unknown padding mode {padding_mode!r}")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    if stride == 2 and any(n % 2 for n in (D, H, W)):
        raise ShapeError(f"conv3d: stride 2 needs even extents, got {(D, H, W)}")

    pads = (kd // 2, kh // 2, kw // 2)
    xp = _pad(x.data, pads, padding_mode)
    Do, Ho, Wo = D // stride, H // stride, W // stride
    K = kernel.data
    s = stride
    offsets = [(a, b, c) for a in range(kd) for b in range(kh) for c in range(kw)]

    def window(arr, a, b, c):
        return arr[:, a:a + s * Do:s, b:b + s * Ho:s, c:c + s * Wo:s, :]

    out = np.zeros((B * Do * Ho * Wo, cout))
    for a, b, c in offsets:
        cols = np.ascontiguousarray(window(xp, a, b, c)).reshape(-1, cin)
        out += cols @ K[a, b, c]
    out += bias.data
    out = out.reshape(B, Do, Ho, Wo, cout)

    def vjp(g):
        g2 = g.reshape(-1, cout)
        gb = g2.sum(axis=0)
        gk = np.empty_like(K)
        gxp = np.zeros_like(xp)
        for a, b, c in offsets:
            cols = np.ascontiguousarray(window(xp, a, b, c)).reshape(-1, cin)
            gk[a, b, c] = cols.T @ g2
            window(gxp, a, b, c)[...] += (g2 @ K[a, b, c].T).reshape(B, Do, Ho, Wo, cin)
        return _fold_pad(gxp, pads, padding_mode), gk, gb

    return _record(out, (x, kernel, bias), vjp)


def dense(x, weight, bias) -> Tensor:
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: cannot apply weight {weight.shape} to input {x.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"dense: bias shape {bias.shape} != ({weight.shape[1]},)")
    xd, wd = x.data, weight.data
    out = xd @ wd + bias.data
    return _record(out, (x, weight, bias),
                   lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)))


def dropout(x, rate: float, mode: str = "train", rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-rate)`` in train mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if mode == "eval" or rate == 0.0:
        return x
    if mode != "train":
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        raise ValueError("train-mode dropout needs a seeded rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _record(x.data * keep, (x,), lambda g: (g * keep,))


def batch_norm(x, scale, shift, mode: str = "train", running_mean=None, running_var=None,
               momentum: float = 0.9, eps: float = 1e-5):
    """Per-channel batch normalization over all non-channel axes.

    Returns ``(y, new_running_mean, new_running_var)``.  In train mode the
    running averages are ``momentum*old + (1-momentum)*batch``; in eval
    mode the stored statistics are used and returned unchanged.
    """
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    C = x.shape[-1]
    if scale.shape != (C,) or shift.shape != (C,):
        raise ShapeError(f"batch_norm: scale/shift must have shape ({C},)")
    axes = tuple(range(x.ndim - 1))
    xd, gamma = x.data, scale.data
    if running_mean is None:
        running_mean = np.zeros(C)
    if running_var is None:
        running_var = np.ones(C)

    if mode == "train":
        count = xd.size // C
        if count <= 1:
            raise ShapeError("batch_norm in train mode needs more than one value per channel")
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (xd - mu) * inv_std
        new_mean = momentum * np.asarray(running_mean) + (1.0 - momentum) * mu
        new_var = momentum * np.asarray(running_var) + (1.0 - momentum) * var

        def vjp(g):
            dxhat = g * gamma
            dx = inv_std / count * (count * dxhat - dxhat.sum(axis=axes)
                                    - xhat * (dxhat * xhat).sum(axis=axes))
            return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    elif mode == "eval":
        inv_std = 1.0 / np.sqrt(np.asarray(running_var) + eps)
        xhat = (xd - running_mean) * inv_std
        new_mean, new_var = np.asarray(running_mean), np.asarray(running_var)

        def vjp(g):
            return g * gamma * inv_std, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    y = _record(xhat * gamma + shift.data, (x, scale, shift), vjp)
    return y, new_mean, new_var
