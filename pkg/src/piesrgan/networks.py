"""PIESRGAN generator (RRDB trunk, no batch norm) and discriminator.

Parameters are plain numpy arrays keyed by layer path, e.g.
``rrdb0.db1.conv2.weight``.  Forward functions accept an optional mapping
of :class:`~piesrgan.tensor.Tensor` objects so that a training step can
differentiate with respect to any subset of them.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import FingerprintError, ShapeError, ValidationError
from .pifd import atomic_write_bytes
from .tensor import Tensor, add, batch_norm, concat, conv3d, dense, dropout, leaky_relu, mul


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 4
    feature_maps: int = 32
    num_rrdb: int = 4
    db_convs_per_block: int = 5
    growth_channels: int = 16
    residual_scale: float = 0.2
    negative_slope: float = 0.2
    init_gain: float = 0.1
    kernel: int = 3
    padding: str = "periodic"

    def __post_init__(self):
        if not 0.0 <= self.residual_scale <= 1.0:
            raise ValidationError("residual_scale must lie in [0, 1]")
        if self.db_convs_per_block < 1 or self.num_rrdb < 0:
            raise ValidationError("db_convs_per_block must be >= 1 and num_rrdb >= 0")
        if min(self.in_channels, self.feature_maps, self.growth_channels) < 1:
            raise ValidationError("channel counts must be positive")
        if self.kernel % 2 == 0:
            raise ValidationError("kernel extent must be odd")


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 4
    base_filters: int = 32
    num_bn_blocks: int = 7
    dense_width: int = 1024
    dropout_rate: float = 0.4
    input_box: int = 16
    negative_slope: float = 0.2
    kernel: int = 3
    padding: str = "replicate"

    def block_plan(self):
        """``(filters, stride)`` for the BN-free block then each BN block."""
        plan = [(self.base_filters, 1)]
        for j in range(1, self.num_bn_blocks + 1):
            plan.append((self.base_filters * 2 ** (j // 2), 2 if j % 2 == 0 else 1))
        return plan

    def final_extent(self) -> int:
        extent = self.input_box
        for _, stride in self.block_plan():
            if extent % stride:
                raise ShapeError(f"input box {self.input_box} is not divisible by the stride cascade")
            extent //= stride
        return extent

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValidationError("dropout_rate must lie in [0, 1)")
        self.final_extent()


@dataclass
class NetworkParams:
    """Named parameter arrays plus non-trainable buffers for one network."""

    kind: str
    config: object
    params: dict
    buffers: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.kind, self.config)

    def tensors(self, requires_grad: bool = False) -> dict:
        return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in self.params.items()}

    def with_params(self, params: dict, buffers: Optional[dict] = None) -> "NetworkParams":
        return NetworkParams(self.kind, self.config, dict(params),
                             dict(self.buffers if buffers is None else buffers), dict(self.meta))

    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def layer_names(self) -> list:
        return sorted({k.rsplit(".", 1)[0] for k in self.params})


def config_fingerprint(kind: str, config) -> str:
    blob = json.dumps({"kind": kind, "config": asdict(config)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _conv_init(rng, k, cin, cout, gain):
    std = gain * np.sqrt(2.0 / (k ** 3 * cin))
    return rng.standard_normal((k, k, k, cin, cout)) * std, np.zeros(cout)


# ------------------------------------------------------------------- generator

def generator_layers(cfg: GeneratorConfig):
    """``(name, c_in, c_out, residual_branch)`` for every conv, in forward order."""
    fm, gc = cfg.feature_maps, cfg.growth_channels
    layers = [("conv_first", cfg.in_channels, fm, False)]
    for r in range(cfg.num_rrdb):
        for d in range(3):
            for c in range(cfg.db_convs_per_block):
                last = c == cfg.db_convs_per_block - 1
                layers.append((f"rrdb{r}.db{d}.conv{c}", fm + c * gc, fm if last else gc, True))
    layers += [("trunk_conv", fm, fm, False), ("conv_hr1", fm, fm, False),
               ("conv_hr2", fm, fm, False), ("conv_last", fm, cfg.in_channels, False)]
    return layers


def build_generator(cfg: GeneratorConfig = GeneratorConfig(), seed: int = 0) -> NetworkParams:
    """Kaiming fan-in normal init; residual-branch convs are scaled by ``init_gain``."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, cin, cout, residual in generator_layers(cfg):
        gain = cfg.init_gain if residual else 1.0
        params[f"{name}.weight"], params[f"{name}.bias"] = _conv_init(rng, cfg.kernel, cin, cout, gain)
    return NetworkParams("generator", cfg, params)


def _weights(net: NetworkParams, weights: Optional[dict]) -> dict:
    if weights is None:
        return {k: Tensor._wrap(v) for k, v in net.params.items()}
    return weights


def generator_forward(net: NetworkParams, x, weights: Optional[dict] = None) -> Tensor:
    """Map ``(B, D, H, W, C)`` boxes to same-shape reconstructions."""
    cfg: GeneratorConfig = net.config
    x = x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=float))
    if x.ndim != 5 or x.shape[-1] != cfg.in_channels:
        raise ShapeError(f"generator expects (B, D, H, W, {cfg.in_channels}) input, got {x.shape}")
    w = _weights(net, weights)
    slope, beta, pad = cfg.negative_slope, cfg.residual_scale, cfg.padding

    def conv(name, t):
        return conv3d(t, w[f"{name}.weight"], w[f"{name}.bias"], pad)

    first = conv("conv_first", x)
    feat = first
    for r in range(cfg.num_rrdb):
        rrdb_in = feat
        h = feat
        for d in range(3):
            parts = [h]
            for c in range(cfg.db_convs_per_block):
                inp = parts[0] if len(parts) == 1 else concat(parts, axis=-1)
                y = conv(f"rrdb{r}.db{d}.conv{c}", inp)
                if c < cfg.db_convs_per_block - 1:
                    parts.append(leaky_relu(y, slope))
                else:
                    h = add(h, mul(y, beta))
        feat = add(rrdb_in, mul(h, beta))
    feat = add(first, conv("trunk_conv", feat))
    out = leaky_relu(conv("conv_hr1", feat), slope)
    out = leaky_relu(conv("conv_hr2", out), slope)
    return conv("conv_last", out)


def identity_generator(cfg: GeneratorConfig) -> NetworkParams:
    """A generator whose output equals its input exactly.

    Uses ``lrelu(a) - lrelu(-a) = (1 + slope) * a`` to pass signals through
    the activations; residual scale 0 turns every RRDB into the identity.
    """
    C, fm, s = cfg.in_channels, cfg.feature_maps, cfg.negative_slope
    if fm < 2 * C:
        raise ValidationError("identity generator needs feature_maps >= 2 * in_channels")
    cfg = GeneratorConfig(**{**asdict(cfg), "residual_scale": 0.0})
    net = build_generator(cfg, seed=0)
    params = {k: np.zeros_like(v) for k, v in net.params.items()}
    c = cfg.kernel // 2
    eye = np.eye(C)
    params["conv_first.weight"][c, c, c, :C, :C] = eye
    params["conv_hr1.weight"][c, c, c, :C, :C] = eye
    params["conv_hr1.weight"][c, c, c, :C, C:2 * C] = -eye
    for name in ("conv_hr2", "conv_last"):
        params[f"{name}.weight"][c, c, c, :C, :C] = eye / (1 + s)
        params[f"{name}.weight"][c, c, c, C:2 * C, :C] = -eye / (1 + s)
    params["conv_hr2.weight"][c, c, c, :C, C:2 * C] = -eye / (1 + s)
    params["conv_hr2.weight"][c, c, c, C:2 * C, C:2 * C] = eye / (1 + s)
    return net.with_params(params)


# --------------------------------------------------------------- discriminator

def discriminator_layers(cfg: DiscriminatorConfig):
    plan = cfg.block_plan()
    layers = []
    cin = cfg.in_channels
    for j, (filters, stride) in enumerate(plan):
        layers.append((f"block{j}", cin, filters, stride, j > 0))
        cin = filters
    return layers


def build_discriminator(cfg: DiscriminatorConfig = DiscriminatorConfig(),
                        seed: int = 0) -> NetworkParams:
    rng = np.random.default_rng(seed)
    params, buffers = {}, {}
    for name, cin, cout, _, bn in discriminator_layers(cfg):
        params[f"{name}.conv.weight"], params[f"{name}.conv.bias"] = _conv_init(
            rng, cfg.kernel, cin, cout, 1.0)
        if bn:
            params[f"{name}.bn.scale"] = np.ones(cout)
            params[f"{name}.bn.shift"] = np.zeros(cout)
            buffers[f"{name}.bn.running_mean"] = np.zeros(cout)
            buffers[f"{name}.bn.running_var"] = np.ones(cout)
    flat = cfg.final_extent() ** 3 * cfg.block_plan()[-1][0]
    params["dense1.weight"] = rng.standard_normal((flat, cfg.dense_width)) * np.sqrt(2.0 / flat)
    params["dense1.bias"] = np.zeros(cfg.dense_width)
    params["dense2.weight"] = rng.standard_normal((cfg.dense_width, 1)) * np.sqrt(1.0 / cfg.dense_width)
    params["dense2.bias"] = np.zeros(1)
    return NetworkParams("discriminator", cfg, params, buffers)


def discriminator_forward(net: NetworkParams, x, mode: str = "eval",
                          rng: Optional[np.random.Generator] = None,
                          weights: Optional[dict] = None):
    """Raw logits ``(B, 1)`` and the updated batch-norm buffers."""
    cfg: DiscriminatorConfig = net.config
    x = x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=float))
    box = cfg.input_box
    if x.ndim != 5 or x.shape[1:] != (box, box, box, cfg.in_channels):
        raise ShapeError(f"discriminator expects (B, {box}, {box}, {box}, {cfg.in_channels}) "
                         f"input, got {x.shape}")
    w = _weights(net, weights)
    buffers = dict(net.buffers)
    h = x
    for name, _, _, stride, bn in discriminator_layers(cfg):
        h = conv3d(h, w[f"{name}.conv.weight"], w[f"{name}.conv.bias"], cfg.padding, stride)
        if bn:
            h, rm, rv = batch_norm(h, w[f"{name}.bn.scale"], w[f"{name}.bn.shift"], mode,
                                   buffers[f"{name}.bn.running_mean"],
                                   buffers[f"{name}.bn.running_var"])
            buffers[f"{name}.bn.running_mean"] = rm
            buffers[f"{name}.bn.running_var"] = rv
        h = leaky_relu(h, cfg.negative_slope)
    h = h.reshape(h.shape[0], -1)
    h = leaky_relu(dense(h, w["dense1.weight"], w["dense1.bias"]), cfg.negative_slope)
    h = dropout(h, cfg.dropout_rate, mode, rng)
    return dense(h, w["dense2.weight"], w["dense2.bias"]), buffers


# ------------------------------------------------------------------ checkpoints

CKPT_MAGIC = b"PIESRGAN"
CKPT_VERSION = 1
_CONFIG_TYPES = {"generator": GeneratorConfig, "discriminator": DiscriminatorConfig}


def encode_checkpoint(net: NetworkParams) -> bytes:
    """Binary container: header, JSON config/meta, path table, little-endian f64 blobs."""
    header = json.dumps({"kind": net.kind, "config": asdict(net.config), "meta": net.meta},
                        sort_keys=True).encode()
    entries = [("p", k, v) for k, v in sorted(net.params.items())]
    entries += [("b", k, v) for k, v in sorted(net.buffers.items())]
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION), bytes.fromhex(net.fingerprint),
             struct.pack("<I", len(header)), header, struct.pack("<I", len(entries))]
    for tag, name, arr in entries:
        raw = name.encode()
        parts.append(tag.encode() + struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
    for _, _, arr in entries:
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(blob: bytes, expect_fingerprint: Optional[str] = None) -> NetworkParams:
    if blob[:8] != CKPT_MAGIC:
        raise ValidationError("not a PIESRGAN checkpoint")
    pos = 8
    (version,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if version != CKPT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    stored_fp = blob[pos:pos + 32].hex()
    pos += 32
    (hlen,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    header = json.loads(blob[pos:pos + hlen])
    pos += hlen
    kind = header["kind"]
    cfg = _CONFIG_TYPES[kind](**header["config"])
    if config_fingerprint(kind, cfg) != stored_fp:
        raise FingerprintError("checkpoint fingerprint does not match its own configuration")
    if expect_fingerprint is not None and stored_fp != expect_fingerprint:
        raise FingerprintError(f"checkpoint fingerprint {stored_fp[:12]} does not match the "
                               f"expected architecture {expect_fingerprint[:12]}")
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    table = []
    for _ in range(count):
        tag = blob[pos:pos + 1].decode()
        (nlen,) = struct.unpack_from("<H", blob, pos + 1)
        name = blob[pos + 3:pos + 3 + nlen].decode()
        pos += 3 + nlen
        (ndim,) = struct.unpack_from("<I", blob, pos)
        shape = struct.unpack_from(f"<{ndim}I", blob, pos + 4)
        pos += 4 + 4 * ndim
        table.append((tag, name, shape))
    params, buffers = {}, {}
    for tag, name, shape in table:
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).astype(float)
        pos += 8 * size
        (params if tag == "p" else buffers)[name] = arr
    if pos != len(blob):
        raise ValidationError("trailing bytes in checkpoint")
    return NetworkParams(kind, cfg, params, buffers, header.get("meta", {}))


def save_checkpoint(path, net: NetworkParams) -> None:
    atomic_write_bytes(path, encode_checkpoint(net))


def load_checkpoint(path, expect_fingerprint: Optional[str] = None) -> NetworkParams:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read(), expect_fingerprint)


def checkpoint_hash(net: NetworkParams) -> str:
    return hashlib.sha256(encode_checkpoint(net)).hexdigest()


def load_into(net: NetworkParams, loaded: NetworkParams) -> NetworkParams:
    """Check that ``loaded`` fits the architecture of ``net`` and return it."""
    if loaded.fingerprint != net.fingerprint:
        raise FingerprintError("parameter set was built for a different architecture")
    return loaded
