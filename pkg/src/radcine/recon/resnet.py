"""Inference-only 3-D residual proximal network over (t, y, x).

Architecture (all convolutions 3x3x3, circular padding on every axis,
weights laid out [out, in, kt, ky, kx]):

    h = head(input)                      3 -> C channels
    h = h + conv2(relu(conv1(h)))        repeated n_blocks times
    out = tail(relu(h))                  C -> 2 channels

The input channels are (real, imag, k/K); `out` is added to (real, imag).

Weight file: an 8-byte little-endian length, a UTF-8 JSON header with
n_blocks, channels, kernel and the ordered layer list (name, shape), then
the little-endian float32 payload of each layer in header order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

KERNEL = (3, 3, 3)
IN_CHANNELS = 3
OUT_CHANNELS = 2


def layer_shapes(n_blocks: int, channels: int) -> list:
    C = channels
    shapes = [("head.weight", (C, IN_CHANNELS) + KERNEL), ("head.bias", (C,))]
    for i in range(n_blocks):
        for conv in ("conv1", "conv2"):
            shapes.append((f"block{i}.{conv}.weight", (C, C) + KERNEL))
            shapes.append((f"block{i}.{conv}.bias", (C,)))
    shapes += [("tail.weight", (OUT_CHANNELS, C) + KERNEL), ("tail.bias", (OUT_CHANNELS,))]
    return shapes


class WeightFileError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ProxWeights:
    n_blocks: int
    channels: int
    layers: dict

    def validate(self):
        from ..types import Violation
        expected = layer_shapes(self.n_blocks, self.channels)
        if list(self.layers) != [n for n, _ in expected]:
            return Violation("ProxWeights.layers", "layer names match architecture")
        for name, shape in expected:
            a = self.layers[name]
            if a.shape != shape:
                return Violation(f"ProxWeights.{name}", "shape consistent with architecture",
                                 f"{a.shape} != {shape}")
            if not np.all(np.isfinite(a)):
                return Violation(f"ProxWeights.{name}", "finite")
        return None

    def header(self) -> dict:
        return {"n_blocks": self.n_blocks, "channels": self.channels, "kernel": list(KERNEL),
                "layers": [{"name": n, "shape": list(a.shape)} for n, a in self.layers.items()]}


def zero_weights(n_blocks: int = 2, channels: int = 8) -> ProxWeights:
    return ProxWeights(n_blocks, channels,
                       {n: np.zeros(s, np.float32) for n, s in layer_shapes(n_blocks, channels)})


def make_random_weights(n_blocks: int = 2, channels: int = 8, scale: float = 0.05,
                        seed: int = 0) -> ProxWeights:
    rng = np.random.default_rng(seed)
    return ProxWeights(n_blocks, channels,
                       {n: (scale * rng.standard_normal(s)).astype(np.float32)
                        for n, s in layer_shapes(n_blocks, channels)})


def write_weights(path, w: ProxWeights) -> Path:
    header = json.dumps(w.header()).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for a in w.layers.values():
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return path


def read_weights(path) -> ProxWeights:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise WeightFileError("truncated header length")
    (hlen,) = struct.unpack("<Q", raw[:8])
    try:
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
        n_blocks, channels = int(header["n_blocks"]), int(header["channels"])
        specs = [(d["name"], tuple(d["shape"])) for d in header["layers"]]
    except (ValueError, KeyError, TypeError) as e:
        raise WeightFileError(f"malformed header: {e}") from None
    if tuple(header.get("kernel", KERNEL)) != KERNEL:
        raise WeightFileError(f"unsupported kernel {header.get('kernel')}")
    pos = 8 + hlen
    layers = {}
    for name, shape in specs:
        n = int(np.prod(shape)) * 4
        if pos + n > len(raw):
            raise WeightFileError(f"truncated payload in layer {name}")
        layers[name] = np.frombuffer(raw[pos:pos + n], dtype="<f4").reshape(shape).copy()
        pos += n
    if pos != len(raw):
        raise WeightFileError("trailing bytes after last layer")
    w = ProxWeights(n_blocks, channels, layers)
    v = w.validate()
    if v is not None:
        raise WeightFileError(str(v))
    return w


def conv3d_circular(x, weight, bias) -> np.ndarray:
    """Cross-correlation of x [C_in, T, Y, X] with circular padding of one voxel."""
    w = np.asarray(weight, dtype=np.float64)
    out = np.zeros((w.shape[0],) + x.shape[1:], dtype=np.float64)
    for dt in range(3):
        for dy in range(3):
            for dx in range(3):
                k = w[:, :, dt, dy, dx]
                if not np.any(k):
                    continue
                shifted = np.roll(x, (1 - dt, 1 - dy, 1 - dx), axis=(1, 2, 3))
                out += np.tensordot(k, shifted, axes=(1, 0))
    out += np.asarray(bias, dtype=np.float64)[:, None, None, None]
    return out


def resnet_prox_infer(x, w: ProxWeights, k_over_K: float) -> np.ndarray:
    """Apply the residual proximal network to a complex cine [T, N, N]."""
    v = w.validate()
    if v is not None:
        raise WeightFileError(str(v))
    frames = np.asarray(getattr(x, "frames", x))
    inp = np.stack([frames.real, frames.imag,
                    np.full(frames.shape, float(k_over_K))]).astype(np.float64)
    L = w.layers
    h = conv3d_circular(inp, L["head.weight"], L["head.bias"])
    for i in range(w.n_blocks):
        r = np.maximum(conv3d_circular(h, L[f"block{i}.conv1.weight"], L[f"block{i}.conv1.bias"]), 0)
        h = h + conv3d_circular(r, L[f"block{i}.conv2.weight"], L[f"block{i}.conv2.bias"])
        if not np.all(np.isfinite(h)):
            raise FloatingPointError(f"non-finite activation after block {i}")
    out = conv3d_circular(np.maximum(h, 0), L["tail.weight"], L["tail.bias"])
    return frames + (out[0] + 1j * out[1])
