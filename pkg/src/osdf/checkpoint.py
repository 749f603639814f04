"""Binary checkpoint format for field networks and the latent table.

Layout (all little-endian):

    magic  b"OSDF"
    version u32
    shape-net block, texture-net block:
        n_layers u32            (0 marks an absent network)
        omega0   f32
        per layer: in u32, out u32, act u32   (0 relu, 1 sine, 2 linear)
        per layer: W as f32 row-major, then b as f32
    latent table:
        count u32, d_sdf u32, d_tex u32
        categories u32 * count
        shape codes  f32 row-major (count x d_sdf)
        texture codes f32 row-major (count x d_tex)

Weights are stored as 32-bit floats; loading promotes them to float64
exactly, so save(load(path)) reproduces the file byte for byte.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ConfigurationError
from .field_net import LINEAR, RELU, SINE, FieldNetwork, LatentTable

MAGIC = b"OSDF"
VERSION = 1

_ACT_CODES = {RELU: 0, SINE: 1, LINEAR: 2}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


def _pack_net(out: list, net: FieldNetwork | None):
    if net is None:
        out.append(struct.pack("<If", 0, 0.0))
        return
    out.append(struct.pack("<If", net.n_layers, net.omega0))
    for w, act in zip(net.weights, net.activations):
        out.append(struct.pack("<III", w.shape[1], w.shape[0], _ACT_CODES[act]))
    for w, b in zip(net.weights, net.biases):
        out.append(np.asarray(w, dtype="<f4").tobytes())
        out.append(np.asarray(b, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def floats(self, count: int) -> np.ndarray:
        arr = np.frombuffer(self.data, dtype="<f4", count=count, offset=self.pos)
        self.pos += 4 * count
        return arr.astype(np.float64)

    def uints(self, count: int) -> np.ndarray:
        arr = np.frombuffer(self.data, dtype="<u4", count=count, offset=self.pos)
        self.pos += 4 * count
        return arr.astype(np.int64)


def _read_net(r: _Reader) -> FieldNetwork | None:
    n_layers, omega0 = r.unpack("<If")
    if n_layers == 0:
        return None
    shapes, acts = [], []
    for _ in range(n_layers):
        in_dim, out_dim, act = r.unpack("<III")
        shapes.append((out_dim, in_dim))
        acts.append(_ACT_NAMES[act])
    weights, biases = [], []
    for out_dim, in_dim in shapes:
        weights.append(r.floats(out_dim * in_dim).reshape(out_dim, in_dim))
        biases.append(r.floats(out_dim))
    return FieldNetwork(weights, biases, acts, omega0=float(omega0))


def save_checkpoint(path, shape_net: FieldNetwork | None, texture_net: FieldNetwork | None,
                    table: LatentTable):
    out = [MAGIC, struct.pack("<I", VERSION)]
    _pack_net(out, shape_net)
    _pack_net(out, texture_net)
    n = len(table)
    d_sdf = table.shape_codes.shape[1]
    d_tex = table.texture_codes.shape[1]
    out.append(struct.pack("<III", n, d_sdf, d_tex))
    out.append(np.asarray(table.categories, dtype="<u4").tobytes())
    out.append(np.asarray(table.shape_codes, dtype="<f4").tobytes())
    out.append(np.asarray(table.texture_codes, dtype="<f4").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(out))


def load_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise ConfigurationError(f"{path}: not an OSDF checkpoint")
    r = _Reader(data)
    r.pos = 4
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {version}")
    shape_net = _read_net(r)
    texture_net = _read_net(r)
    n, d_sdf, d_tex = r.unpack("<III")
    categories = r.uints(n)
    shape_codes = r.floats(n * d_sdf).reshape(n, d_sdf)
    texture_codes = r.floats(n * d_tex).reshape(n, d_tex)
    table = LatentTable(shape_codes, texture_codes, categories)
    return shape_net, texture_net, table
