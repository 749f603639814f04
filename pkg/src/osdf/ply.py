"""PLY point-cloud export/import: x y z nx ny nz red green blue.

Both ascii and binary_little_endian variants are supported. Coordinates
and normals are stored as 32-bit floats, colors as uint8; clouds without
colors are written white.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError

_PROPS = [
    ("float", "x"), ("float", "y"), ("float", "z"),
    ("float", "nx"), ("float", "ny"), ("float", "nz"),
    ("uchar", "red"), ("uchar", "green"), ("uchar", "blue"),
]

_VERTEX_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                          ("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4"),
                          ("red", "u1"), ("green", "u1"), ("blue", "u1")])


def _header(count: int, binary: bool) -> str:
    fmt = "binary_little_endian" if binary else "ascii"
    lines = ["ply", f"format {fmt} 1.0", f"element vertex {count}"]
    lines += [f"property {t} {n}" for t, n in _PROPS]
    lines.append("end_header")
    return "\n".join(lines) + "\n"


def write_ply(path, points, normals, colors=None, binary: bool = True):
    """Write a surface point cloud; colors in [0,1] become uint8."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    normals = np.atleast_2d(np.asarray(normals, dtype=np.float64))
    if points.shape != normals.shape or points.shape[1] != 3:
        raise ConfigurationError("points and normals must both be (N, 3)")
    n = points.shape[0]
    if colors is None:
        rgb = np.full((n, 3), 255, dtype=np.uint8)
    else:
        colors = np.atleast_2d(np.asarray(colors, dtype=np.float64))
        if colors.shape != (n, 3):
            raise ConfigurationError("colors must be (N, 3)")
        rgb = np.clip(np.round(colors * 255.0), 0, 255).astype(np.uint8)

    rows = np.empty(n, dtype=_VERTEX_DTYPE)
    for i, name in enumerate(("x", "y", "z")):
        rows[name] = points[:, i].astype("<f4")
    for i, name in enumerate(("nx", "ny", "nz")):
        rows[name] = normals[:, i].astype("<f4")
    for i, name in enumerate(("red", "green", "blue")):
        rows[name] = rgb[:, i]

    if binary:
        with open(path, "wb") as f:
            f.write(_header(n, binary=True).encode("ascii"))
            f.write(rows.tobytes())
    else:
        with open(path, "w") as f:
            f.write(_header(n, binary=False))
            for r in rows:
                floats = " ".join(format(float(r[name]), ".8g")
                                  for name in ("x", "y", "z", "nx", "ny", "nz"))
                f.write(f"{floats} {r['red']} {r['green']} {r['blue']}\n")


def read_ply(path):
    """Read a PLY written by this module (or matching its property set).

    Returns (points, normals, colors) with colors scaled back to [0, 1];
    missing normal/color properties come back as None.
    """
    with open(path, "rb") as f:
        data = f.read()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise ConfigurationError(f"{path}: not a ply file")
    header = data[:end].decode("ascii").splitlines()
    body = data[end + len(b"end_header\n"):]

    binary = any("binary_little_endian" in ln for ln in header)
    count = None
    names = []
    for ln in header:
        parts = ln.split()
        if parts[:2] == ["element", "vertex"]:
            count = int(parts[2])
        elif parts and parts[0] == "property":
            names.append(parts[2])
    if count is None:
        raise ConfigurationError("ply header missing vertex element")

    type_map = {"x": "<f4", "y": "<f4", "z": "<f4", "nx": "<f4", "ny": "<f4",
                "nz": "<f4", "red": "u1", "green": "u1", "blue": "u1"}
    dtype = np.dtype([(nm, type_map[nm]) for nm in names])
    if binary:
        rows = np.frombuffer(body, dtype=dtype, count=count)
    else:
        text = np.loadtxt(body.decode("ascii").splitlines(), ndmin=2)
        rows = np.zeros(count, dtype=dtype)
        for i, nm in enumerate(names):
            rows[nm] = text[:, i]

    def stack(cols):
        if not all(c in names for c in cols):
            return None
        return np.stack([rows[c].astype(np.float64) for c in cols], axis=1)

    points = stack(("x", "y", "z"))
    normals = stack(("nx", "ny", "nz"))
    colors = stack(("red", "green", "blue"))
    if colors is not None:
        colors = colors / 255.0
    return points, normals, colors
