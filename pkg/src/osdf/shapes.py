"""Procedural ground-truth shapes: analytic SDF and color oracles.

Every shape lives in the canonical frame and fits inside [-1, 1]^3; the
vertical (y) axis is the symmetry axis for the rotationally symmetric
kinds. SDFs are exact Euclidean distances for all kinds except the
superellipsoid, which uses an iteratively refined first-order estimate
(measured error < 1e-3 inside the |s| <= 0.2 band for exponents in
[2, 8] and half extents >= 0.2; excluded from exactness tests).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

KINDS = ("sphere", "box", "cylinder", "torus", "capsule", "superellipsoid")
COLOR_KINDS = ("solid", "axis_gradient", "two_tone")


@dataclass
class ColorSpec:
    kind: str = "solid"
    rgb: tuple = (0.7, 0.7, 0.7)
    rgb2: tuple = (0.2, 0.2, 0.2)
    axis: int = 1
    period: float = 0.25

    def __post_init__(self):
        if self.kind not in COLOR_KINDS:
            raise ConfigurationError(f"unknown color kind {self.kind!r}")
        for c in (*self.rgb, *self.rgb2):
            if not 0.0 <= c <= 1.0:
                raise ConfigurationError("colors must lie in [0, 1]")

    def __call__(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        c0 = np.asarray(self.rgb, dtype=np.float64)
        c1 = np.asarray(self.rgb2, dtype=np.float64)
        if self.kind == "solid":
            return np.broadcast_to(c0, (p.shape[0], 3)).copy()
        if self.kind == "axis_gradient":
            t = np.clip((p[:, self.axis] + 1.0) / 2.0, 0.0, 1.0)[:, None]
            return (1.0 - t) * c0 + t * c1
        # two_tone: alternating bands along the axis
        band = np.floor((p[:, self.axis] + 1.0) / self.period).astype(np.int64)
        return np.where((band % 2 == 0)[:, None], c0, c1)


@dataclass
class ShapeSpec:
    """One procedural object: geometry kind, size parameters, color, category."""

    kind: str
    params: dict
    color: ColorSpec = field(default_factory=ColorSpec)
    category: int = 0
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown shape kind {self.kind!r}")

    def sdf(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return _SDF_FNS[self.kind](p, self.params)

    def sdf_gradient(self, points: np.ndarray, h: float = 1e-5) -> np.ndarray:
        """Central-difference gradient of the oracle SDF."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        g = np.empty_like(p)
        for axis in range(3):
            dp = np.zeros(3)
            dp[axis] = h
            g[:, axis] = (self.sdf(p + dp) - self.sdf(p - dp)) / (2.0 * h)
        return g

    def colors(self, points: np.ndarray) -> np.ndarray:
        return self.color(points)

    def volume(self) -> float:
        """Analytic volume; used as a sampling-fraction oracle."""
        q = self.params
        if self.kind == "sphere":
            return 4.0 / 3.0 * np.pi * q["radius"] ** 3
        if self.kind == "box":
            hx, hy, hz = q["half_extents"]
            return 8.0 * hx * hy * hz
        if self.kind == "cylinder":
            return 2.0 * np.pi * q["radius"] ** 2 * q["half_height"]
        if self.kind == "torus":
            return 2.0 * np.pi ** 2 * q["major"] * q["minor"] ** 2
        if self.kind == "capsule":
            r, h = q["radius"], q["half_height"]
            return 2.0 * np.pi * r ** 2 * h + 4.0 / 3.0 * np.pi * r ** 3
        raise ConfigurationError(f"no analytic volume for {self.kind!r}")


# ----- SDF primitives -------------------------------------------------------


def _sdf_sphere(p, q):
    return np.linalg.norm(p, axis=1) - q["radius"]


def _sdf_box(p, q):
    d = np.abs(p) - np.asarray(q["half_extents"], dtype=np.float64)
    outer = np.linalg.norm(np.maximum(d, 0.0), axis=1)
    inner = np.minimum(d.max(axis=1), 0.0)
    return outer + inner


def _sdf_cylinder(p, q):
    radial = np.hypot(p[:, 0], p[:, 2]) - q["radius"]
    axial = np.abs(p[:, 1]) - q["half_height"]
    d = np.stack([radial, axial], axis=1)
    outer = np.linalg.norm(np.maximum(d, 0.0), axis=1)
    inner = np.minimum(d.max(axis=1), 0.0)
    return outer + inner


def _sdf_torus(p, q):
    ring = np.hypot(p[:, 0], p[:, 2]) - q["major"]
    return np.hypot(ring, p[:, 1]) - q["minor"]


def _sdf_capsule(p, q):
    seg = p.copy()
    seg[:, 1] -= np.clip(p[:, 1], -q["half_height"], q["half_height"])
    return np.linalg.norm(seg, axis=1) - q["radius"]


def _sdf_superellipsoid(p, q):
    half = np.asarray(q["half_extents"], dtype=np.float64)
    m = float(q.get("exponent", 4.0))
    if m < 2.0:
        raise ConfigurationError("superellipsoid exponent must be >= 2")

    def implicit(x):
        u = np.abs(x) / half
        s = np.power(u, m).sum(axis=1)
        return np.power(s, 1.0 / m) - 1.0

    def grad(x):
        u = np.abs(x) / half
        s = np.power(u, m).sum(axis=1)
        s = np.maximum(s, 1e-300)
        outer = np.power(s, 1.0 / m - 1.0)[:, None]
        return outer * np.power(u, m - 1.0) * np.sign(x) / half

    g0 = implicit(p)
    # Newton-walk a copy of each point onto the implicit surface, then
    # report the signed Euclidean length of the walk.
    x = p.copy()
    for _ in range(8):
        gx = implicit(x)
        dg = grad(x)
        nrm2 = np.maximum((dg ** 2).sum(axis=1), 1e-12)
        x = x - (gx / nrm2)[:, None] * dg
    dist = np.linalg.norm(p - x, axis=1)
    near_center = np.linalg.norm(p, axis=1) < 1e-9
    dist[near_center] = half.min()
    return np.sign(g0) * dist


_SDF_FNS = {
    "sphere": _sdf_sphere,
    "box": _sdf_box,
    "cylinder": _sdf_cylinder,
    "torus": _sdf_torus,
    "capsule": _sdf_capsule,
    "superellipsoid": _sdf_superellipsoid,
}


# ----- spec files ------------------------------------------------------------


def specs_to_json(specs, path=None) -> str:
    objs = []
    for s in specs:
        color = {"kind": s.color.kind, "rgb": list(s.color.rgb), "rgb2": list(s.color.rgb2),
                 "axis": s.color.axis, "period": s.color.period}
        objs.append({"kind": s.kind, "params": s.params, "color": color,
                     "category": s.category, "name": s.name})
    text = json.dumps({"objects": objs}, indent=2) + "\n"
    if path is not None:
        with open(path, "w") as f:
            f.write(text)
    return text


def specs_from_json(source) -> list:
    """Parse a shape-spec file (path or JSON string)."""
    text = source
    if not str(source).lstrip().startswith("{"):
        with open(source) as f:
            text = f.read()
    data = json.loads(text)
    if "objects" not in data:
        raise ConfigurationError("shape spec file must contain an 'objects' list")
    specs = []
    for obj in data["objects"]:
        c = obj.get("color", {})
        color = ColorSpec(kind=c.get("kind", "solid"),
                          rgb=tuple(c.get("rgb", (0.7, 0.7, 0.7))),
                          rgb2=tuple(c.get("rgb2", (0.2, 0.2, 0.2))),
                          axis=int(c.get("axis", 1)),
                          period=float(c.get("period", 0.25)))
        specs.append(ShapeSpec(kind=obj["kind"], params=dict(obj["params"]),
                               color=color, category=int(obj.get("category", 0)),
                               name=obj.get("name", "")))
    return specs


# ----- desk-scale database ----------------------------------------------------


def desk_database():
    """Small procedural training set plus held-out refinement targets.

    Three categories: 0 spheres, 1 boxes, 2 capped cylinders/capsules.
    Held-out objects sit inside each category's size range but away from
    its mean, so mean-latent initialization leaves room to optimize.
    """
    def solid(r, g, b):
        return ColorSpec("solid", (r, g, b))

    train = [
        ShapeSpec("sphere", {"radius": 0.35}, solid(0.85, 0.15, 0.15), 0, "sphere_s"),
        ShapeSpec("sphere", {"radius": 0.45}, solid(0.75, 0.30, 0.10), 0, "sphere_m"),
        ShapeSpec("sphere", {"radius": 0.55}, solid(0.90, 0.55, 0.10), 0, "sphere_l"),
        ShapeSpec("sphere", {"radius": 0.65}, solid(0.95, 0.80, 0.20), 0, "sphere_xl"),
        ShapeSpec("box", {"half_extents": [0.30, 0.30, 0.30]}, solid(0.10, 0.25, 0.80), 1, "box_s"),
        ShapeSpec("box", {"half_extents": [0.45, 0.45, 0.45]}, solid(0.15, 0.45, 0.70), 1, "box_m"),
        ShapeSpec("box", {"half_extents": [0.35, 0.50, 0.30]}, solid(0.20, 0.65, 0.60), 1, "box_tall"),
        ShapeSpec("box", {"half_extents": [0.55, 0.40, 0.50]}, solid(0.25, 0.80, 0.50), 1, "box_wide"),
        ShapeSpec("cylinder", {"radius": 0.30, "half_height": 0.50}, solid(0.55, 0.15, 0.65), 2, "cyl_tall"),
        ShapeSpec("capsule", {"radius": 0.25, "half_height": 0.45}, solid(0.45, 0.25, 0.75), 2, "cap_slim"),
        ShapeSpec("cylinder", {"radius": 0.45, "half_height": 0.35}, solid(0.65, 0.35, 0.55), 2, "cyl_fat"),
        ShapeSpec("capsule", {"radius": 0.35, "half_height": 0.30}, solid(0.75, 0.45, 0.45), 2, "cap_fat"),
    ]
    heldout = [
        ShapeSpec("sphere", {"radius": 0.40}, solid(0.10, 0.80, 0.20), 0, "ho_sphere_s"),
        ShapeSpec("sphere", {"radius": 0.62}, solid(0.20, 0.90, 0.40), 0, "ho_sphere_l"),
        ShapeSpec("box", {"half_extents": [0.30, 0.32, 0.34]}, solid(0.90, 0.10, 0.60), 1, "ho_box_s"),
        ShapeSpec("box", {"half_extents": [0.54, 0.50, 0.54]}, solid(0.80, 0.20, 0.80), 1, "ho_box_l"),
        ShapeSpec("capsule", {"radius": 0.26, "half_height": 0.52}, solid(0.10, 0.70, 0.80), 2, "ho_capsule"),
    ]
    return train, heldout
