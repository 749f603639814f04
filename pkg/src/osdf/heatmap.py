"""Detection-head math on synthetic maps: target splatting, peak detection,
per-pixel code sampling, gated losses, and depth back-projection.

No CNN lives here; maps are planted synthetically (see SyntheticScene)
so the surrounding losses and the peak -> code -> pose round trip can be
exercised directly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, EmptyObservationError
from .rotation import rot9_to_so3

DOWNSAMPLE = 8
CODE_GATE = 0.3
HEATMAP_WEIGHT = 100.0   # lambda_inst; other loss weights default to 1.0


def gaussian_sigma(bbox_w: float, bbox_h: float, downsample: int = DOWNSAMPLE) -> float:
    """Splat width from the object's image-space bbox diagonal."""
    diag = np.hypot(bbox_w, bbox_h)
    return max(1.0, diag / (6.0 * downsample))


def splat_targets(centers, bboxes, map_shape, downsample: int = DOWNSAMPLE) -> np.ndarray:
    """Render target heatmap: per-center Gaussians combined by pixel max.

    ``centers`` are integer (x, y) heatmap pixels; ``bboxes`` are (w, h)
    extents in input-image pixels. The value at each planted center is 1.
    """
    h, w = map_shape
    heat = np.zeros((h, w))
    ys, xs = np.mgrid[0:h, 0:w]
    for (cx, cy), (bw, bh) in zip(centers, bboxes):
        if not (0 <= cx < w and 0 <= cy < h):
            raise ConfigurationError(f"center ({cx}, {cy}) outside {w}x{h} map")
        sigma = gaussian_sigma(bw, bh, downsample)
        g = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma ** 2))
        np.maximum(heat, g, out=heat)
    return heat


def heatmap_mse(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ConfigurationError("heatmap shapes must match")
    return float(np.mean((pred - target) ** 2))


def detect_peaks(heat: np.ndarray, threshold: float = 0.3):
    """Strict 3x3 local maxima with value >= threshold.

    Returns a list of (x, y, score) sorted by score descending; equal
    scores keep scan order. Plateaus produce no peaks.
    """
    if not 0.0 < threshold < 1.0:
        raise ConfigurationError("threshold must be in (0, 1)")
    heat = np.asarray(heat, dtype=np.float64)
    padded = np.pad(heat, 1, constant_values=-np.inf)
    strict_max = np.ones_like(heat, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            neighbor = padded[1 + dy:1 + dy + heat.shape[0],
                              1 + dx:1 + dx + heat.shape[1]]
            strict_max &= heat > neighbor
    ys, xs = np.nonzero(strict_max & (heat >= threshold))
    scores = heat[ys, xs]
    order = np.argsort(-scores, kind="stable")
    return [(int(xs[i]), int(ys[i]), float(scores[i])) for i in order]


@dataclass
class CodeMaps:
    """Per-pixel regression targets: shape/texture codes and raw 13D pose."""

    shape: np.ndarray    # (h, w, d_sdf)
    texture: np.ndarray  # (h, w, d_tex)
    pose: np.ndarray     # (h, w, 13)

    def __post_init__(self):
        hw = self.shape.shape[:2]
        if self.texture.shape[:2] != hw or self.pose.shape[:2] != hw:
            raise ConfigurationError("code map spatial dims must agree")
        if self.pose.shape[2] != 13:
            raise ConfigurationError("pose map must have 13 channels")


def sample_codes(maps: CodeMaps, centers):
    """Read code vectors at detected centers; raw pose splits 9/3/1 with the
    rotation block orthonormalized. Returns [(z_sdf, z_tex, (R, t, s)), ...]."""
    h, w = maps.shape.shape[:2]
    out = []
    for cx, cy in centers:
        if not (0 <= cx < w and 0 <= cy < h):
            raise ConfigurationError(f"center ({cx}, {cy}) out of bounds")
        raw = maps.pose[cy, cx]
        rotation = rot9_to_so3(raw[:9])
        out.append((maps.shape[cy, cx].copy(), maps.texture[cy, cx].copy(),
                    (rotation, raw[9:12].copy(), float(raw[12]))))
    return out


def gated_l1(pred: np.ndarray, gt: np.ndarray, target_heat: np.ndarray,
             gate: float = CODE_GATE) -> float:
    """Mean absolute error over channels at pixels where the target heatmap
    exceeds the gate; zero when no pixel qualifies."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    target_heat = np.asarray(target_heat, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape[:2] != target_heat.shape:
        raise ConfigurationError("map shapes must be consistent")
    mask = target_heat > gate
    if not np.any(mask):
        return 0.0
    return float(np.mean(np.abs(pred[mask] - gt[mask])))


def mask_ce(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """Pixel-wise cross-entropy: sum of -log p(true label)."""
    probs = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 3 or probs.shape[:2] != labels.shape:
        raise ConfigurationError("probabilities must be (h, w, classes)")
    if probs.min() <= 0.0 or not np.allclose(probs.sum(axis=2), 1.0, atol=1e-6):
        raise ConfigurationError("probabilities must be positive and sum to 1")
    if labels.min() < 0 or labels.max() >= probs.shape[2]:
        raise ConfigurationError("labels out of class range")
    h, w = labels.shape
    picked = probs[np.arange(h)[:, None], np.arange(w)[None, :], labels]
    return float(-np.log(picked).sum())


def combined_loss(parts: dict, weights: dict = None) -> float:
    """Weighted sum of the five training losses (heatmap term dominates)."""
    required = ("inst", "sdf", "tex", "mask", "pose")
    for key in required:
        if key not in parts:
            raise ConfigurationError(f"missing loss part {key!r}")
    lam = {"inst": HEATMAP_WEIGHT, "sdf": 1.0, "tex": 1.0, "mask": 1.0, "pose": 1.0}
    if weights:
        lam.update(weights)
    return float(sum(lam[k] * parts[k] for k in required))


def depth_to_pointcloud(depth: np.ndarray, mask: np.ndarray, intrinsics) -> np.ndarray:
    """Back-project masked depth pixels through a pinhole camera.

    ``intrinsics`` is (fx, fy, cx, cy); depth is in meters. Returns (N, 3)
    points ((u-cx) d/fx, (v-cy) d/fy, d) for masked pixels with depth > 0.
    """
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    fx, fy, cx, cy = (float(v) for v in intrinsics)
    if min(fx, fy, cx, cy) <= 0:
        raise ConfigurationError("intrinsics must be positive")
    if depth.shape != mask.shape:
        raise ConfigurationError("depth and mask shapes must match")
    valid = mask & (depth > 0)
    if not np.any(valid):
        raise EmptyObservationError("mask selects no valid depth pixels")
    vs, us = np.nonzero(valid)
    d = depth[vs, us]
    return np.stack([(us - cx) * d / fx, (vs - cy) * d / fy, d], axis=1)


def masked_colors(image: np.ndarray, mask: np.ndarray, depth: np.ndarray = None) -> np.ndarray:
    """Colors aligned with depth_to_pointcloud's output order."""
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    valid = mask if depth is None else mask & (np.asarray(depth) > 0)
    if not np.any(valid):
        raise EmptyObservationError("mask selects no pixels")
    vs, us = np.nonzero(valid)
    return image[vs, us]


# ----- synthetic scenes --------------------------------------------------------


@dataclass
class PlantedObject:
    center: tuple            # (x, y) heatmap pixels
    bbox: tuple              # (w, h) image pixels
    z_shape: np.ndarray
    z_texture: np.ndarray
    pose13: np.ndarray
    category: int = 0


@dataclass
class SyntheticScene:
    height: int
    width: int
    downsample: int = DOWNSAMPLE
    objects: list = field(default_factory=list)

    def to_json(self, path=None) -> str:
        objs = [{"center": list(o.center), "bbox": list(o.bbox),
                 "z_shape": np.asarray(o.z_shape).tolist(),
                 "z_texture": np.asarray(o.z_texture).tolist(),
                 "pose13": np.asarray(o.pose13).tolist(),
                 "category": o.category} for o in self.objects]
        text = json.dumps({"height": self.height, "width": self.width,
                           "downsample": self.downsample, "objects": objs},
                          indent=2) + "\n"
        if path is not None:
            with open(path, "w") as f:
                f.write(text)
        return text

    @classmethod
    def from_json(cls, source) -> "SyntheticScene":
        text = source
        if not str(source).lstrip().startswith("{"):
            with open(source) as f:
                text = f.read()
        data = json.loads(text)
        objects = [PlantedObject(tuple(o["center"]), tuple(o["bbox"]),
                                 np.asarray(o["z_shape"], dtype=np.float64),
                                 np.asarray(o["z_texture"], dtype=np.float64),
                                 np.asarray(o["pose13"], dtype=np.float64),
                                 int(o.get("category", 0)))
                   for o in data["objects"]]
        return cls(int(data["height"]), int(data["width"]),
                   int(data.get("downsample", DOWNSAMPLE)), objects)


def render_scene_maps(scene: SyntheticScene):
    """Ground-truth maps for a planted scene.

    Code/pose values fill every pixel whose Gaussian score for the owning
    object exceeds the 0.3 gate (nearest center wins on overlap), matching
    where the gated regression loss applies. Returns (heatmap, CodeMaps).
    """
    h, w = scene.height, scene.width
    heat = splat_targets([o.center for o in scene.objects],
                         [o.bbox for o in scene.objects], (h, w),
                         scene.downsample) if scene.objects else np.zeros((h, w))
    d_shape = scene.objects[0].z_shape.shape[0] if scene.objects else 1
    d_tex = scene.objects[0].z_texture.shape[0] if scene.objects else 1
    maps = CodeMaps(np.zeros((h, w, d_shape)), np.zeros((h, w, d_tex)),
                    np.zeros((h, w, 13)))
    ys, xs = np.mgrid[0:h, 0:w]
    best = np.full((h, w), np.inf)
    for obj in scene.objects:
        cx, cy = obj.center
        sigma = gaussian_sigma(*obj.bbox, scene.downsample)
        dist2 = (xs - cx) ** 2 + (ys - cy) ** 2
        score = np.exp(-dist2 / (2.0 * sigma ** 2))
        own = (score > CODE_GATE) & (dist2 < best)
        best[own] = dist2[own]
        maps.shape[own] = obj.z_shape
        maps.texture[own] = obj.z_texture
        maps.pose[own] = obj.pose13
    return heat, maps


# ----- flat binary map files -----------------------------------------------------

MAP_MAGIC = b"OMAP"
_MAP_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}


def write_map(path, array: np.ndarray):
    """Binary map file: magic, version, dtype code (0 f32 / 1 u8), ndim, dims."""
    array = np.asarray(array)
    if array.dtype == np.uint8:
        code, data = 1, array
    else:
        code, data = 0, array.astype("<f4")
    with open(path, "wb") as f:
        f.write(MAP_MAGIC)
        f.write(struct.pack("<III", 1, code, array.ndim))
        f.write(struct.pack(f"<{array.ndim}I", *array.shape))
        f.write(np.ascontiguousarray(data).tobytes())


def read_map(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAP_MAGIC:
        raise ConfigurationError(f"{path}: not an OMAP map file")
    version, code, ndim = struct.unpack_from("<III", data, 4)
    if version != 1 or code not in _MAP_DTYPES:
        raise ConfigurationError("unsupported map version or dtype")
    dims = struct.unpack_from(f"<{ndim}I", data, 16)
    arr = np.frombuffer(data, dtype=_MAP_DTYPES[code], count=int(np.prod(dims)),
                        offset=16 + 4 * ndim).reshape(dims)
    return arr.astype(np.float64) if code == 0 else arr.copy()
