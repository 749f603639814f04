"""Test-time analysis-by-synthesis refinement against observed point clouds.

Shape codes are refined by gradient descent on the symmetric Chamfer
distance between octree-extracted, surface-projected points and the
observation; texture codes (optionally with network fine-tuning) on the
color error at nearest-neighbor matches; pose on the Chamfer distance of
rigidly transformed canonical surface points. Nearest-neighbor
correspondences are recomputed every step and held fixed within it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, DegenerateRotationError, EmptySurfaceError
from .field_net import (AdamState, FieldNetwork, AdamOptimizer, adam_step,
                        assemble_inputs)
from .octree import extract_octree, network_evaluator
from .rotation import rot9_to_so3, rot9_to_so3_backward, so3_to_raw9

PSNR_CAP = 99.0
TEXTURE_LOSS_WEIGHT = 0.3   # vs 1.0 for shape in the combined objective
FINE_TUNE_LR = 1e-5


@dataclass
class Pose:
    """Rigid transform plus isotropic scale: camera point = s R x + t."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        R = self.rotation
        if not (np.allclose(R.T @ R, np.eye(3), atol=1e-6)
                and abs(np.linalg.det(R) - 1.0) < 1e-6):
            raise ConfigurationError("rotation must be in SO(3)")
        if self.scale <= 0:
            raise ConfigurationError("scale must be positive")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3), 1.0)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * (np.atleast_2d(points) @ self.rotation.T) + self.translation

    def inverse_apply(self, points: np.ndarray) -> np.ndarray:
        return ((np.atleast_2d(points) - self.translation) / self.scale) @ self.rotation

    def to_13(self) -> np.ndarray:
        """Raw 13-vector: 9 rotation (row-major), 3 translation, 1 scale."""
        return np.concatenate([so3_to_raw9(self.rotation), self.translation,
                               [self.scale]])

    @classmethod
    def from_13(cls, raw) -> "Pose":
        raw = np.asarray(raw, dtype=np.float64).reshape(13)
        return cls(rot9_to_so3(raw[:9]), raw[9:12], float(raw[12]))


@dataclass
class Observation:
    """Target points (camera or canonical frame) with optional colors."""

    points: np.ndarray
    colors: np.ndarray = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if self.points.shape[0] == 0:
            raise ConfigurationError("observation must be nonempty")
        if not np.all(np.isfinite(self.points)):
            raise ConfigurationError("observation points must be finite")
        if self.colors is not None:
            self.colors = np.atleast_2d(np.asarray(self.colors, dtype=np.float64))
            if self.colors.shape != self.points.shape:
                raise ConfigurationError("colors must match points")

    def transformed(self, pose: Pose, inverse: bool = False) -> "Observation":
        pts = pose.inverse_apply(self.points) if inverse else pose.apply(self.points)
        return Observation(pts, self.colors)


# ----- metrics ---------------------------------------------------------------


def chamfer(a, b) -> float:
    """Symmetric sum of directed mean squared nearest-neighbor distances."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ConfigurationError("chamfer needs nonempty point sets")
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return float(np.mean(d_ab ** 2) + np.mean(d_ba ** 2))


def chamfer_with_grad(a, b):
    """(value, d value / d a) with correspondences frozen at the current NN."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ConfigurationError("chamfer needs nonempty point sets")
    d_ab, idx_ab = cKDTree(b).query(a)
    d_ba, idx_ba = cKDTree(a).query(b)
    value = float(np.mean(d_ab ** 2) + np.mean(d_ba ** 2))
    grad = 2.0 * (a - b[idx_ab]) / a.shape[0]
    back = 2.0 * (a[idx_ba] - b) / b.shape[0]
    np.add.at(grad, idx_ba, back)
    return value, grad


def psnr(pred_colors, gt_colors) -> float:
    """Peak signal-to-noise ratio in dB for colors in [0, 1]."""
    pred = np.asarray(pred_colors, dtype=np.float64)
    gt = np.asarray(gt_colors, dtype=np.float64)
    if pred.min() < 0 or pred.max() > 1 or gt.min() < 0 or gt.max() > 1:
        raise ConfigurationError("psnr expects colors in [0, 1]")
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(-10.0 * np.log10(mse), PSNR_CAP)


# ----- shape refinement ----------------------------------------------------------


@dataclass
class TraceRow:
    step: int
    stage: str
    chamfer: float = None
    color_mse: float = None
    psnr: float = None


def optimize_shape(net: FieldNetwork, z_init, observation: Observation,
                   steps: int = 200, lr: float = 1e-3,
                   lod_start: int = 3, lod_end: int = 5):
    """MAP-style refinement of the shape code against observed points.

    Each step extracts the surface, computes the Chamfer loss against the
    observation (in the canonical frame), and backpropagates through the
    projection: d p / d z = -n * d s / d z with the normal held fixed.
    Network weights stay frozen. Returns (best code, trace rows).
    """
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    z = np.asarray(z_init, dtype=np.float64).copy()
    state = AdamState(lr=lr)
    best_z, best_cd = z.copy(), np.inf
    trace = []
    for step in range(1, steps + 1):
        sdf_fn, grad_fn = network_evaluator(net, z)
        try:
            cloud, _ = extract_octree(sdf_fn, grad_fn, lod_start=lod_start,
                                      lod_end=lod_end)
        except EmptySurfaceError:
            break   # degenerate latent; keep the last valid code
        cd, d_points = chamfer_with_grad(cloud.points, observation.points)
        trace.append(TraceRow(step, "shape", chamfer=cd))
        if cd < best_cd:
            best_cd, best_z = cd, z.copy()

        cotangent = -(d_points * cloud.normals).sum(axis=1, keepdims=True)
        _, cache = net.forward_cache(assemble_inputs(cloud.seeds, z))
        tape = net.backward(cache, cotangent)
        z = adam_step(state, z, tape.latent_grads.sum(axis=0))
    return best_z, trace


def optimize_texture(texture_net: FieldNetwork, z_tex_init, z_shape,
                     observation: Observation, steps: int = 100, lr: float = 1e-3,
                     fine_tune: bool = False, surface_points=None,
                     shape_net: FieldNetwork = None,
                     fine_tune_lr: float = FINE_TUNE_LR):
    """Refine the texture code (and optionally the network) on observed colors.

    Surface points come from ``surface_points`` or one extraction with the
    frozen shape code; each is matched to its nearest observed point once
    (the geometry does not move). Returns (best code, net, trace rows) where
    ``net`` is a fine-tuned copy when ``fine_tune`` else the input network.
    """
    if observation.colors is None:
        raise ConfigurationError("texture optimization needs observed colors")
    z_shape = np.asarray(z_shape, dtype=np.float64)
    z = np.asarray(z_tex_init, dtype=np.float64).copy()
    if surface_points is None:
        if shape_net is None:
            raise ConfigurationError("need surface_points or a shape net")
        sdf_fn, grad_fn = network_evaluator(shape_net, z_shape)
        cloud, _ = extract_octree(sdf_fn, grad_fn, lod_start=3, lod_end=5)
        surface_points = cloud.points
    surface_points = np.atleast_2d(surface_points)

    _, match = cKDTree(observation.points).query(surface_points)
    target = observation.colors[match]

    net = texture_net.copy() if fine_tune else texture_net
    opt_net = AdamOptimizer(net.parameters(), lr=fine_tune_lr) if fine_tune else None
    state = AdamState(lr=lr)
    tex_slice = slice(3 + z_shape.shape[0], None)
    best_z, best_mse, best_params = z.copy(), np.inf, None
    trace = []
    for step in range(1, steps + 1):
        X = assemble_inputs(surface_points, z_shape, z)
        pred, cache = net.forward_cache(X)
        mse = float(np.mean((pred - target) ** 2))
        trace.append(TraceRow(step, "fine_tune" if fine_tune else "texture",
                              color_mse=mse, psnr=psnr(np.clip(pred, 0, 1), target)))
        if mse < best_mse:
            best_mse, best_z = mse, z.copy()
            if fine_tune:
                best_params = [p.copy() for p in net.parameters()]

        tape = net.backward(cache, 2.0 * (pred - target) / pred.size)
        z = adam_step(state, z, tape.input_grads[:, tex_slice].sum(axis=0))
        if fine_tune:
            grads = [g for pair in zip(tape.weight_grads, tape.bias_grads) for g in pair]
            opt_net.step(grads)
    if fine_tune and best_params is not None:
        for p, src in zip(net.parameters(), best_params):
            p[...] = src
    return best_z, net, trace


def optimize_pose(net: FieldNetwork, z_shape, pose_init: Pose,
                  observation: Observation, steps: int = 200, lr: float = 5e-3,
                  lod_end: int = 6):
    """Refine rotation (9D), translation and log-scale by Adam on Chamfer.

    Canonical surface points are extracted once with the frozen shape code;
    the traversal carries no pose gradient. Returns (best pose, trace rows).
    """
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    sdf_fn, grad_fn = network_evaluator(net, np.asarray(z_shape, dtype=np.float64))
    cloud, _ = extract_octree(sdf_fn, grad_fn, lod_start=3, lod_end=lod_end)
    Y = cloud.points

    raw = so3_to_raw9(pose_init.rotation)
    t = pose_init.translation.copy()
    log_s = np.array([np.log(pose_init.scale)])
    states = {"raw": AdamState(lr=lr), "t": AdamState(lr=lr), "log_s": AdamState(lr=lr)}
    best = (np.inf, raw.copy(), t.copy(), log_s.copy())
    trace = []
    for step in range(1, steps + 1):
        try:
            R = rot9_to_so3(raw)
        except DegenerateRotationError:
            break   # keep the last valid pose
        s = float(np.exp(log_s[0]))
        rotated = Y @ R.T
        transformed = s * rotated + t
        cd, dT = chamfer_with_grad(transformed, observation.points)
        trace.append(TraceRow(step, "pose", chamfer=cd))
        if cd < best[0]:
            best = (cd, raw.copy(), t.copy(), log_s.copy())

        d_t = dT.sum(axis=0)
        d_log_s = np.array([float((dT * rotated).sum()) * s])
        dR = s * dT.T @ Y
        d_raw = rot9_to_so3_backward(raw, dR)
        raw = adam_step(states["raw"], raw, d_raw)
        t = adam_step(states["t"], t, d_t)
        log_s = adam_step(states["log_s"], log_s, d_log_s)

    _, raw, t, log_s = best
    return Pose(rot9_to_so3(raw), t, float(np.exp(log_s[0]))), trace


# ----- joint schedule -------------------------------------------------------------


@dataclass
class RefineSchedule:
    pose_steps: int = 100
    shape_steps: int = 200
    texture_steps: int = 100
    fine_tune_steps: int = 0
    lr_pose: float = 5e-3
    lr_shape: float = 1e-3
    lr_texture: float = 1e-3
    shape_weight: float = 1.0
    texture_weight: float = TEXTURE_LOSS_WEIGHT
    adaptive_lr: bool = True

    def total_steps(self) -> int:
        return (self.pose_steps + self.shape_steps + self.texture_steps
                + self.fine_tune_steps)


@dataclass
class RefineResult:
    z_shape: np.ndarray
    z_texture: np.ndarray
    pose: Pose
    texture_net: FieldNetwork
    trace: list = field(default_factory=list)


def adaptive_lr_factor(n_observed: int, n_model: int,
                       lo: float = 0.25, hi: float = 1.0) -> float:
    """Scale step size by how complete the observation is vs the model surface."""
    if n_model <= 0:
        return hi
    return float(np.clip(n_observed / n_model, lo, hi))


def joint_refine(shape_net: FieldNetwork, texture_net: FieldNetwork,
                 z_shape, z_texture, pose: Pose, observation: Observation,
                 schedule: RefineSchedule = None) -> RefineResult:
    """Alternating pose -> shape -> texture (-> fine-tune) refinement.

    The observation stays in the camera frame; shape and texture stages see
    it mapped into the canonical frame through the current pose estimate.
    A zero-step schedule returns the inputs unchanged.
    """
    schedule = schedule or RefineSchedule()
    z_shape = np.asarray(z_shape, dtype=np.float64).copy()
    z_texture = np.asarray(z_texture, dtype=np.float64).copy()
    trace = []
    step_base = 0

    factor = 1.0
    if schedule.adaptive_lr:
        sdf_fn, grad_fn = network_evaluator(shape_net, z_shape)
        cloud, _ = extract_octree(sdf_fn, grad_fn, lod_start=3, lod_end=5)
        factor = adaptive_lr_factor(observation.points.shape[0], len(cloud))

    def extend(rows):
        nonlocal step_base
        for r in rows:
            trace.append(TraceRow(step_base + r.step, r.stage, r.chamfer,
                                  r.color_mse, r.psnr))
        step_base += len(rows)

    if schedule.pose_steps > 0:
        pose, rows = optimize_pose(shape_net, z_shape, pose, observation,
                                   steps=schedule.pose_steps,
                                   lr=schedule.lr_pose * factor)
        extend(rows)

    canonical = observation.transformed(pose, inverse=True)
    if schedule.shape_steps > 0:
        z_shape, rows = optimize_shape(shape_net, z_shape, canonical,
                                       steps=schedule.shape_steps,
                                       lr=schedule.lr_shape * factor)
        extend(rows)

    if (schedule.texture_steps > 0 or schedule.fine_tune_steps > 0) \
            and canonical.colors is not None:
        sdf_fn, grad_fn = network_evaluator(shape_net, z_shape)
        cloud, _ = extract_octree(sdf_fn, grad_fn, lod_start=3, lod_end=5)
        if schedule.texture_steps > 0:
            z_texture, texture_net, rows = optimize_texture(
                texture_net, z_texture, z_shape, canonical,
                steps=schedule.texture_steps, lr=schedule.lr_texture * factor,
                surface_points=cloud.points)
            extend(rows)
        if schedule.fine_tune_steps > 0:
            z_texture, texture_net, rows = optimize_texture(
                texture_net, z_texture, z_shape, canonical,
                steps=schedule.fine_tune_steps, lr=schedule.lr_texture * factor,
                fine_tune=True, surface_points=cloud.points)
            extend(rows)

    return RefineResult(z_shape, z_texture, pose, texture_net, trace)


def write_trace_csv(path, rows):
    """CSV schema: step,stage,chamfer,color_mse,psnr (blank = n/a)."""
    def fmt(v):
        return "" if v is None else format(float(v), ".10g")

    with open(path, "w") as f:
        f.write("step,stage,chamfer,color_mse,psnr\n")
        for r in rows:
            f.write(f"{r.step},{r.stage},{fmt(r.chamfer)},{fmt(r.color_mse)},"
                    f"{fmt(r.psnr)}\n")
