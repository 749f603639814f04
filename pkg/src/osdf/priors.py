"""Implicit shape/appearance prior database: sampling, losses, training.

Shape and texture networks are trained as auto-decoders: per-object
latent codes are free variables optimized jointly with the shared
network. The texture stage runs after the shape stage with the shape
network and shape codes frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, TrainingDivergence
from .field_net import (AdamOptimizer, AdamState, FieldNetwork, LatentCode,
                        LatentTable, adam_step, assemble_inputs)

SURFACE_BAND = 0.01   # |s_gt| below this gets color supervision
NEAR_NOISE_STD = 0.025


@dataclass
class TrainingSet:
    """Structure-of-arrays sample pool; color rows are NaN off the surface."""

    points: np.ndarray
    sdf: np.ndarray
    colors: np.ndarray
    object_ids: np.ndarray


@dataclass
class TrainConfig:
    d_shape: int = 64
    d_tex: int = 64
    hidden: int = 128
    depth: int = 4
    omega0: float = 30.0
    n_surface: int = 1500
    n_near: int = 1500
    n_uniform: int = 1500
    batch: int = 4096
    steps: int = 3000
    texture_steps: int = 1500
    lr_net: float = 1e-3
    lr_code: float = 1e-3
    lr_decay: float = 0.1   # final lr fraction under the cosine schedule
    delta: float = 0.1
    contrastive_weight: float = 1.0
    m_pos: float = 0.8
    m_neg: float = 0.2
    code_init_std: float = 0.01
    seed: int = 0
    log_every: int = 10


# ----- sampling ---------------------------------------------------------------


def _project_to_surface(spec, seeds: np.ndarray, tol: float = 1e-9, max_iter: int = 25):
    """Newton-project seed points onto the oracle zero level set."""
    p = np.array(seeds, dtype=np.float64)
    for _ in range(max_iter):
        s = spec.sdf(p)
        if np.all(np.abs(s) < tol):
            break
        g = spec.sdf_gradient(p)
        norm = np.linalg.norm(g, axis=1)
        norm = np.maximum(norm, 1e-12)
        p = p - (s / norm)[:, None] * (g / norm[:, None])
    s = spec.sdf(p)
    ok = (np.abs(s) < tol) & np.all(np.abs(p) <= 1.0, axis=1)
    return p[ok]


def sample_training_points(spec, n_surface: int, n_near: int, n_uniform: int,
                           rng_seed: int = 0, object_id: int = 0) -> TrainingSet:
    """Surface / near-surface / uniform sample mix labeled by the oracle."""
    if min(n_surface, n_near, n_uniform) <= 0:
        raise ConfigurationError("sample counts must be positive")
    rng = np.random.default_rng(rng_seed)

    surface = np.empty((0, 3))
    while surface.shape[0] < max(n_surface, n_near):
        seeds = rng.uniform(-1.0, 1.0, size=(2 * max(n_surface, n_near), 3))
        surface = np.concatenate([surface, _project_to_surface(spec, seeds)])
    near = surface[:n_near] + rng.normal(0.0, NEAR_NOISE_STD, size=(n_near, 3))
    surface = surface[:n_surface]
    uniform = rng.uniform(-1.0, 1.0, size=(n_uniform, 3))

    points = np.concatenate([surface, near, uniform])
    sdf = spec.sdf(points)
    colors = np.full((points.shape[0], 3), np.nan)
    on_surface = np.abs(sdf) < SURFACE_BAND
    colors[on_surface] = spec.colors(points[on_surface])
    ids = np.full(points.shape[0], object_id, dtype=np.int64)
    return TrainingSet(points, sdf, colors, ids)


def merge_training_sets(sets) -> TrainingSet:
    return TrainingSet(
        np.concatenate([t.points for t in sets]),
        np.concatenate([t.sdf for t in sets]),
        np.concatenate([t.colors for t in sets]),
        np.concatenate([t.object_ids for t in sets]),
    )


# ----- losses -------------------------------------------------------------------


def clamp(values: np.ndarray, delta: float) -> np.ndarray:
    return np.clip(values, -delta, delta)


def loss_sdf(pred: np.ndarray, gt: np.ndarray, delta: float = 0.1) -> float:
    """Clamped-L1 reconstruction term."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ConfigurationError("pred/gt length mismatch")
    if delta <= 0:
        raise ConfigurationError("delta must be positive")
    return float(np.mean(np.abs(clamp(pred, delta) - clamp(gt, delta))))


def loss_sdf_grad(pred: np.ndarray, gt: np.ndarray, delta: float = 0.1) -> np.ndarray:
    """d loss_sdf / d pred (subgradient at clamp corners)."""
    diff = clamp(pred, delta) - clamp(gt, delta)
    inside = (np.abs(pred) < delta).astype(np.float64)
    return np.sign(diff) * inside / pred.size


def _cosine_pairs(codes, labels):
    codes = np.asarray(codes, dtype=np.float64)
    labels = np.asarray(labels)
    n = codes.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    norms = np.linalg.norm(codes, axis=1)
    norms = np.maximum(norms, 1e-12)
    cos = (codes[iu] * codes[ju]).sum(axis=1) / (norms[iu] * norms[ju])
    same = labels[iu] == labels[ju]
    return iu, ju, cos, same, norms


def loss_contrastive(codes, labels, m_pos: float = 0.8, m_neg: float = 0.2) -> float:
    """Hinge on pairwise cosine similarity: pull same-category codes
    above m_pos, push cross-category codes below m_neg."""
    codes = np.asarray(codes, dtype=np.float64)
    if codes.shape[0] < 2:
        raise ConfigurationError("contrastive loss needs at least two codes")
    iu, ju, cos, same, _ = _cosine_pairs(codes, labels)
    pos = np.maximum(m_pos - cos[same], 0.0)
    neg = np.maximum(cos[~same] - m_neg, 0.0)
    total = 0.0
    if pos.size:
        total += float(pos.mean())
    if neg.size:
        total += float(neg.mean())
    return total


def loss_contrastive_grad(codes, labels, m_pos: float = 0.8, m_neg: float = 0.2):
    """(value, d/d codes) of the contrastive hinge."""
    codes = np.asarray(codes, dtype=np.float64)
    iu, ju, cos, same, norms = _cosine_pairs(codes, labels)
    grad = np.zeros_like(codes)
    pos_active = same & (cos < m_pos)
    neg_active = (~same) & (cos > m_neg)
    n_pos = max(int(same.sum()), 1)
    n_neg = max(int((~same).sum()), 1)

    def accumulate(mask, sign, count):
        for i, j, c in zip(iu[mask], ju[mask], cos[mask]):
            zi, zj = codes[i], codes[j]
            ni, nj = norms[i], norms[j]
            dci = zj / (ni * nj) - c * zi / ni ** 2
            dcj = zi / (ni * nj) - c * zj / nj ** 2
            grad[i] += sign * dci / count
            grad[j] += sign * dcj / count

    # pos hinge [m_pos - c]_+ : d/dc = -1 ; neg hinge [c - m_neg]_+ : d/dc = +1
    accumulate(pos_active, -1.0, n_pos)
    accumulate(neg_active, +1.0, n_neg)
    return loss_contrastive(codes, labels, m_pos, m_neg), grad


def loss_rgb(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean squared color error over all channels."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ConfigurationError("pred/gt length mismatch")
    return float(np.mean((pred - gt) ** 2))


def loss_rgb_grad(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    return 2.0 * (pred - gt) / pred.size


def mean_latent(table: LatentTable, category: int) -> LatentCode:
    """Arithmetic mean of the per-object codes in one category."""
    mask = table.categories == category
    if not np.any(mask):
        raise ConfigurationError(f"no objects with category {category}")
    return LatentCode(table.shape_codes[mask].mean(axis=0),
                      table.texture_codes[mask].mean(axis=0), int(category))


# ----- training -----------------------------------------------------------------


def _cosine_lr(base: float, step: int, total: int, floor_fraction: float) -> float:
    if total <= 1:
        return base
    ramp = 0.5 * (1.0 + np.cos(np.pi * (step - 1) / (total - 1)))
    return base * (floor_fraction + (1.0 - floor_fraction) * ramp)


def _check_divergence(loss: float, initial: float, streak: int, step: int) -> int:
    if initial > 0 and loss > 10.0 * initial:
        streak += 1
    else:
        streak = 0
    if streak >= 100:
        raise TrainingDivergence(
            f"loss {loss:.4g} exceeded 10x initial {initial:.4g} for 100 steps",
            step=step, loss=loss, initial_loss=initial)
    return streak


def build_sample_pool(specs, config: TrainConfig) -> TrainingSet:
    sets = [sample_training_points(spec, config.n_surface, config.n_near,
                                   config.n_uniform, rng_seed=(config.seed, 101, i),
                                   object_id=i)
            for i, spec in enumerate(specs)]
    return merge_training_sets(sets)


def train_shape_priors(specs, config: TrainConfig = None, pool: TrainingSet = None):
    """Auto-decoder training of the SDF network and per-object shape codes.

    Returns (shape_net, latent_table, log_rows); log rows are
    (step, loss_sdf, loss_contrastive, None).
    """
    config = config or TrainConfig()
    if len(specs) == 0:
        raise ConfigurationError("need at least one shape spec")
    if pool is None:
        pool = build_sample_pool(specs, config)

    net = FieldNetwork.sdf_net(latent_dim=config.d_shape, hidden=config.hidden,
                               depth=config.depth, seed=config.seed)
    code_rng = np.random.default_rng((config.seed, 202))
    Z = code_rng.normal(0.0, config.code_init_std, size=(len(specs), config.d_shape))
    categories = np.array([s.category for s in specs], dtype=np.int64)

    opt_net = AdamOptimizer(net.parameters(), lr=config.lr_net)
    opt_code = AdamState(lr=config.lr_code)
    batch_rng = np.random.default_rng((config.seed, 303))
    n = pool.points.shape[0]
    use_contrastive = len(specs) >= 2 and config.contrastive_weight > 0

    log_rows = []
    initial_loss = None
    streak = 0
    for step in range(1, config.steps + 1):
        lr = _cosine_lr(1.0, step, config.steps, config.lr_decay)
        opt_net.set_lr(config.lr_net * lr)
        opt_code.lr = config.lr_code * lr
        idx = batch_rng.integers(0, n, size=config.batch)
        pts, gt, ids = pool.points[idx], pool.sdf[idx], pool.object_ids[idx]
        X = assemble_inputs(pts, Z[ids])
        y, cache = net.forward_cache(X)
        pred = y[:, 0]
        value = loss_sdf(pred, gt, config.delta)
        tape = net.backward(cache, loss_sdf_grad(pred, gt, config.delta)[:, None])

        dZ = np.zeros_like(Z)
        np.add.at(dZ, ids, tape.latent_grads)
        c_value = 0.0
        if use_contrastive:
            c_value, dZc = loss_contrastive_grad(Z, categories, config.m_pos, config.m_neg)
            dZ += config.contrastive_weight * dZc

        grads = [g for pair in zip(tape.weight_grads, tape.bias_grads) for g in pair]
        opt_net.step(grads)
        Z = adam_step(opt_code, Z, dZ)

        total = value + config.contrastive_weight * c_value
        if initial_loss is None:
            initial_loss = total
        streak = _check_divergence(total, initial_loss, streak, step)
        if step % config.log_every == 0 or step == 1 or step == config.steps:
            log_rows.append((step, value, c_value, None))

    table = LatentTable(Z, np.zeros((len(specs), config.d_tex)), categories)
    return net, table, log_rows


def train_texture_priors(specs, shape_net: FieldNetwork, table: LatentTable,
                         config: TrainConfig = None, pool: TrainingSet = None):
    """Train the Siren texture network and per-object texture codes.

    The shape network and shape codes stay frozen; supervision uses only
    samples inside the surface band (which carry oracle colors).
    Returns (texture_net, latent_table, log_rows).
    """
    config = config or TrainConfig()
    if pool is None:
        pool = build_sample_pool(specs, config)
    has_color = ~np.isnan(pool.colors[:, 0])
    if not np.any(has_color):
        raise ConfigurationError("sample pool has no surface-band colors")
    pts = pool.points[has_color]
    gt = pool.colors[has_color]
    ids = pool.object_ids[has_color]

    net = FieldNetwork.texture_net(shape_dim=config.d_shape, tex_dim=config.d_tex,
                                   hidden=config.hidden, depth=config.depth,
                                   omega0=config.omega0, seed=config.seed + 1)
    code_rng = np.random.default_rng((config.seed, 404))
    Zt = code_rng.normal(0.0, config.code_init_std, size=(len(table), config.d_tex))
    Zs = table.shape_codes

    opt_net = AdamOptimizer(net.parameters(), lr=config.lr_net)
    opt_code = AdamState(lr=config.lr_code)
    batch_rng = np.random.default_rng((config.seed, 505))
    n = pts.shape[0]
    tex_slice = slice(3 + config.d_shape, None)

    log_rows = []
    initial_loss = None
    streak = 0
    for step in range(1, config.texture_steps + 1):
        lr = _cosine_lr(1.0, step, config.texture_steps, config.lr_decay)
        opt_net.set_lr(config.lr_net * lr)
        opt_code.lr = config.lr_code * lr
        idx = batch_rng.integers(0, n, size=min(config.batch, n))
        X = assemble_inputs(pts[idx], Zs[ids[idx]], Zt[ids[idx]])
        pred, cache = net.forward_cache(X)
        value = loss_rgb(pred, gt[idx])
        tape = net.backward(cache, loss_rgb_grad(pred, gt[idx]))

        dZt = np.zeros_like(Zt)
        np.add.at(dZt, ids[idx], tape.input_grads[:, tex_slice])
        grads = [g for pair in zip(tape.weight_grads, tape.bias_grads) for g in pair]
        opt_net.step(grads)
        Zt = adam_step(opt_code, Zt, dZt)

        if initial_loss is None:
            initial_loss = value
        streak = _check_divergence(value, initial_loss, streak, step)
        if step % config.log_every == 0 or step == 1 or step == config.texture_steps:
            log_rows.append((step, None, None, value))

    out = LatentTable(table.shape_codes.copy(), Zt, table.categories.copy())
    return net, out, log_rows


def write_training_log(path, rows):
    """CSV log: step, loss_sdf, loss_contrastive, loss_rgb (blank = n/a)."""
    def fmt(v):
        return "" if v is None else format(float(v), ".10g")

    with open(path, "w") as f:
        f.write("step,loss_sdf,loss_contrastive,loss_rgb\n")
        for step, ls, lc, lr in rows:
            f.write(f"{step},{fmt(ls)},{fmt(lc)},{fmt(lr)}\n")
