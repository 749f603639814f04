"""Session fixtures: trained networks shared across the suite.

Training is deterministic per seed, so fixtures are cached on disk keyed
by a hash of the relevant source files and the training configuration;
any code or config change invalidates the cache.
"""

import hashlib
import os
import pickle
from pathlib import Path

import numpy as np
import pytest

import osdf.field_net
import osdf.priors
import osdf.shapes
from osdf.priors import (TrainConfig, TrainingSet, build_sample_pool,
                         merge_training_sets, train_shape_priors,
                         train_texture_priors)
from osdf.shapes import ShapeSpec, desk_database

CACHE_DIR = Path(os.environ.get("OSDF_TEST_CACHE", "/tmp/osdf-test-cache"))


def _source_hash(*extra: str) -> str:
    h = hashlib.sha256()
    for mod in (osdf.field_net, osdf.priors, osdf.shapes):
        h.update(Path(mod.__file__).read_bytes())
    for item in extra:
        h.update(item.encode())
    return h.hexdigest()[:16]


def _cached(name: str, key: str, builder):
    CACHE_DIR.mkdir(parents=True, exist_ok=True)
    path = CACHE_DIR / f"{name}-{key}.pkl"
    if path.exists():
        with open(path, "rb") as f:
            return pickle.load(f)
    value = builder()
    with open(path, "wb") as f:
        pickle.dump(value, f)
    return value


def interior_cluster(spec: ShapeSpec, n: int, std: float, seed) -> TrainingSet:
    """Extra oracle-labeled samples concentrated near the origin; used when a
    fixture needs the full unclamped field (not just the band) to be tight."""
    rng = np.random.default_rng(seed)
    pts = np.clip(rng.normal(0.0, std, (n, 3)), -1.0, 1.0)
    return TrainingSet(pts, spec.sdf(pts), np.full((n, 3), np.nan),
                       np.zeros(n, dtype=np.int64))


SPHERE_CONFIG = TrainConfig(batch=2048, steps=3000, delta=2.0, seed=0,
                            contrastive_weight=0.0, depth=5,
                            n_surface=2500, n_near=2500, n_uniform=6000,
                            lr_decay=0.05)

DESK_CONFIG = TrainConfig(batch=2048, steps=3000, texture_steps=1500,
                          delta=0.6, seed=0, lr_decay=0.05)


@pytest.fixture(scope="session")
def sphere_net():
    """Unit-sphere SDF network trained on the analytic oracle (unclamped)."""
    spec = ShapeSpec("sphere", {"radius": 1.0})

    def build():
        pool = merge_training_sets([build_sample_pool([spec], SPHERE_CONFIG),
                                    interior_cluster(spec, 6000, 0.25, 7)])
        net, table, log = train_shape_priors([spec], SPHERE_CONFIG, pool=pool)
        return net, table.shape_codes[0], log

    net, code, log = _cached("sphere", _source_hash(repr(SPHERE_CONFIG)), build)
    return {"spec": spec, "net": net, "code": code, "log": log}


@pytest.fixture(scope="session")
def desk_priors():
    """Desk-scale trained database: shape net, texture net, latent table."""
    train_specs, heldout_specs = desk_database()

    def build():
        pool = build_sample_pool(train_specs, DESK_CONFIG)
        net, table, shape_log = train_shape_priors(train_specs, DESK_CONFIG, pool=pool)
        tex_net, table, tex_log = train_texture_priors(train_specs, net, table,
                                                       DESK_CONFIG, pool=pool)
        return net, tex_net, table, shape_log, tex_log

    net, tex_net, table, shape_log, tex_log = _cached(
        "desk", _source_hash(repr(DESK_CONFIG)), build)
    return {"shape_net": net, "texture_net": tex_net, "table": table,
            "train_specs": train_specs, "heldout_specs": heldout_specs,
            "shape_log": shape_log, "texture_log": tex_log,
            "config": DESK_CONFIG}
