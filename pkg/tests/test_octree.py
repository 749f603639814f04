"""Octree extraction, dense-grid baseline, projection, benchmark reports."""

import numpy as np
import pytest

from osdf.errors import ConfigurationError, EmptySurfaceError
from osdf.octree import (KAPPA, SamplingReport, benchmark_sampling, brute_force_occupied,
                         cell_size, extract_grid, extract_octree, level_lattice,
                         oracle_evaluator, project_points, subdivide,
                         write_reports_csv)
from osdf.shapes import ShapeSpec

SPHERE = ShapeSpec("sphere", {"radius": 0.8})
ORACLES = [
    ShapeSpec("sphere", {"radius": 0.8}),
    ShapeSpec("box", {"half_extents": [0.45, 0.35, 0.55]}),
    ShapeSpec("torus", {"major": 0.55, "minor": 0.22}),
    ShapeSpec("capsule", {"radius": 0.3, "half_height": 0.45}),
]


class TestCellSize:
    @pytest.mark.parametrize("lod,size", [(3, 0.25), (6, 0.03125), (0, 2.0)])
    def test_values(self, lod, size):
        assert cell_size(lod) == size

    def test_negative_rejected(self):
        with pytest.raises(ConfigurationError):
            cell_size(-1)

    def test_lattice_on_regular_grid(self):
        pts = level_lattice(2)
        assert pts.shape == (64, 3)
        cs = cell_size(2)
        idx = (pts + 1.0 - cs / 2) / cs
        assert np.allclose(idx, np.round(idx), atol=1e-12)

    def test_subdivide_offsets(self):
        children = subdivide(np.array([[0.0, 0.0, 0.0]]), 0.5)
        assert children.shape == (8, 3)
        assert np.allclose(np.abs(children), 0.125)


class TestExtractOctree:
    def test_unit_sphere_points_exact(self):
        spec = ShapeSpec("sphere", {"radius": 1.0})
        cloud, _ = extract_octree(*oracle_evaluator(spec), lod_start=3, lod_end=6)
        assert np.abs(np.linalg.norm(cloud.points, axis=1) - 1.0).max() < 1e-9

    def test_final_level_matches_brute_force_enumeration(self):
        for spec in ORACLES[:3]:
            sdf_fn, grad_fn = oracle_evaluator(spec)
            cloud, _ = extract_octree(sdf_fn, grad_fn, lod_start=3, lod_end=5)
            octree_cells = cloud.seeds[np.lexsort(cloud.seeds.T)]
            brute = brute_force_occupied(sdf_fn, 5)
            brute = brute[np.lexsort(brute.T)]
            assert octree_cells.shape == brute.shape
            assert np.allclose(octree_cells, brute, atol=1e-12)

    def test_soundness_band_membership(self):
        cloud, _ = extract_octree(*oracle_evaluator(SPHERE), lod_start=3, lod_end=6)
        assert np.abs(cloud.sdf).max() < KAPPA * cell_size(6)

    def test_normals_unit_and_outward(self):
        for spec in (SPHERE, ORACLES[1]):
            cloud, _ = extract_octree(*oracle_evaluator(spec), lod_start=3, lod_end=5)
            assert np.abs(np.linalg.norm(cloud.normals, axis=1) - 1.0).max() < 1e-6
            assert np.all((cloud.normals * cloud.points).sum(axis=1) > 0)

    def test_fewer_evaluations_than_dense_grid(self):
        for spec in ORACLES:
            sdf_fn, grad_fn = oracle_evaluator(spec)
            _, rep = extract_octree(sdf_fn, grad_fn, lod_start=3, lod_end=5)
            assert rep.input_points < 32 ** 3

    def test_empty_surface_raises(self):
        far = lambda p: np.full(p.shape[0], 5.0)
        with pytest.raises(EmptySurfaceError):
            extract_octree(far, lambda p: np.ones((p.shape[0], 3)), 3, 5)

    def test_bad_lod_order_rejected(self):
        with pytest.raises(ConfigurationError):
            extract_octree(*oracle_evaluator(SPHERE), lod_start=6, lod_end=3)

    def test_colors_clipped_to_unit_range(self):
        sdf_fn, grad_fn = oracle_evaluator(SPHERE)
        color_fn = lambda p: np.full((p.shape[0], 3), 2.5)
        cloud, _ = extract_octree(sdf_fn, grad_fn, color_fn, 3, 4)
        assert cloud.colors.max() <= 1.0


class TestExtractGrid:
    def test_grid60_input_count(self):
        _, rep = extract_grid(*oracle_evaluator(SPHERE), resolution=60)
        assert rep.input_points == 216000

    def test_band_projection_on_sphere(self):
        cloud, _ = extract_grid(*oracle_evaluator(SPHERE), resolution=48)
        assert np.abs(np.linalg.norm(cloud.points, axis=1) - 0.8).max() < 1e-9

    def test_empty_band_raises(self):
        far = lambda p: np.full(p.shape[0], 5.0)
        with pytest.raises(EmptySurfaceError):
            extract_grid(far, lambda p: np.ones((p.shape[0], 3)), resolution=20)

    def test_small_resolution_rejected(self):
        with pytest.raises(ConfigurationError):
            extract_grid(*oracle_evaluator(SPHERE), resolution=1)


class TestProjection:
    def test_along_known_gradient(self):
        p, n, kept = project_points([[2.0, 0.0, 0.0]], [1.0], [[1.0, 0.0, 0.0]])
        assert np.allclose(p, [[1.0, 0.0, 0.0]])
        assert np.allclose(n, [[1.0, 0.0, 0.0]])
        assert kept.all()

    def test_zero_sdf_is_identity(self):
        pts = np.random.default_rng(0).normal(size=(5, 3))
        p, _, _ = project_points(pts, np.zeros(5), pts)
        assert np.allclose(p, pts)

    def test_exact_sphere_projection_error(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-1, 1, (200, 3))
        pts = pts[np.linalg.norm(pts, axis=1) > 0.2]
        r = np.linalg.norm(pts, axis=1)
        s = r - 0.7
        g = pts / r[:, None]
        p, _, _ = project_points(pts, s, g)
        assert np.abs(np.linalg.norm(p, axis=1) - 0.7).max() < 1e-12

    def test_near_zero_gradient_dropped(self):
        p, n, kept = project_points([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
                                    [0.5, 0.3], [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        assert kept.tolist() == [False, True]
        assert p.shape == (1, 3)

    def test_idempotent_on_exact_sdf(self):
        sdf_fn, grad_fn = oracle_evaluator(SPHERE)
        cloud, _ = extract_octree(sdf_fn, grad_fn, 3, 5)
        s = sdf_fn(cloud.points)
        g = grad_fn(cloud.points)
        p2, _, _ = project_points(cloud.points, s, g)
        assert np.abs(p2 - cloud.points).max() < 1e-9


class TestBenchmark:
    def test_row_cardinality_and_schema(self, tmp_path):
        sdf_fn, grad_fn = oracle_evaluator(ShapeSpec("sphere", {"radius": 0.35}))
        configs = [("ordinary", 40), ("ordinary", 50), ("ordinary", 60),
                   ("octree", 5), ("octree", 6), ("octree", 7)]
        reports = benchmark_sampling(sdf_fn, grad_fn, configs)
        assert len(reports) == 6
        path = tmp_path / "bench.csv"
        write_reports_csv(path, reports)
        lines = path.read_text().splitlines()
        assert lines[0] == "grid_type,resolution,input_points,output_points,time_s,peak_values"
        assert len(lines) == 7

    def test_octree_lod6_under_5pct_of_grid64(self):
        sdf_fn, grad_fn = oracle_evaluator(ShapeSpec("sphere", {"radius": 0.35}))
        _, oct_rep = extract_octree(sdf_fn, grad_fn, 3, 6)
        _, grid_rep = extract_grid(sdf_fn, grad_fn, resolution=64)
        assert oct_rep.input_points < 0.05 * grid_rep.input_points

    def test_counts_reproducible(self):
        sdf_fn, grad_fn = oracle_evaluator(SPHERE)
        r1 = benchmark_sampling(sdf_fn, grad_fn, [("octree", 5)])[0]
        r2 = benchmark_sampling(sdf_fn, grad_fn, [("octree", 5)])[0]
        assert (r1.input_points, r1.output_points, r1.peak_values) == \
               (r2.input_points, r2.output_points, r2.peak_values)

    def test_unknown_grid_type_rejected(self):
        with pytest.raises(ConfigurationError):
            benchmark_sampling(*oracle_evaluator(SPHERE), [("hex", 4)])

    def test_empty_configuration_rejected(self):
        with pytest.raises(ConfigurationError):
            benchmark_sampling(*oracle_evaluator(SPHERE), [])


class TestTrainedNetwork:
    def test_trained_sphere_extraction_radius(self, sphere_net):
        from osdf.octree import network_evaluator
        sdf_fn, grad_fn = network_evaluator(sphere_net["net"], sphere_net["code"])
        cloud, rep = extract_octree(sdf_fn, grad_fn, 3, 6)
        radius = np.linalg.norm(cloud.points, axis=1)
        assert np.abs(radius - 1.0).max() < 0.02
        assert rep.output_points > 0
