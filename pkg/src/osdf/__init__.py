"""Latent SDF/texture field priors, octree surface extraction, and
analysis-by-synthesis refinement of shape, appearance, pose and scale."""

from .errors import (ConfigurationError, DegenerateRotationError,
                     EmptyObservationError, EmptySurfaceError, TrainingDivergence)
from .field_net import (AdamOptimizer, AdamState, FieldNetwork, GradientTape,
                        LatentCode, LatentTable, adam_step, assemble_inputs,
                        sdf_forward, sdf_gradient, texture_forward)
from .checkpoint import load_checkpoint, save_checkpoint
from .shapes import ColorSpec, ShapeSpec, desk_database, specs_from_json, specs_to_json
from .priors import (TrainConfig, TrainingSet, loss_contrastive, loss_rgb,
                     loss_sdf, mean_latent, sample_training_points,
                     train_shape_priors, train_texture_priors)
from .octree import (SamplingReport, SurfacePointCloud, benchmark_sampling,
                     cell_size, extract_grid, extract_octree, network_color,
                     network_evaluator, oracle_evaluator, project_points)
from .rotation import (axis_rotation, normalize_symmetric_rotation, rot9_to_so3,
                       rotation_angle, so3_to_raw9)
from .refine import (Observation, Pose, RefineResult, RefineSchedule, chamfer,
                     joint_refine, optimize_pose, optimize_shape,
                     optimize_texture, psnr)
from .heatmap import (CodeMaps, PlantedObject, SyntheticScene, combined_loss,
                      depth_to_pointcloud, detect_peaks, gated_l1, heatmap_mse,
                      mask_ce, render_scene_maps, sample_codes, splat_targets)
from .ply import read_ply, write_ply

__version__ = "0.1.0"
