"""Gaussian-splat maps: rendering, growth, separation and optimization."""

from .growth import densify_clone_split, geometry_aware_resplit, interpolate_gaussians
from .ground import Plane, align_planes, fit_ground_plane, ground_completion
from .model import Gaussian, GaussianMap, ViewPriors, covariance, init_from_points, init_scales
from .optimize import Schedule, optimize, optimize_with_stats
from .raster import LossWeights, RenderBuffers, project, render, render_with_gradients, view_loss
from .separation import neighborhood_prune, update_sky_mask
from .storage import FORMAT_VERSION, export_points, load_map, save_map

__all__ = [
    "Gaussian", "GaussianMap", "ViewPriors", "covariance", "init_from_points", "init_scales",
    "LossWeights", "RenderBuffers", "project", "render", "render_with_gradients", "view_loss",
    "densify_clone_split", "geometry_aware_resplit", "interpolate_gaussians",
    "Plane", "align_planes", "fit_ground_plane", "ground_completion",
    "neighborhood_prune", "update_sky_mask",
    "Schedule", "optimize", "optimize_with_stats",
    "FORMAT_VERSION", "export_points", "load_map", "save_map",
]
