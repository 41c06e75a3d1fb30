"""Synthetic short-fiber CT volumes, voxel ground truth, tubularity-based
fiber segmentation, and segmentation scoring."""

__version__ = "0.1.0"

from .volume import (FORMAT_VERSION, GridSpec, LabelVolume, Volume,
                     read_volume, write_volume)
from .fibers import (Fiber, FiberModel, ModelParams, ModelStats, audit_model,
                     capsules_overlap, generate_model, model_statistics,
                     read_fibers_csv, weight_fraction, write_fibers_csv)
from .mesh import export_stl, write_stl
from .ctsim import (DegradeParams, Sinogram, degrade, fbp_slice, radon_slice,
                    rasterize_attenuation, rasterize_labels, simulate_fbp)
from .annotate import (PolylineAnnotation, annotations_from_fibers,
                       bresenham3d, read_annotations, region_grow,
                       render_polylines, write_annotations)
from .vesselness import (EigenField, OrientationField, ScaleSet,
                         VesselnessParams, binarize, connected_components,
                         default_scales, frangi_multiscale, frangi_response,
                         hessian_at_scale, otsu_threshold,
                         structure_tensor_orientation)
from .metrics import (ContingencyTable, MetricReport, adjusted_rand_index,
                      contingency_table, dice, evaluate)
from .config import PipelineConfig, default_config

__all__ = [
    "FORMAT_VERSION", "GridSpec", "LabelVolume", "Volume", "read_volume",
    "write_volume", "Fiber", "FiberModel", "ModelParams", "ModelStats",
    "audit_model", "capsules_overlap", "generate_model", "model_statistics",
    "read_fibers_csv", "weight_fraction", "write_fibers_csv", "export_stl",
    "write_stl", "DegradeParams", "Sinogram", "degrade", "fbp_slice",
    "radon_slice", "rasterize_attenuation", "rasterize_labels", "simulate_fbp",
    "PolylineAnnotation", "annotations_from_fibers", "bresenham3d",
    "read_annotations", "region_grow", "render_polylines", "write_annotations",
    "EigenField", "OrientationField", "ScaleSet", "VesselnessParams",
    "binarize", "connected_components", "default_scales", "frangi_multiscale",
    "frangi_response", "hessian_at_scale", "otsu_threshold",
    "structure_tensor_orientation", "ContingencyTable", "MetricReport",
    "adjusted_rand_index", "contingency_table", "dice", "evaluate",
    "PipelineConfig", "default_config", "__version__",
]
