"""Blind multispectral pansharpening: kernel estimation and fast fusion."""

__version__ = "0.1.0"

from .errors import DimensionError, FbmpError, FormatError, NumericalError, ParameterError
from .kernel_est import KernelEstParams, estimate_kernel_l2, estimate_kernel_tgv, estimate_kernel_tv
from .metrics import MetricsReport, evaluate, kernel_rel_error
from .pansharpen import PansharpenParams, pansharpen
from .raster import load_raster, save_raster
from .simulate import SyntheticKernelSpec, make_scene, simulate_lrms, synth_kernel
from .weights import SpectralWeightConfig, solve_weights

__all__ = [
    "DimensionError", "FbmpError", "FormatError", "NumericalError", "ParameterError",
    "KernelEstParams", "estimate_kernel_tgv", "estimate_kernel_tv", "estimate_kernel_l2",
    "MetricsReport", "evaluate", "kernel_rel_error",
    "PansharpenParams", "pansharpen",
    "load_raster", "save_raster",
    "SyntheticKernelSpec", "make_scene", "simulate_lrms", "synth_kernel",
    "SpectralWeightConfig", "solve_weights",
]
