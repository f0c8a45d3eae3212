"""mdslab: desk-scale FMCW radar micro-Doppler classification pipeline.

Simulation of TDM-MIMO ADC cubes, range-velocity-angle processing with
CA-CFAR detection, micro-Doppler spectrogram generation, a small
from-scratch transformer classifier with exact gradients, and Grad-CAM
relevance maps.
"""

from .config import ConfigError, RunConfig, load_config, parse_config
from .container import (
    ContainerError,
    ContainerFormatError,
    ContainerSizeError,
    ContainerVersionError,
    read_bundle,
    read_tensor,
    write_bundle,
    write_tensor,
)
from .mds import StftParams, build_mds, reduce_dim, stft_cell
from .nn import (
    ForwardTape,
    ModelConfig,
    OptState,
    adam_step,
    backward,
    batch_loss_and_grads,
    forward,
    init_params,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from .rva import (
    Centroid,
    DetectionSet,
    PipelineParams,
    RdCube,
    alpha_for_pfa,
    angle_of,
    angle_time_cube,
    ca_cfar,
    cluster_centroids,
    crop_and_stack,
    doppler_process,
    group_detections,
    power_map,
    process_sample,
    range_fft,
)
from .scene import (
    DEFAULT_TEMPLATES,
    AxisSpec,
    ClassTemplate,
    RadarConfig,
    Scatterer,
    Scene,
    TargetTrack,
    derive_axes,
    sample_dataset,
    synth_adc,
    synth_frames,
)
from .train import EvalResult, FoldPlan, Hyper, TrainReport, evaluate, kfold_split, run_cv
from .xai import RelevanceMap, grad_cam, render_overlay

__version__ = "0.1.0"

__all__ = [
    "AxisSpec", "Centroid", "ClassTemplate", "ConfigError", "ContainerError",
    "DEFAULT_TEMPLATES",
    "ContainerFormatError", "ContainerSizeError", "ContainerVersionError",
    "DetectionSet", "EvalResult", "FoldPlan", "ForwardTape", "Hyper",
    "ModelConfig", "OptState", "PipelineParams", "RadarConfig", "RdCube",
    "RelevanceMap", "RunConfig", "Scatterer", "Scene", "StftParams",
    "TargetTrack", "TrainReport", "adam_step", "alpha_for_pfa", "angle_of",
    "angle_time_cube", "backward", "batch_loss_and_grads", "build_mds",
    "ca_cfar", "cluster_centroids", "crop_and_stack", "derive_axes",
    "doppler_process", "evaluate", "forward", "grad_cam", "group_detections",
    "init_params", "kfold_split", "load_checkpoint", "load_config",
    "param_count", "parse_config", "power_map", "process_sample",
    "range_fft", "read_bundle", "read_tensor", "reduce_dim", "render_overlay",
    "run_cv", "sample_dataset", "save_checkpoint", "stft_cell", "synth_adc",
    "synth_frames", "write_bundle", "write_tensor",
]
