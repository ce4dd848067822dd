"""Multi-view-consistent neural style transfer.

Stylizes calibrated multi-view image sets by optimizing an image
transformation network under perceptual, edge-preservation, and multi-view
depth-agreement losses, then scores the cross-view consistency of the
result.
"""

from .errors import (ConfigError, LoadError, MuviecastError, ValidationError)
from .dataset import (CameraParams, MultiViewSample, Scene, load_scene,
                      make_sample, read_camera_file, read_image,
                      read_pair_file, scale_sample, select_neighbors,
                      write_camera_file, write_image, write_scene)
from .perceptual import (DEFAULT_TAPS, FeatureSet, FeatureTapSpec,
                         PerceptualExtractor, extract)
from .transfer import (TransferConfig, TransferNet, adain_map,
                       load_checkpoint_into, save_checkpoint)
from .geometry import (BackendSpec, DepthEstimate, PlaneSweepBackend,
                       StageEstimate, build_backend, estimate,
                       homography_warp)
from .losses import (LossWeights, canny_loss, canny_map, content_loss,
                     depth_loss, gram_matrix, gram_style_loss,
                     image_geometry_loss, in_stats_style_loss, laplace_loss,
                     laplace_map, nnfm_loss, smooth_l1, sobel_loss,
                     sobel_map, stage_weight, total_loss, tv_loss,
                     volume_loss)
from .color import ColorMap, apply_color_map, fit_color_map
from .consistency import (ConsistencyReport, SetComparison, compare_sets,
                          consistency_score)
from .trainer import (RunReport, TrainConfig, ablate, pretrain_transfernet,
                      stylize_all, stylize_pipeline, train)
from .config import ARCH_PRESETS, dump_config, load_config
from .checksums import state_checksum

__version__ = "0.1.0"

__all__ = [
    "ARCH_PRESETS", "BackendSpec", "CameraParams", "ColorMap",
    "ConfigError", "ConsistencyReport", "DEFAULT_TAPS", "DepthEstimate",
    "FeatureSet", "FeatureTapSpec", "LoadError", "LossWeights",
    "MultiViewSample", "MuviecastError", "PerceptualExtractor",
    "PlaneSweepBackend", "RunReport", "Scene", "SetComparison",
    "StageEstimate", "TrainConfig", "TransferConfig", "TransferNet",
    "ValidationError", "ablate", "adain_map", "apply_color_map",
    "build_backend", "canny_loss", "canny_map", "compare_sets",
    "consistency_score", "content_loss", "depth_loss", "dump_config",
    "estimate", "extract", "fit_color_map", "gram_matrix",
    "gram_style_loss", "homography_warp", "image_geometry_loss",
    "in_stats_style_loss", "laplace_loss", "laplace_map", "load_checkpoint_into",
    "load_config", "load_scene", "make_sample", "nnfm_loss",
    "pretrain_transfernet", "read_camera_file", "read_image",
    "read_pair_file", "save_checkpoint", "scale_sample", "select_neighbors",
    "smooth_l1", "sobel_loss", "sobel_map", "stage_weight",
    "state_checksum", "stylize_all", "stylize_pipeline", "total_loss",
    "train", "tv_loss", "volume_loss", "write_camera_file", "write_image",
    "write_scene",
]
