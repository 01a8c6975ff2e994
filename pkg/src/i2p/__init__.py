"""Image-to-point masked autoencoding for point clouds.

Pipeline: multi-view depth projection of a point cloud, frozen 2D feature
and saliency extraction, saliency-guided token masking, masked autoencoding
with dual 3D-coordinate / 2D-semantic reconstruction, and linear-SVM probing
of the frozen encoder.
"""

from .autodiff import Tensor, backward, no_grad
from .config import TrainConfig, load_config
from .errors import (ConfigError, ContractError, FormatError, I2PError, InputError,
                     NumericsError, ShapeError)
from .guidance import MaskPartition, SaliencyCloud, build_saliency_cloud, sample_mask
from .pointcloud import PointCloud, TokenCenters, furthest_point_sample, knn_group, normalize
from .projection import DepthMap, GridMap, back_project, render_depth, render_views

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "no_grad",
    "TrainConfig", "load_config",
    "I2PError", "InputError", "ShapeError", "ContractError", "FormatError",
    "ConfigError", "NumericsError",
    "PointCloud", "TokenCenters", "furthest_point_sample", "knn_group", "normalize",
    "DepthMap", "GridMap", "render_depth", "render_views", "back_project",
    "SaliencyCloud", "MaskPartition", "build_saliency_cloud", "sample_mask",
    "__version__",
]
