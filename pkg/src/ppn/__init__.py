"""Parallel perception pipeline: LiDAR sweeps to BEV map sequences, twin
segmentation/reconstruction networks, edge-preserving losses, and a
sequential-vs-parallel inference benchmark."""

from .bev import (
    BevConfig,
    BevMap,
    BevSequence,
    PointCloud,
    binarize,
    flatten_and_rescale,
    load_pointcloud,
    pointcloud_to_bev,
    stack_sequence,
    voxelize,
)
from .networks import Network, NetworkConfig, build_network, forward, load_model, save_model
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "BevConfig", "BevMap", "BevSequence", "PointCloud",
    "binarize", "flatten_and_rescale", "load_pointcloud",
    "pointcloud_to_bev", "stack_sequence", "voxelize",
    "Network", "NetworkConfig", "build_network", "forward",
    "load_model", "save_model", "Tensor", "no_grad",
]
