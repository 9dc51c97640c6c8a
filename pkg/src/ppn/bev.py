"""Point cloud ingestion and conversion to binary bird's-eye-view maps.

A sweep is voxelized on a regular grid, the max z per voxel is kept,
columns are flattened by a second max along depth, heights are min-max
rescaled over the non-empty cells, and a threshold yields a {0,1} map.
Maps from consecutive sweeps stack into a time sequence for the networks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, ShapeError

EMPTY = -np.inf  # sentinel for voxels/pixels that received no point


@dataclass
class PointCloud:
    """One LiDAR sweep: rows of (x, y, z, intensity), finite values only."""

    points: np.ndarray  # (N, 4) float64
    dropped: int = 0    # non-finite rows removed at ingestion

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ShapeError(f"point array must be (N, 4), got {pts.shape}")
        self.points = pts

    @property
    def count(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class BevConfig:
    resolution: float = 0.2   # meters per voxel
    width: int = 1000
    height: int = 1000
    depth_size: int = 32
    threshold: float = 0.5

    def __post_init__(self):
        if self.resolution <= 0:
            raise ConfigError(f"resolution must be > 0, got {self.resolution}")
        for name in ("width", "height", "depth_size"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.width % 2 or self.height % 2:
            raise ConfigError(
                f"width and height must be even, got {self.width}x{self.height}"
            )
        if not 0 < self.threshold < 1:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")


@dataclass
class ElevationGrid:
    """Max z per voxel; `occupied` marks voxels that received >= 1 point."""

    values: np.ndarray    # (width, height, depth_size) float64, EMPTY where unoccupied
    occupied: np.ndarray  # same shape, bool
    config: BevConfig


@dataclass
class BevMap:
    cells: np.ndarray  # (width, height) uint8 in {0, 1}
    config: BevConfig


@dataclass
class BevSequence:
    """Time-ordered BEV maps, oldest first, current frame last."""

    frames: list = field(default_factory=list)

    @property
    def t_len(self) -> int:
        return len(self.frames)


def load_pointcloud(blob: bytes, floats_per_point: int = 4) -> PointCloud:
    """Parse a flat little-endian float32 sweep, point-major.

    With stride 5 the fifth float (ring index) is skipped.  Rows holding
    NaN/Inf are dropped and counted in ``dropped``.
    """
    if floats_per_point not in (4, 5):
        raise ConfigError(f"floats_per_point must be 4 or 5, got {floats_per_point}")
    stride_bytes = 4 * floats_per_point
    if len(blob) % stride_bytes:
        raise FormatError(f"length {len(blob)} not multiple of {stride_bytes}")
    raw = np.frombuffer(blob, dtype="<f4").reshape(-1, floats_per_point)
    pts = raw[:, :4].astype(np.float64)
    finite = np.isfinite(pts).all(axis=1)
    return PointCloud(points=pts[finite], dropped=int((~finite).sum()))


def save_pointcloud(cloud: PointCloud) -> bytes:
    """Inverse of load_pointcloud at stride 4 (float32 round-trip)."""
    return cloud.points.astype("<f4").tobytes()


def voxel_indices(points: np.ndarray, config: BevConfig):
    """floor(coord/resolution + dim/2) per axis, plus an in-bounds mask."""
    ix = np.floor(points[:, 0] / config.resolution + config.width / 2).astype(np.int64)
    iy = np.floor(points[:, 1] / config.resolution + config.height / 2).astype(np.int64)
    iz = np.floor(points[:, 2] / config.resolution + config.depth_size / 2).astype(np.int64)
    ok = (
        (ix >= 0) & (ix < config.width)
        & (iy >= 0) & (iy < config.height)
        & (iz >= 0) & (iz < config.depth_size)
    )
    return ix, iy, iz, ok


def voxelize(cloud: PointCloud, config: BevConfig) -> ElevationGrid:
    """Max-pool point z values into the voxel grid; out-of-bounds points are dropped."""
    shape = (config.width, config.height, config.depth_size)
    values = np.full(shape, EMPTY, dtype=np.float64)
    occupied = np.zeros(shape, dtype=bool)
    if cloud.count:
        ix, iy, iz, ok = voxel_indices(cloud.points, config)
        ix, iy, iz = ix[ok], iy[ok], iz[ok]
        z = cloud.points[ok, 2]
        np.maximum.at(values, (ix, iy, iz), z)
        occupied[ix, iy, iz] = True
    return ElevationGrid(values=values, occupied=occupied, config=config)


def flatten_and_rescale(grid: ElevationGrid) -> np.ndarray:
    """Column-wise max along depth, then min-max rescale the non-empty pixels to [0, 1].

    Empty columns map to 0.  If every non-empty pixel shares one height
    the whole non-empty set maps to 1, so a lone surface stays visible.
    """
    heights = grid.values.max(axis=2)
    nonempty = grid.occupied.any(axis=2)
    out = np.zeros_like(heights)
    if nonempty.any():
        vals = heights[nonempty]
        lo, hi = vals.min(), vals.max()
        if hi > lo:
            out[nonempty] = (vals - lo) / (hi - lo)
        else:
            out[nonempty] = 1.0
    return out


def binarize(heights: np.ndarray, threshold: float, config: BevConfig | None = None) -> BevMap:
    """Strictly-greater threshold: cell = 1 iff value > threshold."""
    cells = (heights > threshold).astype(np.uint8)
    if config is None:
        config = BevConfig(width=heights.shape[0], height=heights.shape[1])
    return BevMap(cells=cells, config=config)


def pointcloud_to_bev(cloud: PointCloud, config: BevConfig) -> BevMap:
    heights = flatten_and_rescale(voxelize(cloud, config))
    return binarize(heights, config.threshold, config)


def stack_sequence(maps: list) -> BevSequence:
    if not maps:
        raise ShapeError("sequence needs at least one map")
    ref = maps[0].cells.shape
    for i, m in enumerate(maps):
        if m.cells.shape != ref:
            raise ShapeError(
                f"frame {i} has shape {m.cells.shape}, expected {ref}"
            )
    return BevSequence(frames=list(maps))


def sequence_to_array(seq: BevSequence, dtype=np.float64) -> np.ndarray:
    """Stack frames on a leading time axis, oldest first: (T, W, H)."""
    return np.stack([f.cells for f in seq.frames]).astype(dtype)
