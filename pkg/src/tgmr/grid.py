"""Grid graphs over a frame and coordinate <-> node conversions.

A frame of frame_width x frame_height pixels is split into cols x rows cells.
Node indices are row-major: node = row * cols + col. Each node's neighborhood
is the 8-connected ring plus the node itself, kept in a fixed slot order
(row-major over the 3x3 window, self at slot 4) so neighborhood quantities can
be stored as (rows, cols, 9) arrays with a validity mask at the borders.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

# (drow, dcol) per neighborhood slot; slot 4 is the node itself
NEIGHBOR_OFFSETS = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 0), (0, 1),
    (1, -1), (1, 0), (1, 1),
)
SELF_SLOT = 4

DESK_SCALES = ((12, 6), (6, 3))
FULL_SCALES = ((36, 18), (18, 9))


@dataclass(frozen=True)
class GridSpec:
    cols: int
    rows: int
    frame_width: float
    frame_height: float

    def __post_init__(self):
        if self.cols < 1 or self.rows < 1:
            raise ValueError(f"grid dims must be >= 1, got {self.cols}x{self.rows}")
        if self.frame_width <= 0 or self.frame_height <= 0:
            raise ValueError(f"frame must be positive, got {self.frame_width}x{self.frame_height}")

    @property
    def cell_width(self) -> float:
        return self.frame_width / self.cols

    @property
    def cell_height(self) -> float:
        return self.frame_height / self.rows

    @property
    def n_nodes(self) -> int:
        return self.cols * self.rows


def _check_bounds(spec: GridSpec, x: float, y: float) -> None:
    if not (0.0 <= x < spec.frame_width and 0.0 <= y < spec.frame_height):
        raise ValueError(
            f"coordinate ({x}, {y}) outside frame [0, {spec.frame_width}) x [0, {spec.frame_height})"
        )


def node_index(spec: GridSpec, x: float, y: float) -> int:
    """Row-major index of the cell containing (x, y)."""
    _check_bounds(spec, x, y)
    col = int(x / spec.cell_width)
    row = int(y / spec.cell_height)
    # guard the float edge where x/cell_width rounds up to cols
    col = min(col, spec.cols - 1)
    row = min(row, spec.rows - 1)
    return row * spec.cols + col


def cell_center(spec: GridSpec, node: int) -> tuple[float, float]:
    if not (0 <= node < spec.n_nodes):
        raise ValueError(f"node {node} out of range for {spec.cols}x{spec.rows} grid")
    row, col = divmod(node, spec.cols)
    return ((col + 0.5) * spec.cell_width, (row + 0.5) * spec.cell_height)


def cell_offset(spec: GridSpec, x: float, y: float) -> tuple[float, float]:
    """Pixel offset of (x, y) from the center of its cell."""
    cx, cy = cell_center(spec, node_index(spec, x, y))
    return (x - cx, y - cy)


@dataclass
class SceneGraph:
    """A grid graph: per-node neighbor lists plus dense slot arrays."""

    spec: GridSpec
    neighborhoods: list[list[int]] = field(repr=False)
    neighbor_index: np.ndarray = field(repr=False)  # (N, 9) int, invalid slots 0
    neighbor_mask: np.ndarray = field(repr=False)  # (N, 9) bool

    @property
    def n_nodes(self) -> int:
        return self.spec.n_nodes

    def mask_grid(self) -> np.ndarray:
        """Validity mask reshaped to (rows, cols, 9)."""
        return self.neighbor_mask.reshape(self.spec.rows, self.spec.cols, 9)


def build_scene_graph(spec: GridSpec) -> SceneGraph:
    rows, cols = spec.rows, spec.cols
    n = rows * cols
    index = np.zeros((n, 9), dtype=np.int64)
    mask = np.zeros((n, 9), dtype=bool)
    neighborhoods: list[list[int]] = []
    for node in range(n):
        r, c = divmod(node, cols)
        nbrs: list[int] = []
        for slot, (dr, dc) in enumerate(NEIGHBOR_OFFSETS):
            rr, cc = r + dr, c + dc
            if 0 <= rr < rows and 0 <= cc < cols:
                j = rr * cols + cc
                index[node, slot] = j
                mask[node, slot] = True
                nbrs.append(j)
        neighborhoods.append(nbrs)
    return SceneGraph(spec=spec, neighborhoods=neighborhoods, neighbor_index=index, neighbor_mask=mask)


def build_scales(scales, frame_width: float, frame_height: float) -> list[SceneGraph]:
    """One SceneGraph per (cols, rows) pair, all sharing the frame extent."""
    if not scales:
        raise ValueError("at least one grid scale is required")
    return [
        build_scene_graph(GridSpec(cols=c, rows=r, frame_width=frame_width, frame_height=frame_height))
        for c, r in scales
    ]


@dataclass
class SegMap:
    """Per-cell class fractions with shape (rows, cols, classes)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError(f"segmentation grid must be rank 3, got shape {self.values.shape}")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def classes(self) -> int:
        return self.values.shape[2]

    def validate(self, tol: float = 1e-9) -> None:
        if np.any(self.values < 0):
            raise ValueError("segmentation fractions must be >= 0")
        sums = self.values.sum(axis=2)
        bad = np.abs(sums - 1.0) > tol
        if np.any(bad):
            r, c = np.argwhere(bad)[0]
            raise ValueError(f"segmentation cell ({r}, {c}) sums to {sums[r, c]!r}, expected 1")


def mean_seg(frames: list[SegMap]) -> SegMap:
    """Elementwise mean of per-frame segmentation grids."""
    if not frames:
        raise ValueError("mean_seg of an empty frame list")
    shape = frames[0].values.shape
    for f in frames[1:]:
        if f.values.shape != shape:
            raise ValueError(f"segmentation shapes differ: {shape} vs {f.values.shape}")
    return SegMap(np.mean([f.values for f in frames], axis=0))


def one_hot_seg_embed(spec: GridSpec, x: float, y: float, seg: SegMap) -> Tensor:
    """Zero grid except the occupied cell, which carries that cell's class fractions."""
    if seg.rows != spec.rows or seg.cols != spec.cols:
        raise ValueError(f"segmentation grid {seg.rows}x{seg.cols} does not match spec {spec.rows}x{spec.cols}")
    node = node_index(spec, x, y)
    row, col = divmod(node, spec.cols)
    out = np.zeros_like(seg.values)
    out[row, col] = seg.values[row, col]
    return Tensor(out)


def one_hot_grid(spec: GridSpec, node: int) -> Tensor:
    """One-channel grid with a 1 at the given node."""
    if not (0 <= node < spec.n_nodes):
        raise ValueError(f"node {node} out of range for {spec.cols}x{spec.rows} grid")
    out = np.zeros((spec.rows, spec.cols, 1))
    row, col = divmod(node, spec.cols)
    out[row, col, 0] = 1.0
    return Tensor(out)


def offset_grid(spec: GridSpec, x: float, y: float, normalized: bool = True) -> Tensor:
    """Two-channel grid holding the cell-center offset at the occupied cell.

    With normalized=True the offset is expressed as a fraction of the cell
    size, so entries lie in [-0.5, 0.5).
    """
    node = node_index(spec, x, y)
    ox, oy = cell_offset(spec, x, y)
    if normalized:
        ox /= spec.cell_width
        oy /= spec.cell_height
    out = np.zeros((spec.rows, spec.cols, 2))
    row, col = divmod(node, spec.cols)
    out[row, col, 0] = ox
    out[row, col, 1] = oy
    return Tensor(out)


@dataclass
class TrajectorySample:
    """One observed history with one or more ground-truth futures.

    seg_frames holds, per grid scale, the observed frames' segmentation grids.
    """

    scene_id: str
    observed: np.ndarray  # (T_obs, 2) pixel coords
    futures: list[np.ndarray]  # J arrays of (T_future, 2)
    seg_frames: list[list[SegMap]]  # [scale][frame]

    def __post_init__(self):
        self.observed = np.asarray(self.observed, dtype=np.float64)
        self.futures = [np.asarray(f, dtype=np.float64) for f in self.futures]
        if self.observed.ndim != 2 or self.observed.shape[1] != 2:
            raise ValueError(f"observed must be (T, 2), got {self.observed.shape}")
        if not self.futures:
            raise ValueError(f"sample {self.scene_id}: needs at least one future")
        length = self.futures[0].shape[0]
        for f in self.futures:
            if f.shape != (length, 2):
                raise ValueError(f"sample {self.scene_id}: futures have differing shapes")

    @property
    def n_futures(self) -> int:
        return len(self.futures)

    def validate_bounds(self, frame_width: float, frame_height: float) -> None:
        pts = np.concatenate([self.observed] + self.futures, axis=0)
        if np.any(pts[:, 0] < 0) or np.any(pts[:, 0] >= frame_width) or np.any(pts[:, 1] < 0) or np.any(pts[:, 1] >= frame_height):
            raise ValueError(f"sample {self.scene_id}: coordinates outside the frame")
