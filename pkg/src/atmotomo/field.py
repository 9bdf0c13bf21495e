"""Discretized fields: grids, layer stacks, pupil data, and inner products.

Fields are stored as optical path length in meters on uniform Cartesian
grids; conversion to phase radians happens only in Strehl evaluation.
Off-grid evaluation uses bilinear interpolation, which is exact for affine
fields and makes the discrete adjoint of the tomography operator an exact
transpose of the discrete forward map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

# Fractional cell offset below which a sample point is snapped onto a node.
# Keeps integer-aligned shifts exact despite float residue in h * alpha / s.
SNAP_TOL = 1e-9


@dataclass(frozen=True)
class Grid2D:
    """Uniform Cartesian grid. Node (ix, iy) sits at origin + spacing*(ix, iy).

    Arrays over the grid have shape (ny, nx) and are indexed [iy, ix].
    """

    origin_x: float
    origin_y: float
    spacing: float
    nx: int
    ny: int

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grids need at least 2 nodes per axis")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.ny * self.nx

    def xs(self) -> NDArray[np.float64]:
        return self.origin_x + self.spacing * np.arange(self.nx)

    def ys(self) -> NDArray[np.float64]:
        return self.origin_y + self.spacing * np.arange(self.ny)

    def node_points(self) -> NDArray[np.float64]:
        """All node coordinates as an (ny*nx, 2) array in row-major order."""
        xx, yy = np.meshgrid(self.xs(), self.ys())
        return np.column_stack([xx.ravel(), yy.ravel()])


def pupil_grid(aperture_radius: float, nodes: int) -> Grid2D:
    """Square grid with ``nodes`` nodes per axis spanning [-T, T] exactly."""
    T = float(aperture_radius)
    if nodes < 2:
        raise ValueError("grids need at least 2 nodes per axis")
    s = 2.0 * T / (nodes - 1)
    return Grid2D(-T, -T, s, nodes, nodes)


def bilinear_table(grid: Grid2D, points: NDArray) -> tuple[
        NDArray[np.int64], NDArray[np.float64], NDArray[np.bool_]]:
    """Vectorized bilinear stencils for an (n, 2) array of points.

    Returns
    -------
    idx : (n, 4) int64
        Flat node indices (iy * nx + ix). Rows for points outside the grid
        bounding box are zero (with zero weights).
    w : (n, 4) float64
        Stencil weights; nonnegative and summing to 1 for interior points,
        all zero for points outside the bounding box.
    inside : (n,) bool
        Whether the point lies inside the bounding box (within snap
        tolerance of it).
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    s = grid.spacing
    fx = (points[:, 0] - grid.origin_x) / s
    fy = (points[:, 1] - grid.origin_y) / s
    inside = ((fx >= -SNAP_TOL) & (fx <= grid.nx - 1 + SNAP_TOL)
              & (fy >= -SNAP_TOL) & (fy <= grid.ny - 1 + SNAP_TOL))

    ix0 = np.floor(fx)
    iy0 = np.floor(fy)
    tx = fx - ix0
    ty = fy - iy0
    # snap near-integer offsets onto the node
    hi = tx > 1.0 - SNAP_TOL
    ix0[hi] += 1.0
    tx[hi] = 0.0
    tx[tx < SNAP_TOL] = 0.0
    hi = ty > 1.0 - SNAP_TOL
    iy0[hi] += 1.0
    ty[hi] = 0.0
    ty[ty < SNAP_TOL] = 0.0

    ix0 = np.clip(ix0.astype(np.int64), 0, grid.nx - 1)
    iy0 = np.clip(iy0.astype(np.int64), 0, grid.ny - 1)
    ix1 = np.minimum(ix0 + 1, grid.nx - 1)
    iy1 = np.minimum(iy0 + 1, grid.ny - 1)

    w = np.empty((points.shape[0], 4))
    w[:, 0] = (1.0 - tx) * (1.0 - ty)
    w[:, 1] = tx * (1.0 - ty)
    w[:, 2] = (1.0 - tx) * ty
    w[:, 3] = tx * ty
    w[~inside] = 0.0

    idx = np.empty((points.shape[0], 4), dtype=np.int64)
    idx[:, 0] = iy0 * grid.nx + ix0
    idx[:, 1] = iy0 * grid.nx + ix1
    idx[:, 2] = iy1 * grid.nx + ix0
    idx[:, 3] = iy1 * grid.nx + ix1
    idx[~inside] = 0

    return np.ascontiguousarray(idx), np.ascontiguousarray(w), inside


def sample_stencil(grid: Grid2D, point) -> tuple[
        NDArray[np.int64], NDArray[np.float64]]:
    """Bilinear stencil of a single point: flat node indices and weights.

    At most 4 entries; weights are positive and sum to 1 for points inside
    the bounding box. A point outside the box yields an empty stencil
    (sampled value 0 by zero extension).
    """
    idx, w, _ = bilinear_table(grid, np.asarray(point, dtype=float))
    keep = w[0] > 0.0
    return idx[0, keep], w[0, keep]


def sample_field(grid: Grid2D, values: NDArray, points: NDArray
                 ) -> NDArray[np.float64]:
    """Bilinear samples of a (ny, nx) field at an (n, 2) array of points."""
    idx, w, _ = bilinear_table(grid, points)
    flat = np.asarray(values, dtype=float).ravel()
    if idx.shape[0] == 0:
        return np.zeros(0)
    return np.einsum("ij,ij->i", flat[idx], w)


def _masked(values, mask):
    out = np.array(values, dtype=float)
    out[~mask] = 0.0
    return out


@dataclass
class LayerStack:
    """A discretized atmosphere: one scalar field per layer.

    Fields are zero outside their masks; constructors enforce this.
    ``weights`` holds the layer weights gamma_l used by the layer-space
    inner product.
    """

    grids: tuple[Grid2D, ...]
    values: list[NDArray[np.float64]]
    masks: tuple[NDArray[np.bool_], ...]
    weights: NDArray[np.float64]

    def __post_init__(self):
        if not (len(self.grids) == len(self.values) == len(self.masks)
                == len(self.weights)):
            raise ValueError("layer count mismatch across stack components")
        vals = []
        for grid, v, m in zip(self.grids, self.values, self.masks):
            if v.shape != grid.shape or m.shape != grid.shape:
                raise ValueError("layer array shape does not match its grid")
            vals.append(_masked(v, m))
        self.values = vals
        self.weights = np.asarray(self.weights, dtype=float)

    @classmethod
    def zeros(cls, grids, masks, weights) -> "LayerStack":
        vals = [np.zeros(g.shape) for g in grids]
        return cls(tuple(grids), vals, tuple(masks), np.asarray(weights))

    @property
    def num_layers(self) -> int:
        return len(self.grids)

    def copy(self) -> "LayerStack":
        return LayerStack(self.grids, [v.copy() for v in self.values],
                          self.masks, self.weights)

    def scaled(self, a: float) -> "LayerStack":
        return LayerStack(self.grids, [a * v for v in self.values],
                          self.masks, self.weights)

    def add_scaled(self, other: "LayerStack", a: float = 1.0) -> "LayerStack":
        """Return self + a * other."""
        _check_stack_compat(self, other)
        return LayerStack(self.grids,
                          [u + a * v for u, v in zip(self.values,
                                                     other.values)],
                          self.masks, self.weights)


@dataclass
class PupilField:
    """A wavefront on the aperture grid, zero outside the aperture mask."""

    grid: Grid2D
    values: NDArray[np.float64]
    mask: NDArray[np.bool_]

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError("pupil array shape does not match its grid")
        self.values = _masked(self.values, self.mask)

    def copy(self) -> "PupilField":
        return PupilField(self.grid, self.values.copy(), self.mask)


@dataclass
class DataVector:
    """One pupil wavefront per guide direction, on a shared grid."""

    grid: Grid2D
    values: NDArray[np.float64]  # (G, ny, nx)
    mask: NDArray[np.bool_]

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[1:] != self.grid.shape:
            raise ValueError("data array must have shape (G, ny, nx)")
        out = np.array(self.values, dtype=float)
        out[:, ~self.mask] = 0.0
        self.values = out

    @classmethod
    def zeros(cls, grid, mask, num_directions) -> "DataVector":
        return cls(grid, np.zeros((num_directions,) + grid.shape), mask)

    @property
    def num_directions(self) -> int:
        return self.values.shape[0]

    def field(self, g: int) -> PupilField:
        return PupilField(self.grid, self.values[g].copy(), self.mask)

    def copy(self) -> "DataVector":
        return DataVector(self.grid, self.values.copy(), self.mask)

    def scaled(self, a: float) -> "DataVector":
        return DataVector(self.grid, a * self.values, self.mask)

    def add_scaled(self, other: "DataVector", a: float = 1.0) -> "DataVector":
        _check_data_compat(self, other)
        return DataVector(self.grid, self.values + a * other.values,
                          self.mask)


def _check_stack_compat(a: LayerStack, b: LayerStack):
    if a.grids != b.grids:
        raise ValueError("layer stacks live on different grids")
    if not np.array_equal(a.weights, b.weights):
        raise ValueError("layer stacks carry different weights")


def _check_data_compat(a: DataVector, b: DataVector):
    if a.grid != b.grid or a.values.shape != b.values.shape:
        raise ValueError("data vectors live on different grids")


def inner_layers(a: LayerStack, b: LayerStack) -> float:
    """Weighted layer-space inner product: sum_l (1/gamma_l) s^2 sum a b."""
    _check_stack_compat(a, b)
    total = 0.0
    for gamma, grid, u, v in zip(a.weights, a.grids, a.values, b.values):
        total += (grid.spacing ** 2 / gamma) * float(np.vdot(u, v))
    return total


def inner_data(a: DataVector, b: DataVector) -> float:
    """Data-space inner product: sum_g s^2 sum a_g b_g."""
    _check_data_compat(a, b)
    return a.grid.spacing ** 2 * float(np.vdot(a.values, b.values))


def norm_layers(a: LayerStack) -> float:
    return float(np.sqrt(inner_layers(a, a)))


def norm_data(a: DataVector) -> float:
    return float(np.sqrt(inner_data(a, a)))
