"""Problem geometry: guide directions, shifted apertures, overlap maps,
single-overlap balls, and the disjointness height.

Point r on layer l is seen by guide star g when ||r - h_l alpha_g|| <= T
(closed disks). The overlap function omega_l(r) counts the guide stars
seeing r; single-overlap regions (omega = 1) are the seat of the
tomography operator's null space.

Layer and guide indices are 0-based throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from .field import Grid2D

ARCSEC_TO_RAD = math.pi / (180.0 * 3600.0)


class NoSingleOverlapRegion(ValueError):
    """No usable single-overlap region on this layer for this direction."""


@dataclass(frozen=True)
class GeometrySpec:
    """Physical layout: aperture radius, guide directions, layer heights.

    Directions are angular sky offsets in radians (2-vectors); a guide star
    displaces layer l by h_l * alpha_g meters. Directions must be pairwise
    distinct and ordered by increasing polar angle in [0, 2pi), radius
    breaking ties, so direction indices are unambiguous.
    """

    aperture_radius_m: float
    directions_rad: NDArray[np.float64]   # (G, 2)
    layer_heights_m: NDArray[np.float64]  # (L,)
    layer_weights: NDArray[np.float64]    # (L,)

    def __post_init__(self):
        object.__setattr__(self, "directions_rad",
                           np.atleast_2d(np.asarray(self.directions_rad,
                                                    dtype=float)))
        object.__setattr__(self, "layer_heights_m",
                           np.atleast_1d(np.asarray(self.layer_heights_m,
                                                    dtype=float)))
        object.__setattr__(self, "layer_weights",
                           np.atleast_1d(np.asarray(self.layer_weights,
                                                    dtype=float)))
        if not self.aperture_radius_m > 0:
            raise ValueError("aperture radius must be positive")
        dirs = self.directions_rad
        if dirs.ndim != 2 or dirs.shape[1] != 2 or dirs.shape[0] < 1:
            raise ValueError("directions must be a (G, 2) array with G >= 1")
        h = self.layer_heights_m
        if h.size < 1:
            raise ValueError("at least one layer is required")
        if np.any(h < 0) or np.any(np.diff(h) <= 0):
            raise ValueError("layer heights must satisfy 0 <= h_1 < ... < h_L")
        if h.size != self.layer_weights.size:
            raise ValueError("one weight per layer is required")
        if np.any(self.layer_weights <= 0):
            raise ValueError("layer weights must be positive")
        for i in range(dirs.shape[0]):
            for j in range(i + 1, dirs.shape[0]):
                if np.array_equal(dirs[i], dirs[j]):
                    raise ValueError("guide directions must be pairwise "
                                     "distinct")
        angles = np.mod(np.arctan2(dirs[:, 1], dirs[:, 0]), 2.0 * np.pi)
        radii = np.hypot(dirs[:, 0], dirs[:, 1])
        keys = list(zip(angles.tolist(), radii.tolist()))
        if any(b <= a for a, b in zip(keys, keys[1:])):
            raise ValueError("directions must be ordered by increasing "
                             "polar angle (radius breaks ties)")

    @classmethod
    def from_arcsec(cls, aperture_radius_m, directions_arcsec,
                    layer_heights_m, layer_weights) -> "GeometrySpec":
        dirs = np.asarray(directions_arcsec, dtype=float) * ARCSEC_TO_RAD
        return cls(float(aperture_radius_m), dirs,
                   np.asarray(layer_heights_m, dtype=float),
                   np.asarray(layer_weights, dtype=float))

    @property
    def num_directions(self) -> int:
        return self.directions_rad.shape[0]

    @property
    def num_layers(self) -> int:
        return self.layer_heights_m.size

    def shift(self, g: int, l: int) -> NDArray[np.float64]:
        """Aperture center displacement h_l * alpha_g on layer l (meters)."""
        return self.layer_heights_m[l] * self.directions_rad[g]


@dataclass(frozen=True)
class Region:
    """A planar region: an analytic disk or a rasterized boolean mask.

    kind is one of "disk", "shifted_aperture", "mask". Disks test
    membership analytically via ||r - center|| <= radius; a shifted
    aperture is the disk Omega_T(h_l alpha_g) tagged with its origin.
    """

    kind: str
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.0
    grid: Grid2D | None = None
    field: NDArray[np.bool_] | None = None

    def contains(self, points: NDArray) -> NDArray[np.bool_]:
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        if self.kind in ("disk", "shifted_aperture"):
            d2 = ((points[:, 0] - self.center[0]) ** 2
                  + (points[:, 1] - self.center[1]) ** 2)
            return d2 <= self.radius ** 2
        if self.kind == "mask":
            s = self.grid.spacing
            ix = np.rint((points[:, 0] - self.grid.origin_x) / s).astype(int)
            iy = np.rint((points[:, 1] - self.grid.origin_y) / s).astype(int)
            ok = ((ix >= 0) & (ix < self.grid.nx)
                  & (iy >= 0) & (iy < self.grid.ny))
            out = np.zeros(points.shape[0], dtype=bool)
            out[ok] = self.field[iy[ok], ix[ok]]
            return out
        raise ValueError(f"unknown region kind {self.kind!r}")


def shifted_aperture(spec: GeometrySpec, g: int, l: int) -> Region:
    """Omega_T(h_l alpha_g), the aperture as seen on layer l along g."""
    cx, cy = spec.shift(g, l)
    return Region("shifted_aperture", (float(cx), float(cy)),
                  spec.aperture_radius_m)


@dataclass(frozen=True)
class BallRegion:
    """A disk of single overlap: every grid node inside has omega = 1 and
    lies in the shifted aperture of its guide star."""

    layer_index: int
    guide_index: int
    center: tuple[float, float]
    radius: float

    def disk(self) -> Region:
        return Region("disk", self.center, self.radius)


@dataclass
class OverlapMap:
    """Integer overlap counts omega_l on a grid covering layer l."""

    spec: GeometrySpec
    layer_index: int
    grid: Grid2D
    values: NDArray[np.int_]


def overlap_counts(spec: GeometrySpec, l: int, points: NDArray
                   ) -> NDArray[np.int_]:
    """Analytic omega_l at arbitrary points: membership count over the G
    shifted apertures."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    T2 = spec.aperture_radius_m ** 2
    count = np.zeros(points.shape[0], dtype=np.int64)
    for g in range(spec.num_directions):
        cx, cy = spec.shift(g, l)
        d2 = (points[:, 0] - cx) ** 2 + (points[:, 1] - cy) ** 2
        count += d2 <= T2
    return count


def layer_bounding_square(spec: GeometrySpec, l: int) -> tuple[
        float, float, float]:
    """Center (x, y) and half-size of the bounding square of Omega_l."""
    T = spec.aperture_radius_m
    centers = spec.layer_heights_m[l] * spec.directions_rad
    lo = centers.min(axis=0) - T
    hi = centers.max(axis=0) + T
    mid = 0.5 * (lo + hi)
    half = 0.5 * float(np.max(hi - lo))
    return float(mid[0]), float(mid[1]), half


def overlap_map(spec: GeometrySpec, l: int, resolution: int) -> OverlapMap:
    """Rasterize omega_l on a fresh square grid covering Omega_l.

    Parameters
    ----------
    spec : GeometrySpec
    l : int
        Layer index, 0-based.
    resolution : int
        Nodes per axis of the rasterization grid (>= 2).
    """
    if not 0 <= l < spec.num_layers:
        raise IndexError(f"layer index {l} out of range")
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    cx, cy, half = layer_bounding_square(spec, l)
    s = 2.0 * half / (resolution - 1)
    grid = Grid2D(cx - half, cy - half, s, resolution, resolution)
    return overlap_map_on_grid(spec, l, grid)


def overlap_map_on_grid(spec: GeometrySpec, l: int, grid: Grid2D
                        ) -> OverlapMap:
    """Rasterize omega_l on an existing grid (e.g. an operator layer grid)."""
    if not 0 <= l < spec.num_layers:
        raise IndexError(f"layer index {l} out of range")
    counts = overlap_counts(spec, l, grid.node_points())
    return OverlapMap(spec, l, grid, counts.reshape(grid.shape))


def disjoint_height(spec: GeometrySpec) -> float:
    """Least height at which all pairwise shifted apertures are disjoint
    (closures may touch): 2T / min_{i != j} ||alpha_i - alpha_j||."""
    if spec.num_directions < 2:
        raise ValueError("disjoint_height needs at least two directions")
    dirs = spec.directions_rad
    best = np.inf
    for i in range(dirs.shape[0]):
        for j in range(i + 1, dirs.shape[0]):
            best = min(best, float(np.hypot(*(dirs[i] - dirs[j]))))
    return 2.0 * spec.aperture_radius_m / best


def find_single_overlap_ball(omap: OverlapMap, g: int) -> BallRegion:
    """Largest safe single-overlap disk for guide g on this layer.

    The center is the grid node inside Omega_T(h_l alpha_g) maximizing the
    Euclidean distance transform of the omega = 1 node set; the radius is
    that distance minus one cell diagonal as a safety margin. Ties are
    broken by the lowest row-major node index. Raises
    NoSingleOverlapRegion when the candidate set is empty or thinner than
    the margin.
    """
    spec = omap.spec
    if not 0 <= g < spec.num_directions:
        raise IndexError(f"guide index {g} out of range")
    single = omap.values == 1
    pts = omap.grid.node_points()
    in_disk = shifted_aperture(spec, g, omap.layer_index).contains(pts)
    candidates = single.ravel() & in_disk
    if not candidates.any():
        raise NoSingleOverlapRegion(
            f"no single-overlap region on layer {omap.layer_index} for "
            f"direction {g}")
    s = omap.grid.spacing
    dist = ndimage.distance_transform_edt(single, sampling=(s, s)).ravel()
    dist[~candidates] = -np.inf
    best = int(np.argmax(dist))  # first occurrence = lowest row-major index
    radius = float(dist[best]) - math.sqrt(2.0) * s
    if radius <= 0.0:
        raise NoSingleOverlapRegion(
            f"single-overlap region on layer {omap.layer_index} for "
            f"direction {g} is thinner than the one-cell safety margin")
    center = (float(pts[best, 0]), float(pts[best, 1]))
    return BallRegion(omap.layer_index, g, center, radius)


def shifted_region(ball: BallRegion, spec: GeometrySpec, l: int) -> Region:
    """The ball translated along its guide direction to layer l.

    With the ball found on layer l0, the aperture trace is
    B_rho(r_l0) - h_l0 alpha_g and this returns that trace shifted by
    h_l alpha_g; for l = l0 it is the ball itself.
    """
    if not 0 <= l < spec.num_layers:
        raise IndexError(f"layer index {l} out of range")
    dh = spec.layer_heights_m[l] - spec.layer_heights_m[ball.layer_index]
    alpha = spec.directions_rad[ball.guide_index]
    center = (ball.center[0] + dh * alpha[0], ball.center[1] + dh * alpha[1])
    return Region("disk", center, ball.radius)


def aperture_trace(ball: BallRegion, spec: GeometrySpec) -> Region:
    """The ball pulled back to the aperture: B_rho(r_l0) - h_l0 alpha_g."""
    h = spec.layer_heights_m[ball.layer_index]
    alpha = spec.directions_rad[ball.guide_index]
    center = (ball.center[0] - h * alpha[0], ball.center[1] - h * alpha[1])
    return Region("disk", center, ball.radius)
