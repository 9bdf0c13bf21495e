"""The atmospheric tomography operator, its adjoint, and measurement noise.

The forward map evaluates, for every guide direction g and in-aperture
pupil node r, the sum over layers of the layer fields at r + h_l alpha_g
(bilinear interpolation). The adjoint is the exact transpose of that
discrete map with respect to the weighted layer and data inner products:
it scatters gamma_l times the wavefront through the same stencil tables
and re-masks to the layer supports.

With sum(gamma_l) = 1 and shifts aligned to the grid, A_g A_g* is the
identity on pupil fields; this is enforced at construction (weights are
normalized with a warning when needed).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from . import kernels
from .field import (DataVector, Grid2D, LayerStack, PupilField,
                    bilinear_table, pupil_grid)
from .geometry import GeometrySpec, OverlapMap, overlap_map_on_grid

# Largest |sum(gamma) - 1| attributed to float rounding of valid weights.
_WEIGHT_SUM_TOL = 1e-12
# Fractional cell offset below which a shift counts as grid-aligned.
_ALIGN_TOL = 1e-9


def normalize_layer_weights(weights) -> NDArray[np.float64]:
    """Return weights scaled to sum to 1, warning when that changes them.

    The range identity A_g A_g* = I needs sum(gamma_l) = 1; float rounding
    of already-valid weights (within 1e-12) is left untouched.
    """
    weights = np.asarray(weights, dtype=float).copy()
    wsum = float(weights.sum())
    if abs(wsum - 1.0) > _WEIGHT_SUM_TOL:
        warnings.warn(
            f"layer weights sum to {wsum:.6g}; normalizing to 1 so that "
            "A_g A_g* inverts on its range", stacklevel=3)
        weights /= wsum
    return weights


def _layer_grid(spec: GeometrySpec, l: int, pupil: Grid2D,
                extra_dirs: NDArray | None) -> Grid2D:
    """Grid for layer l: pupil spacing, origin on the pupil lattice,
    covering every shifted aperture (guide stars plus any extra coverage
    directions)."""
    T = spec.aperture_radius_m
    s = pupil.spacing
    dirs = spec.directions_rad
    if extra_dirs is not None and len(extra_dirs):
        dirs = np.vstack([dirs, np.asarray(extra_dirs, dtype=float)])
    centers = spec.layer_heights_m[l] * dirs
    lo = centers.min(axis=0) - T
    hi = centers.max(axis=0) + T
    ox = pupil.origin_x + s * math.floor((lo[0] - pupil.origin_x) / s)
    oy = pupil.origin_y + s * math.floor((lo[1] - pupil.origin_y) / s)
    nx = int(math.ceil((hi[0] - ox) / s - 1e-9)) + 1
    ny = int(math.ceil((hi[1] - oy) / s - 1e-9)) + 1
    return Grid2D(ox, oy, s, nx, ny)


class TomoOperator:
    """Matrix-free tomography operator for a fixed geometry and resolution.

    Parameters
    ----------
    spec : GeometrySpec
    pupil_nodes : int
        Nodes per axis of the square pupil grid spanning [-T, T].
    coverage_directions : array_like, optional
        Extra (n, 2) angular offsets (radians) whose footprints the layer
        grids must also cover, e.g. Strehl evaluation directions. They do
        not affect the layer masks, only the grid extents.

    Notes
    -----
    Immutable after construction. ``weights`` holds the normalized layer
    weights; they are what every LayerStack produced by or fed to this
    operator must carry.
    """

    def __init__(self, spec: GeometrySpec, pupil_nodes: int,
                 coverage_directions=None):
        self.spec = spec
        self.pupil = pupil_grid(spec.aperture_radius_m, pupil_nodes)
        self.weights = normalize_layer_weights(spec.layer_weights)

        pts = self.pupil.node_points()
        r2 = pts[:, 0] ** 2 + pts[:, 1] ** 2
        in_ap = r2 <= spec.aperture_radius_m ** 2
        self.pupil_mask = in_ap.reshape(self.pupil.shape)
        self.pupil_index = np.flatnonzero(in_ap)
        ap_pts = pts[in_ap]

        self.layer_grids: tuple[Grid2D, ...] = tuple(
            _layer_grid(spec, l, self.pupil, coverage_directions)
            for l in range(spec.num_layers))
        self.layer_masks = []
        self.tables: list[list[tuple[NDArray, NDArray]]] = []
        for l, grid in enumerate(self.layer_grids):
            nodes = grid.node_points()
            T2 = spec.aperture_radius_m ** 2
            covered = np.zeros(grid.size, dtype=bool)
            for g in range(spec.num_directions):
                cx, cy = spec.shift(g, l)
                covered |= ((nodes[:, 0] - cx) ** 2
                            + (nodes[:, 1] - cy) ** 2) <= T2
            self.layer_masks.append(covered.reshape(grid.shape))
        self.layer_masks = tuple(self.layer_masks)

        for g in range(spec.num_directions):
            per_layer = []
            for l, grid in enumerate(self.layer_grids):
                idx, w, inside = bilinear_table(grid, ap_pts + spec.shift(g, l))
                if not inside.all():
                    raise AssertionError("layer grid does not cover its "
                                         "shifted aperture")
                per_layer.append((idx, w))
            self.tables.append(per_layer)

        self._overlap_maps: tuple[OverlapMap, ...] | None = None

    @property
    def num_directions(self) -> int:
        return self.spec.num_directions

    @property
    def num_layers(self) -> int:
        return self.spec.num_layers

    @property
    def aligned(self) -> bool:
        """True when every shift h_l alpha_g is an integer number of cells
        (shifted pupil nodes land exactly on layer nodes)."""
        s = self.pupil.spacing
        for l in range(self.num_layers):
            for g in range(self.num_directions):
                f = self.spec.shift(g, l) / s
                if np.max(np.abs(f - np.rint(f))) > _ALIGN_TOL:
                    return False
        return True

    # ---- templates ----------------------------------------------------

    def layer_template(self) -> LayerStack:
        return LayerStack.zeros(self.layer_grids, self.layer_masks,
                                self.weights)

    def data_template(self) -> DataVector:
        return DataVector.zeros(self.pupil, self.pupil_mask,
                                self.num_directions)

    def _check_stack(self, stack: LayerStack):
        if tuple(stack.grids) != self.layer_grids:
            raise ValueError("layer stack does not match the operator grids")
        if not np.array_equal(stack.weights, self.weights):
            raise ValueError("layer stack weights do not match the operator")

    def _check_data(self, data: DataVector):
        if data.grid != self.pupil \
                or data.num_directions != self.num_directions:
            raise ValueError("data vector does not match the operator pupil")

    # ---- forward / adjoint --------------------------------------------

    def forward(self, stack: LayerStack) -> DataVector:
        """A Phi: one wavefront per guide direction."""
        self._check_stack(stack)
        flats = [v.ravel() for v in stack.values]
        out = np.zeros((self.num_directions, self.pupil.size))
        for g in range(self.num_directions):
            acc = np.zeros(self.pupil_index.size)
            for l in range(self.num_layers):
                idx, w = self.tables[g][l]
                kernels.gather_add(acc, flats[l], idx, w)
            out[g, self.pupil_index] = acc
        return DataVector(self.pupil, out.reshape(
            (self.num_directions,) + self.pupil.shape), self.pupil_mask)

    def forward_single(self, g: int, stack: LayerStack) -> PupilField:
        """A_g Phi for one guide direction."""
        self._check_stack(stack)
        acc = np.zeros(self.pupil_index.size)
        for l in range(self.num_layers):
            idx, w = self.tables[g][l]
            kernels.gather_add(acc, stack.values[l].ravel(), idx, w)
        out = np.zeros(self.pupil.size)
        out[self.pupil_index] = acc
        return PupilField(self.pupil, out.reshape(self.pupil.shape),
                          self.pupil_mask)

    def adjoint(self, data: DataVector) -> LayerStack:
        """A* phi: scatter gamma_l phi_g through the transposed stencils,
        re-masked to the layer supports."""
        self._check_data(data)
        vals = [data.values[g].ravel()[self.pupil_index]
                for g in range(self.num_directions)]
        out = []
        for l, grid in enumerate(self.layer_grids):
            buf = np.zeros(grid.size)
            for g in range(self.num_directions):
                idx, w = self.tables[g][l]
                kernels.scatter_add(buf, vals[g], idx, w,
                                    float(self.weights[l]))
            out.append(buf.reshape(grid.shape))
        return LayerStack(self.layer_grids, out, self.layer_masks,
                          self.weights)

    def adjoint_single(self, g: int, phi: PupilField) -> LayerStack:
        """A_g* phi_g for one guide direction."""
        if phi.grid != self.pupil:
            raise ValueError("pupil field does not match the operator pupil")
        vals = phi.values.ravel()[self.pupil_index]
        out = []
        for l, grid in enumerate(self.layer_grids):
            buf = np.zeros(grid.size)
            idx, w = self.tables[g][l]
            kernels.scatter_add(buf, vals, idx, w, float(self.weights[l]))
            out.append(buf.reshape(grid.shape))
        return LayerStack(self.layer_grids, out, self.layer_masks,
                          self.weights)

    def apply_AgAgstar(self, g: int, psi: PupilField) -> PupilField:
        """A_g A_g* psi; the identity for aligned shifts."""
        return self.forward_single(g, self.adjoint_single(g, psi))

    def normal_apply(self, stack: LayerStack) -> LayerStack:
        """A* A Phi."""
        return self.adjoint(self.forward(stack))

    def forward_direction(self, direction_rad, stack: LayerStack
                          ) -> tuple[PupilField, bool]:
        """Wavefront along an arbitrary direction (not necessarily a guide
        star). Returns the field and a coverage flag; when False, part of
        the footprint left the layer grids and was zero-extended."""
        self._check_stack(stack)
        d = np.asarray(direction_rad, dtype=float)
        pts = self.pupil.node_points()[self.pupil_index]
        acc = np.zeros(self.pupil_index.size)
        covered = True
        for l, grid in enumerate(self.layer_grids):
            sample = pts + self.spec.layer_heights_m[l] * d
            idx, w, inside = bilinear_table(grid, sample)
            covered &= bool(inside.all())
            kernels.gather_add(acc, stack.values[l].ravel(), idx, w)
        out = np.zeros(self.pupil.size)
        out[self.pupil_index] = acc
        return PupilField(self.pupil, out.reshape(self.pupil.shape),
                          self.pupil_mask), covered

    # ---- geometry views -----------------------------------------------

    def overlap_maps(self) -> tuple[OverlapMap, ...]:
        """Overlap maps rasterized on the operator's own layer grids."""
        if self._overlap_maps is None:
            self._overlap_maps = tuple(
                overlap_map_on_grid(self.spec, l, grid)
                for l, grid in enumerate(self.layer_grids))
        return self._overlap_maps


@dataclass(frozen=True)
class NoiseModel:
    """Additive white Gaussian measurement noise, sigma^2 = 1/n_photons.

    Applying the model is deterministic: the same instance adds the same
    noise realization every time (the generator is reseeded per call).
    """

    n_photons: float
    seed: int = 0

    def __post_init__(self):
        if not self.n_photons > 0:
            raise ValueError("n_photons must be positive")

    @property
    def sigma(self) -> float:
        return math.sqrt(1.0 / self.n_photons)

    def add_noise(self, data: DataVector) -> DataVector:
        """Add i.i.d. zero-mean Gaussian noise to every in-aperture sample."""
        rng = np.random.default_rng(self.seed)
        noise = rng.standard_normal(data.values.shape) * self.sigma
        return DataVector(data.grid, data.values + noise * data.mask,
                          data.mask)
