"""Shared builders for small test instances."""

from __future__ import annotations

import numpy as np

from atmotomo import GeometrySpec, TomoOperator


def aligned_pair_spec(T=1.0, nodes=17, heights=(1000.0, 3000.0),
                      units=((2, 0), (-1, 0))):
    """Two guide stars whose layer shifts are exact multiples of the pupil
    spacing, so interpolation degenerates to index shifts."""
    s = 2.0 * T / (nodes - 1)
    q = 1000.0
    dirs = [(ux * s / q, uy * s / q) for ux, uy in units]
    order = np.argsort([np.mod(np.arctan2(d[1], d[0]), 2 * np.pi)
                        for d in dirs])
    dirs = [dirs[i] for i in order]
    return GeometrySpec(
        aperture_radius_m=T,
        layer_heights_m=tuple(float(h) for h in heights),
        layer_weights=tuple(1.0 / len(heights) for _ in heights),
        directions_rad=tuple(dirs),
    )


def generic_spec(T=1.0, heights=(0.0, 2500.0, 8000.0),
                 weights=(0.6, 0.25, 0.15),
                 dirs_arcsec=((40.0, 0.0), (-20.0, 30.0), (-15.0, -35.0))):
    """Non-aligned geometry exercising true interpolation."""
    return GeometrySpec.from_arcsec(
        aperture_radius_m=T,
        layer_heights_m=tuple(float(h) for h in heights),
        layer_weights=tuple(float(w) for w in weights),
        directions_arcsec=tuple(dirs_arcsec),
    )


def three_star_aligned_spec(T=1.0, nodes=33,
                            heights=(2000.0, 6000.0, 10000.0),
                            weights=(0.5, 0.3, 0.2)):
    """Three guide stars on an aligned lattice with three layers; every
    layer keeps a single-overlap region."""
    s = 2.0 * T / (nodes - 1)
    q = 2000.0
    units = ((4, 0), (-2, 3), (-2, -3))
    dirs = tuple((ux * s / q, uy * s / q) for ux, uy in units)
    return GeometrySpec(
        aperture_radius_m=T,
        layer_heights_m=tuple(float(h) for h in heights),
        layer_weights=tuple(float(w) for w in weights),
        directions_rad=dirs,
    )


def make_operator(spec, nodes):
    return TomoOperator(spec, pupil_nodes=nodes)


def random_stack(op, seed=0, masked=True):
    rng = np.random.default_rng(seed)
    stack = op.layer_template()
    for l, grid in enumerate(stack.grids):
        vals = rng.standard_normal(grid.shape)
        if masked:
            vals = np.where(stack.masks[l], vals, 0.0)
        stack.values[l][:] = vals
    return stack


def random_data(op, seed=0):
    rng = np.random.default_rng(seed)
    data = op.data_template()
    vals = rng.standard_normal(data.values.shape)
    data.values[:] = np.where(data.mask[None, :, :], vals, 0.0)
    return data
