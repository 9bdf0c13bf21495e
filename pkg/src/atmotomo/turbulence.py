"""Frozen von Karman turbulence layers by FFT spectral synthesis.

Screens are drawn from the von Karman spectrum
``0.0229 r0^(-5/3) (f^2 + 1/L0^2)^(-11/6)`` (f in cycles per meter) with
low-frequency subharmonic modes added on a 3x nested grid, so the sample
structure function approaches the Kolmogorov ``6.88 (d/r0)^(5/3)`` law at
separations well below the outer scale.

Layer l is synthesized with its own Fried parameter
``r0_l = r0 * c_l^(-3/5)`` so it carries the fraction c_l of the total
phase variance. Screens are generated as phase radians at the r0
reference wavelength (500 nm by default) and stored as optical path
length in meters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .field import Grid2D, LayerStack
from .geometry import GeometrySpec, overlap_counts
from .operator import normalize_layer_weights


@dataclass(frozen=True)
class TurbulenceSpec:
    """Integrated turbulence strength and its split across layers."""

    fried_parameter_m: float
    outer_scale_m: float
    layer_strengths: tuple[float, ...]
    seed: int
    reference_wavelength_m: float = 500e-9
    subharmonic_levels: int = 6

    def __post_init__(self):
        if not self.fried_parameter_m > 0:
            raise ValueError("Fried parameter must be positive")
        if not self.outer_scale_m > 0:
            raise ValueError("outer scale must be positive")
        c = np.asarray(self.layer_strengths, dtype=float)
        if np.any(c < 0):
            raise ValueError("layer strengths must be nonnegative")
        if abs(float(c.sum()) - 1.0) > 1e-9:
            raise ValueError("layer strengths must sum to 1")
        if not self.reference_wavelength_m > 0:
            raise ValueError("reference wavelength must be positive")
        if self.subharmonic_levels < 0:
            raise ValueError("subharmonic level count must be >= 0")


def vonkarman_screen(ny: int, nx: int, spacing: float, r0: float, L0: float,
                     rng: np.random.Generator, subharmonic_levels: int = 6,
                     oversize: float = 2.0) -> NDArray[np.float64]:
    """One phase screen (radians at the r0 reference wavelength).

    The FFT grid is a power of two at least ``oversize`` times the
    requested extent (then cropped) to push the periodic wrap-around out
    of the sampled window; subharmonics fill in frequencies below the FFT
    resolution down to ``df / 3**subharmonic_levels``.
    """
    N = 1 << max(int(np.ceil(np.log2(oversize * max(nx, ny)))), 1)
    df = 1.0 / (N * spacing)
    f = np.fft.fftfreq(N, d=spacing)
    f2 = f[None, :] ** 2 + f[:, None] ** 2
    f02 = 1.0 / L0 ** 2
    psd = 0.0229 * r0 ** (-5.0 / 3.0) * (f2 + f02) ** (-11.0 / 6.0)
    psd[0, 0] = 0.0  # the mean is handled by piston removal
    cn = (rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N)))
    cn *= np.sqrt(psd) * df
    screen = np.fft.ifft2(cn).real[:ny, :nx] * N * N

    xs = spacing * np.arange(nx)
    ys = spacing * np.arange(ny)
    for p in range(1, subharmonic_levels + 1):
        dfp = df / 3.0 ** p
        fvals = dfp * np.array([-1.0, 0.0, 1.0])
        a = rng.standard_normal((3, 3))
        b = rng.standard_normal((3, 3))
        for i in range(3):
            for j in range(3):
                if i == 1 and j == 1:
                    continue  # f = 0 is piston
                amp = np.sqrt(
                    0.0229 * r0 ** (-5.0 / 3.0)
                    * (fvals[i] ** 2 + fvals[j] ** 2 + f02) ** (-11.0 / 6.0)
                ) * dfp
                c = (a[i, j] + 1j * b[i, j]) * amp
                mode = np.outer(np.exp(2j * np.pi * fvals[j] * ys),
                                np.exp(2j * np.pi * fvals[i] * xs))
                screen += (c * mode).real
    return screen


def generate_atmosphere(tspec: TurbulenceSpec, spec: GeometrySpec,
                        grids, masks=None) -> LayerStack:
    """Draw a frozen atmosphere on the given per-layer grids.

    Parameters
    ----------
    tspec : TurbulenceSpec
    spec : GeometrySpec
        Supplies layer supports (union of shifted apertures) and weights.
    grids : sequence of Grid2D
        One grid per layer, e.g. ``TomoOperator.layer_grids``.
    masks : sequence of bool arrays, optional
        Layer supports; computed from the geometry when omitted.

    Deterministic for a fixed ``tspec.seed``; layers draw from
    independently spawned child generators, so a layer's screen does not
    depend on the other layers' strengths. Every layer has zero mean over
    its mask (piston removed).
    """
    grids = tuple(grids)
    if len(grids) != spec.num_layers:
        raise ValueError("one grid per layer is required")
    strengths = np.asarray(tspec.layer_strengths, dtype=float)
    if strengths.size != spec.num_layers:
        raise ValueError("one strength per layer is required")
    if masks is None:
        masks = tuple(
            (overlap_counts(spec, l, grid.node_points()) >= 1
             ).reshape(grid.shape)
            for l, grid in enumerate(grids))
    else:
        masks = tuple(masks)

    children = np.random.SeedSequence(tspec.seed).spawn(spec.num_layers)
    opl_per_rad = tspec.reference_wavelength_m / (2.0 * np.pi)
    values = []
    for l, grid in enumerate(grids):
        if strengths[l] == 0.0:
            values.append(np.zeros(grid.shape))
            continue
        rng = np.random.default_rng(children[l])
        r0_l = tspec.fried_parameter_m * strengths[l] ** (-3.0 / 5.0)
        phase = vonkarman_screen(grid.ny, grid.nx, grid.spacing, r0_l,
                                 tspec.outer_scale_m, rng,
                                 tspec.subharmonic_levels)
        opl = phase * opl_per_rad
        if masks[l].any():
            opl = opl - opl[masks[l]].mean()
        values.append(opl)
    return LayerStack(grids, values,
                      masks, normalize_layer_weights(spec.layer_weights))
