"""Experiment configuration files.

A small INI-style format with units spelled out in key names. Sections and
keys are validated against a fixed schema; unknown names, duplicate keys,
and malformed values are rejected with file:line positions. '#' and ';'
start comments (full line, or inline after whitespace).

``direction_arcsec`` is repeatable, one guide star per occurrence, and the
stars must be listed by increasing polar angle (radius breaking ties) so
that direction indices in files and reports are unambiguous.

With ``align_to_grid = true`` the directions are snapped to the lattice
directions exactly representable at the configured pupil sampling: alpha
must lie in (s / q) Z^2 with q the gcd of the nonzero layer heights, which
makes every aperture shift h_l alpha a whole number of grid cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .field import pupil_grid
from .geometry import ARCSEC_TO_RAD, GeometrySpec
from .operator import NoiseModel
from .reconstruct import SolveConfig
from .turbulence import TurbulenceSpec


class ConfigError(ValueError):
    """A malformed configuration file; carries file and line position."""

    def __init__(self, message: str, path: str = "", line: int = 0):
        location = f"{path}:{line}: " if line else (f"{path}: " if path
                                                    else "")
        super().__init__(location + message)
        self.path = path
        self.line = line


_SCHEMA: dict[str, set[str]] = {
    "geometry": {"aperture_radius_m", "layer_heights_m", "layer_weights",
                 "direction_arcsec", "align_to_grid"},
    "grids": {"pupil_nodes"},
    "turbulence": {"fried_parameter_m", "outer_scale_m", "layer_strengths",
                   "reference_wavelength_nm", "subharmonic_levels"},
    "noise": {"enabled", "n_photons"},
    "solver": {"method", "alpha", "beta", "beta_schedule", "max_iter",
               "tol"},
    "evaluation": {"strehl_wavelength_nm", "ring_radii_rel", "ring_counts",
                   "include_center"},
    "nullspace": {"guide_index", "target_ratio", "smooth_margin"},
    "experiment": {"num_seeds"},
    "run": {"seed", "output_dir"},
}

_REPEATABLE = {("geometry", "direction_arcsec")}


@dataclass(frozen=True)
class EvalSettings:
    strehl_wavelength_m: float = 589e-9
    ring_radii_rel: tuple[float, ...] = (1 / 3, 2 / 3, 1.0)
    ring_counts: tuple[int, ...] = (6, 12, 18)
    include_center: bool = True


@dataclass(frozen=True)
class NullspaceSettings:
    guide_index: int = 0
    target_ratio: float = 0.1
    smooth_margin: float = 0.3


@dataclass
class RunConfig:
    """Fully typed contents of a configuration file."""

    geometry: GeometrySpec
    pupil_nodes: int
    turbulence: Optional[TurbulenceSpec]
    noise: Optional[NoiseModel]
    solver: SolveConfig
    evaluation: EvalSettings
    nullspace: NullspaceSettings
    num_seeds: int
    seed: int
    output_dir: str
    align_to_grid: bool
    path: str = ""
    text: str = field(default="", repr=False)


def _strip_comment(line: str) -> str:
    for i, ch in enumerate(line):
        if ch in "#;" and (i == 0 or line[i - 1] in " \t"):
            return line[:i]
    return line


class _Raw:
    """Parsed key/value occurrences with line positions."""

    def __init__(self, path: str):
        self.path = path
        self.sections: dict[str, dict[str, list[tuple[str, int]]]] = {}
        self.section_lines: dict[str, int] = {}

    def error(self, message: str, line: int = 0) -> ConfigError:
        return ConfigError(message, self.path, line)

    def get(self, section: str, key: str) -> Optional[tuple[str, int]]:
        vals = self.sections.get(section, {}).get(key)
        return vals[0] if vals else None

    def get_all(self, section: str, key: str) -> list[tuple[str, int]]:
        return self.sections.get(section, {}).get(key, [])


def _parse_raw(text: str, path: str) -> _Raw:
    raw = _Raw(path)
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = _strip_comment(line).strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            name = stripped[1:-1].strip()
            if name not in _SCHEMA:
                raise raw.error(f"unknown section [{name}]", lineno)
            if name in raw.sections:
                raise raw.error(f"duplicate section [{name}] (first at line "
                                f"{raw.section_lines[name]})", lineno)
            raw.sections[name] = {}
            raw.section_lines[name] = lineno
            current = name
            continue
        if "=" not in stripped:
            raise raw.error("expected 'key = value' or '[section]'", lineno)
        if current is None:
            raise raw.error("key outside of any section", lineno)
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _SCHEMA[current]:
            raise raw.error(f"unknown key '{key}' in section [{current}]",
                            lineno)
        entries = raw.sections[current].setdefault(key, [])
        if entries and (current, key) not in _REPEATABLE:
            raise raw.error(f"duplicate key '{key}' (first at line "
                            f"{entries[0][1]})", lineno)
        if not value:
            raise raw.error(f"key '{key}' has an empty value", lineno)
        entries.append((value, lineno))
    return raw


def _want(raw: _Raw, section: str, key: str) -> tuple[str, int]:
    got = raw.get(section, key)
    if got is None:
        line = raw.section_lines.get(section, 0)
        raise raw.error(f"missing required key '{key}' in section "
                        f"[{section}]", line)
    return got


def _as_float(raw: _Raw, value: str, line: int, key: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise raw.error(f"'{key}' expects a number, got {value!r}",
                        line) from None


def _as_int(raw: _Raw, value: str, line: int, key: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise raw.error(f"'{key}' expects an integer, got {value!r}",
                        line) from None


def _as_bool(raw: _Raw, value: str, line: int, key: str) -> bool:
    low = value.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise raw.error(f"'{key}' expects a boolean, got {value!r}", line)


def _as_floats(raw: _Raw, value: str, line: int, key: str
               ) -> list[float]:
    parts = value.replace(",", " ").split()
    if not parts:
        raise raw.error(f"'{key}' expects a list of numbers", line)
    return [_as_float(raw, p, line, key) for p in parts]


def _opt(raw, section, key, conv, default):
    got = raw.get(section, key)
    if got is None:
        return default
    return conv(raw, got[0], got[1], key)


def _snap_directions(raw: _Raw, dirs_rad: np.ndarray, heights: np.ndarray,
                     spacing: float, line: int) -> np.ndarray:
    """Snap directions onto the lattice (s/q) Z^2, q = gcd of the nonzero
    heights, so every shift h_l alpha is a whole number of cells."""
    nonzero = [h for h in heights if h > 0]
    if not nonzero:
        raise raw.error("align_to_grid needs at least one nonzero layer "
                        "height", line)
    ints = []
    for h in nonzero:
        if abs(h - round(h)) > 1e-9 * max(1.0, abs(h)):
            raise raw.error("align_to_grid needs integer layer heights in "
                            f"meters, got {h}", line)
        ints.append(int(round(h)))
    q = 0
    for v in ints:
        q = math.gcd(q, v)
    unit = spacing / q
    snapped = np.round(dirs_rad / unit) * unit
    for i, (d, sd) in enumerate(zip(dirs_rad, snapped)):
        if np.all(sd == 0.0) and np.any(d != 0.0):
            raise raw.error(f"align_to_grid snaps direction {i} to zero; "
                            "increase the offsets or the pupil resolution",
                            line)
    return snapped


def parse_config(text: str, path: str = "<string>") -> RunConfig:
    raw = _parse_raw(text, path)
    for required in ("geometry", "grids"):
        if required not in raw.sections:
            raise raw.error(f"missing required section [{required}]")

    # grids
    value, line = _want(raw, "grids", "pupil_nodes")
    pupil_nodes = _as_int(raw, value, line, "pupil_nodes")
    if pupil_nodes < 2:
        raise raw.error("pupil_nodes must be at least 2", line)

    # geometry
    value, line = _want(raw, "geometry", "aperture_radius_m")
    radius = _as_float(raw, value, line, "aperture_radius_m")
    if radius <= 0:
        raise raw.error("aperture_radius_m must be positive", line)
    value, line = _want(raw, "geometry", "layer_heights_m")
    heights = np.array(_as_floats(raw, value, line, "layer_heights_m"))
    value, line = _want(raw, "geometry", "layer_weights")
    weights = np.array(_as_floats(raw, value, line, "layer_weights"))
    dir_entries = raw.get_all("geometry", "direction_arcsec")
    if not dir_entries:
        raise raw.error("at least one direction_arcsec entry is required",
                        raw.section_lines["geometry"])
    dirs = []
    first_dir_line = dir_entries[0][1]
    for value, line in dir_entries:
        pair = _as_floats(raw, value, line, "direction_arcsec")
        if len(pair) != 2:
            raise raw.error("direction_arcsec expects exactly two numbers",
                            line)
        dirs.append(pair)
    dirs_rad = np.asarray(dirs) * ARCSEC_TO_RAD
    align = _opt(raw, "geometry", "align_to_grid", _as_bool, False)
    if align:
        got = raw.get("geometry", "align_to_grid")
        spacing = pupil_grid(radius, pupil_nodes).spacing
        dirs_rad = _snap_directions(raw, dirs_rad, heights, spacing,
                                    got[1])
    try:
        geometry = GeometrySpec(radius, dirs_rad, heights, weights)
    except ValueError as err:
        raise raw.error(f"invalid geometry: {err}", first_dir_line) \
            from None

    # turbulence
    turbulence = None
    if "turbulence" in raw.sections:
        value, line = _want(raw, "turbulence", "fried_parameter_m")
        r0 = _as_float(raw, value, line, "fried_parameter_m")
        value, line = _want(raw, "turbulence", "outer_scale_m")
        L0 = _as_float(raw, value, line, "outer_scale_m")
        value, line = _want(raw, "turbulence", "layer_strengths")
        strengths = _as_floats(raw, value, line, "layer_strengths")
        if len(strengths) != geometry.num_layers:
            raise raw.error("layer_strengths must list one value per layer",
                            line)
        ref_nm = _opt(raw, "turbulence", "reference_wavelength_nm",
                      _as_float, 500.0)
        levels = _opt(raw, "turbulence", "subharmonic_levels", _as_int, 6)
        seed = _opt(raw, "run", "seed", _as_int, 0)
        try:
            turbulence = TurbulenceSpec(
                fried_parameter_m=r0, outer_scale_m=L0,
                layer_strengths=tuple(strengths), seed=seed,
                reference_wavelength_m=ref_nm * 1e-9,
                subharmonic_levels=levels)
        except ValueError as err:
            raise raw.error(f"invalid turbulence settings: {err}",
                            raw.section_lines["turbulence"]) from None

    # noise
    noise = None
    if "noise" in raw.sections:
        enabled = _opt(raw, "noise", "enabled", _as_bool, True)
        if enabled:
            value, line = _want(raw, "noise", "n_photons")
            n_photons = _as_float(raw, value, line, "n_photons")
            if n_photons <= 0:
                raise raw.error("n_photons must be positive", line)
            seed = _opt(raw, "run", "seed", _as_int, 0)
            noise = NoiseModel(n_photons=n_photons, seed=seed)

    # solver
    method = _opt(raw, "solver", "method",
                  lambda r, v, l, k: v, "tikhonov-cg")
    beta = None
    got = raw.get("solver", "beta")
    if got is not None:
        beta = _as_float(raw, got[0], got[1], "beta")
    try:
        solver = SolveConfig(
            method=method,
            beta=beta,
            beta_schedule=_opt(raw, "solver", "beta_schedule",
                               lambda r, v, l, k: v, "inv_i"),
            alpha=_opt(raw, "solver", "alpha", _as_float, 1e-3),
            max_iter=_opt(raw, "solver", "max_iter", _as_int, 100),
            tol=_opt(raw, "solver", "tol", _as_float, 1e-6))
    except ValueError as err:
        raise raw.error(f"invalid solver settings: {err}",
                        raw.section_lines.get("solver", 0)) from None

    # evaluation
    radii = _opt(raw, "evaluation", "ring_radii_rel", _as_floats,
                 [1 / 3, 2 / 3, 1.0])
    counts = None
    got = raw.get("evaluation", "ring_counts")
    if got is not None:
        counts = [_as_int(raw, p, got[1], "ring_counts")
                  for p in got[0].replace(",", " ").split()]
    else:
        counts = [6, 12, 18]
    if len(radii) != len(counts):
        raise raw.error("ring_radii_rel and ring_counts must have equal "
                        "length", raw.section_lines.get("evaluation", 0))
    evaluation = EvalSettings(
        strehl_wavelength_m=_opt(raw, "evaluation", "strehl_wavelength_nm",
                                 _as_float, 589.0) * 1e-9,
        ring_radii_rel=tuple(radii),
        ring_counts=tuple(counts),
        include_center=_opt(raw, "evaluation", "include_center", _as_bool,
                            True))

    # nullspace
    nullspace = NullspaceSettings(
        guide_index=_opt(raw, "nullspace", "guide_index", _as_int, 0),
        target_ratio=_opt(raw, "nullspace", "target_ratio", _as_float, 0.1),
        smooth_margin=_opt(raw, "nullspace", "smooth_margin", _as_float,
                           0.3))
    if not 0 <= nullspace.guide_index < geometry.num_directions:
        got = raw.get("nullspace", "guide_index")
        raise raw.error("guide_index out of range", got[1] if got else 0)

    return RunConfig(
        geometry=geometry,
        pupil_nodes=pupil_nodes,
        turbulence=turbulence,
        noise=noise,
        solver=solver,
        evaluation=evaluation,
        nullspace=nullspace,
        num_seeds=_opt(raw, "experiment", "num_seeds", _as_int, 10),
        seed=_opt(raw, "run", "seed", _as_int, 0),
        output_dir=_opt(raw, "run", "output_dir",
                        lambda r, v, l, k: v, "runs"),
        align_to_grid=align,
        path=path,
        text=text)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read configuration: {err}", path)
    return parse_config(text, path)
