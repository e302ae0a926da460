"""Spatially non-stationary, dual-wideband near-field channel generation.

A uniform linear array of ``n_antennas`` elements receives ``L`` spherical
paths across ``K`` pilot subcarriers.  Each path sees only a contiguous
visibility region (VR) of the array; the result is the ``n_antennas x K``
spatial-frequency channel matrix ``H``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ArrayGeometry:
    n_antennas: int
    carrier_hz: float
    spacing: float | None = None  # defaults to half a wavelength

    def __post_init__(self):
        if self.n_antennas < 1:
            raise ValueError("n_antennas must be >= 1")
        if self.carrier_hz <= 0:
            raise ValueError("carrier_hz must be positive")
        if self.spacing is None:
            object.__setattr__(self, "spacing", self.wavelength / 2)
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz


@dataclass(frozen=True)
class OfdmGrid:
    n_pilot_subcarriers: int
    bandwidth_hz: float
    carrier_hz: float

    def __post_init__(self):
        if self.n_pilot_subcarriers < 1:
            raise ValueError("n_pilot_subcarriers must be >= 1")
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be positive")

    @property
    def subcarrier_hz(self) -> np.ndarray:
        K = self.n_pilot_subcarriers
        k = np.arange(1, K + 1)
        return self.carrier_hz + self.bandwidth_hz * (k - 1 - (K - 1) / 2) / K


def subcarrier_frequency(grid: OfdmGrid, k: int) -> float:
    """Frequency of pilot subcarrier ``k`` (1-based)."""
    K = grid.n_pilot_subcarriers
    if not 1 <= k <= K:
        raise IndexError(f"subcarrier index {k} outside 1..{K}")
    return grid.carrier_hz + grid.bandwidth_hz * (k - 1 - (K - 1) / 2) / K


class Mechanism(enum.Enum):
    LOS_BLOCKAGE_OR_REFLECTION = "reflection"
    DIFFRACTION = "diffraction"


def raised_cosine_profile(length: int) -> np.ndarray:
    """Strictly positive taper of peak 1 used for diffraction VRs."""
    j = np.arange(1, length + 1)
    prof = 0.5 * (1.0 - np.cos(2 * np.pi * j / (length + 1)))
    return prof / prof.max()


@dataclass(frozen=True)
class PathParams:
    gain: complex
    distance_m: float
    angle_rad: float
    vr_start: int
    vr_length: int
    mechanism: Mechanism = Mechanism.LOS_BLOCKAGE_OR_REFLECTION
    diffraction_profile: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.distance_m <= 0:
            raise ValueError("distance_m must be positive")
        if self.vr_start < 0 or self.vr_length < 1:
            raise ValueError("visibility region must be a non-empty run of antennas")
        if self.mechanism is Mechanism.DIFFRACTION:
            prof = self.diffraction_profile
            if prof is None:
                prof = raised_cosine_profile(self.vr_length)
            prof = np.asarray(prof, dtype=float)
            if prof.shape != (self.vr_length,) or np.any(prof <= 0):
                raise ValueError("diffraction profile must be positive over the VR")
            object.__setattr__(self, "diffraction_profile", prof)
        elif self.diffraction_profile is not None:
            raise ValueError("diffraction profile given for a non-diffraction path")

    @property
    def vr(self) -> range:
        return range(self.vr_start, self.vr_start + self.vr_length)

    def vr_fraction(self, n_antennas: int) -> float:
        return self.vr_length / n_antennas

    @property
    def delay(self) -> float:
        return self.distance_m / SPEED_OF_LIGHT


def make_path(gain, distance_m, angle_rad, vr_fraction, vr_start, n_antennas,
              mechanism=Mechanism.LOS_BLOCKAGE_OR_REFLECTION, diffraction_profile=None):
    """Build a path whose VR holds ``round(vr_fraction * n_antennas)`` antennas."""
    if not 0 < vr_fraction <= 1:
        raise ValueError("vr_fraction must lie in (0, 1]")
    length = int(round(vr_fraction * n_antennas))
    if length < 1:
        raise ValueError("vr_fraction too small for this array")
    if vr_start + length > n_antennas:
        raise ValueError("visibility region runs past the array end")
    return PathParams(complex(gain), float(distance_m), float(angle_rad), int(vr_start),
                      length, mechanism, diffraction_profile)


def _check_vr(path: PathParams, geometry: ArrayGeometry):
    if path.vr_start + path.vr_length > geometry.n_antennas:
        raise ValueError("visibility region runs past the array end")


def linear_coeff(path: PathParams, geometry: ArrayGeometry) -> float:
    """psi = d cos(theta) / lambda_c."""
    return geometry.spacing * math.cos(path.angle_rad) / geometry.wavelength


def quadratic_coeff(path: PathParams, geometry: ArrayGeometry) -> float:
    """phi = d^2 sin^2(theta) / (2 r lambda_c)."""
    d = geometry.spacing
    return d * d * math.sin(path.angle_rad) ** 2 / (2 * path.distance_m * geometry.wavelength)


def path_delay(path: PathParams, geometry: ArrayGeometry, n) -> float | np.ndarray:
    """Second-order (spherical) delay of ``path`` at antenna ``n``."""
    n_arr = np.asarray(n)
    if np.any((n_arr < 0) | (n_arr >= geometry.n_antennas)):
        raise IndexError("antenna index out of range")
    psi = linear_coeff(path, geometry)
    phi = quadratic_coeff(path, geometry)
    return path.delay + (psi * n_arr - phi * n_arr**2) / geometry.carrier_hz


def exact_distance(path: PathParams, geometry: ArrayGeometry, n) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    r, th, d = path.distance_m, path.angle_rad, geometry.spacing
    return np.sqrt((r * math.cos(th) - n * d) ** 2 + (r * math.sin(th)) ** 2)


def taylor_distance(path: PathParams, geometry: ArrayGeometry, n) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    r, th, d = path.distance_m, path.angle_rad, geometry.spacing
    return r - n * d * math.cos(th) + n**2 * d**2 * math.sin(th) ** 2 / (2 * r)


def sns_indicator(path: PathParams, n: int, n_antennas: int | None = None) -> float:
    if n_antennas is not None and not 0 <= n < n_antennas:
        raise IndexError("antenna index out of range")
    if n not in path.vr:
        return 0.0
    if path.mechanism is Mechanism.DIFFRACTION:
        return float(path.diffraction_profile[n - path.vr_start])
    return 1.0


def sns_vector(path: PathParams, geometry: ArrayGeometry) -> np.ndarray:
    _check_vr(path, geometry)
    s = np.zeros(geometry.n_antennas)
    sl = slice(path.vr_start, path.vr_start + path.vr_length)
    s[sl] = path.diffraction_profile if path.mechanism is Mechanism.DIFFRACTION else 1.0
    return s


def spatial_steering(path: PathParams, geometry: ArrayGeometry) -> np.ndarray:
    n = np.arange(geometry.n_antennas)
    psi = linear_coeff(path, geometry)
    phi = quadratic_coeff(path, geometry)
    return np.exp(-2j * np.pi * (psi * n - phi * n**2))


def frequency_steering(path: PathParams, grid: OfdmGrid) -> np.ndarray:
    return np.exp(-2j * np.pi * grid.subcarrier_hz * path.delay)


def phase_matrix(path: PathParams, geometry: ArrayGeometry, grid: OfdmGrid) -> np.ndarray:
    n = np.arange(geometry.n_antennas)[:, None]
    psi = linear_coeff(path, geometry)
    phi = quadratic_coeff(path, geometry)
    fk = grid.subcarrier_hz[None, :]
    return np.exp(-2j * np.pi * fk * (n * psi - n**2 * phi) / geometry.carrier_hz)


def equivalent_gain(path: PathParams, geometry: ArrayGeometry) -> complex:
    return path.gain * np.exp(-2j * np.pi * geometry.carrier_hz * path.delay)


def path_component(path: PathParams, geometry: ArrayGeometry, grid: OfdmGrid) -> np.ndarray:
    s = sns_vector(path, geometry)
    b = spatial_steering(path, geometry)
    a = frequency_steering(path, grid)
    theta = phase_matrix(path, geometry, grid)
    return equivalent_gain(path, geometry) * np.outer(s * b, a) * theta


@dataclass(frozen=True)
class SpatialFrequencyChannel:
    entries: np.ndarray
    components: tuple = field(default=(), compare=False, repr=False)

    @property
    def shape(self):
        return self.entries.shape


def assemble_channel(paths, geometry: ArrayGeometry, grid: OfdmGrid,
                     keep_components: bool = False) -> SpatialFrequencyChannel:
    H = np.zeros((geometry.n_antennas, grid.n_pilot_subcarriers), dtype=complex)
    comps = []
    for path in paths:
        c = path_component(path, geometry, grid)
        H += c
        if keep_components:
            comps.append(c)
    H.setflags(write=False)
    return SpatialFrequencyChannel(H, tuple(comps))


@dataclass(frozen=True)
class SceneConfig:
    n_paths: int = 4
    angle_range: tuple[float, float] = (-np.pi / 2, np.pi / 2)
    distance_range: tuple[float, float] = (10.0, 50.0)
    vr_fraction_range: tuple[float, float] = (0.0, 1.0)
    los: bool = True
    diffraction_prob: float = 0.25


def generate_scene(config: SceneConfig, geometry: ArrayGeometry,
                   rng: np.random.Generator) -> list[PathParams]:
    """Draw ``config.n_paths`` random paths.

    Angles are uniform on the open angle range, distances uniform on the configured
    range, VR fractions uniform on (lo, hi] and gains unit-modulus with a
    uniform phase.  Path 0 sees the whole array when ``config.los`` is set.
    """
    if config.n_paths < 0:
        raise ValueError("n_paths must be non-negative")
    N = geometry.n_antennas
    lo, hi = config.vr_fraction_range
    paths = []
    for l in range(config.n_paths):
        theta = rng.uniform(*config.angle_range)
        while theta == config.angle_range[0]:
            theta = rng.uniform(*config.angle_range)
        r = rng.uniform(*config.distance_range)
        rho = hi - (hi - lo) * rng.random()  # (lo, hi]
        gain = np.exp(2j * np.pi * rng.random())
        if l == 0 and config.los:
            rho, mech = 1.0, Mechanism.LOS_BLOCKAGE_OR_REFLECTION
        elif rng.random() < config.diffraction_prob:
            mech = Mechanism.DIFFRACTION
        else:
            mech = Mechanism.LOS_BLOCKAGE_OR_REFLECTION
        length = min(N, max(1, int(round(rho * N))))
        start = int(rng.integers(0, N - length + 1))
        paths.append(PathParams(complex(gain), float(r), float(theta), start, length, mech))
    return paths


def scene_to_text(paths, n_antennas: int) -> str:
    """One whitespace-separated record per path; diffraction profiles are not stored."""
    lines = ["# gain_re gain_im distance_m angle_rad vr_fraction vr_start vr_length mechanism"]
    for p in paths:
        lines.append(f"{float(p.gain.real)!r} {float(p.gain.imag)!r} {float(p.distance_m)!r} "
                     f"{float(p.angle_rad)!r} {float(p.vr_fraction(n_antennas))!r} {p.vr_start} {p.vr_length} "
                     f"{p.mechanism.value}")
    return "\n".join(lines) + "\n"


def scene_from_text(text: str) -> list[PathParams]:
    paths = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        re_, im_, r, th, _rho, start, length, mech = line.split()
        paths.append(PathParams(complex(float(re_), float(im_)), float(r), float(th),
                                int(start), int(length), Mechanism(mech)))
    return paths
