"""Structured-beam optics: Laguerre-Gauss modes and the dark-focus superposition.

The trapping beam is a coherent superposition of a Gaussian (l=0, p=0) and a
higher radial-order mode (l=0, p>=1) with a relative phase, producing a dark
focus enclosed by light when the phase is pi.  All quantities are SI:
lengths in m, powers in W, intensities in W/m^2.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import eval_genlaguerre

__all__ = [
    "BeamParams",
    "CylindricalPoint",
    "GridSpec",
    "IntensityGrid",
    "lg_mode",
    "gaussian_intensity",
    "dft_intensity",
    "bottle_geometry",
    "render_intensity_grid",
]

# Grids above this many cells are almost certainly a misconfigured spec.
MAX_GRID_CELLS = 50_000_000


@dataclass(frozen=True)
class BeamParams:
    """Trapping-beam description.

    Parameters
    ----------
    lambda0 : float
        Vacuum wavelength (m).
    n_medium : float
        Refractive index of the surrounding medium.
    na : float
        Numerical aperture of the focusing optics.
    p_total : float
        Total optical power in the beam (W).
    p_index : int
        Radial index of the higher-order mode in the superposition.
    theta_rel : float
        Relative phase between the Gaussian and higher-order components
        (rad).  pi gives the dark focus.
    """

    lambda0: float
    n_medium: float
    na: float
    p_total: float
    p_index: int = 1
    theta_rel: float = math.pi

    def __post_init__(self):
        if not (self.lambda0 > 0):
            raise ValueError(f"lambda0 must be positive, got {self.lambda0}")
        if not (self.n_medium >= 1):
            raise ValueError(f"n_medium must be >= 1, got {self.n_medium}")
        if not (0 < self.na < self.n_medium):
            raise ValueError(
                f"na must satisfy 0 < na < n_medium, got na={self.na}, "
                f"n_medium={self.n_medium}"
            )
        if not (self.p_total > 0):
            raise ValueError(f"p_total must be positive, got {self.p_total}")
        if not (isinstance(self.p_index, (int, np.integer)) and self.p_index >= 0):
            raise ValueError(f"p_index must be a nonnegative integer, got {self.p_index}")
        if not math.isfinite(self.theta_rel):
            raise ValueError("theta_rel must be finite")

    # Derived quantities are recomputed on access so they can never go stale.
    @property
    def waist(self) -> float:
        """Beam waist at the focus (m)."""
        return self.lambda0 / (math.pi * self.na)

    @property
    def rayleigh_range(self) -> float:
        """Rayleigh range in the medium (m)."""
        return self.n_medium * self.lambda0 / (math.pi * self.na**2)

    @property
    def focal_intensity(self) -> float:
        """Peak focal intensity of the Gaussian component alone, 2 P / (pi w0^2)."""
        return 2.0 * self.p_total / (math.pi * self.waist**2)

    @property
    def wavenumber(self) -> float:
        """Wavenumber in the medium, 2 pi n_m / lambda0."""
        return 2.0 * math.pi * self.n_medium / self.lambda0

    def with_na(self, na: float) -> "BeamParams":
        return replace(self, na=na)

    def with_unit_power(self) -> "BeamParams":
        return replace(self, p_total=1.0)


@dataclass(frozen=True)
class CylindricalPoint:
    """Point in cylindrical coordinates (rho >= 0, phi in rad, z in m)."""

    rho: float
    phi: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.rho) and math.isfinite(self.phi) and math.isfinite(self.z)):
            raise ValueError("coordinates must be finite")
        if self.rho < 0:
            raise ValueError(f"rho must be nonnegative, got {self.rho}")


def _check_coords(rho, z):
    rho = np.asarray(rho, dtype=float)
    z = np.asarray(z, dtype=float)
    if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(z))):
        raise ValueError("coordinates must be finite")
    if np.any(rho < 0):
        raise ValueError("rho must be nonnegative")
    return rho, z


def _phase_components(theta_rel):
    # Exact values at the two special phases keep the dark focus exactly dark.
    if theta_rel == math.pi:
        return -1.0, 0.0
    if theta_rel == 0.0:
        return 1.0, 0.0
    return math.cos(theta_rel), math.sin(theta_rel)


def lg_mode(params: BeamParams, ell: int, p: int, rho, z, phi=0.0):
    """Normalized Laguerre-Gauss amplitude u_{l,p}(rho, phi, z) in 1/m.

    Includes the propagation phase k_m z, the wavefront-curvature phase,
    the axial phase anomaly (2p + |l| + 1) arctan(z/z_R) and the azimuthal
    phase l phi.  The transverse integral of |u|^2 is 1 in any plane.

    Accepts scalars or broadcastable arrays for rho, z, phi.
    """
    if not (isinstance(p, (int, np.integer)) and p >= 0):
        raise ValueError(f"p must be a nonnegative integer, got {p}")
    rho, z = _check_coords(rho, z)
    phi = np.asarray(phi, dtype=float)

    w0 = params.waist
    zr = params.rayleigh_range
    km = params.wavenumber
    la = abs(int(ell))

    w2 = w0**2 * (1.0 + (z / zr) ** 2)
    x = 2.0 * rho**2 / w2
    # 1/R(z) = z / (z^2 + z_R^2): finite at z = 0.
    inv_r = z / (z**2 + zr**2)
    gouy = (2 * p + la + 1) * np.arctan(z / zr)

    norm = math.sqrt(2.0 / math.pi) * math.sqrt(
        math.factorial(p) / math.factorial(la + p)
    )
    amp = (
        norm
        / np.sqrt(w2)
        * (np.sqrt(2.0) * rho / np.sqrt(w2)) ** la
        * eval_genlaguerre(p, la, x)
        * np.exp(-(rho**2) / w2)
    )
    phase = km * z + 0.5 * km * rho**2 * inv_r - gouy + ell * phi
    return amp * np.exp(1j * phase)


def gaussian_intensity(params: BeamParams, rho, z):
    """Intensity of the fundamental Gaussian carrying the full beam power (W/m^2)."""
    rho, z = _check_coords(rho, z)
    w0 = params.waist
    zr = params.rayleigh_range
    w2 = w0**2 * (1.0 + (z / zr) ** 2)
    return 2.0 * params.p_total / (math.pi * w2) * np.exp(-2.0 * rho**2 / w2)


def dft_intensity(params: BeamParams, rho, z):
    """Dark-focus (bottle) beam intensity at (rho, z), in W/m^2.

    Evaluates P0 |u_{0,0} + e^{i theta} u_{0,p}|^2 / 2 through its closed
    form: the equal-weight two-mode interference reduces to

        P0 / (pi w(z)^2) exp(-2 rho^2/w^2) [1 + L^2 + 2 L cos(theta - 2p atan(z/z_R))]

    with L the radial Laguerre polynomial of order p.  For theta = pi the
    on-axis value at the focus is exactly zero.
    """
    rho, z = _check_coords(rho, z)
    p = params.p_index
    w0 = params.waist
    zr = params.rayleigh_range

    w2 = w0**2 * (1.0 + (z / zr) ** 2)
    lag = eval_genlaguerre(p, 0, 2.0 * rho**2 / w2)
    tau = np.arctan(z / zr)
    ct, st = _phase_components(params.theta_rel)
    cos_rel = ct * np.cos(2 * p * tau) + st * np.sin(2 * p * tau)
    # (1-L)^2 + 2L(1+cos) == 1 + L^2 + 2L cos, without cancellation at the
    # dark focus where L -> 1 and cos -> -1
    bracket = (1.0 - lag) ** 2 + 2.0 * lag * (1.0 + cos_rel)
    return params.p_total / (math.pi * w2) * np.exp(-2.0 * rho**2 / w2) * bracket


def _axis_peak(profile, hi, n_coarse=2001):
    """Locate the first interior maximum of `profile` on (0, hi]."""
    s = np.linspace(0.0, hi, n_coarse)
    vals = profile(s)
    k = int(np.argmax(vals))
    if k == 0 or k == n_coarse - 1:
        raise RuntimeError(
            "intensity maximum not bracketed by the search grid; "
            "no bottle structure for these parameters"
        )
    res = minimize_scalar(
        lambda u: -profile(u), bounds=(s[k - 1], s[k + 1]), method="bounded",
        options={"xatol": hi * 1e-12},
    )
    return float(res.x)


def bottle_geometry(params: BeamParams, method: str = "auto"):
    """Width and height of the bottle: peak-to-peak distances around the dark focus.

    Returns (W, H) in meters.  For p = 1 the closed forms W = 2 w0 and
    H = 2 z_R apply; for general p (or method="search") the extrema of the
    transverse and axial intensity profiles are located numerically.
    """
    if params.p_index < 1:
        raise ValueError("bottle geometry requires p_index >= 1")
    if method not in ("auto", "closed-form", "search"):
        raise ValueError(f"unknown method {method!r}")
    if method == "closed-form" and params.p_index != 1:
        raise ValueError("closed form only holds for p_index = 1")

    if params.p_index == 1 and method != "search":
        return 2.0 * params.waist, 2.0 * params.rayleigh_range

    w0 = params.waist
    zr = params.rayleigh_range
    rho_peak = _axis_peak(lambda r: dft_intensity(params, r, 0.0), 4.0 * w0)
    z_peak = _axis_peak(lambda u: dft_intensity(params, 0.0, u), 6.0 * zr)
    return 2.0 * rho_peak, 2.0 * z_peak


@dataclass(frozen=True)
class GridSpec:
    """Uniform evaluation grid for one transverse axis ('rho' or 'x') and z."""

    transverse_start: float
    transverse_step: float
    transverse_count: int
    z_start: float
    z_step: float
    z_count: int
    transverse_kind: str = "rho"

    def __post_init__(self):
        if self.transverse_kind not in ("rho", "x"):
            raise ValueError("transverse_kind must be 'rho' or 'x'")
        if self.transverse_step <= 0 or self.z_step <= 0:
            raise ValueError("grid spacing must be positive")
        if self.transverse_count < 1 or self.z_count < 1:
            raise ValueError("grid counts must be >= 1")
        for v in (self.transverse_start, self.z_start):
            if not math.isfinite(v):
                raise ValueError("grid axes must be finite")
        if self.transverse_kind == "rho" and self.transverse_start < 0:
            raise ValueError("rho axis must start at a nonnegative value")

    @property
    def transverse_values(self):
        return self.transverse_start + self.transverse_step * np.arange(self.transverse_count)

    @property
    def z_values(self):
        return self.z_start + self.z_step * np.arange(self.z_count)

    @classmethod
    def centered(cls, half_width, half_height, n_transverse, n_z, transverse_kind="x"):
        """Symmetric grid spanning [-half_width, half_width] x [-half_height, half_height]."""
        if transverse_kind == "rho":
            t0, dt = 0.0, half_width / max(n_transverse - 1, 1)
        else:
            t0 = -half_width
            dt = 2 * half_width / max(n_transverse - 1, 1)
        dz = 2 * half_height / max(n_z - 1, 1)
        return cls(t0, dt, n_transverse, -half_height, dz, n_z, transverse_kind)


@dataclass(frozen=True)
class IntensityGrid:
    """Sampled intensity landscape with its generating beam parameters."""

    spec: GridSpec
    values: np.ndarray  # shape (transverse_count, z_count), W/m^2
    params: BeamParams

    def __post_init__(self):
        expected = (self.spec.transverse_count, self.spec.z_count)
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != grid {expected}")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("intensities must be finite and nonnegative")

    def save(self, path):
        spec = self.spec
        with open(path, "w") as fh:
            fh.write(
                f"# axis {spec.transverse_kind}: {spec.transverse_start!r} "
                f"{spec.transverse_step!r} {spec.transverse_count}\n"
            )
            fh.write(f"# axis z: {spec.z_start!r} {spec.z_step!r} {spec.z_count}\n")
            for v in self.values.ravel(order="C"):
                fh.write(f"{float(v)!r}\n")


def load_intensity_grid_values(path):
    """Read an intensity-grid file back as (GridSpec fields dict, values array)."""
    axes = {}
    values = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("# axis"):
                head, rest = line[len("# axis "):].split(":", 1)
                start, step, count = rest.split()
                axes[head.strip()] = (float(start), float(step), int(count))
            elif not line.startswith("#"):
                values.append(float(line))
    (tkind,) = [k for k in axes if k != "z"]
    t0, dt, nt = axes[tkind]
    z0, dz, nz = axes["z"]
    spec = GridSpec(t0, dt, nt, z0, dz, nz, transverse_kind=tkind)
    arr = np.array(values).reshape(nt, nz)
    return spec, arr


def render_intensity_grid(params: BeamParams, spec: GridSpec) -> IntensityGrid:
    """Evaluate the dark-focus intensity on a uniform (transverse, z) grid."""
    n_cells = spec.transverse_count * spec.z_count
    if n_cells > MAX_GRID_CELLS:
        raise ValueError(f"grid of {n_cells} cells exceeds cap of {MAX_GRID_CELLS}")
    t = spec.transverse_values
    rho = np.abs(t) if spec.transverse_kind == "x" else t
    vals = dft_intensity(params, rho[:, None], spec.z_values[None, :])
    return IntensityGrid(spec=spec, values=vals, params=params)
