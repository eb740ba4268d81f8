"""Rayleigh-regime optical forces for the dark-focus beam and the quartic model.

A small dielectric sphere with index ratio m = n_p/n_m below 1 is repelled
from light, so the dark focus confines it.  The gradient force derives from
the potential V = -(2 pi n_m R^3 / c) alpha I, and near the focus V reduces
to the quartic form

    V(rho, z) ~ (k_z/2) z^2 - k_rho_z rho^2 z^2 + (k_rho/4) rho^4.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.special import eval_genlaguerre

from .beam import BeamParams, _check_coords, _phase_components

__all__ = [
    "ParticleMedium",
    "QuarticCoefficients",
    "ForceGrid",
    "RmseReport",
    "dipole_potential",
    "dipole_gradient_force",
    "dipole_scattering_force",
    "quartic_coefficients",
    "quartic_potential",
    "quartic_force",
    "fit_polynomial_force",
    "sample_force_grid",
]


@dataclass(frozen=True)
class ParticleMedium:
    """Trapped sphere plus the fluid around it.

    radius (m), refractive indices, dynamic viscosity (Pa s) and bath
    temperature (K).  Derived: index ratio m, polarizability factor
    (m^2-1)/(m^2+2) and the Stokes drag 6 pi eta R.
    """

    radius: float
    n_particle: float
    n_medium: float
    viscosity: float
    temperature: float

    def __post_init__(self):
        if not (self.radius > 0):
            raise ValueError(f"radius must be positive, got {self.radius}")
        if self.n_particle < 1 or self.n_medium < 1:
            raise ValueError("refractive indices must be >= 1")
        if not (self.viscosity > 0):
            raise ValueError(f"viscosity must be positive, got {self.viscosity}")
        if not (self.temperature > 0):
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    @property
    def index_ratio(self) -> float:
        return self.n_particle / self.n_medium

    @property
    def polarizability_factor(self) -> float:
        """(m^2 - 1)/(m^2 + 2); negative for a particle rarer than the medium."""
        m2 = self.index_ratio**2
        return (m2 - 1.0) / (m2 + 2.0)

    @property
    def drag(self) -> float:
        """Stokes drag coefficient 6 pi eta R (kg/s), no wall corrections."""
        return 6.0 * math.pi * self.viscosity * self.radius


@dataclass(frozen=True)
class QuarticCoefficients:
    """Strengths of the local potential expansion around the dark focus.

    k_z in N/m, k_rho_z and k_rho in N/m^3.  All three are positive for a
    confining trap (index ratio below one).
    """

    k_z: float
    k_rho_z: float
    k_rho: float

    def __post_init__(self):
        for name in ("k_z", "k_rho_z", "k_rho"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if min(self.k_z, self.k_rho_z, self.k_rho) <= 0:
            warnings.warn(
                "non-positive quartic coefficients: potential is not a "
                "confining dark-focus trap", stacklevel=2,
            )


def _potential_prefactor(beam: BeamParams, pm: ParticleMedium) -> float:
    """2 pi n_m R^3 alpha / c, the factor multiplying intensity in V (signed)."""
    return (
        2.0 * math.pi * pm.n_medium * pm.radius**3
        * pm.polarizability_factor / SPEED_OF_LIGHT
    )


def _intensity_and_gradient(beam: BeamParams, rho, z):
    """Bottle intensity with its closed-form cylindrical gradient.

    Returns (I, dI/drho / rho, dI/dz).  The radial derivative is divided
    by rho so that the Cartesian components F_x = (...) * x stay finite on
    the axis.
    """
    rho, z = _check_coords(rho, z)
    p = beam.p_index
    w0 = beam.waist
    zr = beam.rayleigh_range

    t = z / zr
    one_t2 = 1.0 + t**2
    w2 = w0**2 * one_t2
    x = 2.0 * rho**2 / w2
    lag = eval_genlaguerre(p, 0, x)
    dlag = -eval_genlaguerre(p - 1, 1, x) if p >= 1 else np.zeros_like(x)

    tau = np.arctan(t)
    ct, st = _phase_components(beam.theta_rel)
    cos2p, sin2p = np.cos(2 * p * tau), np.sin(2 * p * tau)
    cos_rel = ct * cos2p + st * sin2p
    sin_rel = st * cos2p - ct * sin2p

    bracket = 1.0 + lag**2 + 2.0 * lag * cos_rel
    ce = beam.p_total / (math.pi * w2) * np.exp(-x)
    intensity = ce * bracket

    shape_term = 2.0 * dlag * (lag + cos_rel) - bracket
    didrho_over_rho = ce * (4.0 / w2) * shape_term

    g = 2.0 * t / (zr * one_t2)          # d ln w^2 / dz
    dtau = 1.0 / (zr * one_t2)
    didz = ce * (-g * bracket - x * g * shape_term + 4.0 * p * lag * sin_rel * dtau)
    return intensity, didrho_over_rho, didz


def dipole_potential(beam: BeamParams, pm: ParticleMedium, rho, z):
    """Dipole-regime optical potential V = -(2 pi n_m R^3/c) alpha I, in J.

    Nonnegative with its minimum 0 at the dark focus when the particle is
    rarer than the medium; flips sign (attractive towards light) for m > 1.
    """
    from .beam import dft_intensity

    return -_potential_prefactor(beam, pm) * dft_intensity(beam, rho, z)


def dipole_gradient_force(beam: BeamParams, pm: ParticleMedium, x, y, z):
    """Conservative gradient force (2 pi n_m R^3/c) alpha grad(I) at (x, y, z), in N.

    Returns an array with shape (..., 3).  Curl-free by construction and
    zero at the focus.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    rho = np.hypot(x, y)
    pref = _potential_prefactor(beam, pm)
    _, didrho_over_rho, didz = _intensity_and_gradient(beam, rho, z)
    fx = pref * didrho_over_rho * x
    fy = pref * didrho_over_rho * y
    fz = pref * didz
    out = np.stack(np.broadcast_arrays(fx, fy, fz), axis=-1)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite gradient force")
    return out


def dipole_scattering_force(beam: BeamParams, pm: ParticleMedium, x, y, z):
    """Radiation-pressure force along +z, proportional to local intensity (N)."""
    from .beam import dft_intensity

    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    rho = np.hypot(x, y)
    pref = (
        128.0 * math.pi**5 * pm.radius**6
        / (3.0 * SPEED_OF_LIGHT * beam.lambda0**4)
        * pm.polarizability_factor**2 * pm.n_medium**5
    )
    fz = pref * dft_intensity(beam, rho, z)
    zeros = np.zeros_like(fz)
    return np.stack(np.broadcast_arrays(zeros, zeros, fz), axis=-1)


def quartic_coefficients(beam: BeamParams, pm: ParticleMedium) -> QuarticCoefficients:
    """Quartic trap strengths from the beam and particle parameters.

    The expansion of the bottle intensity about the focus gives, with
    mu' = 4 p^2/z_R^2, eta' = 8 p^2 (p+1)/(w0^2 z_R^2), chi' = 4 p^2/w0^4
    and the potential scale V0 = |2 pi n_m R^3 alpha / c| P0/(pi w0^2):

        k_z = 2 V0 mu',   k_rho_z = V0 eta',   k_rho = 4 V0 chi'.

    Positive coefficients (confinement) require an index ratio below one.
    """
    if beam.p_index < 1:
        raise ValueError("quartic expansion requires p_index >= 1 (no bottle for p = 0)")
    if pm.index_ratio >= 1:
        warnings.warn(
            "index ratio >= 1: particle is attracted to light, dark focus "
            "does not confine it", stacklevel=2,
        )
    p = beam.p_index
    w0 = beam.waist
    zr = beam.rayleigh_range
    mu = 4.0 * p**2 / zr**2
    eta = 8.0 * p**2 * (p + 1) / (w0**2 * zr**2)
    chi = 4.0 * p**2 / w0**4

    v0 = abs(_potential_prefactor(beam, pm)) * beam.p_total / (math.pi * w0**2)
    return QuarticCoefficients(k_z=2.0 * v0 * mu, k_rho_z=v0 * eta, k_rho=4.0 * v0 * chi)


def quartic_potential(coeffs: QuarticCoefficients, rho, z):
    """Evaluate (k_z/2) z^2 - k_rho_z rho^2 z^2 + (k_rho/4) rho^4, in J."""
    rho = np.asarray(rho, dtype=float)
    z = np.asarray(z, dtype=float)
    return (
        0.5 * coeffs.k_z * z**2
        - coeffs.k_rho_z * rho**2 * z**2
        + 0.25 * coeffs.k_rho * rho**4
    )


def quartic_force(coeffs: QuarticCoefficients, x, y, z):
    """Force of the quartic potential at Cartesian (x, y, z); shape (..., 3)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    rho2 = x**2 + y**2
    radial = 2.0 * coeffs.k_rho_z * z**2 - coeffs.k_rho * rho2
    fx = radial * x
    fy = radial * y
    fz = -coeffs.k_z * z + 2.0 * coeffs.k_rho_z * rho2 * z
    return np.stack(np.broadcast_arrays(fx, fy, fz), axis=-1)


@dataclass(frozen=True)
class ForceGrid:
    """Sampled force field: positions and force vectors, both (N, 3) in SI."""

    positions: np.ndarray
    forces: np.ndarray
    provenance: str

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        frc = np.asarray(self.forces, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or frc.shape != pos.shape:
            raise ValueError("positions and forces must both have shape (N, 3)")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(frc))):
            raise ValueError("force grid entries must be finite")
        if not self.provenance:
            raise ValueError("provenance tag is required")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "forces", frc)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(f"# source: {self.provenance}\n")
            fh.write("x y z fx fy fz\n")
            for p, f in zip(self.positions.tolist(), self.forces.tolist()):
                fh.write(f"{p[0]!r} {p[1]!r} {p[2]!r} {f[0]!r} {f[1]!r} {f[2]!r}\n")

    @classmethod
    def load(cls, path):
        provenance = "imported-external"
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("# source:"):
                    provenance = line[len("# source:"):].strip()
                elif line.startswith("#") or line.split()[0] == "x":
                    continue
                else:
                    rows.append([float(v) for v in line.split()])
        data = np.array(rows)
        return cls(positions=data[:, :3], forces=data[:, 3:6], provenance=provenance)


def sample_force_grid(force_fn, half_widths, n_per_axis=11, provenance="dipole-analytic"):
    """Tabulate force_fn(x, y, z) on a centered uniform box; returns a ForceGrid."""
    ax = [np.linspace(-h, h, n_per_axis) for h in half_widths]
    xs, ys, zs = np.meshgrid(*ax, indexing="ij")
    pos = np.column_stack([xs.ravel(), ys.ravel(), zs.ravel()])
    frc = force_fn(pos[:, 0], pos[:, 1], pos[:, 2])
    return ForceGrid(positions=pos, forces=np.asarray(frc), provenance=provenance)


@dataclass(frozen=True)
class RmseReport:
    """Per-axis residual norms relative to the force norms, and their mean."""

    rmse_x: float
    rmse_y: float
    rmse_z: float
    n_samples: int

    @property
    def rmse_avg(self) -> float:
        return (self.rmse_x + self.rmse_y + self.rmse_z) / 3.0


def fit_polynomial_force(grid: ForceGrid):
    """Least-squares fit of the quartic force model to a sampled force field.

    All three Cartesian components share the coefficient vector
    (k_z, k_rho_z, k_rho); the normalized per-axis root-mean-square errors
    quantify how well the quartic form describes the field.

    Returns (QuarticCoefficients, RmseReport).
    """
    pos = grid.positions
    if len(pos) < 125:
        raise ValueError(f"need at least 125 samples, got {len(pos)}")
    x, y, z = pos[:, 0], pos[:, 1], pos[:, 2]
    rho2 = x**2 + y**2
    zero = np.zeros_like(x)

    # Rows: F_x, F_y, F_z equations; columns: k_z, k_rho_z, k_rho.
    design = np.vstack([
        np.column_stack([zero, 2.0 * z**2 * x, -rho2 * x]),
        np.column_stack([zero, 2.0 * z**2 * y, -rho2 * y]),
        np.column_stack([-z, 2.0 * rho2 * z, zero]),
    ])
    target = np.concatenate([grid.forces[:, 0], grid.forces[:, 1], grid.forces[:, 2]])
    # Columns span many decades in SI units; normalize so the rank test is
    # about geometry, not units.
    scale = np.linalg.norm(design, axis=0)
    if np.any(scale == 0.0):
        raise np.linalg.LinAlgError(
            "degenerate grid geometry: a coefficient has no support in the samples"
        )
    coef, _, rank, _ = np.linalg.lstsq(design / scale, target, rcond=None)
    if rank < 3:
        raise np.linalg.LinAlgError(
            f"rank-deficient design matrix (rank {rank}): grid geometry does "
            "not constrain all three coefficients"
        )
    coef = coef / scale

    fitted = quartic_force(QuarticCoefficients(*coef), x, y, z)
    rmses = []
    for i in range(3):
        denom = float(np.sum(grid.forces[:, i] ** 2))
        num = float(np.sum((grid.forces[:, i] - fitted[:, i]) ** 2))
        if denom == 0.0:
            rmses.append(0.0 if num == 0.0 else math.inf)
        else:
            rmses.append(math.sqrt(num / denom))
    report = RmseReport(rmse_x=rmses[0], rmse_y=rmses[1], rmse_z=rmses[2],
                        n_samples=len(pos))
    return QuarticCoefficients(*coef), report
