"""Absorbed-power and trap-performance comparison between the dark focus and
a Gaussian tweezer of the same waist.

The absorbed power is proportional to the optical power intercepted by the
particle's effective cross-section A_p = V/lambda, so the absorption ratio
between the two traps reduces to the ratio of mode power transmitted
through a disk of radius R_eff = sqrt(A_p / 4 pi).  The disk is taken in
the focal plane, centered on the axis.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from .beam import BeamParams, dft_intensity, gaussian_intensity
from .forces import ParticleMedium

__all__ = [
    "AbsorptionScenario",
    "TrapComparison",
    "effective_cross_section",
    "absorption_ratio",
    "absorption_ratio_sweep",
    "trap_comparison",
]


def effective_cross_section(radius: float, lambda0: float) -> float:
    """A_p = V/lambda = (4/3) pi R^3 / lambda0 for a sphere, in m^2."""
    if radius <= 0 or lambda0 <= 0:
        raise ValueError("radius and wavelength must be positive")
    return 4.0 * math.pi * radius**3 / (3.0 * lambda0)


@dataclass(frozen=True)
class AbsorptionScenario:
    """Bottle/Gaussian beam pair with the particle cross-section to compare."""

    bottle: BeamParams
    gaussian: BeamParams
    cross_section: float  # A_p, m^2

    def __post_init__(self):
        same_geometry = (
            self.bottle.lambda0 == self.gaussian.lambda0
            and self.bottle.na == self.gaussian.na
            and self.bottle.n_medium == self.gaussian.n_medium
        )
        if not same_geometry:
            raise ValueError("the two beams must share wavelength, NA and medium")
        if not (self.cross_section > 0):
            raise ValueError("cross-section must be positive")

    @classmethod
    def for_particle(cls, bottle: BeamParams, gaussian: BeamParams,
                     particle: ParticleMedium) -> "AbsorptionScenario":
        return cls(bottle, gaussian,
                   effective_cross_section(particle.radius, bottle.lambda0))

    @property
    def power_ratio(self) -> float:
        """P_bottle / P_gaussian."""
        return self.bottle.p_total / self.gaussian.p_total

    @property
    def effective_radius(self) -> float:
        """R_eff = sqrt(A_p / 4 pi), radius of the equivalent disk (m)."""
        return math.sqrt(self.cross_section / (4.0 * math.pi))


def _disk_power_fraction(profile, r_eff: float) -> float:
    """Fraction of unit beam power inside a focal-plane disk of radius r_eff."""
    val, _ = quad(lambda r: profile(r) * 2.0 * math.pi * r, 0.0, r_eff,
                  epsabs=0.0, epsrel=1e-8, limit=200)
    return val


def absorption_ratio(scenario: AbsorptionScenario,
                     r_eff: float | None = None) -> float:
    """Absorbed power in the bottle relative to the Gaussian tweezer.

    eta = (P_B/P_G) x (bottle power through the disk)/(Gaussian power
    through the disk), with both mode intensities normalized to unit total
    power, integrated by adaptive radial quadrature (rel. tol. 1e-8).
    """
    if r_eff is None:
        r_eff = scenario.effective_radius
    if r_eff <= 0:
        raise ValueError("effective radius must be positive")
    bottle_unit = scenario.bottle.with_unit_power()
    gauss_unit = scenario.gaussian.with_unit_power()
    num = _disk_power_fraction(lambda r: dft_intensity(bottle_unit, r, 0.0), r_eff)
    den = _disk_power_fraction(lambda r: gaussian_intensity(gauss_unit, r, 0.0), r_eff)
    return scenario.power_ratio * num / den


def absorption_ratio_sweep(scenario: AbsorptionScenario, r_eff_values):
    """eta as a function of effective radius; returns an (n, 2) array."""
    r_eff_values = np.asarray(r_eff_values, dtype=float)
    etas = [absorption_ratio(scenario, r) for r in r_eff_values]
    return np.column_stack([r_eff_values, etas])


def save_absorption_sweep(table, path):
    with open(path, "w") as fh:
        fh.write("r_eff eta_abs\n")
        for r, eta in np.asarray(table).tolist():
            fh.write(f"{r!r} {eta!r}\n")


@dataclass(frozen=True)
class TrapComparison:
    """Depth and stiffness ratios (bottle relative to Gaussian)."""

    transverse_depth_ratio: float
    matched_depth_power_ratio: float
    longitudinal_stiffness_ratio: float
    longitudinal_depth_ratio: float

    def __post_init__(self):
        if min(
            self.transverse_depth_ratio,
            self.matched_depth_power_ratio,
            self.longitudinal_stiffness_ratio,
            self.longitudinal_depth_ratio,
        ) <= 0:
            raise ValueError("comparison ratios must be positive")

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(f"transverse_depth_ratio={self.transverse_depth_ratio!r}\n")
            fh.write(f"matched_depth_power_ratio={self.matched_depth_power_ratio!r}\n")
            fh.write(f"longitudinal_stiffness_ratio={self.longitudinal_stiffness_ratio!r}\n")
            fh.write(f"longitudinal_depth_ratio={self.longitudinal_depth_ratio!r}\n")


def _profile_max(profile, hi: float) -> float:
    s = np.linspace(0.0, hi, 4001)
    vals = profile(s)
    k = int(np.argmax(vals))
    if k == 0 or k == len(s) - 1:
        raise RuntimeError("profile maximum not bracketed")
    res = minimize_scalar(lambda u: -profile(u), bounds=(s[k - 1], s[k + 1]),
                          method="bounded", options={"xatol": hi * 1e-12})
    return float(profile(res.x))


def trap_comparison(bottle: BeamParams, gaussian: BeamParams,
                    curvature_step: float = 1e-3) -> TrapComparison:
    """Compare trap depths and axial stiffnesses at the beams' set powers.

    Depths are potential-barrier heights per unit polarizability magnitude,
    so intensity maxima stand in for them: the bottle's transverse barrier
    against the Gaussian's focal peak, and along the axis the bottle
    barrier against the full Gaussian focal depth.  The axial stiffness
    ratio uses central second differences of the on-axis intensities with
    step `curvature_step` x z_R.
    """
    if (bottle.lambda0, bottle.na, bottle.n_medium) != (
        gaussian.lambda0, gaussian.na, gaussian.n_medium,
    ):
        raise ValueError("the two beams must share wavelength, NA and medium")
    w0 = bottle.waist
    zr = bottle.rayleigh_range

    bottle_transverse = _profile_max(lambda r: dft_intensity(bottle, r, 0.0), 4.0 * w0)
    bottle_axial = _profile_max(lambda u: dft_intensity(bottle, 0.0, u), 6.0 * zr)
    gauss_peak = float(gaussian_intensity(gaussian, 0.0, 0.0))

    transverse_depth_ratio = bottle_transverse / gauss_peak
    longitudinal_depth_ratio = bottle_axial / gauss_peak

    h = curvature_step * zr
    second = lambda f: (f(h) - 2.0 * f(0.0) + f(-h)) / h**2
    curv_bottle = second(lambda u: float(dft_intensity(bottle, 0.0, u)))
    curv_gauss = second(lambda u: float(gaussian_intensity(gaussian, 0.0, u)))
    longitudinal_stiffness_ratio = curv_bottle / abs(curv_gauss)

    return TrapComparison(
        transverse_depth_ratio=transverse_depth_ratio,
        matched_depth_power_ratio=(bottle.p_total / gaussian.p_total)
        / transverse_depth_ratio,
        longitudinal_stiffness_ratio=longitudinal_stiffness_ratio,
        longitudinal_depth_ratio=longitudinal_depth_ratio,
    )
