"""Overdamped Brownian dynamics of the trapped sphere.

Euler-Maruyama integration of gamma dx = F(x) dt + sqrt(2 kB T gamma) dW per
axis.  The quartic force model is only a local expansion: off axis at large
|z| its potential is unbounded below, so trajectories can leave the trap.
Leaving the configured domain is a physics signal, not a numerical failure;
the simulation halts and reports it.
"""

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.constants import k as BOLTZMANN

from .beam import BeamParams
from .forces import (
    ParticleMedium,
    QuarticCoefficients,
    quartic_coefficients,
)

__all__ = [
    "SimConfig",
    "Trajectory",
    "EscapeReport",
    "SimulationUnstableError",
    "simulate",
    "simulate_ensemble",
    "equilibrium_pdf",
    "save_trajectory",
    "load_trajectory",
]

_NOISE_CHUNK = 65536


class SimulationUnstableError(RuntimeError):
    """Single-step displacement exceeded the domain scale: dt is too large."""


@dataclass(frozen=True)
class EscapeReport:
    """Where and when a trajectory left the simulation domain."""

    position: tuple
    time: float
    step: int


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to reproduce one trajectory.

    force_model selects "quartic" (requires coefficients, or beam+particle
    from which they are derived), "dipole" (requires beam), or "harmonic"
    (requires stiffness: a scalar or per-axis triple, zero meaning free
    diffusion).  domain_bound None picks the model default: 3 max(w0, z_R)
    for the dipole field, 1.5x the distance to the escape saddle for the
    quartic model, twelve thermal standard deviations for the harmonic one.
    """

    particle: ParticleMedium
    dt: float
    n_steps: int
    force_model: str = "quartic"
    coefficients: QuarticCoefficients | None = None
    beam: BeamParams | None = None
    stiffness: float | tuple | None = None
    initial_position: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    domain_bound: float | None = None
    boundary: str = "absorb"
    include_scattering: bool = False

    def __post_init__(self):
        if self.force_model not in ("quartic", "dipole", "harmonic"):
            raise ValueError(f"unknown force model {self.force_model!r}")
        if self.boundary not in ("absorb", "reflect"):
            raise ValueError(f"boundary must be 'absorb' or 'reflect', got {self.boundary!r}")
        if not (self.dt > 0):
            raise ValueError("dt must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.force_model == "dipole" and self.beam is None:
            raise ValueError("dipole force model requires beam parameters")
        if self.force_model == "quartic" and self.coefficients is None and self.beam is None:
            raise ValueError("quartic force model requires coefficients or beam")
        if self.force_model == "harmonic":
            if self.stiffness is None:
                raise ValueError("harmonic force model requires a stiffness")
            if any(k < 0 or not math.isfinite(k) for k in self.stiffness_triple()):
                raise ValueError("stiffness values must be finite and nonnegative")
        if len(self.initial_position) != 3 or not all(
            math.isfinite(v) for v in self.initial_position
        ):
            raise ValueError("initial_position must be three finite coordinates")
        if self.domain_bound is not None and not (self.domain_bound > 0):
            raise ValueError("domain_bound must be positive")
        if self.include_scattering and self.beam is None:
            raise ValueError("scattering force requires beam parameters")

    def stiffness_triple(self) -> tuple:
        if self.stiffness is None:
            return (0.0, 0.0, 0.0)
        if np.ndim(self.stiffness) == 0:
            return (float(self.stiffness),) * 3
        if len(self.stiffness) != 3:
            raise ValueError("stiffness must be a scalar or a triple")
        return tuple(float(k) for k in self.stiffness)

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    def effective_coefficients(self) -> QuarticCoefficients:
        if self.coefficients is not None:
            return self.coefficients
        return quartic_coefficients(self.beam, self.particle)

    def default_domain_bound(self) -> float:
        if self.force_model == "dipole":
            return 3.0 * max(self.beam.waist, self.beam.rayleigh_range)
        if self.force_model == "harmonic":
            ks = [k for k in self.stiffness_triple() if k > 0]
            if not ks:
                return math.inf
            kbt = BOLTZMANN * self.particle.temperature
            return 12.0 * math.sqrt(kbt / min(ks))
        qc = self.effective_coefficients()
        rho_s2 = qc.k_z / (2.0 * qc.k_rho_z)
        z_s2 = qc.k_rho * qc.k_z / (4.0 * qc.k_rho_z**2)
        return 1.5 * math.sqrt(rho_s2 + z_s2)

    def with_seed(self, seed: int) -> "SimConfig":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled positions (N, 3) with timestep and provenance."""

    dt: float
    positions: np.ndarray
    seed: int | None = None
    provenance: str = "simulated"
    escape: EscapeReport | None = None
    config: SimConfig | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError("positions must have shape (N, 3)")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        if not (self.dt > 0):
            raise ValueError("dt must be positive")
        object.__setattr__(self, "positions", pos)

    def __len__(self):
        return len(self.positions)

    @property
    def times(self):
        return self.dt * np.arange(len(self.positions))

    def axis(self, name):
        return self.positions[:, "xyz".index(name)]


def _quartic_scalar_force(qc: QuarticCoefficients):
    k_z, k_rz, k_r = qc.k_z, qc.k_rho_z, qc.k_rho

    def force(x, y, z):
        rho2 = x * x + y * y
        radial = 2.0 * k_rz * z * z - k_r * rho2
        return radial * x, radial * y, -k_z * z + 2.0 * k_rz * rho2 * z

    return force


def _dipole_scalar_force(beam: BeamParams, pm: ParticleMedium, include_scattering):
    """Closed-form dipole force as a plain-float function (hot loop path)."""
    from scipy.constants import c as c_light
    from .beam import _phase_components

    p = beam.p_index
    w0, zr = beam.waist, beam.rayleigh_range
    p_tot = beam.p_total
    ct, st = _phase_components(beam.theta_rel)
    pref = (
        2.0 * math.pi * pm.n_medium * pm.radius**3
        * pm.polarizability_factor / c_light
    )
    scat_pref = (
        128.0 * math.pi**5 * pm.radius**6 / (3.0 * c_light * beam.lambda0**4)
        * pm.polarizability_factor**2 * pm.n_medium**5
    ) if include_scattering else 0.0

    # Laguerre polynomials as plain coefficient tuples for Horner evaluation.
    from scipy.special import genlaguerre

    lag_c = tuple(np.asarray(genlaguerre(p, 0).coef, dtype=float))
    dlag_c = tuple(-np.asarray(genlaguerre(p - 1, 1).coef, dtype=float)) if p >= 1 else (0.0,)

    def horner(coeffs, u):
        acc = 0.0
        for cc in coeffs:
            acc = acc * u + cc
        return acc

    def force(x, y, z):
        rho2 = x * x + y * y
        t = z / zr
        one_t2 = 1.0 + t * t
        w2 = w0 * w0 * one_t2
        u = 2.0 * rho2 / w2
        lag = horner(lag_c, u)
        dlag = horner(dlag_c, u)
        tau = math.atan(t)
        c2p, s2p = math.cos(2 * p * tau), math.sin(2 * p * tau)
        cos_rel = ct * c2p + st * s2p
        sin_rel = st * c2p - ct * s2p
        bracket = 1.0 + lag * lag + 2.0 * lag * cos_rel
        ce = p_tot / (math.pi * w2) * math.exp(-u)
        shape = 2.0 * dlag * (lag + cos_rel) - bracket
        radial = pref * ce * (4.0 / w2) * shape
        g = 2.0 * t / (zr * one_t2)
        dtau = 1.0 / (zr * one_t2)
        fz = pref * ce * (-g * bracket - u * g * shape + 4.0 * p * lag * sin_rel * dtau)
        if scat_pref:
            fz += scat_pref * ce * bracket
        return radial * x, radial * y, fz

    return force


def _harmonic_scalar_force(stiffness):
    k_x, k_y, k_z = stiffness

    def force(x, y, z):
        return -k_x * x, -k_y * y, -k_z * z

    return force


def stiffness_scale(cfg: SimConfig) -> float:
    """Largest local stiffness the trajectory is expected to probe (N/m)."""
    if cfg.force_model == "harmonic":
        return max(*cfg.stiffness_triple(), 0.0)
    qc = cfg.effective_coefficients()
    kbt = BOLTZMANN * cfg.particle.temperature
    rho_th2 = math.sqrt(4.0 * kbt / qc.k_rho)
    z_th2 = kbt / qc.k_z
    return max(qc.k_z, 3.0 * qc.k_rho * rho_th2, 2.0 * qc.k_rho_z * (rho_th2 + z_th2))


def simulate(cfg: SimConfig) -> Trajectory:
    """Integrate one trajectory; deterministic for a given config and seed.

    With boundary="absorb" (default) a particle leaving the domain bound
    truncates the trajectory, which then carries an EscapeReport.  With
    boundary="reflect" the step is folded back radially across the bound;
    this emulates the bright shell that encloses the dark focus in the full
    beam, and makes the stationary density the Boltzmann density of the
    force model restricted to the domain.  Use it when the local quartic
    expansion alone would not confine the particle.
    """
    gamma = cfg.particle.drag
    k_max = stiffness_scale(cfg)
    if k_max > 0 and cfg.dt > 0.1 * gamma / k_max:
        warnings.warn(
            f"dt={cfg.dt:g} exceeds the stability bound 0.1 gamma/k_max="
            f"{0.1 * gamma / k_max:g}; results may be inaccurate",
            stacklevel=2,
        )

    if cfg.force_model == "quartic":
        force = _quartic_scalar_force(cfg.effective_coefficients())
    elif cfg.force_model == "harmonic":
        force = _harmonic_scalar_force(cfg.stiffness_triple())
    else:
        force = _dipole_scalar_force(cfg.beam, cfg.particle, cfg.include_scattering)

    bound = cfg.domain_bound if cfg.domain_bound is not None else cfg.default_domain_bound()
    bound2 = bound * bound
    kbt = BOLTZMANN * cfg.particle.temperature
    noise_scale = math.sqrt(2.0 * kbt * cfg.dt / gamma)
    mob = cfg.dt / gamma

    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_steps
    out = np.empty((n + 1, 3))
    x, y, z = (float(v) for v in cfg.initial_position)
    out[0] = (x, y, z)
    escape = None

    reflect = cfg.boundary == "reflect"
    done = 0
    step_index = 0
    while done < n and escape is None:
        chunk = min(_NOISE_CHUNK, n - done)
        noise = rng.standard_normal((chunk, 3))
        noise *= noise_scale
        for i in range(chunk):
            fx, fy, fz = force(x, y, z)
            dx = fx * mob + noise[i, 0]
            dy = fy * mob + noise[i, 1]
            dz = fz * mob + noise[i, 2]
            if dx * dx + dy * dy + dz * dz > bound2:
                raise SimulationUnstableError(
                    f"step displacement exceeded the domain scale {bound:g} m "
                    f"at step {step_index + 1}; reduce dt"
                )
            x += dx
            y += dy
            z += dz
            step_index += 1
            r2 = x * x + y * y + z * z
            if r2 > bound2:
                if reflect:
                    # radial fold across the spherical wall
                    f = (2.0 * bound - math.sqrt(r2)) / math.sqrt(r2)
                    x *= f
                    y *= f
                    z *= f
                else:
                    out[step_index] = (x, y, z)
                    escape = EscapeReport(
                        position=(x, y, z), time=step_index * cfg.dt, step=step_index
                    )
                    break
            out[step_index] = (x, y, z)
        done += chunk

    positions = out[: step_index + 1]
    return Trajectory(
        dt=cfg.dt, positions=positions, seed=cfg.seed, provenance="simulated",
        escape=escape, config=cfg,
    )


def simulate_ensemble(cfg: SimConfig, n_runs: int, seed_offset: int = 0):
    """Independent repetitions with per-run seeds spawned from cfg.seed."""
    seeds = np.random.SeedSequence(cfg.seed).generate_state(n_runs + seed_offset)
    return [simulate(cfg.with_seed(int(s))) for s in seeds[seed_offset:]]


def pooled_positions(trajectories, burn_in: int = 0, drop_last: int = 0):
    """Concatenate retained samples from an ensemble.

    burn_in initial samples are dropped from each run; drop_last removes the
    samples just before an escape, where the density is no longer stationary.
    """
    parts = []
    for traj in trajectories:
        pos = traj.positions
        stop = len(pos) - (drop_last if traj.escape is not None else 0)
        if stop > burn_in:
            parts.append(pos[burn_in:stop])
    if not parts:
        raise ValueError("no samples retained: all runs escaped before burn_in")
    return np.concatenate(parts, axis=0)


def equilibrium_pdf(potential_fn, temperature, axes):
    """Boltzmann density exp(-V/kB T) normalized on a rectangular grid.

    axes is a sequence of strictly increasing 1-D coordinate arrays; the
    potential is evaluated on their meshgrid.  Densities integrate to one
    over the grid (midpoint rule).  A potential whose minimum sits on the
    grid boundary is rejected as non-normalizable.
    """
    axes = [np.asarray(a, dtype=float) for a in axes]
    for a in axes:
        if a.ndim != 1 or len(a) < 2 or np.any(np.diff(a) <= 0):
            raise ValueError("each axis must be a strictly increasing 1-D array")
    mesh = np.meshgrid(*axes, indexing="ij")
    v = np.asarray(potential_fn(*mesh), dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("potential must be finite on the grid")

    vmin_idx = np.unravel_index(np.argmin(v), v.shape)
    on_edge = any(i == 0 or i == s - 1 for i, s in zip(vmin_idx, v.shape))
    if on_edge and v.min() < v.max():
        raise ValueError(
            "potential minimum lies on the grid boundary: density is not "
            "normalizable on this domain"
        )

    kbt = BOLTZMANN * temperature
    w = np.exp(-(v - v.min()) / kbt)
    cell = 1.0
    for a in axes:
        cell = cell * float(np.mean(np.diff(a)))
    total = w.sum() * cell
    return w / total


def marginal_density(density, axes, keep_axis: int):
    """Integrate an N-D grid density down to one axis (midpoint rule)."""
    axes = [np.asarray(a, dtype=float) for a in axes]
    out = np.asarray(density, dtype=float)
    for i in reversed(range(out.ndim)):
        if i == keep_axis:
            continue
        out = out.sum(axis=i) * float(np.mean(np.diff(axes[i])))
    return out


def save_trajectory(traj: Trajectory, path):
    with open(path, "w") as fh:
        fh.write(f"# dt={traj.dt!r}\n")
        if traj.seed is not None:
            fh.write(f"# seed={traj.seed}\n")
        fh.write(f"# provenance={traj.provenance}\n")
        if traj.escape is not None:
            e = traj.escape
            fh.write(f"# escape_step={e.step} escape_time={e.time!r}\n")
        fh.write("t x y z\n")
        for k, (px, py, pz) in enumerate(traj.positions.tolist()):
            fh.write(f"{k * traj.dt!r} {px!r} {py!r} {pz!r}\n")


def load_trajectory(path, meters_per_pixel: float | None = None) -> Trajectory:
    """Read a trajectory file; honors a '# meters_per_pixel=' calibration comment.

    An explicit meters_per_pixel argument overrides the file header.  The
    time column is used only to infer dt when no '# dt=' comment is present.
    """
    dt = None
    seed = None
    provenance = "ingested"
    file_scale = None
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                for token in body.split():
                    if token.startswith("dt="):
                        dt = float(token[3:])
                    elif token.startswith("seed="):
                        seed = int(token[5:])
                    elif token.startswith("meters_per_pixel="):
                        file_scale = float(token[len("meters_per_pixel="):])
                    elif token.startswith("provenance="):
                        provenance = token[len("provenance="):]
                continue
            parts = line.replace(",", " ").split()
            if parts[0] in ("t", "x"):
                continue
            rows.append([float(v) for v in parts])
    data = np.array(rows)
    if data.ndim != 2 or data.shape[1] < 4:
        raise ValueError(f"expected columns t x y z in {path}")
    if dt is None:
        steps = np.diff(data[:, 0])
        if len(steps) == 0 or np.ptp(steps) > 1e-9 * abs(steps[0]):
            raise ValueError("cannot infer a uniform dt from the time column")
        dt = float(steps[0])
    scale = meters_per_pixel if meters_per_pixel is not None else file_scale
    positions = data[:, 1:4] * (scale if scale is not None else 1.0)
    return Trajectory(dt=dt, positions=positions, seed=seed, provenance=provenance)
