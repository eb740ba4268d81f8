"""Trap calibration from position data.

Boltzmann inversion of histograms recovers the potential; the quartic model
is fitted to it with uncertainties from five-fold data splits.  A sweep of
simulated numerical apertures against a measured ensemble locates the trap
NA by Kullback-Leibler divergence minimization, which for histogram
likelihoods is maximum-likelihood estimation over the sweep family.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats
from scipy.constants import k as BOLTZMANN

from .beam import BeamParams
from .dynamics import SimConfig, Trajectory, pooled_positions, simulate
from .forces import ParticleMedium, QuarticCoefficients, quartic_coefficients
from .spectral import FitError, estimate_psd, fit_lorentzian

__all__ = [
    "EmpiricalPdf",
    "KsResult",
    "PotentialReconstruction",
    "NaSweepResult",
    "histogram_pdf",
    "rebin_pdf",
    "kl_divergence",
    "ks_gaussianity_test",
    "boltzmann_potential",
    "reconstruct_potential",
    "estimate_na",
    "decorrelation_stride",
]


@dataclass(frozen=True)
class EmpiricalPdf:
    """Normalized 1-D histogram density with its binning metadata."""

    bin_edges: np.ndarray
    density: np.ndarray
    n_samples: int
    pseudocount: float = 0.0

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        dens = np.asarray(self.density, dtype=float)
        if edges.ndim != 1 or len(edges) != len(dens) + 1:
            raise ValueError("bin_edges must have one more entry than density")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if np.any(dens < 0):
            raise ValueError("density must be nonnegative")
        total = float(np.sum(dens * np.diff(edges)))
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"density must integrate to 1, got {total}")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "density", dens)

    @property
    def centers(self):
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def widths(self):
        return np.diff(self.bin_edges)


def histogram_pdf(samples, bins="fd", range=None, pseudocount: float = 0.0) -> EmpiricalPdf:
    """Normalized histogram of 1-D samples.

    bins follows numpy.histogram ('fd' by default); a pseudocount assigned
    to empty bins before normalization keeps the density positive for use
    as the reference side of a KL divergence.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if len(x) < 100:
        raise ValueError(f"need at least 100 samples, got {len(x)}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    if np.ptp(x) == 0.0:
        raise ValueError("degenerate sample set: zero variance")
    counts, edges = np.histogram(x, bins=bins, range=range)
    counts = counts.astype(float)
    counts[counts == 0.0] = pseudocount
    norm = float(np.sum(counts * np.diff(edges)))
    return EmpiricalPdf(
        bin_edges=edges, density=counts / norm, n_samples=len(x),
        pseudocount=pseudocount,
    )


def rebin_pdf(pdf: EmpiricalPdf, new_edges) -> EmpiricalPdf:
    """Mass-conserving rebin of a density onto new edges (assumes uniform
    density inside each original bin)."""
    new_edges = np.asarray(new_edges, dtype=float)
    if np.any(np.diff(new_edges) <= 0):
        raise ValueError("new edges must be strictly increasing")
    old = pdf.bin_edges
    mass = np.concatenate([[0.0], np.cumsum(pdf.density * pdf.widths)])

    def cum_mass(v):
        v = np.clip(v, old[0], old[-1])
        i = np.clip(np.searchsorted(old, v, side="right") - 1, 0, len(old) - 2)
        frac = (v - old[i]) / (old[i + 1] - old[i])
        return mass[i] + frac * (mass[i + 1] - mass[i])

    new_mass = np.diff(cum_mass(new_edges))
    total = new_mass.sum()
    if total <= 0:
        raise ValueError("new edges do not overlap the pdf support")
    density = new_mass / total / np.diff(new_edges)
    return EmpiricalPdf(bin_edges=new_edges, density=density,
                        n_samples=pdf.n_samples, pseudocount=pdf.pseudocount)


def kl_divergence(p: EmpiricalPdf, q: EmpiricalPdf) -> float:
    """D(p || q) = sum p ln(p/q) dx in nats on a shared binning.

    Zero exactly when the densities agree bin-wise; infinite when q
    vanishes where p does not (regularize q with a pseudocount first).
    """
    if len(p.bin_edges) != len(q.bin_edges) or not np.allclose(p.bin_edges, q.bin_edges):
        raise ValueError("pdfs are on different grids; rebin one of them first")
    widths = p.widths
    mask = p.density > 0
    if np.any(q.density[mask] == 0):
        return math.inf
    terms = p.density[mask] * np.log(p.density[mask] / q.density[mask]) * widths[mask]
    val = float(np.sum(terms))
    return max(val, 0.0) if val > -1e-9 else val


_KS_NULL_CACHE = {}


def _ks_statistic_estimated(x):
    mu = float(np.mean(x))
    sigma = float(np.std(x, ddof=1))
    return stats.kstest(x, "norm", args=(mu, sigma)).statistic


def _ks_null_table(n, n_null, seed):
    key = (n, n_null, seed)
    table = _KS_NULL_CACHE.get(key)
    if table is None:
        rng = np.random.default_rng(seed)
        table = np.sort([
            _ks_statistic_estimated(rng.standard_normal(n)) for _ in range(n_null)
        ])
        _KS_NULL_CACHE[key] = table
    return table


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    reject: bool
    significance: float
    n_samples: int


def ks_gaussianity_test(samples, significance: float = 0.05,
                        n_null: int = 500, null_seed: int = 918273) -> KsResult:
    """Two-sided KS test of the samples against a Gaussian with their own
    mean and variance.

    Because the reference parameters are estimated from the data, the
    plain asymptotic KS distribution is far too conservative; the null
    distribution of the statistic is therefore calibrated by Monte Carlo
    (it depends only on the sample size), so that the stated significance
    is the actual false-positive rate.  Samples should be decorrelated
    beforehand (see decorrelation_stride).
    """
    x = np.asarray(samples, dtype=float).ravel()
    if len(x) < 1000:
        raise ValueError(f"need at least 1000 samples, got {len(x)}")
    if not (0 < significance < 1):
        raise ValueError("significance must lie in (0, 1)")
    d = _ks_statistic_estimated(x)
    table = _ks_null_table(len(x), n_null, null_seed)
    n_ge = len(table) - np.searchsorted(table, d, side="left")
    p_value = (1.0 + n_ge) / (n_null + 1.0)
    return KsResult(statistic=float(d), p_value=float(p_value),
                    reject=bool(p_value < significance),
                    significance=significance, n_samples=len(x))


def decorrelation_stride(drag: float, stiffness: float, dt: float,
                         factor: float = 3.0) -> int:
    """Subsampling stride of `factor` correlation times gamma/k."""
    if min(drag, stiffness, dt) <= 0:
        raise ValueError("drag, stiffness and dt must be positive")
    return max(1, math.ceil(factor * (drag / stiffness) / dt))


def boltzmann_potential(pdf: EmpiricalPdf, temperature: float):
    """Invert a 1-D density to a potential profile, V = -kB T ln P, min 0.

    Returns (centers, V) over the bins with positive density.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    mask = pdf.density > 0
    if mask.sum() < 3:
        raise ValueError("density support too narrow to invert")
    v = -BOLTZMANN * temperature * np.log(pdf.density[mask])
    return pdf.centers[mask], v - v.min()


@dataclass(frozen=True)
class PotentialReconstruction:
    """Boltzmann-inverted potential surface and the fitted quartic model.

    The potential grid is over (rho, z) with the minimum pinned at zero;
    bins outside the sampled support hold NaN.  Coefficient uncertainties
    are standard deviations over five-fold splits of the input samples.
    """

    rho_centers: np.ndarray
    z_centers: np.ndarray
    v_grid: np.ndarray  # J, NaN where unsupported
    coefficients: QuarticCoefficients
    uncertainties: tuple
    temperature: float
    n_samples: int
    n_folds: int

    def v_grid_kbt(self):
        return self.v_grid / (BOLTZMANN * self.temperature)

    def save(self, path):
        u = self.uncertainties
        c = self.coefficients
        with open(path, "w") as fh:
            fh.write(f"k_z={c.k_z!r}\n")
            fh.write(f"k_z_err={u[0]!r}\n")
            fh.write(f"k_rho_z={c.k_rho_z!r}\n")
            fh.write(f"k_rho_z_err={u[1]!r}\n")
            fh.write(f"k_rho={c.k_rho!r}\n")
            fh.write(f"k_rho_err={u[2]!r}\n")
            fh.write(f"temperature={self.temperature!r}\n")
            fh.write(f"n_samples={self.n_samples}\n")
            fh.write(f"n_folds={self.n_folds}\n")


def _fit_quartic_once(positions, temperature, rho_max, z_max, n_bins, min_count):
    from scipy.ndimage import binary_erosion

    rho = np.hypot(positions[:, 0], positions[:, 1])
    z = positions[:, 2]
    counts, r_edges, z_edges = np.histogram2d(
        rho, z, bins=[n_bins, n_bins], range=[[0.0, rho_max], [-z_max, z_max]]
    )
    rc = 0.5 * (r_edges[:-1] + r_edges[1:])
    zc = 0.5 * (z_edges[:-1] + z_edges[1:])
    rr, zz = np.meshgrid(rc, zc, indexing="ij")
    mask = counts >= min_count
    # bins at the support edge are partially covered (domain walls, range
    # clipping) and bias the inverted potential; keep interior bins only.
    # the rho = 0 column is a true interior boundary, so pad it as populated.
    padded = np.concatenate([mask[:1], mask], axis=0)
    mask = binary_erosion(padded, structure=np.array(
        [[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool))[1:]
    if mask.sum() < 8:
        raise ValueError("too few populated bins to constrain the quartic model")
    # counts ~ exp(-V/kBT) * 2 pi rho drho dz: divide out the radial measure
    v = -BOLTZMANN * temperature * (np.log(counts[mask]) - np.log(rr[mask]))
    design = np.column_stack([
        0.5 * zz[mask] ** 2,
        -(rr[mask] ** 2) * zz[mask] ** 2,
        0.25 * rr[mask] ** 4,
        np.ones(int(mask.sum())),
    ])
    weights = np.sqrt(counts[mask])  # var(ln n) ~ 1/n
    a = design * weights[:, None]
    scale = np.linalg.norm(a, axis=0)
    if np.any(scale == 0.0):
        raise ValueError("support too narrow to constrain the quartic terms")
    sol, _, rank, sv = np.linalg.lstsq(a / scale, v * weights, rcond=None)
    if rank < 4 or sv[-1] / sv[0] < 1e-10:
        raise ValueError("ill-conditioned reconstruction: support too narrow")
    sol = sol / scale
    v_grid = np.full(counts.shape, np.nan)
    v_grid[mask] = v
    v_grid -= np.nanmin(v_grid)
    return sol[:3], (rc, zc, v_grid)


def reconstruct_potential(
    samples,
    temperature: float,
    n_bins: int = 40,
    n_folds: int = 5,
    min_count: int = 20,
    support_quantile: float = 0.995,
) -> PotentialReconstruction:
    """Fit the quartic trap model to the Boltzmann-inverted sample density.

    samples is an (N, 3) array of positions.  The (rho, z) histogram is
    inverted to a potential surface, and the three quartic strengths are
    obtained by count-weighted linear least squares over the populated
    bins.  Uncertainties are the standard deviation of the per-fold
    estimates over `n_folds` contiguous splits of the samples.
    """
    pos = np.asarray(samples, dtype=float)
    if isinstance(samples, Trajectory):
        pos = samples.positions
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ValueError("samples must have shape (N, 3)")
    if len(pos) < 1000:
        raise ValueError("need at least 1000 samples for a reconstruction")
    if temperature <= 0:
        raise ValueError("temperature must be positive")

    rho = np.hypot(pos[:, 0], pos[:, 1])
    rho_max = float(np.quantile(rho, support_quantile))
    z_max = float(np.quantile(np.abs(pos[:, 2]), support_quantile))

    coef, (rc, zc, v_grid) = _fit_quartic_once(
        pos, temperature, rho_max, z_max, n_bins, min_count
    )
    fold_coefs = []
    for fold in np.array_split(pos, n_folds):
        try:
            fc, _ = _fit_quartic_once(fold, temperature, rho_max, z_max,
                                      n_bins, max(min_count // n_folds, 4))
            fold_coefs.append(fc)
        except ValueError:
            continue
    if len(fold_coefs) >= 2:
        sigma = tuple(float(s) for s in np.std(np.array(fold_coefs), axis=0, ddof=1))
    else:
        sigma = (math.nan, math.nan, math.nan)

    return PotentialReconstruction(
        rho_centers=rc,
        z_centers=zc,
        v_grid=v_grid,
        coefficients=QuarticCoefficients(*coef),
        uncertainties=sigma,
        temperature=temperature,
        n_samples=len(pos),
        n_folds=n_folds,
    )


@dataclass(frozen=True)
class NaSweepResult:
    """Per-NA divergences and corner frequencies from a sweep, plus the
    maximum-likelihood NA and its corner-frequency cross-check."""

    na_values: np.ndarray
    kl: np.ndarray
    fc: np.ndarray
    fc_err: np.ndarray
    valid: np.ndarray
    argmin_na: float
    fc_compatible: np.ndarray
    fc_interval: tuple | None
    intersection: np.ndarray

    def save(self, path):
        with open(path, "w") as fh:
            fh.write("na kl fc fc_err valid\n")
            for i, na in enumerate(self.na_values.tolist()):
                fh.write(
                    f"{na!r} {float(self.kl[i])!r} {float(self.fc[i])!r} "
                    f"{float(self.fc_err[i])!r} {int(self.valid[i])}\n"
                )
            fh.write(f"# argmin_na={self.argmin_na!r}\n")
            if self.fc_interval is not None:
                fh.write(f"# fc_interval={self.fc_interval[0]!r} {self.fc_interval[1]!r}\n")


def _target_marginals(target, pseudocount=0.0):
    if isinstance(target, Trajectory):
        x, y = target.positions[:, 0], target.positions[:, 1]
    else:
        x, y = target
    return (
        histogram_pdf(x, bins="fd", pseudocount=pseudocount),
        histogram_pdf(y, bins="fd", pseudocount=pseudocount),
    )


def _sweep_one_na(args):
    (na, beam_template, particle, dt, n_steps, n_reps, seed, burn_in,
     target_edges_x, target_edges_y, boundary, domain_bound, q_pseudocount,
     psd_nperseg) = args
    beam = beam_template.with_na(na)
    coeffs = quartic_coefficients(beam, particle)
    cfg = SimConfig(
        particle=particle, dt=dt, n_steps=n_steps, force_model="quartic",
        coefficients=coeffs, seed=seed, boundary=boundary,
        domain_bound=domain_bound,
    )
    seeds = np.random.SeedSequence(seed).generate_state(n_reps)
    runs = [simulate(cfg.with_seed(int(s))) for s in seeds]
    survivors = [t for t in runs if t.escape is None]
    if not survivors:
        return dict(na=na, valid=False, kl=math.inf, fc=math.nan, fc_err=math.nan)

    pooled = pooled_positions(survivors, burn_in=burn_in)
    kls = []
    for axis, edges in ((0, target_edges_x), (1, target_edges_y)):
        counts, _ = np.histogram(pooled[:, axis], bins=edges)
        counts = counts.astype(float)
        counts[counts == 0.0] = q_pseudocount
        q = EmpiricalPdf(
            bin_edges=edges,
            density=counts / float(np.sum(counts * np.diff(edges))),
            n_samples=len(pooled),
            pseudocount=q_pseudocount,
        )
        kls.append(q)

    fcs = []
    for t in survivors:
        try:
            sub = Trajectory(dt=t.dt, positions=t.positions[burn_in:], seed=t.seed)
            fcs.append(fit_lorentzian(estimate_psd(sub, axis="x", nperseg=psd_nperseg)).f_c)
        except (FitError, ValueError):
            continue
    fc = float(np.mean(fcs)) if len(fcs) >= 3 else math.nan
    fc_err = float(np.std(fcs, ddof=1)) if len(fcs) >= 3 else math.nan
    return dict(na=na, valid=True, q_x=kls[0], q_y=kls[1], fc=fc, fc_err=fc_err)


def estimate_na(
    target,
    na_values,
    particle: ParticleMedium,
    beam_template: BeamParams,
    dt: float,
    n_steps: int,
    n_reps: int = 4,
    seed: int = 0,
    target_fc: tuple | None = None,
    burn_in: int = 200,
    boundary: str = "absorb",
    domain_bound: float | None = None,
    q_pseudocount: float = 0.5,
    psd_nperseg: int | None = None,
    n_jobs: int = 1,
    common_random_numbers: bool = True,
) -> NaSweepResult:
    """Locate the trap NA by sweeping simulations against a target ensemble.

    For every NA in the grid, quartic-trap trajectories are simulated with
    the template beam and particle, and the KL divergence
    D(target || simulation), averaged over the x and y marginals, is
    computed on the target's binning with a pseudocount regularizing the
    simulated histogram.  Each NA also yields a corner frequency
    (mean +/- std over repetitions) for the consistency cross-check against
    target_fc = (value, error).  NAs where every repetition escaped are
    marked invalid and excluded from the minimum.

    With common_random_numbers (default) every NA reuses the same noise
    paths, so sampling noise largely cancels out of the NA-to-NA
    comparison and the divergence minimum is far more stable for a given
    simulation budget.  Each simulation still owns an independent
    generator instance, so the sweep parallelizes safely.
    """
    na_values = np.asarray(na_values, dtype=float)
    p_x, p_y = _target_marginals(target)
    if common_random_numbers:
        per_na_seeds = np.full(len(na_values), seed, dtype=np.uint64)
    else:
        per_na_seeds = np.random.SeedSequence(seed).generate_state(len(na_values))
    jobs = [
        (
            float(na), beam_template, particle, dt, n_steps, n_reps,
            int(per_na_seeds[i]), burn_in, p_x.bin_edges, p_y.bin_edges,
            boundary, domain_bound, q_pseudocount, psd_nperseg,
        )
        for i, na in enumerate(na_values)
    ]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            raw = list(pool.map(_sweep_one_na, jobs))
    else:
        raw = [_sweep_one_na(j) for j in jobs]

    kl = np.full(len(na_values), math.inf)
    fc = np.full(len(na_values), math.nan)
    fc_err = np.full(len(na_values), math.nan)
    valid = np.zeros(len(na_values), dtype=bool)
    for i, r in enumerate(raw):
        valid[i] = r["valid"]
        fc[i] = r["fc"]
        fc_err[i] = r["fc_err"]
        if r["valid"]:
            kl[i] = 0.5 * (kl_divergence(p_x, r["q_x"]) + kl_divergence(p_y, r["q_y"]))

    if not np.any(valid):
        raise RuntimeError("every NA in the sweep escaped; no estimate possible")
    argmin_idx = int(np.argmin(np.where(valid, kl, math.inf)))
    argmin_na = float(na_values[argmin_idx])

    if target_fc is not None:
        fc_t, fc_t_err = target_fc
        lo_t, hi_t = fc_t - fc_t_err, fc_t + fc_t_err
        spread = np.where(np.isfinite(fc_err), fc_err, 0.0)
        fc_compatible = (
            valid & np.isfinite(fc)
            & (fc - spread <= hi_t) & (fc + spread >= lo_t)
        )
    else:
        fc_compatible = np.zeros(len(na_values), dtype=bool)
    if np.any(fc_compatible):
        nas = na_values[fc_compatible]
        fc_interval = (float(nas.min()), float(nas.max()))
    else:
        fc_interval = None

    step = float(np.median(np.diff(na_values))) if len(na_values) > 1 else 0.0
    near_argmin = np.abs(na_values - argmin_na) <= step * 1.0001
    intersection = fc_compatible & near_argmin
    return NaSweepResult(
        na_values=na_values, kl=kl, fc=fc, fc_err=fc_err, valid=valid,
        argmin_na=argmin_na, fc_compatible=fc_compatible,
        fc_interval=fc_interval, intersection=intersection,
    )
