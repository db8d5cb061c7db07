"""Emitter ensembles, weighted Purcell distributions and ensemble decay curves.

Each NV contributes two entries, one per orbital excited state.  With
free-space collection an entry is weighted by how strongly the excitation
beam drives it; with collection through the cavity mode the weight is further
multiplied by the entry's own Purcell factor.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize, special, stats

from . import constants
from .emitter import (
    NV_AXES,
    CavityParams,
    CrystalOrientation,
    EmitterSample,
    dipole_axes_batch,
    lorentzian,
)
from .errors import DegenerateDistributionError

FREE_SPACE = "freespace"
WAVEGUIDE = "waveguide"
COLLECTIONS = (FREE_SPACE, WAVEGUIDE)

#: lateral support radius in units of the Airy first-zero radius
SUPPORT_ZEROS = 3.0
#: default time step and window of the lifetime fit, ns
FIT_STEP_NS = 0.1
FIT_WINDOW_NS = 40.0

_CHUNK = 1 << 15
_J11 = float(special.jn_zeros(1, 1)[0])


def airy_intensity(x):
    """[2 J1(x) / x]^2 with the x -> 0 limit."""
    x = np.asarray(x, dtype=float)
    safe = np.where(x == 0.0, 1.0, x)
    return np.where(x == 0.0, 1.0, (2.0 * special.j1(safe) / safe) ** 2)


@lru_cache(maxsize=None)
def airy_half_max_argument() -> float:
    """x at which the Airy intensity falls to 1/2."""
    return optimize.brentq(lambda x: float(airy_intensity(x)) - 0.5, 1.0, 2.5, xtol=1e-15)


def airy_profile(r_nm, fwhm_nm: float):
    """Airy intensity at lateral distance ``r_nm`` for a spot of the given FWHM."""
    return airy_intensity(np.asarray(r_nm, dtype=float) * airy_half_max_argument() / (0.5 * fwhm_nm))


def airy_first_zero_nm(fwhm_nm: float) -> float:
    return _J11 * 0.5 * fwhm_nm / airy_half_max_argument()


@dataclass(frozen=True)
class EnsembleSpec:
    """Distributions of NV position, orientation and detuning.

    ``footprint`` = ``(r_inner, r_outer)`` restricts NVs to the top of the
    diamond pedestal under the device; ``None`` leaves the surface unbounded.
    ``detuning_sigma`` = 0 puts every transition on resonance; otherwise
    detunings are drawn from N(0, sigma^2) in rad/ns.
    """

    depth_mean_nm: float = 15.0
    depth_sigma_nm: float = 5.0
    fwhm_nm: float = 500.0
    center_nm: tuple[float, float] = (0.0, 0.0)
    excitation_polarization: tuple[float, float, float] = (1.0, 0.0, 0.0)
    footprint: tuple[float, float] | None = None
    detuning_sigma: float = 0.0
    sample_count: int = 100_000
    seed: int = 0
    in_plane_angle: float = 0.0
    gamma0: float = constants.GAMMA0_PER_NS
    gamma0_zpl: float = constants.GAMMA0_ZPL_PER_NS

    def __post_init__(self):
        if not self.depth_sigma_nm > 0:
            raise ValueError("depth_sigma must be positive")
        if not self.fwhm_nm > 0:
            raise ValueError("fwhm must be positive")
        if int(self.sample_count) != self.sample_count or self.sample_count < 1:
            raise ValueError("sample_count must be a positive integer")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.detuning_sigma < 0:
            raise ValueError("detuning_sigma must be non-negative")
        pol = np.asarray(self.excitation_polarization, dtype=float)
        if not np.linalg.norm(pol) > 0:
            raise ValueError("excitation polarization must be nonzero")
        object.__setattr__(self, "excitation_polarization", tuple(pol / np.linalg.norm(pol)))
        object.__setattr__(self, "center_nm", tuple(float(v) for v in self.center_nm))
        if self.footprint is not None:
            lo, hi = (float(v) for v in self.footprint)
            if not 0 <= lo < hi:
                raise ValueError("footprint must satisfy 0 <= r_inner < r_outer")
            object.__setattr__(self, "footprint", (lo, hi))

    @property
    def support_radius_nm(self) -> float:
        return SUPPORT_ZEROS * airy_first_zero_nm(self.fwhm_nm)

    @property
    def orientation(self) -> CrystalOrientation:
        return CrystalOrientation(self.in_plane_angle)

    def depth_distribution(self):
        a = -self.depth_mean_nm / self.depth_sigma_nm
        return stats.truncnorm(a, np.inf, loc=self.depth_mean_nm, scale=self.depth_sigma_nm)


@dataclass(frozen=True, eq=False)
class EmitterEnsemble(Sequence):
    """Sampled NVs in array form.

    Indexing yields ``(EmitterSample, base_weight)`` pairs; entry ``2k + i``
    is excited state ``i + 1`` of NV ``k``.
    """

    positions: np.ndarray  # (n, 3) lab frame
    nv_axes: np.ndarray  # (n, 3) crystal frame
    betas: np.ndarray  # (n,)
    detunings: np.ndarray  # (n, 2) rad/ns
    base_weights: np.ndarray  # (n, 2)
    dipoles: np.ndarray  # (n, 2, 3) crystal frame
    orientation: CrystalOrientation = field(default_factory=CrystalOrientation)
    gamma0: float = constants.GAMMA0_PER_NS
    gamma0_zpl: float = constants.GAMMA0_ZPL_PER_NS

    @property
    def n_emitters(self) -> int:
        return len(self.positions)

    def __len__(self) -> int:
        return 2 * self.n_emitters

    def __getitem__(self, index):
        if isinstance(index, slice):
            return [self[i] for i in range(*index.indices(len(self)))]
        if index < 0:
            index += len(self)
        if not 0 <= index < len(self):
            raise IndexError(index)
        k, i = divmod(index, 2)
        sample = EmitterSample(
            position=tuple(self.positions[k]),
            nv_axis=tuple(self.nv_axes[k]),
            beta=float(self.betas[k]),
            detuning=float(self.detunings[k, i]),
            gamma0=self.gamma0,
            gamma0_zpl=self.gamma0_zpl,
            excited_state=i + 1,
            orientation=self.orientation,
        )
        return sample, float(self.base_weights[k, i])

    def dipoles_lab(self) -> np.ndarray:
        return self.dipoles @ self.orientation.matrix.T


def _lateral_positions(spec: EnsembleSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """Area-uniform points in the support disk, restricted to the footprint."""
    cx, cy = spec.center_nm
    r_sup = spec.support_radius_nm
    if spec.footprint is not None:
        lo, hi = spec.footprint
        d = math.hypot(cx, cy)
        if d - r_sup >= hi or d + r_sup <= lo:
            raise DegenerateDistributionError("excitation support does not overlap the NV footprint")
    out = np.empty((0, 2))
    while len(out) < n:
        need = n - len(out)
        batch = max(need, 1024) if spec.footprint is None else max(4 * need, 4096)
        rho = r_sup * np.sqrt(rng.random(batch))
        phi = 2.0 * np.pi * rng.random(batch)
        xy = np.column_stack([cx + rho * np.cos(phi), cy + rho * np.sin(phi)])
        if spec.footprint is not None:
            r = np.hypot(xy[:, 0], xy[:, 1])
            xy = xy[(r >= spec.footprint[0]) & (r <= spec.footprint[1])]
        out = np.vstack([out, xy[:need]])
    return out


def sample_ensemble(spec: EnsembleSpec) -> EmitterEnsemble:
    """Draw ``spec.sample_count`` NVs; identical seeds give identical ensembles."""
    rng = np.random.default_rng(int(spec.seed))
    n = int(spec.sample_count)
    depth = spec.depth_distribution().rvs(size=n, random_state=rng)
    lateral = _lateral_positions(spec, rng, n)
    axes = NV_AXES[rng.integers(0, 4, size=n)]
    betas = 2.0 * np.pi * rng.random(n)
    if spec.detuning_sigma > 0:
        detunings = rng.normal(0.0, spec.detuning_sigma, size=(n, 2))
    else:
        detunings = np.zeros((n, 2))

    positions = np.column_stack([lateral, -depth])
    mu1, mu2 = dipole_axes_batch(axes, betas)
    dipoles = np.stack([mu1, mu2], axis=1)
    e_exc = np.asarray(spec.excitation_polarization)
    r_lat = np.hypot(lateral[:, 0] - spec.center_nm[0], lateral[:, 1] - spec.center_nm[1])
    weights = airy_profile(r_lat, spec.fwhm_nm)[:, None] * (dipoles @ e_exc) ** 2
    return EmitterEnsemble(
        positions, axes, betas, detunings, weights, dipoles, spec.orientation, spec.gamma0, spec.gamma0_zpl
    )


# ---------------------------------------------------------------------------
# weighted Purcell distributions


@dataclass(frozen=True, eq=False)
class PurcellDistribution:
    """Entries (zeta, weight) of G(zeta); ``group`` labels the NV of each entry."""

    zeta: np.ndarray
    weight: np.ndarray
    collection: str
    group: np.ndarray | None = None

    def __post_init__(self):
        if self.collection not in COLLECTIONS:
            raise ValueError(f"collection must be one of {COLLECTIONS}")
        z = np.asarray(self.zeta, dtype=float)
        w = np.asarray(self.weight, dtype=float)
        if z.shape != w.shape or z.ndim != 1:
            raise ValueError("zeta and weight must be 1-D arrays of equal length")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        object.__setattr__(self, "zeta", z)
        object.__setattr__(self, "weight", w)
        if self.group is not None:
            object.__setattr__(self, "group", np.asarray(self.group))

    @classmethod
    def from_entries(cls, entries, collection: str = FREE_SPACE) -> "PurcellDistribution":
        entries = list(entries)
        z = np.array([e[0] for e in entries], dtype=float)
        w = np.array([e[1] for e in entries], dtype=float)
        return cls(z, w, collection)

    @property
    def total_weight(self) -> float:
        return math.fsum(self.weight)

    @property
    def degenerate(self) -> bool:
        return not self.total_weight > 0.0

    def histogram(self, edges=None, bins: int = 60):
        """Bin edges and the weight fraction falling in each bin."""
        if self.degenerate:
            raise DegenerateDistributionError("distribution has zero total weight")
        if edges is None:
            top = float(np.max(self.zeta)) if len(self.zeta) else 1.0
            edges = np.linspace(0.0, max(top, 1e-12) * (1 + 1e-9), bins + 1)
        edges = np.asarray(edges, dtype=float)
        counts, _ = np.histogram(self.zeta, bins=edges, weights=self.weight)
        return edges, counts / self.total_weight


def purcell_distribution(
    samples,
    cavity,
    params: CavityParams,
    collection: str = FREE_SPACE,
    workers: int = 1,
) -> PurcellDistribution:
    """G(zeta) for an :class:`EmitterEnsemble` or a list of ``(EmitterSample, weight)``.

    ``cavity`` is anything with a ``sample(points)`` method returning the
    normalized complex field; ``params.e_max`` must be set.
    """
    if collection not in COLLECTIONS:
        raise ValueError(f"collection must be one of {COLLECTIONS}")
    zeta, base, group = _purcell_entries(samples, cavity, params, workers)
    weight = base * zeta if collection == WAVEGUIDE else base
    return PurcellDistribution(zeta, weight, collection, group)


def _purcell_entries(samples, cavity, params, workers=1):
    if params.e_max is None:
        raise ValueError("CavityParams.e_max is required; build it with cavity_params()")
    if isinstance(samples, EmitterEnsemble):
        n = samples.n_emitters
        if n == 0:
            raise ValueError("no samples")
        pos = np.repeat(samples.positions, 2, axis=0)
        dip = samples.dipoles_lab().reshape(-1, 3)
        det = samples.detunings.reshape(-1)
        base = samples.base_weights.reshape(-1)
        group = np.repeat(np.arange(n), 2)
    else:
        items = list(samples)
        if not items:
            raise ValueError("no samples")
        pos = np.array([s.position for s, _ in items], dtype=float)
        dip = np.array([s.dipole_lab for s, _ in items], dtype=float)
        det = np.array([s.detuning for s, _ in items], dtype=float)
        base = np.array([w for _, w in items], dtype=float)
        group = np.arange(len(items))

    pref = params.peak_purcell * (params.n_c / params.n_d) / params.e_max**2
    starts = range(0, len(pos), _CHUNK)

    def work(start):
        sl = slice(start, start + _CHUNK)
        e = cavity.sample(pos[sl])
        proj = np.einsum("ij,ij->i", dip[sl], e)
        return pref * (proj.real**2 + proj.imag**2) * lorentzian(det[sl], params.kappa)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    return np.concatenate(parts), base, group


def mean_purcell(dist: PurcellDistribution) -> float:
    """Weight-normalized mean of zeta."""
    total = dist.total_weight
    if not total > 0.0:
        raise DegenerateDistributionError(f"{dist.collection} distribution has zero total weight")
    return math.fsum(dist.weight * dist.zeta) / total


def mean_purcell_error(dist: PurcellDistribution) -> float:
    """Standard error of :func:`mean_purcell` as a ratio estimator over NVs.

    Entries sharing a ``group`` (the two transitions of one NV) are summed
    before the variance is taken, since they share a position.
    """
    mean = mean_purcell(dist)
    group = dist.group if dist.group is not None else np.arange(len(dist.zeta))
    _, inv = np.unique(group, return_inverse=True)
    num = np.bincount(inv, weights=dist.weight * dist.zeta)
    den = np.bincount(inv, weights=dist.weight)
    n = len(den)
    if n < 2:
        return math.inf
    resid = num - mean * den
    return math.sqrt(math.fsum(resid**2) / (n * (n - 1))) / (math.fsum(den) / n)


# ---------------------------------------------------------------------------
# decay curves


@dataclass(frozen=True, eq=False)
class DecayCurve:
    times: np.ndarray
    intensities: np.ndarray

    def is_non_increasing(self) -> bool:
        return bool(np.all(np.diff(self.intensities) <= 0.0))

    def is_log_convex(self, tol: float = 1e-12) -> bool:
        """Second differences of log I are >= 0 on a uniform grid."""
        y = np.log(self.intensities)
        return bool(np.all(y[2:] - 2 * y[1:-1] + y[:-2] >= -tol))


def fit_time_grid(window_ns: float = FIT_WINDOW_NS, step_ns: float = FIT_STEP_NS) -> np.ndarray:
    n = int(round(window_ns / step_ns))
    return np.arange(n + 1) * step_ns


def decay_curve(dist: PurcellDistribution, gamma0: float, gamma0_zpl: float, times=None) -> DecayCurve:
    """Normalized mixture I(t) = sum_j w_j exp(-(gamma0 + zeta_j gamma0_zpl) t) / sum_j w_j."""
    t = fit_time_grid() if times is None else np.asarray(times, dtype=float)
    if t.ndim != 1 or len(t) == 0 or t[0] != 0.0:
        raise ValueError("times must be a 1-D grid starting at 0")
    total = dist.total_weight
    if not total > 0.0:
        raise DegenerateDistributionError(f"{dist.collection} distribution has zero total weight")
    acc = np.zeros_like(t)
    keep = dist.weight > 0
    z, w = dist.zeta[keep], dist.weight[keep]
    for start in range(0, len(z), 4096):
        zz, ww = z[start : start + 4096], w[start : start + 4096]
        acc += np.sum(ww[:, None] * np.exp(-np.outer(zz * gamma0_zpl, t)), axis=0)
    return DecayCurve(t, np.exp(-gamma0 * t) * acc / total)


@dataclass(frozen=True)
class ExponentialFit:
    tau_ns: float
    rms_residual: float
    window_ns: float
    n_points: int


def fit_single_exponential(curve: DecayCurve, window_ns: float = FIT_WINDOW_NS) -> ExponentialFit:
    """Least-squares line through log I(t) for 0 <= t <= window."""
    t = curve.times
    sel = t <= window_ns * (1 + 1e-12)
    if t[-1] < window_ns * (1 - 1e-12):
        raise ValueError(f"curve ends at {t[-1]} ns, before the {window_ns} ns fit window")
    y = curve.intensities[sel]
    if np.any(y <= 0.0):
        raise ValueError("decay curve has non-positive intensities inside the fit window")
    ts = t[sel]
    logy = np.log(y)
    A = np.column_stack([ts, np.ones_like(ts)])
    (slope, intercept), *_ = np.linalg.lstsq(A, logy, rcond=None)
    resid = logy - (slope * ts + intercept)
    return ExponentialFit(-1.0 / slope, float(np.sqrt(np.mean(resid**2))), float(window_ns), int(sel.sum()))


# ---------------------------------------------------------------------------
# deterministic quadrature oracle


def _orientation_moments(spec: EnsembleSpec, n_beta: int):
    """Sums over axes, beta and both transitions of (mu.e)^2 times powers of the lab dipole."""
    betas = 2.0 * np.pi * np.arange(n_beta) / n_beta
    axes = np.repeat(NV_AXES, n_beta, axis=0)
    bb = np.tile(betas, 4)
    mu1, mu2 = dipole_axes_batch(axes, bb)
    mu = np.vstack([mu1, mu2])
    a = (mu @ np.asarray(spec.excitation_polarization)) ** 2
    lab = mu @ spec.orientation.matrix.T
    s0 = math.fsum(a)
    s2 = np.einsum("n,na,nb->ab", a, lab, lab)
    s4 = np.einsum("n,na,nb,nc,nd->abcd", a, lab, lab, lab, lab)
    return s0, s2, s4


def _lateral_rule(spec: EnsembleSpec, n_radial: int, n_azimuth: int):
    """Lateral nodes and area weights covering the NV support, times the Airy weight."""
    xg, wg = np.polynomial.legendre.leggauss(n_radial)
    phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
    dphi = 2.0 * np.pi / n_azimuth
    cx, cy = spec.center_nm
    r_sup = spec.support_radius_nm
    if spec.footprint is not None:
        lo, hi = spec.footprint
        rho = lo + 0.5 * (hi - lo) * (xg + 1.0)
        wr = 0.5 * (hi - lo) * wg * rho
        R, P = np.meshgrid(rho, phi, indexing="ij")
        x, y = R * np.cos(P), R * np.sin(P)
        w = np.outer(wr, np.full(n_azimuth, dphi))
        inside = np.hypot(x - cx, y - cy) <= r_sup
        w = w * inside
    else:
        rho = 0.5 * r_sup * (xg + 1.0)
        wr = 0.5 * r_sup * wg * rho
        R, P = np.meshgrid(rho, phi, indexing="ij")
        x, y = cx + R * np.cos(P), cy + R * np.sin(P)
        w = np.outer(wr, np.full(n_azimuth, dphi))
    airy = airy_profile(np.hypot(x - cx, y - cy), spec.fwhm_nm)
    keep = (w * airy).ravel() > 0
    return x.ravel()[keep], y.ravel()[keep], (w * airy).ravel()[keep]


def _depth_rule(spec: EnsembleSpec, n_depth: int):
    dist = spec.depth_distribution()
    top = spec.depth_mean_nm + 10.0 * spec.depth_sigma_nm
    xg, wg = np.polynomial.legendre.leggauss(n_depth)
    d = 0.5 * top * (xg + 1.0)
    w = 0.5 * top * wg * dist.pdf(d)
    return d, w / w.sum()


def mean_purcell_quadrature(
    spec: EnsembleSpec,
    cavity,
    params: CavityParams,
    collection: str = FREE_SPACE,
    n_beta: int = 16,
    n_radial: int = 48,
    n_azimuth: int = 256,
    n_depth: int = 24,
) -> float:
    """<F_p> by tensor-product quadrature over depth, lateral position, axis and beta.

    The Purcell factor is quadratic in the dipole, so orientation averages
    reduce to contractions of dipole moment tensors with spatial integrals of
    M = Re(E E^H) (free space) and M (x) M (waveguide).  Only resonant
    ensembles are supported.
    """
    if collection not in COLLECTIONS:
        raise ValueError(f"collection must be one of {COLLECTIONS}")
    if spec.detuning_sigma != 0.0:
        raise ValueError("the quadrature oracle supports resonant ensembles only")
    if params.e_max is None:
        raise ValueError("CavityParams.e_max is required")
    s0, s2, s4 = _orientation_moments(spec, n_beta)
    x, y, wl = _lateral_rule(spec, n_radial, n_azimuth)
    d, wd = _depth_rule(spec, n_depth)

    t2 = np.zeros(9)
    t4 = np.zeros((9, 9))
    w0 = 0.0
    for dk, wk in zip(d, wd):
        pts = np.column_stack([x, y, np.full_like(x, -dk)])
        e = cavity.sample(pts)
        m = np.einsum("na,nb->nab", e, np.conj(e)).real.reshape(-1, 9)
        w = wl * wk
        w0 += math.fsum(w)
        t2 += w @ m
        if collection == WAVEGUIDE:
            t4 += (m * w[:, None]).T @ m
    t2 = t2.reshape(3, 3)
    t4 = t4.reshape(3, 3, 3, 3)

    c = params.peak_purcell * (params.n_c / params.n_d) / params.e_max**2
    first = float(np.einsum("ab,ab->", s2, t2))
    if collection == FREE_SPACE:
        return c * first / (s0 * w0)
    if not first > 0.0:
        raise DegenerateDistributionError("waveguide distribution has zero total weight")
    return c * float(np.einsum("abcd,abcd->", s4, t4)) / first
