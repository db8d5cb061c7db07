"""Analytic whispering-gallery surrogate for FDTD cavity modes.

The mode is built in the effective-index approximation:

* vertically, the fundamental TE or TM mode of the three-layer
  ambient / core / substrate slab at the design wavelength;
* radially, the lowest-order solution of the 2-D scalar resonance problem with
  index ``n_eff`` inside the core annulus and ``n_ambient`` outside, using
  ``J_m``/``Y_m`` in the core, ``I_m`` in the central hole and ``K_m`` outside
  (psi continuous at both walls, together with dpsi/dr for TM or
  dpsi/dr / eps for TE);
* azimuthally, ``exp(i m phi)`` or ``cos(m phi + phi0)``.

TE modes are derived from an Hz potential, which puts the dominant field in
the radial component at the antinodes.  TM modes carry only Ez.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import interpolate, optimize, special

from . import constants
from .errors import GeometryError, NoGuidedModeError, OutOfBoundsError
from .field import FieldGrid, GridGeometry, normalize_unit_energy

#: minimum evanescent margin under the slab required of a surrogate grid
MIN_BOTTOM_MARGIN_NM = 300.0


@dataclass(frozen=True)
class SurrogateWgmSpec:
    polarization: str = "TE"
    m: int = 21
    outer_radius_nm: float = 900.0
    inner_radius_nm: float = 620.0
    thickness_nm: float = 150.0
    n_core: float = constants.N_GAP
    n_substrate: float = constants.N_DIAMOND
    n_ambient: float = constants.N_AIR
    wavelength_nm: float = constants.ZPL_WAVELENGTH_NM
    standing_wave: bool = True
    standing_wave_phase: float = 0.0
    # substrate etched to the device footprint down to this depth; 0 for a flat substrate
    pedestal_height_nm: float = 600.0

    def __post_init__(self):
        pol = str(self.polarization).upper()
        object.__setattr__(self, "polarization", pol)
        if pol not in ("TE", "TM"):
            raise ValueError(f"polarization must be TE or TM, got {self.polarization!r}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"azimuthal order must be a positive integer, got {self.m}")
        object.__setattr__(self, "m", int(self.m))
        if not 0.0 <= self.inner_radius_nm < self.outer_radius_nm:
            raise ValueError("need 0 <= inner_radius < outer_radius")
        if self.thickness_nm <= 0 or self.wavelength_nm <= 0:
            raise ValueError("thickness and wavelength must be positive")
        if self.pedestal_height_nm < 0:
            raise ValueError("pedestal height must be non-negative")
        if not self.n_core > self.n_substrate > self.n_ambient >= 1.0:
            raise ValueError("need n_core > n_substrate > n_ambient >= 1")

    @property
    def is_ring(self) -> bool:
        return self.inner_radius_nm > 0.0


def d2_ring_spec(**overrides) -> SurrogateWgmSpec:
    """1.8 um outer diameter, 280 nm wide, 150 nm thick GaP ring (TE, m=21)."""
    base = dict(outer_radius_nm=900.0, inner_radius_nm=620.0, thickness_nm=150.0, m=21)
    base.update(overrides)
    return SurrogateWgmSpec(**base)


# ---------------------------------------------------------------------------
# vertical (slab) problem


@dataclass(frozen=True)
class SlabMode:
    polarization: str
    n_eff: float
    thickness_nm: float
    n_core: float
    n_substrate: float
    n_ambient: float
    wavelength_nm: float
    kappa: float  # transverse wavenumber in the core, 1/nm
    gamma_substrate: float  # decay constant below the slab, 1/nm
    gamma_ambient: float  # decay constant above the slab, 1/nm
    phase_substrate: float

    def profile(self, z) -> np.ndarray:
        """Dominant-component amplitude vs z (slab bottom at z=0, top at z=t).

        TE: tangential E (continuous).  TM: normal E = H/n^2 (jumps at interfaces).
        """
        z = np.asarray(z, dtype=float)
        t = self.thickness_nm
        ph = self.phase_substrate
        core_top = math.cos(self.kappa * t - ph)
        f = np.where(
            z < 0.0,
            math.cos(ph) * np.exp(self.gamma_substrate * np.minimum(z, 0.0)),
            np.where(
                z <= t,
                np.cos(self.kappa * z - ph),
                core_top * np.exp(-self.gamma_ambient * np.maximum(z - t, 0.0)),
            ),
        )
        if self.polarization == "TM":
            f = f / self.index(z) ** 2
        return f

    def exterior_profile(self, z) -> np.ndarray:
        """Profile used beside the device, where no horizontal interface exists.

        For TE this is :meth:`profile`.  For TM it is H(z)/n_core^2, which
        matches the in-slab field across the sidewall and stays continuous
        above and below it.
        """
        f = self.profile(z)
        if self.polarization == "TM":
            f = f * (self.index(z) / self.n_core) ** 2
        return f

    def index(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.where(
            z < 0.0, self.n_substrate, np.where(z <= self.thickness_nm, self.n_core, self.n_ambient)
        )


def solve_slab_mode(
    thickness_nm: float,
    n_core: float,
    n_substrate: float,
    n_ambient: float,
    wavelength_nm: float,
    polarization: str = "TE",
) -> SlabMode:
    """Fundamental guided mode of an asymmetric three-layer slab."""
    k0 = constants.vacuum_wavenumber(wavelength_nm)
    pol = polarization.upper()
    p_sub = 1.0 if pol == "TE" else (n_core / n_substrate) ** 2
    p_amb = 1.0 if pol == "TE" else (n_core / n_ambient) ** 2

    def parts(n):
        kappa = k0 * math.sqrt(max(n_core**2 - n**2, 0.0))
        g_sub = k0 * math.sqrt(max(n**2 - n_substrate**2, 0.0))
        g_amb = k0 * math.sqrt(max(n**2 - n_ambient**2, 0.0))
        return kappa, g_sub, g_amb

    def dispersion(n):
        kappa, g_sub, g_amb = parts(n)
        return (
            kappa * thickness_nm
            - math.atan2(p_sub * g_sub, kappa)
            - math.atan2(p_amb * g_amb, kappa)
        )

    lo = n_substrate * (1.0 + 1e-13)
    hi = n_core * (1.0 - 1e-13)
    if dispersion(lo) <= 0.0:
        raise NoGuidedModeError(
            f"{pol} slab of {thickness_nm} nm (n={n_core} on {n_substrate}) has no guided "
            f"mode at {wavelength_nm} nm"
        )
    n_eff = optimize.brentq(dispersion, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    kappa, g_sub, g_amb = parts(n_eff)
    return SlabMode(
        polarization=pol,
        n_eff=n_eff,
        thickness_nm=thickness_nm,
        n_core=n_core,
        n_substrate=n_substrate,
        n_ambient=n_ambient,
        wavelength_nm=wavelength_nm,
        kappa=kappa,
        gamma_substrate=g_sub,
        gamma_ambient=g_amb,
        phase_substrate=math.atan2(p_sub * g_sub, kappa),
    )


# ---------------------------------------------------------------------------
# radial (in-plane) problem


TABLE_STEP_NM = 0.25


def _kve_d(m, x):
    return -0.5 * (special.kve(m - 1, x) + special.kve(m + 1, x))


def _ive_d(m, x):
    return 0.5 * (special.ive(m - 1, x) + special.ive(m + 1, x))


@dataclass(frozen=True)
class RadialMode:
    """Lowest radial-order solution of the scalar 2-D resonance problem."""

    m: int
    inner_radius_nm: float
    outer_radius_nm: float
    n_inside: float
    n_outside: float
    k_vacuum: float  # resonant vacuum wavenumber, 1/nm
    a_j: float
    a_y: float
    te: bool = False

    @property
    def rho(self) -> float:
        """dpsi/dr jump across the walls: eps_outside / eps_inside for TE, 1 for TM."""
        return (self.n_outside / self.n_inside) ** 2 if self.te else 1.0

    def relative_permittivity(self, r) -> np.ndarray:
        """eps_lateral(r) / n_inside**2."""
        r = np.asarray(r, dtype=float)
        inside = (r <= self.outer_radius_nm) & (r >= self.inner_radius_nm)
        return np.where(inside, 1.0, (self.n_outside / self.n_inside) ** 2)

    @property
    def k_core(self) -> float:
        return self.n_inside * self.k_vacuum

    @property
    def q_clad(self) -> float:
        return self.k_vacuum * math.sqrt(self.n_inside**2 - self.n_outside**2)

    @property
    def resonance_wavelength_nm(self) -> float:
        return 2.0 * math.pi / self.k_vacuum

    def _core(self, r):
        x = self.k_core * r
        m = self.m
        psi = self.a_j * special.jv(m, x)
        dpsi = self.a_j * special.jvp(m, x)
        if self.a_y != 0.0:
            psi = psi + self.a_y * special.yv(m, x)
            dpsi = dpsi + self.a_y * special.yvp(m, x)
        return psi, dpsi * self.k_core

    def psi(self, r) -> tuple[np.ndarray, np.ndarray]:
        """Radial profile and its r-derivative, from a cubic Hermite table.

        Table nodes are exact values; the interpolation error is below 1e-10
        relative. Radii beyond the table fall back to :meth:`psi_exact`.
        """
        r = np.asarray(r, dtype=float)
        r_in, r_out = self.inner_radius_nm, self.outer_radius_nm
        tab = {region: (hi, f_psi, f_dpsi) for region, (_, hi, f_psi, f_dpsi) in self._table.items()}
        far = r > tab["outer"][0]
        masks = {"core": (r >= r_in) & (r <= r_out), "outer": (r > r_out) & ~far, "hole": r < r_in}
        psi = np.zeros_like(r)
        dpsi = np.zeros_like(r)
        for region, sel in masks.items():
            if np.any(sel):
                _, f_psi, f_dpsi = tab[region]
                psi[sel] = f_psi(r[sel])
                dpsi[sel] = f_dpsi(r[sel])
        if np.any(far):
            psi[far], dpsi[far] = self.psi_exact(r[far])
        return psi, dpsi

    def _pieces(self):
        """(lo, hi, region evaluator, Bessel k^2) for each smooth piece of psi."""
        r_in, r_out = self.inner_radius_nm, self.outer_radius_nm
        far = r_out + 60.0 / self.q_clad  # psi has decayed by e^-60 here
        pieces = {"core": (r_in, r_out, self._core, self.k_core**2), "outer": (r_out, far, self._outer, -self.q_clad**2)}
        if r_in > 0.0:
            pieces["hole"] = (0.0, r_in, self._hole, -self.q_clad**2)
        return pieces

    @cached_property
    def _table(self):
        out = {}
        m = self.m
        for name, (lo, hi, region, k2) in self._pieces().items():
            n = max(int(math.ceil((hi - lo) / TABLE_STEP_NM)), 4)
            r = np.linspace(lo, hi, n + 1)
            psi, dpsi = region(r)
            # psi'' from Bessel's equation; zero at the origin for m >= 2
            r_safe = np.where(r > 0.0, r, 1.0)
            d2 = np.where(r > 0.0, -dpsi / r_safe - (k2 - m * m / r_safe**2) * psi, 0.0)
            out[name] = (lo, hi, interpolate.CubicHermiteSpline(r, psi, dpsi), interpolate.CubicHermiteSpline(r, dpsi, d2))
        return out

    def _outer(self, r):
        m, q, r_out = self.m, self.q_clad, self.outer_radius_nm
        p_edge, _ = self._core(np.array([r_out]))
        scale = p_edge[0] / special.kve(m, q * r_out) * np.exp(-q * (r - r_out))
        return scale * special.kve(m, q * r), scale * q * _kve_d(m, q * r)

    def _hole(self, r):
        m, q, r_in = self.m, self.q_clad, self.inner_radius_nm
        p_edge, _ = self._core(np.array([r_in]))
        scale = p_edge[0] / special.ive(m, q * r_in) * np.exp(q * (r - r_in))
        return scale * special.ive(m, q * r), scale * q * _ive_d(m, q * r)

    def psi_exact(self, r) -> tuple[np.ndarray, np.ndarray]:
        """Radial profile and its r-derivative from the Bessel functions."""
        r = np.asarray(r, dtype=float)
        r_in, r_out = self.inner_radius_nm, self.outer_radius_nm
        psi = np.zeros_like(r)
        dpsi = np.zeros_like(r)
        masks = [((r >= r_in) & (r <= r_out), self._core), (r > r_out, self._outer), (r < r_in, self._hole)]
        for sel, region in masks:
            if np.any(sel):
                psi[sel], dpsi[sel] = region(r[sel])
        return psi, dpsi


def _core_coefficients(m, k_core, q, r_in, rho=1.0):
    """(a_j, a_y) for the core solution that matches I_m in the hole."""
    if r_in == 0.0:
        return 1.0, 0.0
    x = k_core * r_in
    i_v = special.ive(m, q * r_in)
    i_d = q * _ive_d(m, q * r_in)
    d_j = rho * k_core * special.jvp(m, x) * i_v - i_d * special.jv(m, x)
    d_y = rho * k_core * special.yvp(m, x) * i_v - i_d * special.yv(m, x)
    return d_y, -d_j


def solve_radial_mode(
    m: int,
    inner_radius_nm: float,
    outer_radius_nm: float,
    n_inside: float,
    n_outside: float,
    te: bool = False,
) -> RadialMode:
    """Find the fundamental radial resonance for azimuthal order ``m``.

    ``psi`` is continuous at the walls.  For TM (Ez) so is ``dpsi/dr``; for TE
    (psi is Hz) it is ``dpsi/dr / eps`` that is continuous, which makes the
    tangential E_phi continuous and lets the normal E_r jump.
    """
    if not n_inside > n_outside:
        raise GeometryError("radial problem needs n_inside > n_outside")
    ratio = math.sqrt(n_inside**2 - n_outside**2) / n_inside
    rho = (n_outside / n_inside) ** 2 if te else 1.0
    r_in, r_out = inner_radius_nm, outer_radius_nm

    def mismatch(k_core):
        q = ratio * k_core
        a_j, a_y = _core_coefficients(m, k_core, q, r_in, rho)
        x = k_core * r_out
        psi = a_j * special.jv(m, x)
        dpsi = a_j * special.jvp(m, x)
        if r_in > 0.0:
            psi = psi + a_y * special.yv(m, x)
            dpsi = dpsi + a_y * special.yvp(m, x)
        return rho * k_core * dpsi * special.kve(m, q * r_out) - psi * q * _kve_d(m, q * r_out)

    x_lo = 0.3 * m + 0.5
    x_hi = m + 12.0 * m ** (1.0 / 3.0) + 12.0
    xs = np.linspace(x_lo, x_hi, 601)  # roots are ~pi apart in x
    ks = xs / r_out
    vals = mismatch(ks)
    sign = np.sign(vals)
    idx = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    if idx.size == 0:
        raise GeometryError(f"no radial resonance found for m={m}")
    i = int(idx[0])
    k_core = optimize.brentq(mismatch, ks[i], ks[i + 1], xtol=1e-16, rtol=4 * np.finfo(float).eps)
    q = ratio * k_core
    a_j, a_y = _core_coefficients(m, k_core, q, r_in, rho)
    # scale so that max |psi| over the core is 1 with a positive peak
    r_fine = np.linspace(r_in, r_out, 2001)
    x = k_core * r_fine
    prof = a_j * special.jv(m, x) + (a_y * special.yv(m, x) if a_y != 0.0 else 0.0)
    peak = prof[np.argmax(np.abs(prof))]
    return RadialMode(
        m=m,
        inner_radius_nm=r_in,
        outer_radius_nm=r_out,
        n_inside=n_inside,
        n_outside=n_outside,
        k_vacuum=k_core / n_inside,
        a_j=float(a_j / peak),
        a_y=float(a_y / peak),
        te=te,
    )


# ---------------------------------------------------------------------------
# full surrogate


@dataclass(frozen=True)
class WgmSolution:
    spec: SurrogateWgmSpec
    slab: SlabMode
    radial: RadialMode
    resonance_wavelength_nm: float
    r_peak_nm: float = field(default=0.0)
    z_peak_nm: float = field(default=0.0)

    def lateral_field(self, x, y) -> np.ndarray:
        """In-plane dependence of the three Cartesian components at z-profile maximum 1."""
        spec = self.spec
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r = np.hypot(x, y)
        phi = np.arctan2(y, x)
        psi, dpsi = self.radial.psi(r)
        m = spec.m
        if spec.standing_wave:
            arg = m * phi + spec.standing_wave_phase
            ang_c, ang_s = np.cos(arg), np.sin(arg)
        else:
            ang_c = np.exp(1j * m * phi)
            ang_s = -1j * ang_c
        out = np.zeros(r.shape + (3,), dtype=np.complex128)
        if spec.polarization == "TE":
            # E = curl(Hz z)/(k eps) with Hz = psi * sin(m phi + phi0)
            k = self.radial.k_core
            rel = self.radial.relative_permittivity(r)
            r_safe = np.where(r > 0.0, r, 1.0)
            e_r = np.where(r > 0.0, m * psi / (k * r_safe * rel), 0.0) * ang_c
            e_phi = -(dpsi / (k * rel)) * ang_s
            cphi, sphi = np.cos(phi), np.sin(phi)
            out[..., 0] = e_r * cphi - e_phi * sphi
            out[..., 1] = e_r * sphi + e_phi * cphi
        else:
            out[..., 2] = psi * ang_c
        return out

    def evaluate(self, points) -> np.ndarray:
        """Unnormalized complex E at ``(n, 3)`` points, as sampled by :func:`surrogate_wgm`."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        spec = self.spec
        r = np.hypot(p[:, 0], p[:, 1])
        in_core = (r <= spec.outer_radius_nm) & (r >= spec.inner_radius_nm)
        vertical = np.where(in_core, self.slab.profile(p[:, 2]), self.slab.exterior_profile(p[:, 2]))
        return self.lateral_field(p[:, 0], p[:, 1]) * vertical[:, None]

    def dominant_radial_profile(self, r) -> np.ndarray:
        psi, _ = self.radial.psi(r)
        if self.spec.polarization == "TE":
            rel = self.radial.relative_permittivity(r)
            return np.abs(self.spec.m * psi / (self.radial.k_core * rel * np.maximum(r, 1e-9)))
        return np.abs(psi)


def resonance_for_order(spec: SurrogateWgmSpec, tol_nm: float = 1e-9) -> tuple[float, SlabMode, RadialMode]:
    """Resonance wavelength of order ``spec.m``, iterating the slab dispersion."""
    lam = spec.wavelength_nm
    for _ in range(100):
        slab = solve_slab_mode(
            spec.thickness_nm, spec.n_core, spec.n_substrate, spec.n_ambient, lam, spec.polarization
        )
        radial = solve_radial_mode(
            spec.m,
            spec.inner_radius_nm,
            spec.outer_radius_nm,
            slab.n_eff,
            spec.n_ambient,
            te=spec.polarization == "TE",
        )
        new = radial.resonance_wavelength_nm
        if abs(new - lam) < tol_nm:
            return new, slab, radial
        lam = new
    return lam, slab, radial


def select_azimuthal_order(spec: SurrogateWgmSpec, target_nm: float | None = None) -> int:
    """Azimuthal order whose fundamental resonance lies nearest ``target_nm``."""
    target = spec.wavelength_nm if target_nm is None else target_nm
    slab = solve_slab_mode(
        spec.thickness_nm, spec.n_core, spec.n_substrate, spec.n_ambient, target, spec.polarization
    )
    cache: dict[int, float] = {}

    def lam(m):
        if m not in cache:
            s = SurrogateWgmSpec(**{**spec.__dict__, "m": m})
            cache[m] = resonance_for_order(s)[0]
        return cache[m]

    m = max(1, int(2 * math.pi * slab.n_eff * spec.outer_radius_nm * 0.8 / target))
    # resonance wavelength decreases with m
    while m > 1 and lam(m) < target:
        m -= 1
    while lam(m) > target:
        m += 1
    below, above = m, max(m - 1, 1)
    return min((below, above), key=lambda mm: (abs(lam(mm) - target), mm))


def solve_wgm(spec: SurrogateWgmSpec) -> WgmSolution:
    """Solve the vertical and radial problems and locate the field maximum."""
    lam_res, _, radial = resonance_for_order(spec)
    slab = solve_slab_mode(
        spec.thickness_nm,
        spec.n_core,
        spec.n_substrate,
        spec.n_ambient,
        spec.wavelength_nm,
        spec.polarization,
    )
    sol = WgmSolution(spec, slab, radial, lam_res)
    r = np.linspace(max(spec.inner_radius_nm, 1.0), spec.outer_radius_nm, 20001)
    r_peak = float(r[np.argmax(sol.dominant_radial_profile(r))])
    z = np.linspace(-50.0, spec.thickness_nm + 50.0, 20001)
    dens = slab.index(z) ** 2 * slab.profile(z) ** 2
    z_peak = float(z[np.argmax(dens)])
    return WgmSolution(spec, slab, radial, lam_res, r_peak, z_peak)


def device_grid(
    spec: SurrogateWgmSpec,
    lateral_spacing_nm: float = 20.0,
    vertical_spacing_nm: float = 5.0,
    lateral_margin_nm: float = 300.0,
    bottom_margin_nm: float = MIN_BOTTOM_MARGIN_NM,
    top_margin_nm: float = 200.0,
    include: list[tuple] | None = None,
    solution: WgmSolution | None = None,
) -> GridGeometry:
    """Grid for a surrogate mode.

    The vertical spacing is adjusted so the slab holds an integer number of
    cells with both interfaces half-way between node planes, and the lateral
    node planes pass through the field maximum on the +x axis.  ``include`` is
    a list of extra ``(lower, upper)`` boxes the grid must cover.
    """
    sol = solution or solve_wgm(spec)
    t = spec.thickness_nm
    n_cells = max(1, round(t / vertical_spacing_nm))
    hz = t / n_cells
    reach = spec.outer_radius_nm + lateral_margin_nm
    lower = np.array([-reach, -reach, -bottom_margin_nm])
    upper = np.array([reach, reach, t + top_margin_nm])
    for lo, hi in include or []:
        lower = np.minimum(lower, lo)
        upper = np.maximum(upper, hi)
    anchor = np.array([sol.r_peak_nm, 0.0, 0.5 * hz])
    return GridGeometry.from_bounds(
        lower, upper, (lateral_spacing_nm, lateral_spacing_nm, hz), anchor=anchor
    )


def surrogate_wgm(
    spec: SurrogateWgmSpec, grid: GridGeometry, solution: WgmSolution | None = None
) -> FieldGrid:
    """Sample the surrogate mode on ``grid``.  The result is not normalized."""
    sol = solution or solve_wgm(spec)
    lower, upper = grid.lower, grid.upper
    r_out = spec.outer_radius_nm
    tol = 1e-6
    if (
        lower[0] > -r_out + tol
        or lower[1] > -r_out + tol
        or upper[0] < r_out - tol
        or upper[1] < r_out - tol
    ):
        raise GeometryError("grid does not enclose the device footprint")
    if lower[2] > -MIN_BOTTOM_MARGIN_NM + tol:
        raise GeometryError(
            f"grid must extend at least {MIN_BOTTOM_MARGIN_NM:g} nm below the slab "
            f"(lowest node plane at z = {lower[2]:g} nm)"
        )
    if upper[2] < spec.thickness_nm:
        raise GeometryError("grid does not reach the top of the slab")

    xs, ys, zs = grid.axes()
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    R = np.hypot(X, Y)
    in_core = (R <= r_out) & (R >= spec.inner_radius_nm)
    lateral = sol.lateral_field(X, Y)
    vertical = np.where(
        in_core[:, :, None], sol.slab.profile(zs)[None, None, :], sol.slab.exterior_profile(zs)[None, None, :]
    )
    e = lateral[:, :, None, :] * vertical[:, :, :, None]
    del lateral, vertical

    eps = np.empty(grid.dims)
    below = zs < 0.0
    eps[:, :, below] = spec.n_substrate**2
    if spec.pedestal_height_nm > 0:
        etched = below & (zs >= -spec.pedestal_height_nm)
        eps[:, :, etched] = np.where(in_core, spec.n_substrate**2, spec.n_ambient**2)[:, :, None]
    slab_z = (zs >= 0.0) & (zs <= spec.thickness_nm)
    eps[:, :, slab_z] = np.where(in_core, spec.n_core**2, spec.n_ambient**2)[:, :, None]
    eps[:, :, zs > spec.thickness_nm] = spec.n_ambient**2

    meta = {
        "m": spec.m,
        "resonance_wavelength_nm": sol.resonance_wavelength_nm,
        "slab_n_eff": sol.slab.n_eff,
        "r_peak_nm": sol.r_peak_nm,
        "z_peak_nm": sol.z_peak_nm,
        "gamma_substrate_per_nm": sol.slab.gamma_substrate,
        "device": "ring" if spec.is_ring else "disk",
    }
    return FieldGrid(
        grid, e, eps, wavelength_nm=spec.wavelength_nm, label=spec.polarization, meta=meta
    )


@dataclass(frozen=True, eq=False)
class SurrogateField:
    """Closed-form evaluation of a surrogate mode with a grid's normalization.

    ``sample`` has the same contract as :meth:`FieldGrid.sample` (points
    outside ``geometry`` raise) but evaluates the analytic field, so the
    normal-component jump at the sidewall is resolved exactly.
    """

    solution: WgmSolution
    geometry: GridGeometry
    scale: float
    wavelength_nm: float
    normalized: bool
    meta: dict = field(default_factory=dict)

    def sample(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.geometry.contains(pts).all():
            raise OutOfBoundsError("sample point outside the field grid")
        out = np.empty((len(pts), 3), dtype=np.complex128)
        for start in range(0, len(pts), 1 << 16):
            chunk = pts[start : start + (1 << 16)]
            out[start : start + len(chunk)] = self.solution.evaluate(chunk)
        return out * self.scale


def normalized_surrogate(
    spec: SurrogateWgmSpec, grid: GridGeometry, solution: WgmSolution | None = None
) -> tuple[FieldGrid, SurrogateField]:
    """Unit-energy surrogate on ``grid`` and its closed-form twin with the same scale."""
    sol = solution or solve_wgm(spec)
    raw = surrogate_wgm(spec, grid, sol)
    cavity = normalize_unit_energy(raw)
    scale = 1.0 / math.sqrt(raw.electric_energy())
    del raw
    twin = SurrogateField(sol, grid, scale, cavity.wavelength_nm, True, dict(cavity.meta))
    return cavity, twin
