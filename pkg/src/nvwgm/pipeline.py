"""Pipeline stages behind the command-line interface.

Each stage takes a resolved :class:`~nvwgm.config.Config` and returns plain
tables (column names plus rows) and a dict of derived values for the
provenance header.  Nothing here touches the filesystem except reading
input field files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import constants
from .config import AUTO, Config
from .coupling import (
    ContactGeometry,
    auto_halflength,
    contact_offset,
    coupling_rates,
    coupling_sweep,
    worker_count,
)
from .emitter import CavityParams, cavity_params
from .ensemble import (
    FREE_SPACE,
    WAVEGUIDE,
    EnsembleSpec,
    PurcellDistribution,
    decay_curve,
    fit_single_exponential,
    fit_time_grid,
    mean_purcell,
    mean_purcell_error,
    purcell_distribution,
    sample_ensemble,
)
from .fiber import MODE_LABELS, FiberMode, normalize_unit_power, solve_fiber_mode
from .field import FieldGrid, load_field_grid, mode_volume, normalize_unit_energy
from .errors import ModeCutoffError
from .surrogate import (
    SurrogateWgmSpec,
    WgmSolution,
    device_grid,
    normalized_surrogate,
    select_azimuthal_order,
    solve_wgm,
)


@dataclass
class Table:
    columns: list[str]
    rows: list[tuple]


@dataclass
class CavitySetup:
    grid: FieldGrid  # unit-energy field on its grid
    sampler: object  # grid itself, or the closed-form surrogate twin
    params: CavityParams
    spec: SurrogateWgmSpec | None = None
    solution: WgmSolution | None = None
    derived: dict = field(default_factory=dict)


def _names(text) -> list[str]:
    return [p.strip() for p in str(text).split(",") if p.strip()]


def surrogate_spec(cfg: Config) -> SurrogateWgmSpec:
    cav = cfg["cavity"]
    r_out = 0.5 * cav["outer_diameter"]
    r_in = r_out - cav["ring_width"] if cav["device"] == "ring" else 0.0
    spec = SurrogateWgmSpec(
        polarization=cav["polarization"],
        m=1 if cav["azimuthal_order"] == AUTO else cav["azimuthal_order"],
        outer_radius_nm=r_out,
        inner_radius_nm=r_in,
        thickness_nm=cav["thickness"],
        n_core=cav["n_core"],
        n_substrate=cav["n_substrate"],
        n_ambient=cav["n_ambient"],
        wavelength_nm=cav["wavelength"],
        pedestal_height_nm=cav["pedestal_height"],
    )
    if cav["azimuthal_order"] == AUTO:
        spec = SurrogateWgmSpec(**{**spec.__dict__, "m": select_azimuthal_order(spec)})
    return spec


def build_cavity(cfg: Config, include=()) -> CavitySetup:
    """Unit-energy cavity field from the surrogate or from a field file.

    ``include`` lists extra ``(lower, upper)`` boxes the surrogate grid must
    cover (fiber cross-section, excitation support).
    """
    cav = cfg["cavity"]
    if cav["source"] == "file":
        grid = normalize_unit_energy(load_field_grid(cav["field_file"]))
        if "m" in grid.meta:
            grid = grid.replace(meta={**grid.meta, "m": int(float(grid.meta["m"]))})
        params = cavity_params(grid, cav["Q"], cav["n_c"], cav["n_d"])
        mv = mode_volume(grid)
        derived = {"mode_volume_nm3": mv.volume, "r_max_nm": mv.r_max, "e_max": mv.e_max}
        return CavitySetup(grid, grid, params, derived=derived)

    spec = surrogate_spec(cfg)
    sol = solve_wgm(spec)
    geom = device_grid(spec, cav["lateral_spacing"], cav["vertical_spacing"], include=list(include), solution=sol)
    grid, twin = normalized_surrogate(spec, geom, sol)
    params = cavity_params(grid, cav["Q"], cav["n_c"], cav["n_d"])
    mv = mode_volume(grid)
    derived = {
        "azimuthal_order": spec.m,
        "inner_radius_nm": spec.inner_radius_nm,
        "resonance_wavelength_nm": sol.resonance_wavelength_nm,
        "slab_n_eff": sol.slab.n_eff,
        "r_peak_nm": sol.r_peak_nm,
        "mode_volume_nm3": mv.volume,
        "mode_volume_cubic_wavelengths": mv.volume / (spec.wavelength_nm / cav["n_c"]) ** 3,
        "r_max_nm": mv.r_max,
        "e_max": mv.e_max,
        "peak_purcell": params.peak_purcell,
    }
    return CavitySetup(grid, twin, params, spec, sol, derived)


def build_fiber(cfg: Config, wavelength_nm: float | None = None, label: str | None = None) -> FiberMode:
    fib = cfg["fiber"]
    mode = solve_fiber_mode(
        fib["diameter"],
        fib["n_fiber"],
        fib["n_ambient"],
        wavelength_nm or cfg["cavity"]["wavelength"],
        label or fib["mode"],
        math.radians(fib["polarization_angle"]),
    )
    return normalize_unit_power(mode)


# ---------------------------------------------------------------------------
# fiber-mode


def run_fiber_mode(cfg: Config) -> tuple[Table, Table, dict]:
    """Guided-mode table for all supported labels and a transverse profile of the configured mode."""
    fib = cfg["fiber"]
    rows = []
    for label in MODE_LABELS:
        try:
            m = build_fiber(cfg, label=label)
        except ModeCutoffError as exc:
            rows.append((label, False, math.nan, math.nan, math.nan, math.nan, exc.v_number, math.nan))
            continue
        rows.append((label, True, m.n_eff, m.beta, m.u, m.w, m.v_number, m.residual()))
    modes = Table(["mode", "guided", "n_eff", "beta_per_nm", "u", "w", "v_number", "residual"], rows)

    mode = build_fiber(cfg)
    a = mode.radius_nm
    xs = np.linspace(-3 * a, 3 * a, 301)
    pts = np.column_stack([xs, np.zeros_like(xs), np.zeros_like(xs)])
    e, _ = mode.fields(pts)
    prof_rows = [
        (x, *(v for c in ec for v in (c.real, c.imag)), float(np.vdot(ec, ec).real))
        for x, ec in zip(xs, e)
    ]
    profile = Table(
        ["x_nm", "Ex_re", "Ex_im", "Ey_re", "Ey_im", "Ez_re", "Ez_im", "E2"],
        prof_rows,
    )
    derived = {"mode": mode.label, "n_eff": mode.n_eff, "v_number": mode.v_number, "power": mode.power()}
    return modes, profile, derived


# ---------------------------------------------------------------------------
# couple


def _fiber_box(offset, radius, reach):
    c = np.asarray(offset, dtype=float)
    half = np.array([radius + 20.0, reach, radius + 20.0])
    return c - half, c + half


def resolve_offset(cfg: Config, setup: CavitySetup, radius: float) -> tuple[float, float, float]:
    cpl = cfg["coupling"]
    if cpl["axis_offset"] != AUTO:
        return tuple(cpl["axis_offset"])
    return contact_offset(cpl["contact"], setup.spec, setup.solution.r_peak_nm, radius, cpl["gap"])


def run_couple(cfg: Config) -> tuple[Table, dict]:
    cpl = cfg["coupling"]
    mode = build_fiber(cfg)
    a = mode.radius_nm
    include = []
    if cfg["cavity"]["source"] == "surrogate":
        # fiber box needs the solved geometry; a first pass gives r_peak
        spec = surrogate_spec(cfg)
        sol = solve_wgm(spec)
        pre = CavitySetup(None, None, None, spec, sol)
        offset = resolve_offset(cfg, pre, a)
        reach = spec.outer_radius_nm + 300.0
        if cpl["halflength"] != AUTO:
            reach = max(reach, cpl["halflength"] + 20.0)
        include.append(_fiber_box(offset, a, reach))
    setup = build_cavity(cfg, include)
    offset = resolve_offset(cfg, setup, a)
    phase = math.radians(cpl["standing_wave_phase"])
    half = cpl["halflength"]
    if half == AUTO:
        half = auto_halflength(setup.sampler, offset, phase, radius_nm=a)
    geom = ContactGeometry(cpl["contact"], offset, half, phase, cpl["gap"])
    omega0 = constants.angular_frequency(setup.grid.wavelength_nm)

    modes = [("fiber", mode)]
    if cpl["sum_polarizations"] and mode.nu >= 1:
        modes.append(("orthogonal", normalize_unit_power(mode.rotated(math.pi / 2))))
    rows = []
    total = 0.0
    rates = coupling_rates(setup.sampler, [md for _, md in modes], geom, omega0)
    for (name, md), g in zip(modes, rates):
        total += g
        rows.append((name, math.degrees(md.polarization_orientation), g, 0.5 * g, omega0 / g if g > 0 else math.inf))
    if len(modes) > 1:
        rows.append(("sum", math.nan, total, 0.5 * total, omega0 / total if total > 0 else math.inf))
    table = Table(
        ["fiber_polarization", "polarization_angle_deg", "gamma_e_per_ns", "gamma_e_per_direction_per_ns", "Q_e_equivalent"],
        rows,
    )
    derived = dict(setup.derived)
    derived.update({"fiber_axis_offset_nm": offset, "halflength_nm": half, "fiber_n_eff": mode.n_eff, "omega0_rad_per_ns": omega0})
    return table, derived


# ---------------------------------------------------------------------------
# sweep


def run_sweep(cfg: Config, workers: int | None = None) -> tuple[Table, dict]:
    sw = cfg["sweep"]
    mode = build_fiber(cfg)
    rows = coupling_sweep(
        sw["diameters"],
        mode,
        devices=_names(sw["devices"]),
        polarizations=_names(sw["polarizations"]),
        contacts=_names(sw["contacts"]),
        lateral_spacing_nm=sw["lateral_spacing"],
        vertical_spacing_nm=sw["vertical_spacing"],
        sum_polarizations=cfg["coupling"]["sum_polarizations"],
        gap_nm=cfg["coupling"]["gap"],
        workers=workers or worker_count(),
    )
    table = Table(
        ["diameter_nm", "device", "polarization", "contact", "gamma_e_per_ns", "Q_e_equivalent", "azimuthal_order"],
        [(r.diameter_nm, r.device, r.polarization, r.contact, float(r.gamma_e_per_ns), float(r.q_e_equivalent), r.m) for r in rows],
    )
    return table, {"fiber_n_eff": mode.n_eff}


# ---------------------------------------------------------------------------
# purcell-map


def run_purcell_map(cfg: Config) -> tuple[Table, dict]:
    """F_p over a lateral grid at fixed depth, for the best and the x, y, z dipole orientations."""
    pm = cfg["purcell_map"]
    setup = build_cavity(cfg)
    g = setup.grid.geometry
    h = pm["spacing"]
    if setup.spec is not None:
        reach = setup.spec.outer_radius_nm + 100.0
        xs = np.arange(-reach, reach + 0.5 * h, h)
        ys = xs
    else:
        xs = np.arange(g.lower[0], g.upper[0] + 1e-9, h)
        ys = np.arange(g.lower[1], g.upper[1] + 1e-9, h)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, -pm["depth"])])
    e = setup.sampler.sample(pts)
    p = setup.params
    scale = p.peak_purcell * (p.n_c / p.n_d) / p.e_max**2
    m = np.einsum("na,nb->nab", e, np.conj(e)).real
    best = np.linalg.eigvalsh(m)[:, -1]
    comp = np.abs(e) ** 2
    rows = [
        (x, y, scale * b, scale * cx, scale * cy, scale * cz)
        for (x, y, _), b, (cx, cy, cz) in zip(pts, best, comp)
    ]
    table = Table(["x_nm", "y_nm", "F_best", "F_x", "F_y", "F_z"], rows)
    derived = dict(setup.derived)
    derived["map_max_F"] = float(scale * best.max())
    return table, derived


# ---------------------------------------------------------------------------
# ensemble


def ensemble_spec(cfg: Config, setup_hint: dict) -> EnsembleSpec:
    ens, dec = cfg["ensemble"], cfg["decay"]
    center = ens["center"]
    if center == AUTO:
        center = setup_hint["center"]
    return EnsembleSpec(
        depth_mean_nm=ens["depth_mean"],
        depth_sigma_nm=ens["depth_sigma"],
        fwhm_nm=ens["fwhm"],
        center_nm=tuple(center),
        excitation_polarization=tuple(ens["excitation_polarization"]),
        footprint=setup_hint.get("footprint") if ens["restrict_to_footprint"] in (True, AUTO) else None,
        detuning_sigma=ens["detuning_sigma"],
        sample_count=ens["sample_count"],
        seed=ens["seed"],
        in_plane_angle=math.radians(ens["in_plane_angle"]),
        gamma0=1.0 / dec["lifetime0"],
        gamma0_zpl=dec["gamma0_zpl"],
    )


def _ensemble_geometry(cfg: Config) -> dict:
    """Default spot center and NV footprint, before the grid is built."""
    if cfg["cavity"]["source"] == "file":
        return {}
    spec = surrogate_spec(cfg)
    if spec.is_ring:
        center = (0.5 * (spec.inner_radius_nm + spec.outer_radius_nm), 0.0)
    else:
        center = (solve_wgm(spec).r_peak_nm, 0.0)
    return {"center": center, "footprint": (spec.inner_radius_nm, spec.outer_radius_nm)}


@dataclass
class EnsembleResult:
    histograms: dict[str, Table]
    curves: dict[str, Table]
    report: list[str]
    derived: dict
    means: dict[str, float]
    taus: dict[str, float]


def run_ensemble(cfg: Config, workers: int | None = None) -> EnsembleResult:
    ens, dec = cfg["ensemble"], cfg["decay"]
    hint = _ensemble_geometry(cfg)
    include = []
    if cfg["cavity"]["source"] == "file" and ens["center"] == AUTO:
        grid = normalize_unit_energy(load_field_grid(cfg["cavity"]["field_file"]))
        hint["center"] = tuple(mode_volume(grid).r_max[:2])
    spec = ensemble_spec(cfg, hint)
    if spec.footprint is None and cfg["cavity"]["source"] == "surrogate":
        cx, cy = spec.center_nm
        r = spec.support_radius_nm
        deep = spec.depth_mean_nm + 12.0 * spec.depth_sigma_nm
        include.append((np.array([cx - r, cy - r, -deep]), np.array([cx + r, cy + r, 0.0])))
    setup = build_cavity(cfg, include)
    workers = workers or worker_count()

    samples = sample_ensemble(spec)
    dists = {
        FREE_SPACE: purcell_distribution(samples, setup.sampler, setup.params, FREE_SPACE, workers),
        WAVEGUIDE: purcell_distribution(samples, setup.sampler, setup.params, WAVEGUIDE, workers),
    }
    top = float(np.max(dists[FREE_SPACE].zeta))
    edges = np.linspace(0.0, max(top, 1e-12) * (1 + 1e-9), ens["histogram_bins"] + 1)
    times = np.arange(0.0, dec["duration"] + 0.5 * dec["step"], dec["step"])
    histograms, curves, means, taus = {}, {}, {}, {}
    report = []
    for name, dist in dists.items():
        _, frac = dist.histogram(edges)
        histograms[name] = Table(
            ["zeta", "weight", "zeta_low", "zeta_high"],
            list(zip(0.5 * (edges[:-1] + edges[1:]), frac, edges[:-1], edges[1:])),
        )
        fit = fit_single_exponential(decay_curve(dist, spec.gamma0, spec.gamma0_zpl, fit_time_grid(dec["window"], dec["step"])), dec["window"])
        curve = decay_curve(dist, spec.gamma0, spec.gamma0_zpl, times)
        curves[name] = Table(
            ["t_ns", "intensity", "single_exponential_fit"],
            list(zip(curve.times, curve.intensities, np.exp(-curve.times / fit.tau_ns))),
        )
        means[name] = mean_purcell(dist)
        taus[name] = fit.tau_ns
        report += [
            f"[{name}]",
            f"mean_purcell = {means[name]:.17g}",
            f"mean_purcell_standard_error = {mean_purcell_error(dist):.17g}",
            f"max_purcell = {float(np.max(dist.zeta)):.17g}",
            f"tau_eff_ns = {fit.tau_ns:.17g}",
            f"fit_rms_log_residual = {fit.rms_residual:.17g}",
            f"fit_window_ns = {fit.window_ns:.17g}",
            f"fit_points = {fit.n_points}",
            "",
        ]
    ratio = means[WAVEGUIDE] / means[FREE_SPACE]
    report += [
        "[comparison]",
        f"waveguide_to_freespace_ratio = {ratio:.17g}",
        f"seed = {spec.seed}",
        f"sample_count = {spec.sample_count}",
        f"tau0_ns = {1.0 / spec.gamma0:.17g}",
    ]
    derived = dict(setup.derived)
    derived.update(
        {
            "spot_center_nm": spec.center_nm,
            "footprint_nm": spec.footprint if spec.footprint else "none",
            "support_radius_nm": spec.support_radius_nm,
            "emitters": samples.n_emitters,
        }
    )
    return EnsembleResult(histograms, curves, report, derived, means, taus)


# ---------------------------------------------------------------------------
# decay


def run_decay(cfg: Config, distribution: tuple[np.ndarray, np.ndarray] | None = None) -> tuple[Table, list[str], dict]:
    """Decay curves for single Purcell factors, or for a tabulated G(zeta)."""
    dec = cfg["decay"]
    gamma0 = 1.0 / dec["lifetime0"]
    times = np.arange(0.0, dec["duration"] + 0.5 * dec["step"], dec["step"])
    fit_times = fit_time_grid(dec["window"], dec["step"])
    if distribution is not None:
        zeta, weight = distribution
        cases = [("distribution", PurcellDistribution(zeta, weight, FREE_SPACE))]
    else:
        cases = [
            (f"F={format(f, 'g')}", PurcellDistribution(np.array([f]), np.array([1.0]), FREE_SPACE))
            for f in dec["purcell_factors"]
        ]
    columns = ["t_ns"]
    data = [times]
    report = []
    for name, dist in cases:
        curve = decay_curve(dist, gamma0, dec["gamma0_zpl"], times)
        fit = fit_single_exponential(decay_curve(dist, gamma0, dec["gamma0_zpl"], fit_times), dec["window"])
        columns.append(f"intensity_{name}")
        data.append(curve.intensities)
        report.append(f"[{name}]")
        if len(dist.zeta) == 1:
            f = float(dist.zeta[0])
            report.append(f"purcell = {f:.17g}")
            report.append(f"lifetime_ns = {1.0 / (gamma0 + f * dec['gamma0_zpl']):.17g}")
        else:
            report.append(f"mean_purcell = {mean_purcell(dist):.17g}")
        report += [f"tau_eff_ns = {fit.tau_ns:.17g}", f"fit_rms_log_residual = {fit.rms_residual:.17g}", ""]
    table = Table(columns, list(zip(*data)))
    return table, report, {"gamma0_per_ns": gamma0}
