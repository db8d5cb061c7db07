"""Cavity-to-fiber energy decay rate from the coupled-mode overlap integral.

    gamma_e = | omega0 * int dy int_A dA (n_f^2 - n_a^2) E_f . conj(E_c) |^2

With the cavity normalized to unit energy and the fiber to unit power in
eps0 = mu0 = 1 units, the bracket is dimensionless after multiplying by
k0 = omega0 / c, and one factor of c converts the result to 1/ns:
``gamma_e = (omega0**2 / c) * |I|**2``.  The value is the total decay into
the forward and backward guided modes; each direction carries half.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from . import constants
from .errors import GeometryError, NormalizationContractError
from .fiber import FiberMode, normalize_unit_power
from .field import FieldGrid
from .surrogate import SurrogateWgmSpec, device_grid, normalized_surrogate, select_azimuthal_order, solve_wgm

CONTACTS = ("top", "side")

#: |E_c| at the ends of the fiber segment relative to its maximum along the axis
TAIL_THRESHOLD = 1e-3
# the hard edge at y = +-l makes the truncation error oscillate; 1e-3 alone
# leaves percent-level errors, so the automatic choice is stricter
AUTO_TAIL_THRESHOLD = 1e-5


@dataclass(frozen=True)
class ContactGeometry:
    """Straight fiber along +y through ``fiber_axis_offset``.

    ``standing_wave_phase`` shifts the cavity antinode relative to the contact
    point; it is applied by rotating the fiber about the device axis by
    ``phase / m``.
    """

    contact: str
    fiber_axis_offset: tuple[float, float, float]
    halflength_nm: float
    standing_wave_phase: float = 0.0
    gap_nm: float = 0.0

    def __post_init__(self):
        if self.contact not in CONTACTS:
            raise ValueError(f"contact must be one of {CONTACTS}, got {self.contact!r}")
        if not self.halflength_nm > 0:
            raise ValueError("integration half-length must be positive")
        object.__setattr__(self, "fiber_axis_offset", tuple(float(v) for v in self.fiber_axis_offset))


def contact_offset(contact: str, spec: SurrogateWgmSpec, r_peak_nm: float, fiber_radius_nm: float, gap_nm: float = 0.0):
    """Fiber centerline position for a fiber touching the top or side of the device."""
    if contact == "top":
        return (r_peak_nm, 0.0, spec.thickness_nm + gap_nm + fiber_radius_nm)
    if contact == "side":
        return (spec.outer_radius_nm + gap_nm + fiber_radius_nm, 0.0, 0.5 * spec.thickness_nm)
    raise ValueError(f"unknown contact {contact!r}")


def _rotation_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _contact_rotation(cavity, phase: float) -> np.ndarray:
    if phase == 0.0:
        return np.eye(3)
    m = getattr(cavity, "meta", {}).get("m")
    if not m:
        raise GeometryError("a nonzero standing-wave phase needs the cavity azimuthal order")
    return _rotation_z(phase / m)


def auto_halflength(
    cavity: FieldGrid,
    offset,
    standing_wave_phase: float = 0.0,
    step_nm: float = 5.0,
    radius_nm: float = 0.0,
    threshold: float = AUTO_TAIL_THRESHOLD,
) -> float:
    """Shortest half-length at which |E_c| has fallen to ``threshold`` of its maximum.

    The field is watched on the fiber axis and, when ``radius_nm`` is given, on
    eight lines along the fiber rim. At a top contact the lower rim stays close
    to the curving device much longer than the axis does.
    """
    rot = _contact_rotation(cavity, standing_wave_phase)
    off = np.asarray(offset, float)
    lo, hi = cavity.geometry.lower, cavity.geometry.upper
    ys = np.arange(0.0, np.max(np.abs([lo[1], hi[1]])) + step_nm, step_nm)
    lines = [np.zeros(3)]
    if radius_nm > 0.0:
        th = 2.0 * np.pi * np.arange(8) / 8
        lines += [radius_nm * np.array([math.cos(t), 0.0, math.sin(t)]) for t in th]
    amp = np.zeros_like(ys)
    n_ok = len(ys)
    samples = []
    for d in lines:
        for sign in (1.0, -1.0):
            pts = (rot @ ((off + d)[:, None] + sign * np.outer([0, 1, 0], ys))).T
            ok = cavity.geometry.contains(pts)
            if not ok.all():
                n_ok = min(n_ok, int(np.argmin(ok)))
            samples.append(pts)
    # largest |y| for which every watched point stays inside the grid
    if n_ok < 2:
        raise GeometryError("fiber axis lies outside the cavity grid")
    ys, amp = ys[:n_ok], amp[:n_ok]
    for pts in samples:
        amp = np.maximum(amp, np.linalg.norm(cavity.sample(pts[:n_ok]), axis=1))
    peak = amp.max()
    if peak == 0.0:
        return float(ys[1])
    below = amp <= threshold * peak
    # first index from which the field stays below threshold
    tail_ok = np.flip(np.cumprod(np.flip(below)).astype(bool))
    hits = np.nonzero(tail_ok)[0]
    if hits.size == 0:
        raise GeometryError(
            "cavity field along the fiber does not decay to "
            f"{threshold:g} of its maximum inside the grid"
        )
    return float(max(ys[hits[0]], ys[1]))


def cross_section_rule(radius_nm: float, n_radial: int = 48, n_theta: int = 96):
    """Gauss-Legendre in r times periodic trapezoid in theta over a disk.

    Returns transverse points ``(x, z)`` and weights including the r Jacobian.
    """
    xg, wg = np.polynomial.legendre.leggauss(n_radial)
    r = 0.5 * radius_nm * (xg + 1.0)
    wr = 0.5 * radius_nm * wg * r
    th = 2.0 * np.pi * np.arange(n_theta) / n_theta
    wt = np.full(n_theta, 2.0 * np.pi / n_theta)
    R, T = np.meshgrid(r, th, indexing="ij")
    W = np.outer(wr, wt)
    return np.column_stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()]), W.ravel()


def axial_rule(halflength_nm: float, step_nm: float = 5.0):
    """Composite Simpson nodes and weights on [-l, l]."""
    n = int(math.ceil(2.0 * halflength_nm / step_nm))
    n += n % 2
    y = np.linspace(-halflength_nm, halflength_nm, n + 1)
    w = np.zeros_like(y)
    h = y[1] - y[0]
    w[0::2] = 2.0
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return y, w * h / 3.0


def overlap_integrals(
    cavity,
    modes,
    geom: ContactGeometry,
    n_radial: int = 48,
    n_theta: int = 96,
    axial_step_nm: float = 5.0,
) -> list[complex]:
    """Overlaps of one cavity field with several modes of the same fiber.

    E_c is sampled once and reused, so the modes must share the core radius.
    """
    modes = list(modes)
    radius = modes[0].radius_nm
    if any(md.radius_nm != radius for md in modes):
        raise ValueError("modes passed together must share the fiber radius")
    rot = _contact_rotation(cavity, geom.standing_wave_phase)
    cs, w_cs = cross_section_rule(radius, n_radial, n_theta)
    ys, w_y = axial_rule(geom.halflength_nm, axial_step_nm)

    local_cs = np.column_stack([cs[:, 0], np.zeros(len(cs)), cs[:, 1]])
    e_fs = np.stack([md.fields(local_cs)[0] @ rot.T for md in modes])
    off = np.asarray(geom.fiber_axis_offset)

    totals = np.zeros(len(modes), dtype=complex)
    chunk = max(1, 200_000 // len(cs))
    for start in range(0, len(ys), chunk):
        yb = ys[start : start + chunk]
        local = local_cs[None, :, :] + np.outer(yb, [0.0, 1.0, 0.0])[:, None, :]
        lab = (local + off) @ rot.T
        e_c = np.conj(cavity.sample(lab.reshape(-1, 3)).reshape(len(yb), len(cs), 3))
        dots = np.einsum("kjc,ijc->kij", e_fs, e_c) @ w_cs
        wy = w_y[start : start + chunk]
        for k, md in enumerate(modes):
            totals[k] += np.sum(wy * np.exp(1j * md.direction * md.beta * yb) * dots[k])
    return [complex((md.n_fiber**2 - md.n_ambient**2) * t) for md, t in zip(modes, totals)]


def overlap_integral(cavity, mode, geom: ContactGeometry, n_radial: int = 48, n_theta: int = 96, axial_step_nm: float = 5.0) -> complex:
    """The double integral of (n_f^2 - n_a^2) E_f . conj(E_c) over the fiber volume (nm^-1/2)."""
    return overlap_integrals(cavity, [mode], geom, n_radial, n_theta, axial_step_nm)[0]


def coupling_rates(
    cavity,
    modes,
    geom: ContactGeometry,
    omega0: float,
    n_radial: int = 48,
    n_theta: int = 96,
    axial_step_nm: float = 5.0,
) -> list[float]:
    """Total energy decay rate gamma_e (1/ns) from the cavity into each fiber mode.

    ``cavity`` must be normalized to unit energy and every mode to unit power.
    Each propagation direction receives ``gamma_e / 2``.
    """
    if not getattr(cavity, "normalized", False):
        raise NormalizationContractError("cavity field must be normalized to unit energy")
    modes = list(modes)
    if not all(getattr(md, "normalized_power", False) for md in modes):
        raise NormalizationContractError("fiber mode must be normalized to unit power")
    overlaps = overlap_integrals(cavity, modes, geom, n_radial, n_theta, axial_step_nm)
    return [(omega0**2 / constants.C_NM_PER_NS) * abs(o) ** 2 for o in overlaps]


def coupling_rate(
    cavity,
    mode,
    geom: ContactGeometry,
    omega0: float,
    n_radial: int = 48,
    n_theta: int = 96,
    axial_step_nm: float = 5.0,
) -> float:
    """Total energy decay rate gamma_e (1/ns) from the cavity into the fiber mode."""
    return coupling_rates(cavity, [mode], geom, omega0, n_radial, n_theta, axial_step_nm)[0]


# ---------------------------------------------------------------------------
# diameter sweep

DEVICE_TEMPLATES = {
    # D1-like disk and D2-like ring
    "disk": {"thickness_nm": 250.0, "ring_width_nm": None},
    "ring": {"thickness_nm": 150.0, "ring_width_nm": 280.0},
}


@dataclass(frozen=True)
class SweepRow:
    diameter_nm: float
    device: str
    polarization: str
    contact: str
    m: int
    gamma_e_per_ns: float
    q_e_equivalent: float


def device_spec(device: str, diameter_nm: float, polarization: str, wavelength_nm: float = constants.ZPL_WAVELENGTH_NM, **overrides) -> SurrogateWgmSpec:
    """Surrogate spec for a disk or ring of the given outer diameter, with m re-selected."""
    tmpl = DEVICE_TEMPLATES[device]
    r_out = 0.5 * diameter_nm
    width = tmpl["ring_width_nm"]
    r_in = max(r_out - width, 0.0) if width else 0.0
    base = dict(
        polarization=polarization,
        m=1,
        outer_radius_nm=r_out,
        inner_radius_nm=r_in,
        thickness_nm=tmpl["thickness_nm"],
        wavelength_nm=wavelength_nm,
    )
    base.update(overrides)
    spec = SurrogateWgmSpec(**base)
    m = select_azimuthal_order(spec)
    return SurrogateWgmSpec(**{**spec.__dict__, "m": m})


def _sweep_cell(args):
    diameter, device, pol, fiber, contacts, lat, vert, sum_pol, omega0, gap = args
    spec = device_spec(device, diameter, pol, wavelength_nm=fiber.wavelength_nm)
    sol = solve_wgm(spec)
    a = fiber.radius_nm
    reach = spec.outer_radius_nm + 300.0
    boxes = []
    for contact in contacts:
        c = np.asarray(contact_offset(contact, spec, sol.r_peak_nm, a, gap))
        boxes.append((c - [a + 20.0, reach, a + 20.0], c + [a + 20.0, reach, a + 20.0]))
    grid = device_grid(spec, lat, vert, include=boxes, solution=sol)
    # the grid fixes the energy normalization; E_c itself is evaluated in closed
    # form so the sidewall jump of the normal component is not smeared
    _, cavity = normalized_surrogate(spec, grid, sol)
    modes = [fiber]
    if sum_pol:
        modes.append(normalize_unit_power(fiber.rotated(math.pi / 2)))
    rows = []
    for contact in contacts:
        off = contact_offset(contact, spec, sol.r_peak_nm, a, gap)
        geom = ContactGeometry(contact, off, auto_halflength(cavity, off, radius_nm=a), gap_nm=gap)
        gamma = sum(coupling_rates(cavity, modes, geom, omega0))
        q_e = omega0 / gamma if gamma > 0 else math.inf
        rows.append(SweepRow(float(diameter), device, pol, contact, spec.m, gamma, q_e))
    del cavity
    return rows


def coupling_sweep(
    diameters,
    fiber: FiberMode,
    devices=("disk", "ring"),
    polarizations=("TE", "TM"),
    contacts=CONTACTS,
    lateral_spacing_nm: float = 25.0,
    vertical_spacing_nm: float = 10.0,
    sum_polarizations: bool = True,
    gap_nm: float = 0.0,
    workers: int | None = None,
) -> list[SweepRow]:
    """gamma_e for every (diameter, device, polarization, contact) cell.

    With ``sum_polarizations`` the rate is summed over ``fiber`` and its
    orthogonally polarized partner, i.e. the total decay into the
    fundamental fiber mode.  Rows are sorted by diameter, then device,
    polarization and contact.
    """
    if not fiber.normalized_power:
        raise NormalizationContractError("fiber mode must be normalized to unit power")
    omega0 = constants.angular_frequency(fiber.wavelength_nm)
    cells = [
        (float(d), dev, pol, fiber, tuple(contacts), lateral_spacing_nm, vertical_spacing_nm, sum_polarizations, omega0, gap_nm)
        for d in sorted(diameters)
        for dev in devices
        for pol in polarizations
    ]
    workers = workers or worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]
    rows = [row for cell in results for row in cell]
    return sorted(rows, key=lambda r: (r.diameter_nm, r.device, r.polarization, r.contact))


def worker_count() -> int:
    """Worker threads, capped by the NVWGM_NUM_THREADS environment variable."""
    env = os.environ.get("NVWGM_NUM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1
