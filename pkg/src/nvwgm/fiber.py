"""Exact vector modes of a step-index circular waveguide (tapered fiber).

Longitudinal fields are ``Ez = A R(r) cos(nu*theta + psi)`` and
``Hz = B R(r) sin(nu*theta + psi)`` with ``R = J_nu(u r/a)`` in the core and
``J_nu(u) K_nu(w r/a) / K_nu(w)`` outside; transverse fields follow from
Maxwell's equations for an ``exp(i beta s)`` dependence along the axis.

The fiber's local frame has the propagation axis along +y; the transverse
coordinates are x and z.  ``polarization_orientation`` is the angle (from +x
towards +z) of the on-axis electric field of HE modes.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from . import constants
from .errors import ModeCutoffError

# label -> (nu, branch); branch -1 is the HE family (TM for nu = 0)
MODE_LABELS = {
    "HE11": (1, -1),
    "HE21": (2, -1),
    "TE01": (0, +1),
    "TM01": (0, -1),
}

_SCAN_POINTS = 4000


def v_number(core_diameter_nm, n_fiber, n_ambient, wavelength_nm) -> float:
    return math.pi * core_diameter_nm / wavelength_nm * math.sqrt(n_fiber**2 - n_ambient**2)


@dataclass(frozen=True)
class FiberMode:
    core_diameter_nm: float
    n_fiber: float
    n_ambient: float
    wavelength_nm: float
    label: str
    beta: float  # rad/nm
    u: float
    w: float
    b_over_a: float
    amplitude: float = 1.0
    direction: int = 1
    polarization_orientation: float = 0.0
    normalized_power: bool = False

    @property
    def radius_nm(self) -> float:
        return 0.5 * self.core_diameter_nm

    @property
    def k0(self) -> float:
        return constants.vacuum_wavenumber(self.wavelength_nm)

    @property
    def n_eff(self) -> float:
        return self.beta / self.k0

    @property
    def v_number(self) -> float:
        return v_number(self.core_diameter_nm, self.n_fiber, self.n_ambient, self.wavelength_nm)

    @property
    def nu(self) -> int:
        return MODE_LABELS[self.label][0]

    def residual(self) -> float:
        """Characteristic-equation residual at the stored root."""
        nu, branch = MODE_LABELS[self.label]
        return abs(
            _characteristic(self.u, self.v_number, nu, branch, self.n_fiber, self.n_ambient, self.k0, self.radius_nm)
        )

    def counter_propagating(self) -> "FiberMode":
        return dataclasses.replace(self, direction=-self.direction)

    def rotated(self, angle: float) -> "FiberMode":
        """Same mode with its polarization orientation rotated by ``angle``."""
        return dataclasses.replace(
            self, polarization_orientation=self.polarization_orientation + angle
        )

    # -- field evaluation -------------------------------------------------

    def _psi(self) -> float:
        nu, branch = MODE_LABELS[self.label]
        if nu == 0:
            return math.pi / 2 if branch > 0 else 0.0
        return (self.polarization_orientation - math.pi / 2) / nu

    def cylindrical_fields(self, r, theta, region=None):
        """(E_r, E_theta, E_s), (H_r, H_theta, H_s) at axial position 0.

        ``region`` may force ``"core"`` or ``"cladding"`` formulas (used to
        evaluate one-sided limits exactly at the interface).
        """
        r = np.asarray(r, dtype=float)
        theta = np.asarray(theta, dtype=float)
        nu = self.nu
        a = self.radius_nm
        k = self.k0
        beta = self.direction * self.beta
        amp_e = self.amplitude
        amp_h = self.amplitude * self.b_over_a * self.direction
        if self.label == "TE01":
            amp_e, amp_h = 0.0, self.amplitude * self.direction

        if region is None:
            core = r <= a
        else:
            core = np.full(r.shape, region == "core")
        r_safe = np.maximum(r, 1e-9 * a)

        x_core = self.u * r_safe / a
        x_clad = self.w * r_safe / a
        ratio_k = special.kve(nu, x_clad) / special.kve(nu, self.w) * np.exp(-(x_clad - self.w))
        j_u = special.jv(nu, self.u)
        R = np.where(core, special.jv(nu, x_core), j_u * ratio_k)
        dR = np.where(
            core,
            (self.u / a) * special.jvp(nu, x_core),
            (self.w / a) * j_u * _kvp_ratio(nu, x_clad, self.w),
        )
        kappa2 = np.where(core, (self.u / a) ** 2, -((self.w / a) ** 2))
        n2 = np.where(core, self.n_fiber**2, self.n_ambient**2)
        R_over_r = R / r_safe

        ang = nu * theta + self._psi()
        c, s = np.cos(ang), np.sin(ang)
        pre = 1j / kappa2
        e_r = pre * (beta * amp_e * dR + k * nu * amp_h * R_over_r) * c
        e_t = pre * (-beta * nu * amp_e * R_over_r - k * amp_h * dR) * s
        e_s = amp_e * R * c
        h_r = pre * (beta * amp_h * dR + k * n2 * nu * amp_e * R_over_r) * s
        h_t = pre * (beta * nu * amp_h * R_over_r + k * n2 * amp_e * dR) * c
        h_s = amp_h * R * s
        return (e_r, e_t, e_s), (h_r, h_t, h_s)

    def fields(self, points) -> tuple[np.ndarray, np.ndarray]:
        """E and H at ``(n, 3)`` points in the fiber's local frame (axis along y)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        # internal right-handed frame (X, Y, S) = (z, x, y)
        X, Y, S = p[:, 2], p[:, 0], p[:, 1]
        r = np.hypot(X, Y)
        theta = np.arctan2(Y, X)
        (er, et, es), (hr, ht, hs) = self.cylindrical_fields(r, theta)
        phase = np.exp(1j * self.direction * self.beta * S)
        ct, st = np.cos(theta), np.sin(theta)

        def to_local(fr, ft, fs):
            fX = fr * ct - ft * st
            fY = fr * st + ft * ct
            return np.column_stack([fY, fs, fX]) * phase[:, None]

        return to_local(er, et, es), to_local(hr, ht, hs)

    def power(self, n_radial: int | None = None) -> float:
        """Cross-section integral of (E* x H + E x H*) along +y."""
        return _power_integral(self, n_radial)


def _kvp_ratio(nu, x, w):
    """K_nu'(x) / K_nu(w) without overflow."""
    return -0.5 * (special.kve(nu - 1, x) + special.kve(nu + 1, x)) / special.kve(nu, w) * np.exp(-(x - w))


def _characteristic(u, V, nu, branch, n1, n2, k0, a):
    """Pole-free form ``J' - u J X`` of the exact vector eigenvalue equation."""
    w = math.sqrt(max(V * V - u * u, 0.0))
    beta = math.sqrt(max((k0 * n1) ** 2 - (u / a) ** 2, 0.0))
    Y = -0.5 * (special.kve(nu - 1, w) + special.kve(nu + 1, w)) / (w * special.kve(nu, w))
    nr2 = (n2 / n1) ** 2
    R = (beta * nu / (k0 * n1)) ** 2 * (1.0 / u**2 + 1.0 / w**2) ** 2
    X = -0.5 * (1.0 + nr2) * Y + branch * math.sqrt((0.5 * (1.0 - nr2) * Y) ** 2 + R)
    return special.jvp(nu, u) - u * special.jv(nu, u) * X


def solve_fiber_mode(
    core_diameter_nm: float = constants.FIBER_DIAMETER_NM,
    n_fiber: float = constants.N_FIBER,
    n_ambient: float = constants.N_AIR,
    wavelength_nm: float = constants.ZPL_WAVELENGTH_NM,
    mode_label: str = "HE11",
    polarization_orientation: float = 0.0,
    xtol: float = 1e-15,
) -> FiberMode:
    """Propagation constant and field coefficients of one guided mode.

    Raises :class:`ModeCutoffError` when the requested mode is not guided.
    """
    if not n_fiber > n_ambient:
        raise ValueError("n_fiber must exceed n_ambient")
    if core_diameter_nm <= 0 or wavelength_nm <= 0:
        raise ValueError("diameter and wavelength must be positive")
    label = mode_label.upper()
    if label not in MODE_LABELS:
        raise ValueError(f"unsupported mode {mode_label!r}; choose from {sorted(MODE_LABELS)}")
    nu, branch = MODE_LABELS[label]
    a = 0.5 * core_diameter_nm
    k0 = constants.vacuum_wavenumber(wavelength_nm)
    V = v_number(core_diameter_nm, n_fiber, n_ambient, wavelength_nm)

    f = lambda u: _characteristic(u, V, nu, branch, n_fiber, n_ambient, k0, a)  # noqa: E731
    us = V * np.linspace(1e-6, 1.0 - 1e-9, _SCAN_POINTS)
    vals = np.array([f(u) for u in us])
    finite = np.isfinite(vals)
    sign = np.sign(vals)
    hits = np.nonzero(finite[:-1] & finite[1:] & (sign[:-1] * sign[1:] < 0))[0]
    if hits.size == 0:
        raise ModeCutoffError(label, V)
    i = int(hits[0])
    u = optimize.brentq(f, us[i], us[i + 1], xtol=xtol * V, rtol=4 * np.finfo(float).eps, maxiter=500)
    w = math.sqrt(V * V - u * u)
    beta = math.sqrt((k0 * n_fiber) ** 2 - (u / a) ** 2)

    if nu == 0:
        b_over_a = 0.0
    else:
        X = special.jvp(nu, u) / (u * special.jv(nu, u))
        Y = -0.5 * (special.kve(nu - 1, w) + special.kve(nu + 1, w)) / (w * special.kve(nu, w))
        b_over_a = -(beta * nu / k0) * (1.0 / u**2 + 1.0 / w**2) / (X + Y)

    return FiberMode(
        core_diameter_nm=float(core_diameter_nm),
        n_fiber=float(n_fiber),
        n_ambient=float(n_ambient),
        wavelength_nm=float(wavelength_nm),
        label=label,
        beta=beta,
        u=u,
        w=w,
        b_over_a=b_over_a,
        polarization_orientation=float(polarization_orientation),
    )


def evaluate_fiber_field(mode: FiberMode, point) -> tuple[np.ndarray, np.ndarray]:
    """(E, H) complex 3-vectors at one point of the fiber's local frame."""
    e, h = mode.fields(np.asarray(point, dtype=float).reshape(1, 3))
    return e[0], h[0]


def _power_integral(mode: FiberMode, n_radial: int | None = None) -> float:
    """Gauss-Legendre panels in r (core, then cladding out to 20 decay lengths), trapezoid in theta."""
    a = mode.radius_nm
    n = n_radial or 64
    n_theta = 32
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    xg, wg = np.polynomial.legendre.leggauss(n)

    def panel(lo, hi, region):
        r = lo + 0.5 * (hi - lo) * (xg + 1.0)
        R, T = np.meshgrid(r, theta, indexing="ij")
        (er, et, _), (hr, ht, _) = mode.cylindrical_fields(R, T, region=region)
        s = 2.0 * np.real(er * np.conj(ht) - et * np.conj(hr))
        return 0.5 * (hi - lo) * np.sum(wg * s.mean(axis=1) * 2 * np.pi * r)

    decay = a / mode.w
    edges = a + decay * np.array([0.0, 1.0, 2.5, 5.0, 10.0, 20.0, 40.0])
    total = panel(0.0, a, "core")
    for lo, hi in zip(edges[:-1], edges[1:]):
        total += panel(lo, hi, "cladding")
    return float(total)


def normalize_unit_power(mode: FiberMode) -> FiberMode:
    """Rescale so that the cross-section power integral is +1 (or -1 backwards)."""
    p = mode.power()
    return dataclasses.replace(
        mode, amplitude=mode.amplitude / math.sqrt(abs(p)), normalized_power=True
    )
