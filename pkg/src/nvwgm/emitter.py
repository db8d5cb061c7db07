"""NV dipole geometry, Purcell factors and decay rates.

NV axes and dipole vectors live in the diamond crystal frame.  The device
(lab) frame has z along the chip normal, which is crystal [110]; the
in-plane orientation of the crystal is a free angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import constants
from .field import FieldGrid, mode_volume

NV_AXES = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float) / math.sqrt(3.0)

_U1 = np.array([-1.0, -1.0, 2.0]) / math.sqrt(6.0)
_U2 = np.array([1.0, -1.0, 0.0]) / math.sqrt(2.0)

# two-fold rotations about the cubic axes carry [111] onto the other three
_POINT_GROUP = (
    np.eye(3),
    np.diag([1.0, -1.0, -1.0]),
    np.diag([-1.0, 1.0, -1.0]),
    np.diag([-1.0, -1.0, 1.0]),
)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if not n > 0 or not np.isfinite(n):
        raise ValueError("axis must be a nonzero finite vector")
    return v / n


def canonical_frame(nv_axis) -> tuple[np.ndarray, np.ndarray]:
    """(u1, u2) perpendicular to ``nv_axis`` with u1 x u2 along the axis.

    For <111> axes the pair is the image of the [111] pair under the cubic
    two-fold rotation that maps [111] onto the axis (sign-flipped axes reuse
    the same pair).  Other axes use the minimal rotation from [111].
    """
    n = _unit(nv_axis)
    for rot, ref in zip(_POINT_GROUP, NV_AXES):
        dot = float(n @ ref)
        if abs(abs(dot) - 1.0) < 1e-12:
            u1, u2 = rot @ _U1, rot @ _U2
            return (u1, u2) if dot > 0 else (u1, -u2)
    ref = NV_AXES[0]
    v = np.cross(ref, n)
    s, c = np.linalg.norm(v), float(ref @ n)
    k = v / s
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    R = np.eye(3) + s * K + (1 - c) * (K @ K)
    return R @ _U1, R @ _U2


def dipole_axes(nv_axis, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Orbital dipole unit vectors mu1, mu2 of an NV, rotated by ``beta``."""
    u1, u2 = canonical_frame(nv_axis)
    cb, sb = math.cos(beta), math.sin(beta)
    return u1 * cb + u2 * sb, -u1 * sb + u2 * cb


def dipole_axes_batch(axes: np.ndarray, betas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`dipole_axes` for ``(n, 3)`` axes and ``(n,)`` angles."""
    axes = np.asarray(axes, dtype=float)
    betas = np.asarray(betas, dtype=float)
    u1 = np.empty_like(axes)
    u2 = np.empty_like(axes)
    uniq, inv = np.unique(axes, axis=0, return_inverse=True)
    inv = np.ravel(inv)
    for j, ax in enumerate(uniq):
        a, b = canonical_frame(ax)
        sel = inv == j
        u1[sel], u2[sel] = a, b
    cb, sb = np.cos(betas)[:, None], np.sin(betas)[:, None]
    return u1 * cb + u2 * sb, -u1 * sb + u2 * cb


@dataclass(frozen=True)
class CrystalOrientation:
    """Crystal-to-lab rotation for a (110) chip.

    Lab z is crystal [110]/sqrt(2).  At ``in_plane_angle = 0`` lab x is the
    projection of crystal [100] onto the chip surface, i.e. [1,-1,0]/sqrt(2).
    """

    in_plane_angle: float = 0.0

    @property
    def matrix(self) -> np.ndarray:
        """Rows are the lab axes expressed in crystal coordinates."""
        z = np.array([1.0, 1.0, 0.0]) / math.sqrt(2.0)
        x0 = np.array([1.0, -1.0, 0.0]) / math.sqrt(2.0)
        y0 = np.cross(z, x0)
        c, s = math.cos(self.in_plane_angle), math.sin(self.in_plane_angle)
        x = c * x0 + s * y0
        y = -s * x0 + c * y0
        return np.vstack([x, y, z])

    def to_lab(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.matrix.T


@dataclass(frozen=True)
class CavityParams:
    wavelength_nm: float
    Q: float
    V_nm3: float
    n_c: float = constants.N_GAP
    n_d: float = constants.N_DIAMOND
    e_max: float | None = None  # |E(r_max)| of the normalized field

    def __post_init__(self):
        if not self.wavelength_nm > 0:
            raise ValueError("wavelength must be positive")
        if not self.Q > 0:
            raise ValueError("Q must be positive")
        if not self.V_nm3 > 0:
            raise ValueError("mode volume must be positive")
        if not (self.n_c > 0 and self.n_d > 0):
            raise ValueError("refractive indices must be positive")

    @property
    def omega0(self) -> float:
        return constants.angular_frequency(self.wavelength_nm)

    @property
    def kappa(self) -> float:
        return self.omega0 / self.Q

    @property
    def peak_purcell(self) -> float:
        """Monolithic Purcell prefactor (3/4pi^2) Q (lambda/n_c)^3 / V."""
        return 3.0 / (4.0 * math.pi**2) * self.Q * (self.wavelength_nm / self.n_c) ** 3 / self.V_nm3


def cavity_params(cavity: FieldGrid, Q: float, n_c: float = constants.N_GAP, n_d: float = constants.N_DIAMOND) -> CavityParams:
    """CavityParams with V and E_max taken from the field's mode volume."""
    mv = mode_volume(cavity)
    return CavityParams(cavity.wavelength_nm, Q, mv.volume, n_c, n_d, mv.e_max)


@dataclass(frozen=True)
class EmitterSample:
    position: tuple[float, float, float]  # lab frame, nm
    nv_axis: tuple[float, float, float]  # crystal frame
    beta: float = 0.0
    detuning: float = 0.0  # rad/ns
    gamma0: float = constants.GAMMA0_PER_NS
    gamma0_zpl: float = constants.GAMMA0_ZPL_PER_NS
    excited_state: int = 1
    orientation: CrystalOrientation = field(default_factory=CrystalOrientation)

    def __post_init__(self):
        if self.excited_state not in (1, 2):
            raise ValueError("excited_state must be 1 or 2")
        object.__setattr__(self, "nv_axis", tuple(_unit(self.nv_axis)))
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))

    @property
    def dipole(self) -> np.ndarray:
        """Dipole unit vector in the crystal frame."""
        return dipole_axes(self.nv_axis, self.beta)[self.excited_state - 1]

    @property
    def dipole_lab(self) -> np.ndarray:
        return self.orientation.to_lab(self.dipole)


def lorentzian(detuning, kappa):
    """kappa^2 / (kappa^2 + 4 detuning^2)."""
    d = np.asarray(detuning, dtype=float)
    return kappa**2 / (kappa**2 + 4.0 * d * d)


def purcell_simple(params: CavityParams, field_ratio: float) -> float:
    """F_p = (3/4pi^2)(lambda/n_c)^3 (Q/V) |E/E_max|^2."""
    if not 0.0 <= field_ratio <= 1.0 + 1e-12:
        raise ValueError("field_ratio must lie in [0, 1]")
    return params.peak_purcell * field_ratio**2


def purcell_factors(
    positions,
    dipoles_lab,
    detunings,
    cavity: FieldGrid,
    params: CavityParams,
) -> np.ndarray:
    """Vectorized hybrid Purcell factor for ``(n, 3)`` positions and lab dipoles."""
    e_max = params.e_max
    if e_max is None:
        e_max = mode_volume(cavity).e_max
    e = cavity.sample(positions)
    proj = np.einsum("ij,ij->i", np.asarray(dipoles_lab, dtype=float), e)
    ratio2 = (proj.real**2 + proj.imag**2) / e_max**2
    return params.peak_purcell * (params.n_c / params.n_d) * ratio2 * lorentzian(detunings, params.kappa)


def purcell_factor(emitter: EmitterSample, cavity: FieldGrid, params: CavityParams) -> float:
    """Purcell factor of one orbital transition in the hybrid geometry."""
    f = purcell_factors(
        np.asarray(emitter.position)[None, :], emitter.dipole_lab[None, :], [emitter.detuning], cavity, params
    )
    return float(f[0])


def decay_rate(gamma0: float, purcell: float, gamma0_zpl: float) -> float:
    """gamma_i = gamma0 + F_p gamma0_ZPL."""
    return gamma0 + purcell * gamma0_zpl


def lifetime_ratio(purcell: float, delta: float) -> float:
    """tau_c / tau_0 = 1 / (1 + F_p delta)."""
    if purcell < 0 or delta < 0:
        raise ValueError("purcell factor and delta must be non-negative")
    return 1.0 / (1.0 + purcell * delta)


DELTA_DEFAULT = constants.GAMMA0_ZPL_PER_NS / constants.GAMMA0_PER_NS
DELTA_MEASURED_ZPL_FRACTION = constants.ZPL_FRACTION_MEASURED
