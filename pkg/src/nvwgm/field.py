"""Cavity fields sampled on regular 3-D grids.

A :class:`FieldGrid` holds the complex electric field and the relative
permittivity at every node of an axis-aligned grid.  Integrals over the grid
use trapezoidal node weights, so the integration domain is exactly the
bounding box spanned by the nodes (the same box inside which
:meth:`FieldGrid.sample` is defined).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import (
    DegenerateFieldError,
    EpsilonRangeError,
    GridValidationError,
    MalformedHeaderError,
    MalformedRowError,
    NodeCountMismatchError,
    NonMonotonicGridError,
    OutOfBoundsError,
)

_BOUNDS_RTOL = 1e-9
_SAMPLE_CHUNK = 1 << 16


@dataclass(frozen=True)
class GridGeometry:
    """Node layout of a regular grid: ``origin + index * spacing``."""

    origin: tuple[float, float, float]
    spacing: tuple[float, float, float]
    dims: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "spacing", tuple(float(v) for v in self.spacing))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        if len(self.origin) != 3 or len(self.spacing) != 3 or len(self.dims) != 3:
            raise GridValidationError("origin, spacing and dims must all have 3 entries")
        if min(self.dims) < 2:
            raise GridValidationError(f"dims must be >= 2 along every axis, got {self.dims}")
        if not all(h > 0 and math.isfinite(h) for h in self.spacing):
            raise GridValidationError(f"spacing must be positive, got {self.spacing}")

    @classmethod
    def from_bounds(cls, lower, upper, spacing, anchor=None) -> "GridGeometry":
        """Smallest grid with the given spacing that covers ``[lower, upper]``.

        If ``anchor`` is given, node planes are placed so that the anchor point
        falls exactly on a node.
        """
        lower = np.asarray(lower, float)
        upper = np.asarray(upper, float)
        spacing = np.asarray(spacing, float)
        if anchor is None:
            start = lower
        else:
            anchor = np.asarray(anchor, float)
            start = anchor - np.ceil((anchor - lower) / spacing - 1e-9) * spacing
        n = np.ceil((upper - start) / spacing - 1e-9).astype(int) + 1
        return cls(tuple(start), tuple(spacing), tuple(np.maximum(n, 2)))

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.dims))

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(
            self.origin[a] + self.spacing[a] * np.arange(self.dims[a]) for a in range(3)
        )

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.origin)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(self.spacing) * (np.asarray(self.dims) - 1)

    def weights(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-axis trapezoidal node weights (nm)."""
        out = []
        for a in range(3):
            w = np.full(self.dims[a], self.spacing[a])
            w[0] = w[-1] = 0.5 * self.spacing[a]
            out.append(w)
        return tuple(out)

    def refined(self, factor: int = 2) -> "GridGeometry":
        """Same bounding box, spacing divided by ``factor``."""
        dims = tuple((n - 1) * factor + 1 for n in self.dims)
        return GridGeometry(self.origin, tuple(h / factor for h in self.spacing), dims)

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, float))
        tol = _BOUNDS_RTOL * np.asarray(self.spacing)
        return np.all((p >= self.lower - tol) & (p <= self.upper + tol), axis=1)

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))


@dataclass(frozen=True, eq=False)
class FieldGrid:
    """Complex vector E field and relative permittivity on a regular grid.

    ``e_field`` has shape ``(nx, ny, nz, 3)``; ``epsilon`` has shape
    ``(nx, ny, nz)``.  Arrays are made read-only on construction.
    """

    geometry: GridGeometry
    e_field: np.ndarray
    epsilon: np.ndarray
    wavelength_nm: float = float("nan")
    label: str = ""
    normalized: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        e = np.asarray(self.e_field, dtype=np.complex128)
        eps = np.asarray(self.epsilon, dtype=np.float64)
        dims = self.geometry.dims
        if e.shape != (*dims, 3):
            raise GridValidationError(f"e_field shape {e.shape} does not match dims {dims}")
        if eps.shape != dims:
            raise GridValidationError(f"epsilon shape {eps.shape} does not match dims {dims}")
        if not np.all(eps >= 1.0):
            raise GridValidationError("epsilon must be >= 1 at every node")
        if e is self.e_field:
            e = e.view()
        if eps is self.epsilon:
            eps = eps.view()
        e.flags.writeable = False
        eps.flags.writeable = False
        object.__setattr__(self, "e_field", e)
        object.__setattr__(self, "epsilon", eps)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.geometry.dims

    @property
    def origin(self) -> tuple[float, float, float]:
        return self.geometry.origin

    @property
    def spacing(self) -> tuple[float, float, float]:
        return self.geometry.spacing

    @property
    def n_nodes(self) -> int:
        return self.geometry.n_nodes

    def replace(self, **changes) -> "FieldGrid":
        return dataclasses.replace(self, **changes)

    def intensity(self) -> np.ndarray:
        """|E|^2 at every node."""
        e = self.e_field
        return (e.real**2 + e.imag**2).sum(axis=-1)

    def integrate(self, values: np.ndarray) -> float:
        """Trapezoidal integral of a node-valued scalar over the grid box."""
        wx, wy, wz = self.geometry.weights()
        return float(np.einsum("ijk,i,j,k->", values, wx, wy, wz, optimize=True))

    def electric_energy(self) -> float:
        """2 * integral of eps |E|^2, the equipartition stand-in for total energy."""
        return 2.0 * self.integrate(self.epsilon * self.intensity())

    def sample(self, points) -> np.ndarray:
        """Trilinear interpolation of E at an ``(n, 3)`` array of points.

        Raises :class:`OutOfBoundsError` if any point lies outside the grid box.
        """
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        inside = self.geometry.contains(pts)
        if not np.all(inside):
            bad = pts[np.argmin(inside)]
            raise OutOfBoundsError(
                f"point {bad.tolist()} lies outside the grid box "
                f"{self.geometry.lower.tolist()} .. {self.geometry.upper.tolist()}"
            )
        out = np.empty((len(pts), 3), dtype=np.complex128)
        for start in range(0, len(pts), _SAMPLE_CHUNK):
            chunk = pts[start : start + _SAMPLE_CHUNK]
            out[start : start + len(chunk)] = _trilinear(self.geometry, self.e_field, chunk)
        return out[0] if single else out


def _trilinear(geom: GridGeometry, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    dims = np.asarray(geom.dims)
    u = (pts - np.asarray(geom.origin)) / np.asarray(geom.spacing)
    idx = np.clip(np.floor(u).astype(np.int64), 0, dims - 2)
    t = np.clip(u - idx, 0.0, 1.0)
    i, j, k = idx.T
    tx, ty, tz = (t[:, a : a + 1] for a in range(3))
    c = lambda di, dj, dk: values[i + di, j + dj, k + dk]  # noqa: E731
    c00 = c(0, 0, 0) * (1 - tx) + c(1, 0, 0) * tx
    c10 = c(0, 1, 0) * (1 - tx) + c(1, 1, 0) * tx
    c01 = c(0, 0, 1) * (1 - tx) + c(1, 0, 1) * tx
    c11 = c(0, 1, 1) * (1 - tx) + c(1, 1, 1) * tx
    c0 = c00 * (1 - ty) + c10 * ty
    c1 = c01 * (1 - ty) + c11 * ty
    return c0 * (1 - tz) + c1 * tz


def field_at(field: FieldGrid, point) -> np.ndarray:
    """Complex E vector at ``point`` (nm) by trilinear interpolation."""
    return field.sample(np.asarray(point, dtype=float).reshape(3))


def normalize_unit_energy(field: FieldGrid) -> FieldGrid:
    """Rescale so that ``2 * integral(eps |E|^2) dV == 1`` over the grid."""
    energy = field.electric_energy()
    if not energy > 0.0 or not math.isfinite(energy):
        raise DegenerateFieldError("cannot normalize a field with zero total energy")
    scale = 1.0 / math.sqrt(energy)
    return field.replace(e_field=field.e_field * scale, normalized=True)


class ModeVolume(NamedTuple):
    volume: float
    r_max: np.ndarray
    e_max: float
    epsilon_max: float


def mode_volume(field: FieldGrid) -> ModeVolume:
    """V = integral(eps |E|^2) / max(eps |E|^2), with the arg-max node.

    ``e_max`` is |E| at that node and ``epsilon_max`` the permittivity there.
    """
    density = field.epsilon * field.intensity()
    flat = int(np.argmax(density))
    peak = float(density.flat[flat])
    if not peak > 0.0:
        raise DegenerateFieldError("mode volume of an all-zero field is undefined")
    ijk = np.unravel_index(flat, field.dims)
    r_max = np.asarray(field.origin) + np.asarray(field.spacing) * np.asarray(ijk)
    e_max = math.sqrt(float(np.sum(np.abs(field.e_field[ijk]) ** 2)))
    return ModeVolume(field.integrate(density) / peak, r_max, e_max, float(field.epsilon[ijk]))


# ---------------------------------------------------------------------------
# text file format

_HEADER_KEYS = {
    "wavelength_nm": 1,
    "dims": 3,
    "origin_nm": 3,
    "spacing_nm": 3,
}
_ROW_FMT = "%d %d %d" + " %.17g" * 7


def write_field_grid(field: FieldGrid, path) -> None:
    """Write ``field`` in the line-oriented text format read by :func:`load_field_grid`."""
    path = Path(path)
    geom = field.geometry
    header = [
        f"# wavelength_nm {field.wavelength_nm:.17g}",
        "# dims {} {} {}".format(*geom.dims),
        "# origin_nm {:.17g} {:.17g} {:.17g}".format(*geom.origin),
        "# spacing_nm {:.17g} {:.17g} {:.17g}".format(*geom.spacing),
    ]
    if field.label:
        header.append(f"# polarization {field.label}")
    # x-fastest ordering == Fortran order over (ix, iy, iz)
    nx, ny, nz = geom.dims
    iz, iy, ix = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    e = field.e_field.transpose(2, 1, 0, 3).reshape(-1, 3)
    eps = field.epsilon.transpose(2, 1, 0).reshape(-1)
    rows = np.column_stack(
        [
            ix.ravel(), iy.ravel(), iz.ravel(), eps,
            e[:, 0].real, e[:, 0].imag,
            e[:, 1].real, e[:, 1].imag,
            e[:, 2].real, e[:, 2].imag,
        ]
    )
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(header) + "\n")
        np.savetxt(fh, rows, fmt=_ROW_FMT)


def _parse_header(lines, path):
    meta: dict[str, str] = {}
    values: dict[str, list[float]] = {}
    for lineno, text in lines:
        body = text[1:].strip()
        if not body:
            continue
        key, _, rest = body.partition(" ")
        tokens = rest.split()
        if key in _HEADER_KEYS:
            if key in values:
                raise MalformedHeaderError(f"duplicate header key {key!r}", path, lineno)
            if len(tokens) != _HEADER_KEYS[key]:
                raise MalformedHeaderError(
                    f"{key} expects {_HEADER_KEYS[key]} value(s), got {len(tokens)}", path, lineno
                )
            try:
                values[key] = [float(t) for t in tokens]
            except ValueError:
                raise MalformedHeaderError(f"non-numeric value in {key}", path, lineno) from None
            if key == "dims" and any(v != int(v) or v < 2 for v in values[key]):
                raise MalformedHeaderError("dims must be integers >= 2", path, lineno)
            if key == "spacing_nm" and any(v <= 0 for v in values[key]):
                raise MalformedHeaderError("spacing must be positive", path, lineno)
        else:
            meta[key] = rest.strip()
    missing = [k for k in _HEADER_KEYS if k not in values]
    if missing:
        last = lines[-1][0] if lines else 1
        raise MalformedHeaderError(f"missing header key(s): {', '.join(missing)}", path, last)
    return values, meta


def read_field_header(path) -> tuple[GridGeometry, float]:
    """Grid geometry and wavelength from a field file's header, without the data rows."""
    path = Path(path)
    header: list[tuple[int, str]] = []
    with open(path, encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text:
                continue
            if not text.startswith("#"):
                break
            header.append((lineno, text))
    values, _ = _parse_header(header, path)
    dims = tuple(int(v) for v in values["dims"])
    return GridGeometry(tuple(values["origin_nm"]), tuple(values["spacing_nm"]), dims), values["wavelength_nm"][0]


def load_field_grid(path) -> FieldGrid:
    """Read a field file.  The result is never flagged as normalized."""
    path = Path(path)
    header: list[tuple[int, str]] = []
    data_lines: list[str] = []
    data_lineno: list[int] = []
    with open(path, encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text:
                continue
            if text.startswith("#"):
                if data_lines:
                    raise MalformedHeaderError("header line after data rows", path, lineno)
                header.append((lineno, text))
            else:
                data_lines.append(text)
                data_lineno.append(lineno)

    values, meta = _parse_header(header, path)
    dims = tuple(int(v) for v in values["dims"])
    n_expected = int(np.prod(dims))
    if len(data_lines) != n_expected:
        line = data_lineno[-1] if data_lines else (header[-1][0] if header else 1)
        raise NodeCountMismatchError(
            f"dims {dims} require {n_expected} node rows, found {len(data_lines)}", path, line
        )

    rows = np.empty((n_expected, 10))
    for r, text in enumerate(data_lines):
        parts = text.split()
        if len(parts) != 10:
            raise MalformedRowError(f"expected 10 columns, got {len(parts)}", path, data_lineno[r])
        try:
            rows[r] = [float(p) for p in parts]
        except ValueError:
            raise MalformedRowError("non-numeric column", path, data_lineno[r]) from None

    nx, ny, nz = dims
    n = np.arange(n_expected)
    expected = np.column_stack([n % nx, (n // nx) % ny, n // (nx * ny)])
    bad = np.nonzero(np.any(rows[:, :3] != expected, axis=1))[0]
    if bad.size:
        r = int(bad[0])
        raise NonMonotonicGridError(
            f"node indices {rows[r, :3].astype(int).tolist()} out of x-fastest order "
            f"(expected {expected[r].tolist()})",
            path,
            data_lineno[r],
        )
    low = np.nonzero(~(rows[:, 3] >= 1.0))[0]
    if low.size:
        r = int(low[0])
        raise EpsilonRangeError(f"epsilon {rows[r, 3]!r} < 1", path, data_lineno[r])

    to_grid = lambda col: col.reshape(nz, ny, nx).transpose(2, 1, 0)  # noqa: E731
    e = np.stack(
        [to_grid(rows[:, 4 + 2 * c] + 1j * rows[:, 5 + 2 * c]) for c in range(3)], axis=-1
    )
    geom = GridGeometry(tuple(values["origin_nm"]), tuple(values["spacing_nm"]), dims)
    label = meta.pop("polarization", "")
    return FieldGrid(
        geom,
        np.ascontiguousarray(e),
        np.ascontiguousarray(to_grid(rows[:, 3])),
        wavelength_nm=values["wavelength_nm"][0],
        label=label,
        normalized=False,
        meta=meta,
    )
