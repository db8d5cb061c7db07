from dataclasses import dataclass

import numpy as np
import pytest

from nvwgm.emitter import CavityParams, cavity_params
from nvwgm.field import FieldGrid, GridGeometry
from nvwgm.surrogate import (
    SurrogateField,
    SurrogateWgmSpec,
    WgmSolution,
    d2_ring_spec,
    device_grid,
    normalized_surrogate,
    select_azimuthal_order,
    solve_wgm,
)


@dataclass
class D2:
    spec: SurrogateWgmSpec
    solution: WgmSolution
    cavity: FieldGrid
    twin: SurrogateField
    params: CavityParams


@pytest.fixture(scope="session")
def d2() -> D2:
    """1.8 um GaP ring, 150 nm thick, TE, m picked nearest 637 nm, Q = 3500."""
    base = d2_ring_spec()
    spec = d2_ring_spec(m=select_azimuthal_order(base))
    sol = solve_wgm(spec)
    cavity, twin = normalized_surrogate(spec, device_grid(spec, solution=sol), sol)
    return D2(spec, sol, cavity, twin, cavity_params(cavity, 3500.0))


def uniform_grid(value=(1.0, 0.0, 0.0), eps=1.0, origin=(0.0, 0.0, 0.0), spacing=(1.0, 1.0, 1.0), dims=(4, 5, 6), **kw):
    geom = GridGeometry(origin, spacing, dims)
    e = np.broadcast_to(np.asarray(value, dtype=complex), (*dims, 3)).copy()
    return FieldGrid(geom, e, np.full(dims, eps), **kw)


def gaussian_grid(w=40.0, half=(200.0, 200.0, 200.0), h=(5.0, 5.0, 5.0), center=(0.0, 0.0, 0.0), eps=1.0, pol=(1.0, 0.0, 0.0)):
    """exp(-|r - center|^2 / w^2) along ``pol`` on a box centered on the origin."""
    lower = -np.asarray(half)
    dims = tuple(int(round(2 * half[a] / h[a])) + 1 for a in range(3))
    geom = GridGeometry(tuple(lower), h, dims)
    x, y, z = np.meshgrid(*geom.axes(), indexing="ij")
    c = np.asarray(center)
    g = np.exp(-((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2) / w**2)
    e = g[..., None] * np.asarray(pol, dtype=complex)
    return FieldGrid(geom, e, np.full(dims, eps), wavelength_nm=637.0)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per criterion, echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(label, ok, detail):
        line = f"criterion {label}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: s.split(":")[0]):
            terminalreporter.write_line(line)
