import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvwgm.errors import (
    DegenerateFieldError,
    EpsilonRangeError,
    GridValidationError,
    MalformedHeaderError,
    MalformedRowError,
    NodeCountMismatchError,
    NonMonotonicGridError,
    OutOfBoundsError,
)
from nvwgm.field import (
    FieldGrid,
    GridGeometry,
    field_at,
    load_field_grid,
    mode_volume,
    normalize_unit_energy,
    read_field_header,
    write_field_grid,
)

from conftest import gaussian_grid, uniform_grid


def _minimal_file(path, rows=8, header=None):
    lines = header or ["# wavelength_nm 637", "# dims 2 2 2", "# origin_nm 0 0 0", "# spacing_nm 1 1 1"]
    body = []
    for n in range(rows):
        ix, iy, iz = n % 2, (n // 2) % 2, n // 4
        body.append(f"{ix} {iy} {iz} 1 1 0 0 0 0 0")
    path.write_text("\n".join(lines + body) + "\n")
    return path


# -- geometry -----------------------------------------------------------------


def test_geometry_rejects_small_dims_and_bad_spacing():
    with pytest.raises(GridValidationError):
        GridGeometry((0, 0, 0), (1, 1, 1), (1, 2, 2))
    with pytest.raises(GridValidationError):
        GridGeometry((0, 0, 0), (1, 0, 1), (2, 2, 2))


def test_epsilon_below_one_rejected():
    with pytest.raises(GridValidationError):
        uniform_grid(eps=0.5)


def test_from_bounds_covers_box_and_hits_anchor():
    g = GridGeometry.from_bounds((-10, -10, -7), (10, 12, 3), (3, 3, 2), anchor=(1.0, 0.0, 0.5))
    assert np.all(g.lower <= [-10, -10, -7]) and np.all(g.upper >= [10, 12, 3])
    xs, ys, zs = g.axes()
    assert np.min(np.abs(xs - 1.0)) < 1e-12 and np.min(np.abs(zs - 0.5)) < 1e-12


def test_trapezoid_weights_integrate_box_volume():
    g = GridGeometry((1, 2, 3), (0.5, 2.0, 1.5), (5, 4, 7))
    wx, wy, wz = g.weights()
    assert math.isclose(wx.sum() * wy.sum() * wz.sum(), g.volume, rel_tol=1e-14)


# -- file format --------------------------------------------------------------


def test_minimal_file_loads(tmp_path):
    f = load_field_grid(_minimal_file(tmp_path / "f.txt"))
    assert f.n_nodes == 8 and not f.normalized
    assert f.wavelength_nm == 637.0
    np.testing.assert_array_equal(f.e_field[..., 0], 1.0)


def test_round_trip_is_bit_identical(tmp_path):
    f = gaussian_grid(w=7.0, half=(10.0, 8.0, 6.0), h=(2.0, 2.0, 3.0))
    f = f.replace(e_field=f.e_field * np.exp(0.3j) / 3.0, label="TE")
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    write_field_grid(f, a)
    g = load_field_grid(a)
    write_field_grid(g, b)
    assert a.read_bytes() == b.read_bytes()
    np.testing.assert_array_equal(g.e_field, f.e_field)
    np.testing.assert_array_equal(g.epsilon, f.epsilon)
    assert g.label == "TE" and g.geometry == f.geometry


def test_header_only_reader(tmp_path):
    geom, lam = read_field_header(_minimal_file(tmp_path / "f.txt"))
    assert geom.dims == (2, 2, 2) and lam == 637.0


def test_node_count_mismatch(tmp_path):
    with pytest.raises(NodeCountMismatchError) as exc:
        load_field_grid(_minimal_file(tmp_path / "f.txt", rows=7))
    assert exc.value.line == 11


def test_malformed_header_names_line(tmp_path):
    header = ["# wavelength_nm 637", "# dims 2 2", "# origin_nm 0 0 0", "# spacing_nm 1 1 1"]
    with pytest.raises(MalformedHeaderError) as exc:
        load_field_grid(_minimal_file(tmp_path / "f.txt", header=header))
    assert exc.value.line == 2 and "f.txt:2" in str(exc.value)


def test_missing_header_key(tmp_path):
    header = ["# wavelength_nm 637", "# dims 2 2 2", "# origin_nm 0 0 0"]
    with pytest.raises(MalformedHeaderError):
        load_field_grid(_minimal_file(tmp_path / "f.txt", header=header))


def test_non_monotonic_rows(tmp_path):
    p = _minimal_file(tmp_path / "f.txt")
    lines = p.read_text().splitlines()
    lines[5], lines[6] = lines[6], lines[5]
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(NonMonotonicGridError) as exc:
        load_field_grid(p)
    assert exc.value.line == 6


def test_epsilon_below_one_in_file(tmp_path):
    p = _minimal_file(tmp_path / "f.txt")
    lines = p.read_text().splitlines()
    lines[7] = "1 1 0 0.5 1 0 0 0 0 0"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(EpsilonRangeError) as exc:
        load_field_grid(p)
    assert exc.value.line == 8


def test_bad_row(tmp_path):
    p = _minimal_file(tmp_path / "f.txt")
    lines = p.read_text().splitlines()
    lines[4] = "0 0 0 1 1 0 0 0 0"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(MalformedRowError):
        load_field_grid(p)


# -- normalization and mode volume -------------------------------------------


def test_uniform_field_normalizes_to_closed_form():
    f = uniform_grid(dims=(3, 4, 5), spacing=(2.0, 1.0, 0.5))
    v0 = f.geometry.volume
    n = normalize_unit_energy(f)
    assert n.normalized
    np.testing.assert_allclose(np.abs(n.e_field[..., 0]), 1.0 / math.sqrt(2 * v0), rtol=1e-14)


def test_normalization_idempotent_and_scale_invariant():
    f = gaussian_grid(w=9.0, half=(20.0, 20.0, 20.0), h=(2.0, 2.0, 2.0))
    n1 = normalize_unit_energy(f)
    n2 = normalize_unit_energy(n1)
    n3 = normalize_unit_energy(f.replace(e_field=f.e_field * 7.3))
    assert math.isclose(n1.electric_energy(), 1.0, rel_tol=1e-12)
    np.testing.assert_allclose(n2.e_field, n1.e_field, rtol=1e-12)
    np.testing.assert_allclose(n3.e_field, n1.e_field, rtol=1e-12)


def test_zero_field_is_degenerate():
    f = uniform_grid(value=(0, 0, 0))
    with pytest.raises(DegenerateFieldError):
        normalize_unit_energy(f)
    with pytest.raises(DegenerateFieldError):
        mode_volume(f)


def test_uniform_mode_volume_is_box_volume():
    f = uniform_grid(dims=(3, 4, 5), spacing=(2.0, 1.0, 0.5), eps=2.5)
    assert math.isclose(mode_volume(f).volume, f.geometry.volume, rel_tol=1e-14)


def test_gaussian_mode_volume_oracle():
    # integral of exp(-2 r^2 / w^2) over all space is (pi/2)^(3/2) w^3
    w = 30.0
    f = gaussian_grid(w=w, half=(150.0, 150.0, 150.0), h=(5.0, 5.0, 5.0))
    mv = mode_volume(f)
    assert math.isclose(mv.volume, (math.pi / 2) ** 1.5 * w**3, rel_tol=1e-9)
    np.testing.assert_allclose(mv.r_max, 0.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(0, 2 * math.pi))
def test_mode_volume_scale_invariant(c, phase):
    f = gaussian_grid(w=8.0, half=(16.0, 16.0, 16.0), h=(2.0, 2.0, 2.0))
    g = f.replace(e_field=f.e_field * c * np.exp(1j * phase))
    assert math.isclose(mode_volume(g).volume, mode_volume(f).volume, rel_tol=1e-12)


# -- sampling ------------------------------------------------------------------


def test_sample_on_node_and_edge_midpoint():
    f = gaussian_grid(w=5.0, half=(6.0, 6.0, 6.0), h=(2.0, 2.0, 2.0))
    xs, ys, zs = f.geometry.axes()
    np.testing.assert_array_equal(field_at(f, (xs[2], ys[3], zs[1])), f.e_field[2, 3, 1])
    mid = field_at(f, (0.5 * (xs[2] + xs[3]), ys[3], zs[1]))
    np.testing.assert_allclose(mid, 0.5 * (f.e_field[2, 3, 1] + f.e_field[3, 3, 1]), rtol=1e-14)


def test_sample_outside_raises():
    f = uniform_grid(spacing=(1.0, 1.0, 1.0))
    with pytest.raises(OutOfBoundsError):
        field_at(f, (f.geometry.upper[0] + 1.0, 0.5, 0.5))
    with pytest.raises(OutOfBoundsError):
        f.sample([[0.5, 0.5, 0.5], [-1.0, 0.5, 0.5]])


@settings(max_examples=50, deadline=None)
@given(
    st.tuples(*[st.floats(-3, 3)] * 4),
    st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)),
)
def test_trilinear_exact_for_affine_fields(coef, frac):
    g = GridGeometry((-1.0, 2.0, 0.0), (0.5, 1.5, 2.0), (5, 4, 3))
    x, y, z = np.meshgrid(*g.axes(), indexing="ij")
    a, b, c, d = coef
    val = a * x + b * y + c * z + d
    e = np.stack([val, 1j * val, val * (1 - 2j)], axis=-1)
    f = FieldGrid(g, e, np.ones(g.dims))
    p = g.lower + np.asarray(frac) * (g.upper - g.lower)
    expect = a * p[0] + b * p[1] + c * p[2] + d
    np.testing.assert_allclose(field_at(f, p), [expect, 1j * expect, expect * (1 - 2j)], atol=1e-11)


def test_arrays_are_read_only():
    f = uniform_grid()
    with pytest.raises(ValueError):
        f.e_field[0, 0, 0, 0] = 2.0
