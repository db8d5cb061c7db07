import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, special, stats

from nvwgm.emitter import NV_AXES, CavityParams, EmitterSample, dipole_axes
from nvwgm.ensemble import (
    FREE_SPACE,
    WAVEGUIDE,
    DecayCurve,
    EnsembleSpec,
    PurcellDistribution,
    airy_first_zero_nm,
    airy_profile,
    decay_curve,
    fit_single_exponential,
    fit_time_grid,
    mean_purcell,
    mean_purcell_error,
    mean_purcell_quadrature,
    purcell_distribution,
    sample_ensemble,
)
from nvwgm.errors import DegenerateDistributionError

G0, GZ = 1 / 8.4, 0.0025


class UniformField:
    """The same complex field vector everywhere."""

    normalized = True

    def __init__(self, e):
        self.e = np.asarray(e, dtype=complex)

    def sample(self, points):
        return np.tile(self.e, (len(np.atleast_2d(points)), 1))


class LineField:
    """E(x) = s(x) * direction, for handing chosen Purcell values to chosen emitters."""

    normalized = True

    def __init__(self, direction, values):
        self.direction = np.asarray(direction, float)
        self.values = values

    def sample(self, points):
        p = np.atleast_2d(points)
        s = np.array([self.values[int(round(x))] for x in p[:, 0]])
        return s[:, None] * self.direction.astype(complex)


def _params(e_max=1.0):
    return CavityParams(637.0, 3500.0, 1e7, e_max=e_max)


# -- Airy excitation ---------------------------------------------------------


def test_airy_half_maximum_and_first_zero():
    assert math.isclose(float(airy_profile(250.0, 500.0)), 0.5, rel_tol=1e-12)
    r0 = airy_first_zero_nm(500.0)
    assert float(airy_profile(r0, 500.0)) < 1e-8
    # independent check of the zero location against the Bessel root
    x_half = optimize.newton(lambda x: 2 * special.j1(x) / x - math.sqrt(0.5), 1.6, tol=1e-15)
    assert math.isclose(r0, special.jn_zeros(1, 1)[0] * 250.0 / x_half, rel_tol=1e-9)
    assert float(airy_profile(0.0, 500.0)) == 1.0


def test_spec_validation():
    with pytest.raises(ValueError):
        EnsembleSpec(depth_sigma_nm=0.0)
    with pytest.raises(ValueError):
        EnsembleSpec(fwhm_nm=-1.0)
    with pytest.raises(ValueError):
        EnsembleSpec(seed=2**64)
    with pytest.raises(ValueError):
        EnsembleSpec(excitation_polarization=(0, 0, 0))


# -- sampling ------------------------------------------------------------------


def test_same_seed_identical_samples():
    spec = EnsembleSpec(sample_count=5000, seed=42, footprint=(600.0, 900.0), center_nm=(760.0, 0.0))
    a, b = sample_ensemble(spec), sample_ensemble(spec)
    for name in ("positions", "nv_axes", "betas", "detunings", "base_weights", "dipoles"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    c = sample_ensemble(EnsembleSpec(sample_count=5000, seed=43, footprint=(600.0, 900.0), center_nm=(760.0, 0.0)))
    assert not np.array_equal(a.positions, c.positions)


def test_sample_distributions():
    spec = EnsembleSpec(sample_count=40000, seed=1, footprint=(620.0, 900.0), center_nm=(760.0, 0.0))
    ens = sample_ensemble(spec)
    depth = -ens.positions[:, 2]
    assert np.all(depth > 0)
    truth = stats.truncnorm(-3.0, np.inf, loc=15.0, scale=5.0)
    assert abs(depth.mean() - truth.mean()) < 5 * truth.std() / math.sqrt(len(depth))
    r = np.hypot(ens.positions[:, 0], ens.positions[:, 1])
    assert np.all((r >= 620.0) & (r <= 900.0))
    d = np.hypot(ens.positions[:, 0] - 760.0, ens.positions[:, 1])
    assert np.all(d <= spec.support_radius_nm)
    counts = np.bincount([int(np.argmax(NV_AXES @ ax)) for ax in ens.nv_axes], minlength=4)
    assert stats.chisquare(counts).pvalue > 1e-4
    assert np.all((ens.betas >= 0) & (ens.betas < 2 * np.pi))
    assert np.all(ens.detunings == 0.0)
    assert len(ens) == 2 * spec.sample_count


def test_footprint_outside_support_is_degenerate():
    spec = EnsembleSpec(sample_count=10, footprint=(100.0, 200.0), center_nm=(5000.0, 0.0))
    with pytest.raises(DegenerateDistributionError):
        sample_ensemble(spec)


def test_wide_spot_leaves_polarization_factor_only():
    spec = EnsembleSpec(sample_count=2000, fwhm_nm=1e9, seed=5)
    ens = sample_ensemble(spec)
    r = np.hypot(*ens.positions[:, :2].T)
    assert r.max() > 1e6  # support scales with the spot
    proj = np.einsum("nic,c->ni", ens.dipoles, np.array(spec.excitation_polarization))
    expect = proj**2 * airy_profile(r, spec.fwhm_nm)[:, None]
    np.testing.assert_allclose(ens.base_weights, expect, rtol=1e-14)
    near = r < 1e6
    np.testing.assert_allclose(ens.base_weights[near], proj[near] ** 2, rtol=1e-5, atol=1e-12)


def test_ensemble_indexing_matches_arrays():
    ens = sample_ensemble(EnsembleSpec(sample_count=10, seed=2))
    s, w = ens[7]
    k = 3
    assert s.excited_state == 2 and w == ens.base_weights[k, 1]
    np.testing.assert_allclose(s.dipole, dipole_axes(ens.nv_axes[k], ens.betas[k])[1], atol=1e-15)
    np.testing.assert_allclose(s.dipole_lab, ens.dipoles_lab()[k, 1], atol=1e-15)


# -- distributions -------------------------------------------------------------


def test_hand_arithmetic_example_through_pipeline():
    params = _params()
    pref = params.peak_purcell * params.n_c / params.n_d
    emitters = [EmitterSample((0.0, 0.0, 0.0), NV_AXES[0]), EmitterSample((1.0, 0.0, 0.0), NV_AXES[0])]
    mu = emitters[0].dipole_lab
    cav = LineField(mu, {0: math.sqrt(1.0 / pref), 1: math.sqrt(3.0 / pref)})
    samples = [(e, 0.7) for e in emitters]
    fs = purcell_distribution(samples, cav, params, FREE_SPACE)
    wg = purcell_distribution(samples, cav, params, WAVEGUIDE)
    np.testing.assert_allclose(fs.zeta, [1.0, 3.0], rtol=1e-13)
    assert math.isclose(mean_purcell(fs), 2.0, rel_tol=1e-13)
    assert math.isclose(mean_purcell(wg), 2.5, rel_tol=1e-13)


def test_single_entry_mean():
    assert mean_purcell(PurcellDistribution.from_entries([(5.0, 2.0)])) == 5.0


def test_all_zero_purcell_waveguide_is_degenerate():
    samples = [(EmitterSample((0.0, 0.0, 0.0), ax), 1.0) for ax in NV_AXES]
    cav = UniformField((0.0, 0.0, 0.0))
    wg = purcell_distribution(samples, cav, _params(), WAVEGUIDE)
    assert wg.degenerate
    with pytest.raises(DegenerateDistributionError):
        mean_purcell(wg)
    with pytest.raises(DegenerateDistributionError):
        decay_curve(wg, G0, GZ)
    assert mean_purcell(purcell_distribution(samples, cav, _params(), FREE_SPACE)) == 0.0


def test_invalid_distributions():
    with pytest.raises(ValueError):
        PurcellDistribution(np.ones(3), -np.ones(3), FREE_SPACE)
    with pytest.raises(ValueError):
        PurcellDistribution(np.ones(3), np.ones(2), FREE_SPACE)
    with pytest.raises(ValueError):
        PurcellDistribution(np.ones(3), np.ones(3), "fiber")


@pytest.fixture(scope="module")
def d2_small(d2):
    spec = EnsembleSpec(sample_count=20000, seed=11, footprint=(620.0, 900.0), center_nm=(760.0, 0.0))
    ens = sample_ensemble(spec)
    fs = purcell_distribution(ens, d2.twin, d2.params, FREE_SPACE)
    wg = purcell_distribution(ens, d2.twin, d2.params, WAVEGUIDE)
    return spec, ens, fs, wg


def test_waveguide_weight_identity(d2_small):
    _, _, fs, wg = d2_small
    assert np.array_equal(fs.zeta, wg.zeta)
    assert np.array_equal(wg.weight, fs.weight * fs.zeta)
    assert mean_purcell(wg) >= mean_purcell(fs)


def test_thread_count_does_not_change_entries(d2, d2_small):
    _, ens, fs, _ = d2_small
    par = purcell_distribution(ens, d2.twin, d2.params, FREE_SPACE, workers=3)
    assert np.array_equal(par.zeta, fs.zeta) and np.array_equal(par.weight, fs.weight)


def test_histogram_is_normalized(d2_small):
    _, _, fs, wg = d2_small
    for dist in (fs, wg):
        edges, frac = dist.histogram(bins=40)
        assert len(edges) == 41 and math.isclose(frac.sum(), 1.0, rel_tol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.just(0.0) | st.floats(1e-6, 50), st.floats(0, 10)), min_size=1, max_size=30))
def test_size_biased_mean_not_smaller(entries):
    z = np.array([e[0] for e in entries])
    w = np.array([e[1] for e in entries])
    if not w.sum() > 0 or not (w * z).sum() > 0:
        return
    fs = PurcellDistribution(z, w, FREE_SPACE)
    wg = PurcellDistribution(z, w * z, WAVEGUIDE)
    assert mean_purcell(wg) >= mean_purcell(fs) * (1 - 1e-12)


def test_standard_error_matches_iid_formula():
    rng = np.random.default_rng(0)
    z = rng.exponential(2.0, 4000)
    dist = PurcellDistribution(z, np.ones_like(z), FREE_SPACE)
    assert math.isclose(mean_purcell_error(dist), z.std(ddof=1) / math.sqrt(len(z)), rel_tol=1e-9)


# -- decay curves --------------------------------------------------------------


@pytest.mark.parametrize("f", [0.0, 1.8, 13.0])
def test_single_entry_curve_is_exact_exponential(f):
    curve = decay_curve(PurcellDistribution.from_entries([(f, 1.0)]), G0, GZ)
    np.testing.assert_allclose(curve.intensities, np.exp(-(G0 + f * GZ) * curve.times), rtol=1e-14)
    assert curve.intensities[0] == 1.0


def test_mixture_lies_between_components():
    curve = decay_curve(PurcellDistribution.from_entries([(0.5, 1.0), (20.0, 3.0)]), G0, GZ)
    slow = np.exp(-(G0 + 0.5 * GZ) * curve.times)
    fast = np.exp(-(G0 + 20.0 * GZ) * curve.times)
    assert np.all(curve.intensities <= slow * (1 + 1e-14)) and np.all(curve.intensities >= fast * (1 - 1e-14))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0.01, 10)), min_size=1, max_size=20))
def test_mixture_non_increasing_and_log_convex(entries):
    curve = decay_curve(PurcellDistribution.from_entries(entries), G0, GZ)
    assert curve.is_non_increasing()
    assert curve.is_log_convex(tol=1e-12)
    fit = fit_single_exponential(curve)
    t = curve.times
    sel = t <= 40.0
    logy = np.log(curve.intensities[sel])
    ts = t[sel]
    line = np.polyval(np.polyfit(ts, logy, 1), ts)
    # a convex log-curve sits above its least-squares line at both ends
    assert logy[0] - line[0] >= -1e-9 and logy[-1] - line[-1] >= -1e-9
    assert fit.tau_ns > 0


def test_fit_recovers_pure_exponential():
    t = fit_time_grid()
    fit = fit_single_exponential(DecayCurve(t, np.exp(-t / 8.4)))
    assert abs(fit.tau_ns - 8.4) <= 1e-6
    assert fit.rms_residual < 1e-12 and fit.n_points == 401


def test_fit_of_delta_distributions():
    for f, tau in ((1.8, 8.09), (4.2, 7.72)):
        fit = fit_single_exponential(decay_curve(PurcellDistribution.from_entries([(f, 1.0)]), G0, GZ))
        assert abs(fit.tau_ns - tau) <= 0.01


def test_fit_errors():
    t = fit_time_grid()
    with pytest.raises(ValueError):
        fit_single_exponential(DecayCurve(t[:100], np.exp(-t[:100])))
    y = np.exp(-t)
    y[50] = 0.0
    with pytest.raises(ValueError):
        fit_single_exponential(DecayCurve(t, y))
    with pytest.raises(ValueError):
        decay_curve(PurcellDistribution.from_entries([(1.0, 1.0)]), G0, GZ, times=[1.0, 2.0])


# -- quadrature oracle ---------------------------------------------------------


def _brute_orientation_average(spec, e, params, collection):
    """Average over axes, a fine beta grid and both transitions, by enumeration."""
    betas = np.linspace(0, 2 * np.pi, 720, endpoint=False)
    m = spec.orientation.matrix
    pol = np.asarray(spec.excitation_polarization)
    pref = params.peak_purcell * params.n_c / params.n_d / params.e_max**2
    num = den = 0.0
    for ax in NV_AXES:
        for b in betas:
            for mu in dipole_axes(ax, b):
                a = (mu @ pol) ** 2
                f = pref * abs((m @ mu) @ e) ** 2
                w = a * (f if collection == WAVEGUIDE else 1.0)
                num += w * f
                den += w
    return num / den


@pytest.mark.parametrize("collection", [FREE_SPACE, WAVEGUIDE])
@pytest.mark.parametrize("angle", [0.0, 0.9])
def test_quadrature_uniform_field(collection, angle):
    e = np.array([0.3 + 0.1j, -0.5j, 0.8])
    params = _params(e_max=float(np.linalg.norm(e)))
    spec = EnsembleSpec(in_plane_angle=angle, excitation_polarization=(1.0, 0.2, -0.3))
    got = mean_purcell_quadrature(spec, UniformField(e), params, collection, n_radial=8, n_azimuth=16, n_depth=6)
    assert math.isclose(got, _brute_orientation_average(spec, e, params, collection), rel_tol=1e-12)


def test_quadrature_uniform_field_independent_of_spatial_rule():
    e = np.array([1.0, 0.5j, 0.0])
    params = _params(e_max=float(np.linalg.norm(e)))
    spec = EnsembleSpec(footprint=(600.0, 900.0), center_nm=(760.0, 0.0))
    a = mean_purcell_quadrature(spec, UniformField(e), params, FREE_SPACE, n_radial=8, n_azimuth=32, n_depth=4)
    b = mean_purcell_quadrature(spec, UniformField(e), params, FREE_SPACE, n_radial=16, n_azimuth=64, n_depth=8)
    assert math.isclose(a, b, rel_tol=1e-12)


def test_quadrature_beta_refinement(d2):
    spec = EnsembleSpec(footprint=(620.0, 900.0), center_nm=(760.0, 0.0))
    for coll in (FREE_SPACE, WAVEGUIDE):
        a = mean_purcell_quadrature(spec, d2.twin, d2.params, coll, n_beta=16, n_azimuth=128)
        b = mean_purcell_quadrature(spec, d2.twin, d2.params, coll, n_beta=32, n_azimuth=128)
        assert abs(a - b) / b <= 1e-3


def test_quadrature_spatial_refinement(d2):
    spec = EnsembleSpec(footprint=(620.0, 900.0), center_nm=(760.0, 0.0))
    a = mean_purcell_quadrature(spec, d2.twin, d2.params, WAVEGUIDE, n_radial=48, n_azimuth=128, n_depth=24)
    b = mean_purcell_quadrature(spec, d2.twin, d2.params, WAVEGUIDE, n_radial=64, n_azimuth=256, n_depth=32)
    assert abs(a - b) / b <= 1e-4


def test_quadrature_rejects_detuned_ensembles(d2):
    with pytest.raises(ValueError):
        mean_purcell_quadrature(EnsembleSpec(detuning_sigma=1.0), d2.twin, d2.params)
