import csv
import math
import os

import numpy as np
import pytest

from nvwgm import __version__
from nvwgm.cli import EXIT_COMPUTE, EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from nvwgm.config import AUTO, ConfigError, default_config, parse_config, require_valid
from nvwgm.field import mode_volume, write_field_grid
from nvwgm.outputs import atomic_write_text, read_csv_table

from conftest import gaussian_grid

SMALL_ENSEMBLE = """
[cavity]
lateral_spacing = 40
vertical_spacing = 10

[ensemble]
sample_count = 3000
histogram_bins = 20
"""


FILE_SOURCE = """
[cavity]
source = file
field_file = {path}

[coupling]
axis_offset = 0, 0, 500

[ensemble]
center = 0, 0
"""


def _write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- config ------------------------------------------------------------------


def test_default_config_is_valid(capsys):
    cfg, violations = parse_config("")
    assert violations == []
    assert cfg["cavity"]["Q"] == 3500.0 and cfg["fiber"]["diameter"] == 550.0
    assert cfg["decay"]["lifetime0"] == 8.4 and cfg["decay"]["gamma0_zpl"] == 0.0025
    assert cfg["ensemble"]["depth_mean"] == 15.0 and cfg["ensemble"]["fwhm"] == 500.0
    assert main(["validate"]) == EXIT_OK
    assert "configuration is valid" in capsys.readouterr().out


def test_validate_reports_every_violation(tmp_path, capsys):
    p = _write(tmp_path, "[ensemble]\ndepth_sigma = -1\n[cavity]\nQ = 0\n[fibre]\nx = 1\n[decay]\nwindow = abc\n")
    assert main(["validate", "--config", str(p)]) == EXIT_CONFIG
    out = capsys.readouterr().out.splitlines()
    keys = [line.split(":")[0] for line in out]
    assert "ensemble.depth_sigma" in keys and "cavity.Q" in keys and "decay.window" in keys
    assert any(k.startswith("fibre") for k in keys)


def test_single_violation_names_key():
    _, violations = parse_config("[ensemble]\ndepth_sigma = -1\n")
    assert [k for k, _ in violations] == ["ensemble.depth_sigma"]
    _, violations = parse_config("[cavity]\nQ = 0\n")
    assert [k for k, _ in violations] == ["cavity.Q"]
    with pytest.raises(ConfigError):
        require_valid(violations)


def test_cross_field_checks():
    _, v = parse_config("[cavity]\nn_core = 2.0\n")
    assert any(k.startswith("cavity.n_") for k, _ in v)
    _, v = parse_config("[fiber]\nn_fiber = 0.9\n")
    assert any(k.startswith("fiber.") for k, _ in v)
    _, v = parse_config("[decay]\nwindow = 50\nduration = 40\n")
    assert any(k.startswith("decay.") for k, _ in v)
    _, v = parse_config("[cavity]\nsource = file\n")
    keys = [k for k, _ in v]
    assert ("cavity.field_file", "required when source = file") in v
    assert "coupling.axis_offset" in keys and "ensemble.center" in keys
    _, v = parse_config("[cavity]\nsource = file\nfield_file = x\n[coupling]\naxis_offset = 0, 0, 1\n[ensemble]\ncenter = 0, 0\nrestrict_to_footprint = true\n")
    assert [k for k, _ in v] == ["ensemble.restrict_to_footprint"]


def test_missing_field_file_reported_by_validate(tmp_path, capsys):
    p = _write(tmp_path, FILE_SOURCE.format(path=tmp_path / "nope.txt"))
    assert main(["validate", "--config", str(p)]) == EXIT_CONFIG
    assert "nope.txt" in capsys.readouterr().out


def test_config_round_trip():
    cfg = default_config().with_overrides(**{"cavity.Q": 35000.0, "ensemble.seed": 7})
    again, violations = parse_config(cfg.to_ini())
    assert violations == [] and again == cfg
    assert again["coupling"]["axis_offset"] == AUTO


# -- command runs --------------------------------------------------------------


def test_missing_field_file_exits_io_and_names_path(tmp_path, capsys):
    missing = tmp_path / "missing_field.txt"
    p = _write(tmp_path, FILE_SOURCE.format(path=missing))
    assert main(["couple", "--config", str(p), "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_IO
    assert str(missing) in capsys.readouterr().err


def test_bad_seed_is_config_error(capsys):
    assert main(["ensemble", "--seed", str(2**64), "--quiet"]) == EXIT_CONFIG


def test_computation_error_exit_code(tmp_path, capsys):
    # a fiber too thin to guide TE01
    p = _write(tmp_path, "[fiber]\ndiameter = 200\nmode = TE01\n")
    assert main(["fiber-mode", "--config", str(p), "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_COMPUTE
    assert "fiber-mode" in capsys.readouterr().err


def test_fiber_mode_outputs(tmp_path):
    out = tmp_path / "fm"
    assert main(["fiber-mode", "--out", str(out), "--quiet"]) == EXIT_OK
    with open(out / "fiber_modes.csv") as fh:
        row = next(csv.DictReader(line for line in fh if not line.startswith("#")))
    assert row["mode"] == "HE11"
    assert abs(float(row["v_number"]) - 2.848) < 1e-3 and float(row["residual"]) <= 1e-10
    text = (out / "fiber_modes.csv").read_text()
    assert text.startswith(f"# nvwgm {__version__}\n# command: fiber-mode\n")
    assert "#   diameter = 550" in text
    assert (out / "run_metadata_fiber-mode.json").exists()


def test_decay_command_lifetimes(tmp_path):
    out = tmp_path / "dc"
    assert main(["decay", "--out", str(out), "--quiet"]) == EXIT_OK
    report = (out / "decay_report.txt").read_text()
    taus = [float(line.split("=")[1].split()[0]) for line in report.splitlines() if line.startswith("lifetime_ns")]
    assert len(taus) == 2
    assert abs(taus[0] - 8.09) <= 0.01 and abs(taus[1] - 7.72) <= 0.01


@pytest.fixture(scope="module")
def ensemble_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("ens")
    cfg = _write(base, SMALL_ENSEMBLE)
    runs = {}
    old = os.environ.get("NVWGM_NUM_THREADS")
    try:
        for name, threads in (("a", "1"), ("b", "1"), ("c", "3")):
            os.environ["NVWGM_NUM_THREADS"] = threads
            assert main(["ensemble", "--config", str(cfg), "--out", str(base / name), "--seed", "5", "--quiet"]) == EXIT_OK
            runs[name] = base / name
    finally:
        if old is None:
            os.environ.pop("NVWGM_NUM_THREADS", None)
        else:
            os.environ["NVWGM_NUM_THREADS"] = old
    return runs


ENSEMBLE_FILES = ["G_freespace.csv", "G_waveguide.csv", "decay_freespace.csv", "decay_waveguide.csv", "fit_report.txt"]


def test_ensemble_writes_contract_files(ensemble_runs):
    names = {p.name for p in ensemble_runs["a"].iterdir()}
    assert set(ENSEMBLE_FILES) <= names
    assert not any(n.endswith(".tmp") for n in names)
    report = (ensemble_runs["a"] / "fit_report.txt").read_text()
    assert "seed = 5" in report and "sample_count = 3000" in report


def test_ensemble_outputs_byte_identical(ensemble_runs):
    for name in ENSEMBLE_FILES + ["ensemble.gp"]:
        a = (ensemble_runs["a"] / name).read_bytes()
        assert a == (ensemble_runs["b"] / name).read_bytes()
        assert a == (ensemble_runs["c"] / name).read_bytes()


def test_histograms_normalized(ensemble_runs):
    for name in ("G_freespace.csv", "G_waveguide.csv"):
        cols, data = read_csv_table(ensemble_runs["a"] / name)
        assert cols[:2] == ["zeta", "weight"]
        assert math.isclose(data[:, 1].sum(), 1.0, rel_tol=1e-12)


def test_decay_reads_distribution_file(ensemble_runs, tmp_path):
    dist = ensemble_runs["a"] / "G_waveguide.csv"
    p = _write(tmp_path, f"[decay]\ndistribution_file = {dist}\n")
    out = tmp_path / "d"
    assert main(["decay", "--config", str(p), "--out", str(out), "--quiet"]) == EXIT_OK
    assert (out / "decay.csv").exists()


def test_purcell_map_from_field_file(tmp_path):
    w = 60.0
    f = gaussian_grid(w=w, half=(150.0, 150.0, 150.0), h=(10.0, 10.0, 5.0))
    path = tmp_path / "gauss.txt"
    write_field_grid(f, path)
    text = FILE_SOURCE.format(path=path).replace("0, 0, 500", "0, 0, 60")
    p = _write(tmp_path, text + "[fiber]\ndiameter = 100\n[purcell_map]\ndepth = 15\nspacing = 50\n")
    out = tmp_path / "pm"
    assert main(["purcell-map", "--config", str(p), "--out", str(out), "--quiet"]) == EXIT_OK
    cols, data = read_csv_table(out / "purcell_map.csv")
    v = mode_volume(f).volume
    peak = 3 / (4 * math.pi**2) * 3500.0 * (637.0 / 3.3) ** 3 / v * (3.3 / 2.4)
    x, y = data[:, 0], data[:, 1]
    expect = peak * np.exp(-2 * (x**2 + y**2 + 15.0**2) / w**2)
    np.testing.assert_allclose(data[:, cols.index("F_best")], expect, rtol=1e-10)
    np.testing.assert_allclose(data[:, cols.index("F_y")], 0.0, atol=1e-20)


def test_atomic_write_replaces_and_leaves_no_temp(tmp_path):
    target = tmp_path / "x.csv"
    atomic_write_text(target, "one\n")
    atomic_write_text(target, "two\n")
    assert target.read_text() == "two\n"
    assert [p.name for p in tmp_path.iterdir()] == ["x.csv"]


def test_atomic_write_failure_keeps_old_file(tmp_path):
    target = tmp_path / "x.csv"
    atomic_write_text(target, "old\n")

    with pytest.raises(TypeError):
        atomic_write_text(target, 12345)  # not text
    assert target.read_text() == "old\n"
    assert [p.name for p in tmp_path.iterdir()] == ["x.csv"]
