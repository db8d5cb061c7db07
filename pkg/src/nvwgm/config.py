"""Run configuration: an INI file with one section per pipeline stage.

Lengths are in nm, times in ns, rates in 1/ns and angles in degrees.  Every
key has a default; the defaults describe the 1.8 um GaP ring on diamond
(device D2) probed by a 550 nm tapered fiber.  See the README for the full
schema.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from pathlib import Path

from . import constants
from .errors import ConfigError, FieldFileError
from .fiber import MODE_LABELS

AUTO = "auto"


@dataclass(frozen=True)
class Param:
    kind: str  # float, int, str, bool, floats, vector3, vector2
    default: object
    check: str | None = None  # "pos", "nonneg", "ge1", or "a|b|c" choices
    auto: bool = False  # "auto" is an accepted value
    doc: str = ""


SCHEMA: dict[str, dict[str, Param]] = {
    "cavity": {
        "source": Param("str", "surrogate", "surrogate|file", doc="closed-form surrogate or a field file"),
        "field_file": Param("str", "", doc="field file path (source = file)"),
        "device": Param("str", "ring", "ring|disk"),
        "polarization": Param("str", "TE", "TE|TM"),
        "outer_diameter": Param("float", 1800.0, "pos"),
        "ring_width": Param("float", 280.0, "pos", doc="ignored for disks"),
        "thickness": Param("float", 150.0, "pos"),
        "azimuthal_order": Param("int", AUTO, "ge1", auto=True, doc="auto picks the order closest to the wavelength"),
        "wavelength": Param("float", constants.ZPL_WAVELENGTH_NM, "pos"),
        "n_core": Param("float", constants.N_GAP, "ge1"),
        "n_substrate": Param("float", constants.N_DIAMOND, "ge1"),
        "n_ambient": Param("float", constants.N_AIR, "ge1"),
        "pedestal_height": Param("float", 600.0, "nonneg"),
        "lateral_spacing": Param("float", 20.0, "pos"),
        "vertical_spacing": Param("float", 5.0, "pos"),
        "Q": Param("float", constants.Q_D2, "pos"),
        "n_c": Param("float", constants.N_GAP, "ge1", doc="index at the field maximum"),
        "n_d": Param("float", constants.N_DIAMOND, "ge1", doc="index at the emitter"),
    },
    "fiber": {
        "diameter": Param("float", constants.FIBER_DIAMETER_NM, "pos"),
        "n_fiber": Param("float", constants.N_FIBER, "ge1"),
        "n_ambient": Param("float", constants.N_AIR, "ge1"),
        "mode": Param("str", "HE11", "|".join(MODE_LABELS)),
        "polarization_angle": Param("float", 0.0),
    },
    "coupling": {
        "contact": Param("str", "top", "top|side"),
        "gap": Param("float", 0.0, "nonneg"),
        "axis_offset": Param("vector3", AUTO, auto=True, doc="fiber centerline point; auto touches the device"),
        "halflength": Param("float", AUTO, "pos", auto=True, doc="auto runs the fiber until the cavity tail is 1e-3"),
        "standing_wave_phase": Param("float", 0.0),
        "sum_polarizations": Param("bool", True, doc="add the orthogonal HE11 partner"),
    },
    "sweep": {
        "diameters": Param("floats", "800:3000:200", doc="start:stop:step or a comma list"),
        "devices": Param("str", "disk, ring"),
        "polarizations": Param("str", "TE, TM"),
        "contacts": Param("str", "top, side"),
        "lateral_spacing": Param("float", 25.0, "pos"),
        "vertical_spacing": Param("float", 10.0, "pos"),
    },
    "ensemble": {
        "depth_mean": Param("float", 15.0, "nonneg"),
        "depth_sigma": Param("float", 5.0, "pos"),
        "fwhm": Param("float", 500.0, "pos"),
        "center": Param("vector2", AUTO, auto=True, doc="spot center; auto is the ring midline"),
        "excitation_polarization": Param("vector3", (1.0, 0.0, 0.0), doc="crystal frame"),
        "restrict_to_footprint": Param("bool", AUTO, auto=True, doc="NVs only on the pedestal top; auto is true for the surrogate"),
        "detuning_sigma": Param("float", 0.0, "nonneg", doc="rad/ns; 0 puts all NVs on resonance"),
        "sample_count": Param("int", 100_000, "ge1"),
        "seed": Param("int", 0, "nonneg"),
        "in_plane_angle": Param("float", 0.0),
        "histogram_bins": Param("int", 60, "ge1"),
    },
    "decay": {
        "lifetime0": Param("float", 1.0 / constants.GAMMA0_PER_NS, "pos"),
        "gamma0_zpl": Param("float", constants.GAMMA0_ZPL_PER_NS, "nonneg"),
        "window": Param("float", 40.0, "pos"),
        "step": Param("float", 0.1, "pos"),
        "duration": Param("float", 40.0, "pos"),
        "purcell_factors": Param("floats", "1.8, 4.2", doc="decay command: single-emitter Purcell factors"),
        "distribution_file": Param("str", "", doc="decay command: G_*.csv to rebuild a curve from"),
    },
    "purcell_map": {
        "depth": Param("float", 15.0, "nonneg"),
        "spacing": Param("float", 10.0, "pos"),
    },
    "output": {
        "directory": Param("str", "nvwgm_out"),
        "gnuplot": Param("bool", True, doc="write a gnuplot script next to plot data"),
    },
}


class Config(dict):
    """Resolved values, ``cfg["cavity"]["Q"]``."""

    def with_overrides(self, **dotted) -> "Config":
        out = Config({s: dict(v) for s, v in self.items()})
        for path, value in dotted.items():
            section, key = path.split(".")
            out[section][key] = value
        return out

    def to_ini(self, exclude=()) -> str:
        """Canonical text form, used for provenance headers."""
        lines = []
        for section, params in SCHEMA.items():
            lines.append(f"[{section}]")
            for key in params:
                if f"{section}.{key}" not in exclude:
                    lines.append(f"{key} = {format_value(self[section][key])}")
        return "\n".join(lines)


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, (tuple, list)):
        return ", ".join(format_value(x) for x in v)
    return str(v)


def _parse_floats(text: str) -> tuple[float, ...]:
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or not parts[2] > 0 or parts[1] < parts[0]:
            raise ValueError("range must be start:stop:step with step > 0 and stop >= start")
        start, stop, step = parts
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(start + i * step for i in range(n))
    vals = tuple(float(p) for p in text.split(",") if p.strip())
    if not vals:
        raise ValueError("empty list")
    return vals


def _parse(param: Param, raw: str):
    text = raw.strip()
    if param.auto and text.lower() == AUTO:
        return AUTO
    kind = param.kind
    if kind == "float":
        v = float(text)
        if not math.isfinite(v):
            raise ValueError("must be finite")
        return v
    if kind == "int":
        v = int(text)
        return v
    if kind == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError("expected true or false")
    if kind == "floats":
        return _parse_floats(text)
    if kind in ("vector2", "vector3"):
        n = 2 if kind == "vector2" else 3
        vals = tuple(float(p) for p in text.split(","))
        if len(vals) != n:
            raise ValueError(f"expected {n} comma-separated numbers")
        return vals
    return text


def _check(param: Param, value) -> str | None:
    if value == AUTO or param.check is None:
        return None
    c = param.check
    if "|" in c:
        choices = c.split("|")
        if param.kind == "str" and value.upper() in [x.upper() for x in choices]:
            return None
        return f"must be one of {', '.join(choices)}"
    values = value if isinstance(value, tuple) else (value,)
    for v in values:
        if c == "pos" and not v > 0:
            return "must be positive"
        if c == "nonneg" and not v >= 0:
            return "must be non-negative"
        if c == "ge1" and not v >= 1:
            return "must be >= 1"
    return None


def _split_names(text: str) -> list[str]:
    return [p.strip() for p in str(text).split(",") if p.strip()]


def default_config() -> Config:
    cfg = Config()
    for section, params in SCHEMA.items():
        cfg[section] = {}
        for key, p in params.items():
            v = p.default
            if p.kind == "floats" and isinstance(v, str):
                v = _parse_floats(v)
            cfg[section][key] = v
    return cfg


def parse_config(text: str, source: str = "<config>", require_files: bool = False) -> tuple[Config, list[tuple[str, str]]]:
    """Typed config and the list of ``(key path, message)`` violations.

    With ``require_files`` a missing input file is a violation; otherwise it
    is left to fail as an I/O error when the run opens it.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep "Q" as written
    violations: list[tuple[str, str]] = []
    cfg = default_config()
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        return cfg, [("<file>", str(exc).splitlines()[0])]

    for section in parser.sections():
        if section not in SCHEMA:
            violations.append((section, "unknown section"))
            continue
        for key, raw in parser.items(section):
            path = f"{section}.{key}"
            param = SCHEMA[section].get(key)
            if param is None:
                violations.append((path, "unknown key"))
                continue
            try:
                value = _parse(param, raw)
            except ValueError as exc:
                violations.append((path, f"cannot parse {raw!r}: {exc}"))
                continue
            msg = _check(param, value)
            if msg:
                violations.append((path, msg))
                continue
            cfg[section][key] = value

    for section, params in SCHEMA.items():
        for key, p in params.items():
            if p.kind == "str" and p.check and "|" in p.check:
                v = cfg[section][key]
                for choice in p.check.split("|"):
                    if v.upper() == choice.upper():
                        cfg[section][key] = choice
    violations += cross_checks(cfg, require_files)
    return cfg, violations


def load_config(path, require_files: bool = False) -> tuple[Config, list[tuple[str, str]]]:
    """Read and validate a config file.  Raises OSError when unreadable."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_config(text, source=str(path), require_files=require_files)


def require_valid(violations) -> None:
    if violations:
        raise ConfigError(list(violations))


def cross_checks(cfg: Config, require_files: bool = False) -> list[tuple[str, str]]:
    """Constraints spanning several keys."""
    out = []
    cav, fib, cpl = cfg["cavity"], cfg["fiber"], cfg["coupling"]
    if not cav["n_core"] > cav["n_substrate"] > cav["n_ambient"]:
        out.append(("cavity.n_core", "need n_core > n_substrate > n_ambient"))
    if cav["device"] == "ring" and not cav["ring_width"] < 0.5 * cav["outer_diameter"]:
        out.append(("cavity.ring_width", "ring width must be smaller than the outer radius"))
    if not fib["n_fiber"] > fib["n_ambient"]:
        out.append(("fiber.n_fiber", "fiber index must exceed the ambient index"))

    sweep = cfg["sweep"]
    for key, allowed in (("devices", ("disk", "ring")), ("polarizations", ("TE", "TM")), ("contacts", ("top", "side"))):
        names = _split_names(sweep[key])
        bad = [n for n in names if n not in allowed]
        if not names or bad:
            out.append((f"sweep.{key}", f"entries must be drawn from {', '.join(allowed)}"))
    if any(not d > 0 for d in sweep["diameters"]):
        out.append(("sweep.diameters", "diameters must be positive"))

    dec = cfg["decay"]
    if dec["window"] > dec["duration"]:
        out.append(("decay.window", "fit window exceeds the curve duration"))
    if dec["step"] >= dec["window"]:
        out.append(("decay.step", "time step must be smaller than the fit window"))

    ens = cfg["ensemble"]
    if not any(abs(v) > 0 for v in ens["excitation_polarization"]):
        out.append(("ensemble.excitation_polarization", "must be a nonzero vector"))
    if ens["seed"] >= 2**64:
        out.append(("ensemble.seed", "must fit in 64 bits"))

    if cav["source"] == "file":
        if not cav["field_file"]:
            out.append(("cavity.field_file", "required when source = file"))
        if cpl["axis_offset"] == AUTO:
            out.append(("coupling.axis_offset", "auto placement needs the surrogate source; give x, y, z"))
        if ens["restrict_to_footprint"] is True:
            out.append(("ensemble.restrict_to_footprint", "the footprint is only known for the surrogate source"))
        if ens["center"] == AUTO:
            out.append(("ensemble.center", "auto centering needs the surrogate source; give x, y"))
        path = cav["field_file"]
        if path and not Path(path).is_file():
            if require_files:
                out.append(("cavity.field_file", f"file not found: {path}"))
        elif path and cpl["axis_offset"] != AUTO:
            out += _file_grid_checks(cfg)
    return out


def _file_grid_checks(cfg: Config) -> list[tuple[str, str]]:
    """The fiber cross-section must lie inside a field file's grid (header only)."""
    from .field import read_field_header

    path = cfg["cavity"]["field_file"]
    try:
        geom, _ = read_field_header(path)
    except (OSError, FieldFileError) as exc:
        return [("cavity.field_file", str(exc))]
    a = 0.5 * cfg["fiber"]["diameter"]
    x, y, z = cfg["coupling"]["axis_offset"]
    half = cfg["coupling"]["halflength"]
    dy = 0.0 if half == AUTO else half
    lo = (x - a, y - dy, z - a)
    hi = (x + a, y + dy, z + a)
    lower, upper = geom.lower, geom.upper
    if any(l < g for l, g in zip(lo, lower)) or any(h > g for h, g in zip(hi, upper)):
        return [("coupling.axis_offset", "the field grid does not enclose the fiber")]
    return []
