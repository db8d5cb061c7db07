"""Command-line front end.

    nvwgm <command> [--config PATH] [--out DIR] [--seed N] [--quiet]

Exit status: 0 success, 2 invalid configuration, 3 computation failure,
4 input/output failure.  ``NVWGM_NUM_THREADS`` caps worker threads.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, pipeline
from .config import default_config, load_config, require_valid
from .coupling import worker_count
from .ensemble import FREE_SPACE, WAVEGUIDE
from .errors import ConfigError, FieldFileError, NvwgmError
from .outputs import provenance_lines, read_csv_table, write_csv, write_metadata, write_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COMPUTE = 3
EXIT_IO = 4

COMMANDS = ("fiber-mode", "couple", "sweep", "purcell-map", "ensemble", "decay", "validate")


class _Log:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, msg: str):
        if not self.quiet:
            print(msg, file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nvwgm", description="NV emission into GaP-on-diamond cavities and tapered fibers.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="INI config file (defaults are used for missing keys)")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.add_argument("--seed", type=int, help="RNG seed (overrides ensemble.seed)")
    p.add_argument("--quiet", action="store_true", help="suppress progress messages")
    return p


def _resolve_config(args):
    if args.config:
        cfg, violations = load_config(args.config, require_files=args.command == "validate")
    else:
        cfg, violations = default_config(), []
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            violations.append(("ensemble.seed", "must be an unsigned 64-bit integer"))
        else:
            cfg = cfg.with_overrides(**{"ensemble.seed": args.seed})
    if args.out:
        cfg = cfg.with_overrides(**{"output.directory": args.out})
    return cfg, violations


def _gnuplot_sweep(data_name: str) -> str:
    series = []
    for dev, dt in (("disk", 1), ("ring", 2)):
        for pol in ("TE", "TM"):
            for contact, pt in (("top", 7), ("side", 5)):
                cond = f'(strcol(2) eq "{dev}" && strcol(3) eq "{pol}" && strcol(4) eq "{contact}")'
                series.append(f"'{data_name}' using 1:({cond} ? $5 : 1/0) with linespoints dt {dt} pt {pt} title '{dev} {pol} {contact}'")
    return "\n".join(
        [
            "set datafile separator ','",
            "set key autotitle columnhead",
            "set logscale y",
            "set xlabel 'device diameter (nm)'",
            "set ylabel 'gamma_e (1/ns)'",
            "plot " + ", \\\n     ".join(series),
        ]
    ) + "\n"


def _gnuplot_ensemble() -> str:
    return (
        "set datafile separator ','\n"
        "set multiplot layout 1,2\n"
        "set xlabel 'Purcell factor'\nset ylabel 'G'\n"
        "plot 'G_freespace.csv' using 1:2 with steps title 'free space', \\\n"
        "     'G_waveguide.csv' using 1:2 with steps title 'waveguide'\n"
        "set xlabel 'time (ns)'\nset ylabel 'PL (norm.)'\nset logscale y\n"
        "plot 'decay_freespace.csv' using 1:2 with lines title 'free space', \\\n"
        "     'decay_waveguide.csv' using 1:2 with lines title 'waveguide'\n"
        "unset multiplot\n"
    )


def run(args, log) -> list[Path]:
    """Execute one command; returns the files written."""
    cfg, violations = _resolve_config(args)
    if args.command == "validate":
        if violations:
            for key, msg in violations:
                print(f"{key}: {msg}")
            raise ConfigError(violations)
        print("configuration is valid")
        return []
    require_valid(violations)

    out = Path(cfg["output"]["directory"])
    # where the files go does not influence their content
    text = cfg.to_ini(exclude=("output.directory",))
    gnuplot = cfg["output"]["gnuplot"]
    cmd = args.command
    written: list[Path] = []

    def header(derived=None):
        return provenance_lines(cmd, text, derived)

    if cmd == "fiber-mode":
        modes, profile, derived = pipeline.run_fiber_mode(cfg)
        written.append(write_csv(out / "fiber_modes.csv", header(derived), modes.columns, modes.rows))
        written.append(write_csv(out / "fiber_profile.csv", header(derived), profile.columns, profile.rows))
    elif cmd == "couple":
        log("solving cavity and fiber modes")
        table, derived = pipeline.run_couple(cfg)
        written.append(write_csv(out / "coupling.csv", header(derived), table.columns, table.rows))
    elif cmd == "sweep":
        log(f"sweeping {len(cfg['sweep']['diameters'])} diameters with {worker_count()} worker(s)")
        table, derived = pipeline.run_sweep(cfg)
        written.append(write_csv(out / "sweep.csv", header(derived), table.columns, table.rows))
        if gnuplot:
            written.append(write_report(out / "sweep.gp", header(), [_gnuplot_sweep("sweep.csv")]))
    elif cmd == "purcell-map":
        table, derived = pipeline.run_purcell_map(cfg)
        written.append(write_csv(out / "purcell_map.csv", header(derived), table.columns, table.rows))
    elif cmd == "ensemble":
        log(f"sampling {cfg['ensemble']['sample_count']} NVs")
        res = pipeline.run_ensemble(cfg)
        for name in (FREE_SPACE, WAVEGUIDE):
            h, c = res.histograms[name], res.curves[name]
            written.append(write_csv(out / f"G_{name}.csv", header(res.derived), h.columns, h.rows))
            written.append(write_csv(out / f"decay_{name}.csv", header(res.derived), c.columns, c.rows))
        written.append(write_report(out / "fit_report.txt", header(res.derived), res.report))
        if gnuplot:
            written.append(write_report(out / "ensemble.gp", header(), [_gnuplot_ensemble()]))
        log(f"<F_p> free space {res.means[FREE_SPACE]:.4g}, waveguide {res.means[WAVEGUIDE]:.4g}")
    elif cmd == "decay":
        dist = None
        path = cfg["decay"]["distribution_file"]
        if path:
            columns, data = read_csv_table(path)
            if "zeta" not in columns or "weight" not in columns:
                raise ValueError(f"{path}: expected zeta and weight columns")
            dist = (data[:, columns.index("zeta")], data[:, columns.index("weight")])
        table, report, derived = pipeline.run_decay(cfg, dist)
        written.append(write_csv(out / "decay.csv", header(derived), table.columns, table.rows))
        written.append(write_report(out / "decay_report.txt", header(derived), report))
    return written


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    log = _Log(args.quiet)
    started = time.time()
    try:
        written = run(args, log)
    except ConfigError as exc:
        if args.command != "validate":
            print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FieldFileError as exc:
        print(f"error: invalid field file {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        name = getattr(exc, "filename", None)
        detail = exc.strerror or str(exc)
        print(f"error: {name}: {detail}" if name else f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NvwgmError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error in {args.command} ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    if written:
        out = written[0].parent
        write_metadata(out, args.command, argv, written, started, {"worker_threads": worker_count()})
        for path in written:
            log(f"wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
