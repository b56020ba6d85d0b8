"""Command-line driver: ``rotafem {elasticity,biot,interface} [options]``.

One run per process.  Parameters come from built-in defaults, then an
optional JSON config file (``--config``), then command-line flags, later
sources overriding earlier ones.  Defaults are those of the unit-square
manufactured case (all coefficients 1, ``nu = 0.25``); with ``--case lshape``
the defaults switch to the L-shape coefficients.

Exit status: 0 on success, 2 on an invalid configuration (one-line reason
on stderr), 3 when a linear solve fails.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__

PROBLEM_CHOICES = ("elasticity", "biot", "interface")
MODES = ("uniform", "adaptive", "single")
CASES = ("square", "lshape")
EMITS = ("csv", "json", "vtk", "matrixmarket")

# execution settings that do not change results; left out of summary.json
NOT_ECHOED = ("out", "threads")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

# physical coefficients and their defaults per case; None means "same as the
# elastic material" for the porous-material overrides
SQUARE_DEFAULTS = {"E": 1.0, "nu": 0.25, "E_poro": None, "nu_poro": None, "alpha": 1.0,
                   "c0": 1.0, "kappa": 1.0, "xi": 1.0}
LSHAPE_DEFAULTS = {"E": 10.0, "nu": 0.25, "E_poro": 1.0, "nu_poro": 0.45, "alpha": 1.0,
                   "c0": 0.0, "kappa": 1e-3, "xi": 1.0}

DEFAULTS = {
    "problem": None,
    "mode": "uniform",
    "k": 1,
    "levels": 6,
    "n": None,            # 4 on the square, 1 on the L-shape
    "zeta": None,
    "max_iterations": 7,
    "max_dofs": 100_000,
    "case": "square",
    "stabilized": True,
    "smoothing": True,
    "variant": "stream",
    "out": "rotafem-out",
    "emit": ["csv", "json"],
    "threads": None,
    **{key: None for key in SQUARE_DEFAULTS},
}


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rotafem", description=__doc__.split("\n\n")[0],
                argument_default=argparse.SUPPRESS)
    p.add_argument("problem", choices=PROBLEM_CHOICES)
    mode = p.add_mutually_exclusive_group()
    for m in MODES:
        mode.add_argument(f"--{m}", dest="mode", action="store_const", const=m,
                          help=f"{m} run")
    p.add_argument("--config", help="JSON file with run settings (flags override it)")
    p.add_argument("--k", type=int, help="polynomial order of rotations and pressures (0 or 1)")
    p.add_argument("--levels", type=int, help="number of uniform levels")
    p.add_argument("--n", type=int, help="subdivisions of the initial mesh per unit length")
    p.add_argument("--zeta", type=float, help="Dörfler bulk fraction (adaptive runs)")
    p.add_argument("--max-iters", dest="max_iterations", type=int,
                   help="maximum number of adaptive solves")
    p.add_argument("--max-dofs", dest="max_dofs", type=int,
                   help="stop the adaptive loop once a solve exceeds this size")
    p.add_argument("--case", choices=CASES)
    p.add_argument("--E", type=float, help="Young modulus (elastic material)")
    p.add_argument("--nu", type=float, help="Poisson ratio (elastic material)")
    p.add_argument("--E-poro", dest="E_poro", type=float,
                   help="Young modulus of the poroelastic material (interface problem)")
    p.add_argument("--nu-poro", dest="nu_poro", type=float,
                   help="Poisson ratio of the poroelastic material (interface problem)")
    p.add_argument("--alpha", type=float, help="Biot-Willis coefficient")
    p.add_argument("--c0", type=float, help="storativity")
    p.add_argument("--kappa", type=float, help="permeability")
    p.add_argument("--xi", type=float, help="fluid viscosity")
    p.add_argument("--no-stab", dest="stabilized", action="store_const", const=False,
                   help="drop the pressure jump stabilization")
    p.add_argument("--no-smooth", dest="smoothing", action="store_const", const=False,
                   help="skip mesh smoothing after each adaptive refinement")
    p.add_argument("--variant", choices=("stream", "printed"),
                   help="displacement of the square case")
    p.add_argument("--out", help="output directory")
    p.add_argument("--emit", type=_emit_list,
                   help="comma-separated outputs among csv,json,vtk,matrixmarket")
    p.add_argument("--threads", type=int, help="cap on BLAS worker threads")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.add_argument("--version", action="version", version=f"rotafem {__version__}")
    return p


def _emit_list(text: str) -> list:
    items = [s.strip() for s in text.split(",") if s.strip()]
    bad = [s for s in items if s not in EMITS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown output {bad[0]!r}")
    return items


def load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    return data


def resolve_config(argv=None) -> tuple[dict, bool]:
    """Merged configuration dict and the verbosity flag."""
    ns = vars(build_parser().parse_args(argv))
    verbose = ns.pop("verbose", False)
    cfg = dict(DEFAULTS)
    if "config" in ns:
        cfg.update(load_config_file(ns.pop("config")))
    cfg.update(ns)
    validate(cfg)
    return cfg, verbose


def _positive_int(cfg, key, minimum=1):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"{key} must be an integer >= {minimum}")


def validate(cfg: dict) -> None:
    """Check ranges and consistency; fill case-dependent defaults in place."""
    if cfg["problem"] not in PROBLEM_CHOICES:
        raise ConfigError(f"problem must be one of {', '.join(PROBLEM_CHOICES)}")
    if cfg["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {', '.join(MODES)}")
    if cfg["case"] not in CASES:
        raise ConfigError(f"case must be one of {', '.join(CASES)}")
    if cfg["k"] not in (0, 1) or isinstance(cfg["k"], bool):
        raise ConfigError("k must be 0 or 1")
    lshape = cfg["case"] == "lshape"
    if cfg["n"] is None:
        cfg["n"] = 1 if lshape else 4
    _positive_int(cfg, "n")
    _positive_int(cfg, "levels")
    _positive_int(cfg, "max_iterations")
    _positive_int(cfg, "max_dofs")
    if cfg["mode"] == "adaptive":
        if cfg["zeta"] is None:
            raise ConfigError("adaptive runs need --zeta")
        if not 0 < cfg["zeta"] < 1:
            raise ConfigError("zeta must lie in (0, 1)")
    single = cfg["problem"] != "interface"
    if single and (cfg["E_poro"] is not None or cfg["nu_poro"] is not None):
        raise ConfigError("--E-poro/--nu-poro apply to the interface problem only")
    for key, value in (LSHAPE_DEFAULTS if lshape else SQUARE_DEFAULTS).items():
        if cfg[key] is None and not (single and key in ("E_poro", "nu_poro")):
            cfg[key] = value
    if lshape and cfg["variant"] != "stream":
        raise ConfigError("--variant applies to the square case only")
    for key in ("stabilized", "smoothing"):
        if not isinstance(cfg[key], bool):
            raise ConfigError(f"{key} must be true or false")
    emit = cfg["emit"]
    if isinstance(emit, str):
        try:
            emit = _emit_list(emit)
        except argparse.ArgumentTypeError as exc:
            raise ConfigError(str(exc)) from None
    if not isinstance(emit, list) or any(e not in EMITS for e in emit):
        raise ConfigError(f"emit entries must be among {', '.join(EMITS)}")
    cfg["emit"] = sorted(set(emit), key=EMITS.index)
    if cfg["threads"] is not None:
        _positive_int(cfg, "threads")
    if not isinstance(cfg["out"], str) or not cfg["out"]:
        raise ConfigError("out must be a directory name")


def _cap_threads(n: int) -> None:
    # must happen before numpy and the sparse solvers load their BLAS
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def make_case(cfg: dict):
    from .forms import AssemblyError, ProblemParams
    from .verify import case_lshape, case_square

    kind = cfg["problem"]
    try:
        params = ProblemParams(E=cfg["E"], nu=cfg["nu"], E_poro=cfg["E_poro"],
                               nu_poro=cfg["nu_poro"],
                               alpha=cfg["alpha"], c0=cfg["c0"], kappa=cfg["kappa"],
                               xi=cfg["xi"], stabilized=cfg["stabilized"])
    except AssemblyError as exc:
        raise ConfigError(str(exc)) from None
    if cfg["case"] == "lshape":
        return case_lshape(params, kind=kind)
    return case_square(kind, params, variant=cfg["variant"])


class _Outputs:
    """Per-step file writers for the optional VTK and MatrixMarket dumps."""

    def __init__(self, cfg, case, out: Path):
        self.cfg, self.case, self.out = cfg, case, out
        self.count = 0

    def __call__(self, step, *_):
        index = self.count
        self.count += 1
        if "vtk" in self.cfg["emit"]:
            from .mesh import write_vtk

            write_vtk(step.mesh, self.out / f"mesh_{index:04d}.vtk",
                      {"indicator2": step.report.marking_indicators(),
                       "oscillation2": step.report.oscillation})
        if "matrixmarket" in self.cfg["emit"]:
            from .forms import assemble, build_layout, write_matrix_market

            case = self.case
            layout = build_layout(step.mesh, case.kind, self.cfg["k"])
            system = assemble(case.kind, step.mesh, layout, case.params, case.data)
            write_matrix_market(system, self.out / f"system_{index:04d}.mtx")


def echo_config(cfg: dict) -> dict:
    return {key: value for key, value in cfg.items() if key not in NOT_ECHOED}


def run(cfg: dict) -> int:
    """Execute a validated configuration; returns the exit status."""
    from .adapt import AmrAborted, amr_loop
    from .linsolve import SolverError
    from .verify import (format_table, initial_mesh, summary_payload, uniform_convergence,
                         write_table_csv)

    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"rotafem: cannot create {out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    case = make_case(cfg)
    emit = _Outputs(cfg, case, out)
    k, status = cfg["k"], EXIT_OK
    try:
        if cfg["mode"] == "uniform":
            rows = uniform_convergence(case, k, cfg["levels"], n0=cfg["n"],
                                       stabilized=cfg["stabilized"], callback=emit)
        elif cfg["mode"] == "single":
            rows = uniform_convergence(case, k, 1, n0=cfg["n"], stabilized=cfg["stabilized"],
                                       callback=emit)
        else:
            history = amr_loop(case, initial_mesh(case, cfg["n"]), k, zeta=cfg["zeta"],
                               max_iterations=cfg["max_iterations"], max_dofs=cfg["max_dofs"],
                               smoothing=cfg["smoothing"], stabilized=cfg["stabilized"],
                               callback=emit)
            rows = history.rows
    except AmrAborted as exc:
        print(f"rotafem: solver failure: {exc}", file=sys.stderr)
        rows, status = exc.history.rows, EXIT_SOLVER
    except SolverError as exc:
        print(f"rotafem: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    kind = case.kind
    if rows:
        sys.stdout.write(format_table(kind, rows))
    if "csv" in cfg["emit"]:
        write_table_csv(kind, rows, out / "table.csv")
    if "json" in cfg["emit"]:
        (out / "summary.json").write_text(
            summary_payload(echo_config(cfg), kind, rows, case.variant, __version__) + "\n", encoding="utf-8")
    return status


def main(argv=None) -> int:
    try:
        cfg, verbose = resolve_config(argv)
    except ConfigError as exc:
        print(f"rotafem: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg["threads"] is not None:
        _cap_threads(cfg["threads"])
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return run(cfg)
    except ConfigError as exc:
        print(f"rotafem: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
