"""Command line interface.

    uq run [config] [--flag ...]      run the configured experiment
    uq samples [config] --count N     emit individual realizations
    uq mesh-info [config]             print the mesh hierarchy summary

Exit codes: 0 ok, 1 config error, 2 numeric failure, 3 MLMC not converged.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import load_config
from .errors import ConfigError, NumericError
from .fem_elastic import min_wavelength
from .mesh import mesh_summary
from .runner import (EXIT_CONFIG, EXIT_NUMERIC, build_model, emit_sample_trace,
                     gamma_params_from, geometry_from, run_experiment)

logger = logging.getLogger("beamuq")


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", nargs="?", default=None,
                        help="INI config file (flags override its values)")
    parser.add_argument("--response", choices=("static-elastic", "static-plastic", "dynamic"))
    parser.add_argument("--model", choices=("homogeneous", "heterogeneous"))
    parser.add_argument("--material", help="material preset (concrete, steel)")
    parser.add_argument("--method", choices=("mlmc", "mc", "both"))
    parser.add_argument("--epsilon", dest="epsilons", type=float, action="append",
                        help="tolerance on the RMSE (repeatable)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--max-level", dest="max_level", type=int)
    parser.add_argument("--trial", dest="trial_samples", type=int)
    parser.add_argument("--screening", choices=("auto", "on", "off"))
    parser.add_argument("--fixed-E", dest="fixed_e", type=float,
                        help="deterministic Young's modulus (smoke mode)")
    parser.add_argument("--freq", help="frequency grid start:stop:step (Hz)")
    parser.add_argument("--eta", type=float, help="hysteretic damping ratio")
    parser.add_argument("--load", dest="total_load", type=float)
    parser.add_argument("--mc-max-draw", dest="mc_max_draw", type=int,
                        help="cap on MC samples actually drawn (cost still "
                             "reports the full allocation)")
    parser.add_argument("--output", "-o")
    parser.add_argument("--no-figures", dest="figures", action="store_false",
                        default=None)


def _overrides(args: argparse.Namespace) -> dict:
    skip = {"config", "command", "count", "verbose"}
    return {k: v for k, v in vars(args).items() if k not in skip and v is not None}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uq",
        description="Multilevel Monte Carlo uncertainty quantification "
                    "for plane-stress beam models.")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the configured experiment")
    _add_override_flags(p_run)

    p_samples = sub.add_parser("samples", help="emit individual realizations")
    _add_override_flags(p_samples)
    p_samples.add_argument("--count", type=int, default=10)

    p_mesh = sub.add_parser("mesh-info", help="print the mesh hierarchy")
    _add_override_flags(p_mesh)
    return parser


def _mesh_info(cfg) -> dict:
    geom = geometry_from(cfg)
    info = {
        "geometry": {"length": geom.length, "height": geom.height,
                     "width": geom.width, "clamping": geom.clamping},
        "levels": mesh_summary(geom, cfg.max_level, cfg.ny_coarse),
    }
    if cfg.response == "dynamic":
        params = gamma_params_from(cfg)
        f_max = float(cfg.frequency_grid()[-1])
        if f_max > 0:
            lam = min_wavelength(params.mean(), geom.width * geom.height ** 3 / 12.0,
                                 cfg.rho, geom.height * geom.width, f_max)
            info["wavelength"] = {"lambda_min": lam,
                                  "elements_per_wavelength": lam * cfg.ny_coarse / geom.height}
    if cfg.model == "heterogeneous":
        model, basis = build_model(cfg)
        info["kl_basis"] = {"n_terms": basis.n_terms,
                            "captured_fraction": basis.captured_fraction}
    return info


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)

    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "run":
            return run_experiment(cfg)
        if args.command == "samples":
            path = emit_sample_trace(cfg, args.count)
            print(path)
            return 0
        if args.command == "mesh-info":
            print(json.dumps(_mesh_info(cfg), indent=2))
            return 0
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except NumericError as exc:
        logger.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
