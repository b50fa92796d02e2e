"""Experiment orchestration: configs in, artifact files out.

A run writes its manifest before any compute, then for every tolerance
executes the requested estimators and emits the per-level table, field
statistics, rate and cost summaries; dynamic runs sweep the frequency grid
with one MLMC run per frequency, sharing meshes and the KL basis. Figures
are rendered from the same data next to the CSVs unless disabled.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import (write_cost_csv, write_field_stats_csv, write_frf_csv,
                        write_json, write_levels_csv, write_rates_json,
                        write_samples_csv)
from .config import RunConfig
from .errors import ConfigError
from .fem_elastic import min_wavelength
from .fem_plastic import LoadSchedule
from .gamma_model import GammaParams, material_preset
from .mesh import BeamGeometry, mesh_summary
from .mlmc import MLMCConfig, run_mc, run_mlmc
from .problems import (STREAM_TRACE, DynamicElasticProblem, GammaFieldModel,
                       HomogeneousGammaModel, StaticElasticProblem,
                       StaticPlasticProblem)
from .random_field import CovarianceSpec, build_kl_basis_2d, write_term_table

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_NOT_CONVERGED = 3


def geometry_from(cfg: RunConfig) -> BeamGeometry:
    return BeamGeometry(length=cfg.length, height=cfg.height, width=cfg.width,
                        clamping=cfg.clamping)


def gamma_params_from(cfg: RunConfig) -> GammaParams:
    if cfg.alpha > 0.0 or cfg.beta > 0.0:
        return GammaParams(alpha=cfg.alpha, beta=cfg.beta, label="custom")
    return material_preset(cfg.material)


def build_model(cfg: RunConfig):
    params = gamma_params_from(cfg)
    if cfg.model == "homogeneous":
        fixed = cfg.fixed_e if cfg.fixed_e > 0.0 else None
        return HomogeneousGammaModel(params, fixed_value=fixed), None
    basis = build_kl_basis_2d(CovarianceSpec(sigma=cfg.sigma, lam=cfg.lam),
                              target_fraction=cfg.variance_fraction)
    return GammaFieldModel(params, basis), basis


def build_problem(cfg: RunConfig, model, frequency: float | None = None):
    geom = geometry_from(cfg)
    if cfg.response == "static-elastic":
        return StaticElasticProblem(geom, model, cfg.seed,
                                    total_load=-cfg.total_load,
                                    nu=cfg.nu, rho=cfg.rho,
                                    ny_coarse=cfg.ny_coarse)
    if cfg.response == "static-plastic":
        schedule = LoadSchedule(cfg.load_start, cfg.load_end, cfg.load_step)
        return StaticPlasticProblem(geom, model, cfg.seed, schedule,
                                    nu=cfg.nu, sigma_y=cfg.sigma_y,
                                    hardening_ratio=cfg.hardening_ratio,
                                    ny_coarse=cfg.ny_coarse)
    freq = frequency if frequency is not None else cfg.frequency_grid()[0]
    return DynamicElasticProblem(geom, model, cfg.seed, frequency=freq,
                                 eta=cfg.eta, total_load=-cfg.total_load,
                                 nu=cfg.nu, rho=cfg.rho,
                                 ny_coarse=cfg.ny_coarse)


def mlmc_config_from(cfg: RunConfig) -> MLMCConfig:
    return MLMCConfig(
        master_seed=cfg.seed,
        n_trial=cfg.trial_samples,
        max_level=cfg.max_level,
        min_extra_samples=cfg.min_extra_samples,
        workers=cfg.workers,
        screening=cfg.screening_enabled(),
        quantile_cap=cfg.quantile_cap,
    )


def _etag(eps: float) -> str:
    return f"{eps:.3e}"


def _named(outdir: Path, stem: str, eps: float, multi: bool) -> Path:
    if multi:
        return outdir / f"{stem}_{_etag(eps)}.csv"
    return outdir / f"{stem}.csv"


def _manifest_payload(cfg: RunConfig, basis) -> dict:
    payload = {
        "tool": "beamuq",
        "version": __version__,
        "config": asdict(cfg),
        "mesh": mesh_summary(geometry_from(cfg), cfg.max_level, cfg.ny_coarse),
        "runs": [],
    }
    if basis is not None:
        payload["kl_basis"] = {
            "n_terms": basis.n_terms,
            "captured_fraction": basis.captured_fraction,
            "lambda": basis.spec.lam,
            "sigma": basis.spec.sigma,
        }
    if cfg.response == "dynamic":
        params = gamma_params_from(cfg)
        inertia = cfg.width * cfg.height ** 3 / 12.0
        area = cfg.height * cfg.width
        f_max = float(cfg.frequency_grid()[-1])
        if f_max > 0.0:
            wavelength = min_wavelength(params.mean(), inertia, cfg.rho, area, f_max)
            h0 = cfg.height / cfg.ny_coarse
            payload["wavelength_check"] = {
                "lambda_min": wavelength, "h0": h0,
                "elements_per_wavelength": wavelength / h0,
            }
            if wavelength / h0 < 6.0:
                logger.warning(
                    "coarse mesh resolves only %.1f elements per bending "
                    "wavelength at %.0f Hz (want >= 6)", wavelength / h0, f_max)
    return payload


def _mlmc_summary(res) -> dict:
    return {
        "epsilon": res.epsilon,
        "estimate": res.q,
        "levels": res.levels(),
        "n_per_level": res.n_per_level(),
        "converged": res.converged,
        "base_level": res.base_level,
        "finest_level": res.finest_level,
        "qoi_node": res.qoi_node,
        "rates": {"alpha": res.rates.alpha, "beta": res.rates.beta,
                  "gamma": res.rates.gamma},
        "cost_norm_total": res.cost_norm_total,
        "equivalent_max": res.equivalent_max,
        "wall_seconds": res.wall_seconds,
        "sample_seconds": res.sample_seconds,
        "cpu_seconds": res.sample_seconds,
        "n_failures": res.n_failures,
        "screening": res.screening,
        "variance_feasible": res.variance_feasible,
    }


def _mc_summary(mc) -> dict:
    return {
        "epsilon": mc.epsilon,
        "level": mc.level,
        "estimate": mc.estimate,
        "n": mc.n_reported,
        "n_drawn": mc.n_drawn,
        "truncated": mc.truncated,
        "cost_norm_total": mc.cost_norm_total,
        "wall_seconds": mc.wall_seconds,
        "sample_seconds": mc.sample_seconds,
        "qoi_node": mc.qoi_node,
    }


def run_experiment(cfg: RunConfig) -> int:
    """Execute the configured estimators and write all artifacts.

    Returns the process exit code (0 ok, 3 when any MLMC run ends
    bias-unconverged at the level cap).
    """
    outdir = Path(cfg.output)
    outdir.mkdir(parents=True, exist_ok=True)
    model, basis = build_model(cfg)
    manifest = _manifest_payload(cfg, basis)
    write_json(outdir / "manifest.json", manifest)
    if basis is not None:
        write_term_table(basis, outdir / "basis.csv")

    mlmc_cfg = mlmc_config_from(cfg)
    multi = len(cfg.epsilons) > 1
    rates_entries = []
    cost_rows = []
    status = EXIT_OK

    if cfg.response == "dynamic":
        status = _run_dynamic(cfg, model, mlmc_cfg, outdir, multi,
                              rates_entries, cost_rows, manifest)
    else:
        problem = build_problem(cfg, model)
        for eps in cfg.epsilons:
            res = None
            mc = None
            if cfg.method in ("mlmc", "both"):
                t0 = time.perf_counter()
                res = run_mlmc(problem, eps, mlmc_cfg)
                logger.info("mlmc eps=%g done in %.1fs (Q=%g, levels %s)",
                            eps, time.perf_counter() - t0, res.q, res.n_per_level())
                write_levels_csv(_named(outdir, "levels", eps, multi), res)
                write_field_stats_csv(_named(outdir, "field_stats", eps, multi),
                                      res, problem.axis_label)
                rates_entries.append({"epsilon": eps, "alpha": res.rates.alpha,
                                      "beta": res.rates.beta, "gamma": res.rates.gamma})
                manifest["runs"].append({"kind": "mlmc", **_mlmc_summary(res)})
                if not res.converged:
                    status = EXIT_NOT_CONVERGED
            if cfg.method in ("mc", "both"):
                level = res.finest_level if res is not None else cfg.max_level
                mc = run_mc(problem, eps, level, mlmc_cfg,
                            max_draw=cfg.mc_max_draw or None)
                manifest["runs"].append({"kind": "mc", **_mc_summary(mc)})
            gamma = res.rates.gamma if res is not None else 2.0
            cost_rows.append([
                eps,
                res.sample_seconds if res is not None else float("nan"),
                mc.sample_seconds if mc is not None else float("nan"),
                res.cost_norm_total if res is not None else float("nan"),
                (mc.n_reported + mlmc_cfg.n_trial) * 2.0 ** (gamma * mc.level)
                if mc is not None else float("nan"),
            ])

    write_rates_json(outdir / "rates.json", rates_entries)
    write_cost_csv(outdir / "cost.csv", cost_rows)
    write_json(outdir / "manifest.json", manifest)

    if cfg.figures:
        from . import figures
        figures.render_run(outdir)
    return status


def _run_dynamic(cfg, model, mlmc_cfg, outdir, multi, rates_entries,
                 cost_rows, manifest) -> int:
    """One MLMC run per frequency; the QoI node is fixed by the first."""
    status = EXIT_OK
    grid = cfg.frequency_grid()
    base_problem = build_problem(cfg, model, frequency=float(grid[0]))
    for eps in cfg.epsilons:
        results = []
        mc_results = []
        mlmc_cfg.qoi_node_override = None
        for k, freq in enumerate(grid):
            problem = base_problem.at_frequency(float(freq))
            res = run_mlmc(problem, eps, mlmc_cfg)
            # The FRF reports one node: the first frequency's pilot fixes it.
            mlmc_cfg.qoi_node_override = res.qoi_node
            results.append(res)
            if not res.converged:
                status = EXIT_NOT_CONVERGED
            if cfg.method in ("mc", "both"):
                mc_results.append(run_mc(problem, eps, res.finest_level, mlmc_cfg,
                                         max_draw=cfg.mc_max_draw or None))
            if k % 25 == 0:
                logger.info("dynamic eps=%g: %d / %d frequencies done",
                            eps, k + 1, grid.size)
        write_levels_csv(_named(outdir, "levels", eps, multi), results,
                         frequencies=grid)
        write_frf_csv(_named(outdir, "frf", eps, multi), grid, results)
        mid = results[len(results) // 2]
        rates_entries.append({"epsilon": eps, "alpha": mid.rates.alpha,
                              "beta": mid.rates.beta, "gamma": mid.rates.gamma,
                              "frequency": float(grid[len(results) // 2])})
        total_secs = sum(r.sample_seconds for r in results)
        total_norm = sum(r.cost_norm_total for r in results)
        mc_secs = sum(m.sample_seconds for m in mc_results) if mc_results else float("nan")
        mc_norm = sum((m.n_reported + mlmc_cfg.n_trial)
                      * 2.0 ** (r.rates.gamma * m.level)
                      for m, r in zip(mc_results, results)) if mc_results else float("nan")
        cost_rows.append([eps, total_secs, mc_secs, total_norm, mc_norm])
        manifest["runs"].append({
            "kind": "mlmc-frf", "epsilon": eps,
            "frequencies": [float(f) for f in grid],
            "converged": all(r.converged for r in results),
            "qoi_node": results[0].qoi_node,
            "screening_drops": [r.screening.get("dropped_levels", []) for r in results],
            "wall_seconds": sum(r.wall_seconds for r in results),
        })
    return status


def _trace_node(cfg: RunConfig, problem) -> int:
    """Reporting-grid node used for single-realization traces: the free end
    of a cantilever, midspan otherwise."""
    if cfg.clamping == "left-only":
        return problem.n_report_nodes - 1
    return problem.n_report_nodes // 2


def emit_sample_trace(cfg: RunConfig, count: int) -> Path:
    """`count` independent realizations at the trace level, one per column."""
    if count < 1:
        raise ConfigError("count must be >= 1")
    outdir = Path(cfg.output)
    outdir.mkdir(parents=True, exist_ok=True)
    model, _ = build_model(cfg)
    level = cfg.trace_level
    path = outdir / "samples.csv"

    if cfg.response == "dynamic":
        grid = cfg.frequency_grid()
        base = build_problem(cfg, model, frequency=float(grid[0]))
        node = _trace_node(cfg, base)
        columns = []
        for rep in range(count):
            draw = base.draw(STREAM_TRACE, level, rep)
            frf = [base.at_frequency(float(f)).evaluate(level, draw)[node]
                   for f in grid]
            columns.append(np.array(frf))
        write_samples_csv(path, "frequency", grid, columns)
    else:
        problem = build_problem(cfg, model)
        node = _trace_node(cfg, problem)
        columns = []
        for rep in range(count):
            draw = problem.draw(STREAM_TRACE, level, rep)
            payload = problem.evaluate(level, draw)
            columns.append(problem.field_vector(payload, node))
        write_samples_csv(path, problem.axis_label, problem.axis, columns)

    if cfg.figures:
        from . import figures
        figures.render_samples(path)
    return path
