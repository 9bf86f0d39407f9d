"""The operator-facing commands behind the CLI verbs.

Each command takes a validated RunConfig and an output directory and emits
plot-ready CSV/JSON artifacts: passaging protocols, hourly prediction bands,
optimization histories, Pareto tables, GP posterior contour grids, spider
tables and scenario summaries.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import gp, mobo
from ..kinetics import STATE_NAMES
from ..seedtrain import SeedTrainResult, simulate_seed_train
from .config import ITERATION_BUDGETS, MU_SWEEP_FACTORS, RunConfig
from .reports import write_csv, write_json

STATE_UNITS = {
    "xv": "cells/L",
    "xt": "cells/L",
    "c_glc": "mmol/L",
    "c_gln": "mmol/L",
    "c_lac": "mmol/L",
    "c_amm": "mmol/L",
    "c_titer": "mg/L",
    "v": "L",
}

OBJECTIVE_UNITS = {
    "duration": "h",
    "deviation_rate": "%",
    "titer": "mg/L",
    "viability": "%",
}

CONTOUR_GRID_SIZE = 50


def _objectives_payload(result: SeedTrainResult) -> dict:
    obj = result.objectives
    payload = {
        "duration_h": obj.duration,
        "deviation_rate_pct": obj.deviation_rate,
        "feasible": result.failure is None,
        "failure_scale": result.failure,
    }
    if obj.titer_end is not None:
        payload["titer_end_mg_per_L"] = obj.titer_end
        payload["viability_end_pct"] = obj.viability_end
    return payload


def _write_protocol(path, result: SeedTrainResult, scale_names) -> Path:
    columns = [
        ("scale", "-"),
        ("time_h", "h"),
        ("transfer_vcd", "cells/L"),
        ("seeding_vcd", "cells/L"),
        ("suspension_L", "L"),
        ("medium_L", "L"),
        ("discarded_L", "L"),
    ]
    rows = [
        (
            scale_names[e.scale_index],
            e.time,
            e.transfer_vcd,
            e.seeding_vcd_next,
            e.suspension_volume_used,
            e.medium_volume_added,
            e.suspension_discarded,
        )
        for e in result.protocol
    ]
    return write_csv(path, columns, rows)


def _write_bands(out_dir: Path, result: SeedTrainResult) -> list[Path]:
    written = []
    for name in STATE_NAMES:
        band = result.bands[name]
        columns = [("t_h", "h"), ("mean", STATE_UNITS[name]),
                   ("q05", STATE_UNITS[name]), ("q95", STATE_UNITS[name])]
        rows = zip(band.t, band.mean, band.q05, band.q95)
        written.append(write_csv(out_dir / f"bands_{name}.csv", columns, rows))
    return written


def cmd_simulate(config: RunConfig, out_dir: Path) -> list[Path]:
    """Simulate the configured train once and emit protocol, bands and
    objective summary."""
    config.validate()
    out_dir = Path(out_dir)
    st_cfg = config.seed_train_config(config.active_flask_volumes())
    result = simulate_seed_train(None, st_cfg, config.model,
                                 objectives=config.objectives)
    scale_names = [s.name for s in st_cfg.scales]
    written = [_write_protocol(out_dir / "protocol.csv", result, scale_names)]
    written.extend(_write_bands(out_dir, result))
    written.append(write_json(out_dir / "objectives.json", _objectives_payload(result)))
    return written


def cmd_reference(config: RunConfig, out_dir: Path) -> list[Path]:
    """Simulate the non-optimized reference: fixed passaging intervals."""
    reference = replace(config)
    reference.seed_train_settings = dict(config.seed_train_settings,
                                         passaging_mode="fixed")
    return cmd_simulate(reference, out_dir)


def _objective_function(config: RunConfig, st_cfg):
    four = config.four_objectives

    def objective(x):
        result = simulate_seed_train(x, st_cfg, config.model,
                                     objectives=config.objectives)
        return result.objectives.as_array(four)

    return objective


def _x_columns(n: int):
    return [(f"V{i + 1}", "L") for i in range(n)]


def _write_history(path, result: mobo.OptimizeResult, config: RunConfig) -> Path:
    names = config.objective_names()
    values = np.array([rec.values for rec in result.history])
    sense = config.optimizer_config().objective_sense
    pareto = set(mobo.pareto_filter(values, sense=sense).tolist())
    columns = [("iteration", "-"), ("provenance", "-")]
    columns += _x_columns(result.history[0].x.size)
    columns += [(n, OBJECTIVE_UNITS[n]) for n in names]
    columns += [("is_pareto", "-")]
    rows = []
    for rec in result.history:
        rows.append(
            (rec.index, rec.provenance, *rec.x, *rec.values, rec.index in pareto)
        )
    return write_csv(path, columns, rows)


def _write_pareto(path, result: mobo.OptimizeResult, config: RunConfig) -> Path:
    names = config.objective_names()
    columns = [("solution", "-"), ("provenance", "-")]
    columns += _x_columns(result.archive.entries[0].x.size)
    columns += [(n, OBJECTIVE_UNITS[n]) for n in names]
    rows = [
        (i + 1, entry.provenance, *entry.x, *entry.values)
        for i, entry in enumerate(result.archive.entries)
    ]
    return write_csv(path, columns, rows)


def _write_contours(out_dir: Path, models, config: RunConfig, space) -> list[Path]:
    """GP posterior mean on a 50x50 grid for every variable pair; the
    remaining variables sit at the midpoint of their bounds."""
    written = []
    names = config.objective_names()
    bounds = space.bounds
    d = space.n_dims
    mid = bounds.mean(axis=1)
    axes = [np.linspace(lo, hi, CONTOUR_GRID_SIZE) for lo, hi in bounds]
    for i in range(d):
        for j in range(i + 1, d):
            gi, gj = np.meshgrid(axes[i], axes[j], indexing="ij")
            grid = np.tile(mid, (gi.size, 1))
            grid[:, i] = gi.ravel()
            grid[:, j] = gj.ravel()
            for name, model in zip(names, models):
                mean, _ = gp.predict_many(model, grid)
                columns = [
                    (f"V{i + 1}", "L"),
                    (f"V{j + 1}", "L"),
                    (name, OBJECTIVE_UNITS[name]),
                ]
                rows = zip(grid[:, i], grid[:, j], mean)
                written.append(
                    write_csv(out_dir / f"contour_{name}_V{i + 1}_V{j + 1}.csv",
                              columns, rows)
                )
    return written


def _write_spider(path, result: mobo.OptimizeResult, config: RunConfig) -> Path:
    names = config.objective_names()
    columns = [("solution", "-")] + [(n, OBJECTIVE_UNITS[n]) for n in names]
    rows = [(i + 1, *entry.values) for i, entry in enumerate(result.archive.entries)]
    return write_csv(path, columns, rows)


def cmd_optimize(config: RunConfig, out_dir: Path):
    """Full optimization run plus every report artifact.

    Returns (written paths, OptimizeResult) so scenario drivers can reuse the
    in-memory result.
    """
    config.validate()
    out_dir = Path(out_dir)
    st_cfg = config.seed_train_config()
    space = config.design_space()
    opt_cfg = config.optimizer_config()
    objective = _objective_function(config, st_cfg)

    result = mobo.optimize(objective, space, opt_cfg)

    written = [
        _write_history(out_dir / "history.csv", result, config),
        _write_pareto(out_dir / "pareto.csv", result, config),
    ]

    # per-solution protocols re-simulate the archived designs
    scale_names_base = [s.name for s in st_cfg.scales]
    for i, entry in enumerate(result.archive.entries):
        res = simulate_seed_train(entry.x, st_cfg, config.model,
                                  objectives=config.objectives)
        written.append(
            _write_protocol(out_dir / f"protocol_solution_{i + 1:02d}.csv",
                            res, scale_names_base)
        )

    x_all = np.array([rec.x for rec in result.history])
    values = np.array([rec.values for rec in result.history])
    models = mobo.fit_objective_models(x_all, values, opt_cfg, opt_cfg.n_iterations)
    written.append(
        write_json(
            out_dir / "gp_models.json",
            {"models": {name: gp.model_to_dict(model)
                        for name, model in zip(config.objective_names(), models)}},
        )
    )
    written.extend(_write_contours(out_dir, models, config, space))
    if config.four_objectives:
        written.append(_write_spider(out_dir / "spider.csv", result, config))
    return written, result


def _archive_summary(result: mobo.OptimizeResult):
    values = np.array([e.values for e in result.archive.entries])
    return {
        "n_pareto": len(result.archive.entries),
        "min_duration_h": float(values[:, 0].min()),
        "min_deviation_pct": float(values[:, 1].min()),
    }


def cmd_sweep_mu(config: RunConfig, out_dir: Path) -> list[Path]:
    """Optimize under maximum growth rates scaled by 0.95, 1.00 and 1.05.

    Scenarios share the same seed, so differences are attributable to the
    growth-rate change alone.
    """
    config.validate()
    out_dir = Path(out_dir)
    written = []
    summary_rows = []
    for factor in MU_SWEEP_FACTORS:
        scenario = replace(config)
        scenario.model = replace(config.model, mu_max=config.model.mu_max * factor)
        scenario.downstream_scales = [
            replace(s, mu_max_override=(s.mu_max_override * factor
                                        if s.mu_max_override is not None else None))
            for s in config.downstream_scales
        ]
        tag = f"mu_{round(factor * 100):03d}"
        scenario_written, result = cmd_optimize(scenario, out_dir / tag)
        written.extend(scenario_written)
        summary = _archive_summary(result)
        summary_rows.append((tag, factor, summary["n_pareto"],
                             summary["min_duration_h"], summary["min_deviation_pct"]))
    columns = [("scenario", "-"), ("mu_scale", "-"), ("n_pareto", "-"),
               ("min_duration", "h"), ("min_deviation_rate", "%")]
    written.append(write_csv(out_dir / "sweep_summary.csv", columns, summary_rows))
    return written


def cmd_iteration_study(config: RunConfig, out_dir: Path) -> list[Path]:
    """Optimize with 10, 20 and 30 iterations on a shared seed.

    The seeding scheme makes histories literal prefixes of each other; the
    summary reports archive hypervolume per budget against one reference
    point computed from the largest budget's history.
    """
    config.validate()
    out_dir = Path(out_dir)
    written = []
    results = {}
    for budget in ITERATION_BUDGETS:
        scenario = replace(config)
        scenario.optimizer_settings = dict(config.optimizer_settings,
                                           n_iterations=budget)
        scenario_written, result = cmd_optimize(scenario, out_dir / f"iters_{budget}")
        written.extend(scenario_written)
        results[budget] = result

    sense_signs = config.optimizer_config().sense_signs()
    largest = results[max(ITERATION_BUDGETS)]
    all_values_min = np.array([r.values for r in largest.history]) * sense_signs
    ref = mobo.default_reference_point(all_values_min)

    rows = []
    for budget in ITERATION_BUDGETS:
        front = results[budget].archive.front_matrix()
        rows.append((budget, len(results[budget].history),
                     len(results[budget].archive.entries),
                     mobo.hypervolume(front, ref)))
    columns = [("iterations", "-"), ("evaluations", "-"), ("n_pareto", "-"),
               ("hypervolume", "-")]
    written.append(write_csv(out_dir / "hypervolume_vs_budget.csv", columns, rows))
    return written
