"""Run-configuration schema: strict parsing, validation, canonical form.

One YAML file declares a whole study: the kinetic parameter set, the seed
train (downstream vessels plus per-flask-count design spaces and explicit
volumes), the optimizer budget and the run mode. Unknown keys are rejected
with the path to the offending field. All randomness derives from the single
top-level seed through fixed spawn keys.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from ..kinetics import CultureState, ModelParameters
from ..mobo import DesignSpace, OptimizerConfig
from ..seedtrain import ScaleConfig, SeedTrainConfig, UncertaintySpec

SCHEMA_VERSION = 1
MODES = ("simulate", "optimize", "reference", "sweep-mu", "iteration-study")
OBJECTIVE_MODES = ("two", "four")
FLASK_COUNTS = (3, 4, 5)
MU_SWEEP_FACTORS = (0.95, 1.0, 1.05)
ITERATION_BUDGETS = (10, 20, 30)

# spawn keys fanning the root seed out to the components
_SEED_KEY_MC = 0
_SEED_KEY_OPTIMIZER = 1


class ConfigError(ValueError):
    """Configuration rejected; the message names the offending field."""


_REQUIRED = object()


def derive_seed(root_seed: int, key: int) -> int:
    return int(np.random.SeedSequence(entropy=root_seed, spawn_key=(key,)).generate_state(1)[0])


def _expect_mapping(value, path):
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected a mapping")
    return dict(value)


def _take(mapping, key, path, default=_REQUIRED):
    if key in mapping:
        return mapping.pop(key)
    if default is _REQUIRED:
        raise ConfigError(f"{path}.{key}: required field is missing")
    return default


def _reject_unknown(mapping, path):
    if mapping:
        names = ", ".join(sorted(str(k) for k in mapping))
        raise ConfigError(f"{path}: unknown keys: {names}")


def _as_float(value, path) -> float:
    # PyYAML parses "3.15e8" (no exponent sign) as a string
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a number, got {value!r}") from None


def _as_int(value, path) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return value


def _as_bool(value, path) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{path}: expected true/false, got {value!r}")
    return value


def _as_str(value, path, choices=None) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    if choices is not None and value not in choices:
        raise ConfigError(f"{path}: must be one of {choices}, got {value!r}")
    return value


def _as_pair(value, path) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{path}: expected a [low, high] pair")
    return (_as_float(value[0], f"{path}[0]"), _as_float(value[1], f"{path}[1]"))


def _as_float_list(value, path) -> list[float]:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{path}: expected a list of numbers")
    return [_as_float(v, f"{path}[{i}]") for i, v in enumerate(value)]


@dataclass
class FlaskDefaults:
    passaging_window: tuple[float, float] = (48.0, 120.0)
    medium_c_glc: float = 35.0
    medium_c_gln: float = 5.0


@dataclass
class RunConfig:
    mode: str
    objectives: str
    seed: int
    output_dir: str
    flasks: int
    model: ModelParameters
    design_spaces: dict[int, list[tuple[float, float]]]
    flask_volumes: dict[int, list[float]]
    flask_defaults: FlaskDefaults
    downstream_scales: list[ScaleConfig]
    initial_state: CultureState
    uncertainty: UncertaintySpec
    seed_train_settings: dict
    optimizer_settings: dict

    # -- derived builders ---------------------------------------------------

    @property
    def four_objectives(self) -> bool:
        return self.objectives == "four"

    def active_bounds(self) -> list[tuple[float, float]]:
        try:
            return self.design_spaces[self.flasks]
        except KeyError:
            raise ConfigError(
                f"design_space: no variant for {self.flasks} flask scales"
            ) from None

    def design_space(self) -> DesignSpace:
        space = DesignSpace(bounds=np.array(self.active_bounds()))
        space.validate()
        return space

    def active_flask_volumes(self) -> list[float]:
        volumes = self.flask_volumes.get(self.flasks)
        if volumes is None:
            raise ConfigError(
                f"seed_train.flask_volumes: no volumes for {self.flasks} flask scales"
            )
        if len(volumes) != self.flasks:
            raise ConfigError(
                f"seed_train.flask_volumes.{self.flasks}: expected "
                f"{self.flasks} entries, got {len(volumes)}"
            )
        return volumes

    def build_scales(self, flask_volumes=None) -> list[ScaleConfig]:
        bounds = self.active_bounds()
        if flask_volumes is None:
            flask_volumes = [(lo + hi) / 2.0 for lo, hi in bounds]
        scales = [
            ScaleConfig(
                name=f"flask-{i + 1}",
                filling_volume=float(v),
                working_volume_range=bounds[i],
                vessel="flask",
                passaging_window=self.flask_defaults.passaging_window,
                medium_c_glc=self.flask_defaults.medium_c_glc,
                medium_c_gln=self.flask_defaults.medium_c_gln,
            )
            for i, v in enumerate(flask_volumes)
        ]
        scales.extend(replace(s) for s in self.downstream_scales)
        return scales

    def seed_train_config(self, flask_volumes=None) -> SeedTrainConfig:
        scales = self.build_scales(flask_volumes)
        initial = replace(self.initial_state, v=scales[0].filling_volume)
        uncertainty = replace(self.uncertainty, rng_seed=derive_seed(self.seed, _SEED_KEY_MC))
        cfg = SeedTrainConfig(
            scales=scales,
            initial_state=initial,
            uncertainty=uncertainty,
            **self.seed_train_settings,
        )
        cfg.validate()
        return cfg

    def optimizer_config(self) -> OptimizerConfig:
        if self.four_objectives:
            sense = ("minimize", "minimize", "maximize", "maximize")
        else:
            sense = ("minimize", "minimize")
        cfg = OptimizerConfig(
            objective_sense=sense,
            rng_seed=derive_seed(self.seed, _SEED_KEY_OPTIMIZER),
            **self.optimizer_settings,
        )
        cfg.validate()
        return cfg

    def objective_names(self) -> tuple[str, ...]:
        if self.four_objectives:
            return ("duration", "deviation_rate", "titer", "viability")
        return ("duration", "deviation_rate")

    def validate(self) -> None:
        if self.flasks not in FLASK_COUNTS:
            raise ConfigError(f"flasks: must be one of {FLASK_COUNTS}")
        self.model.validate()
        self.design_space()
        for count, volumes in self.flask_volumes.items():
            bounds = self.design_spaces.get(count)
            if bounds is None:
                raise ConfigError(
                    f"seed_train.flask_volumes.{count}: no matching design_space variant"
                )
            if len(volumes) != count:
                raise ConfigError(
                    f"seed_train.flask_volumes.{count}: expected {count} entries"
                )
            for i, (v, (lo, hi)) in enumerate(zip(volumes, bounds)):
                if not lo <= v <= hi:
                    raise ConfigError(
                        f"seed_train.flask_volumes.{count}[{i}]: {v} outside "
                        f"design bounds [{lo}, {hi}]"
                    )
        try:
            self.seed_train_config()
            self.optimizer_config()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- canonical form -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "mode": self.mode,
            "objectives": self.objectives,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "flasks": self.flasks,
            "model": asdict(self.model),
            "design_space": {
                str(count): [list(pair) for pair in bounds]
                for count, bounds in sorted(self.design_spaces.items())
            },
            "seed_train": {
                **{k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in sorted(self.seed_train_settings.items())},
                "uncertainty": {
                    "mu_max_rel_sd": self.uncertainty.mu_max_rel_sd,
                    "initial_vcd_rel_sd": self.uncertainty.initial_vcd_rel_sd,
                },
                "initial_state": {
                    "xv": self.initial_state.xv,
                    "xt": self.initial_state.xt,
                    "c_glc": self.initial_state.c_glc,
                    "c_gln": self.initial_state.c_gln,
                    "c_lac": self.initial_state.c_lac,
                    "c_amm": self.initial_state.c_amm,
                    "c_titer": self.initial_state.c_titer,
                },
                "flask_volumes": {
                    str(count): list(v) for count, v in sorted(self.flask_volumes.items())
                },
                "flask_defaults": {
                    "passaging_window": list(self.flask_defaults.passaging_window),
                    "medium_c_glc": self.flask_defaults.medium_c_glc,
                    "medium_c_gln": self.flask_defaults.medium_c_gln,
                },
                "downstream_scales": [
                    {
                        "name": s.name,
                        "vessel": s.vessel,
                        "filling_volume": s.filling_volume,
                        "working_volume_range": list(s.working_volume_range),
                        "passaging_window": list(s.passaging_window),
                        "medium_c_glc": s.medium_c_glc,
                        "medium_c_gln": s.medium_c_gln,
                        **(
                            {"mu_max_override": s.mu_max_override}
                            if s.mu_max_override is not None
                            else {}
                        ),
                    }
                    for s in self.downstream_scales
                ],
            },
            "optimizer": dict(sorted(self.optimizer_settings.items())),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def _parse_model(raw, path) -> ModelParameters:
    raw = _expect_mapping(raw, path)
    kwargs = {}
    for name in ModelParameters.__dataclass_fields__:
        if name in raw:
            kwargs[name] = _as_float(raw.pop(name), f"{path}.{name}")
    _reject_unknown(raw, path)
    return ModelParameters(**kwargs)


def _parse_initial_state(raw, path) -> CultureState:
    raw = _expect_mapping(raw, path)
    kwargs = {"t": 0.0, "v": 1.0}
    for name in ("xv", "xt", "c_glc", "c_gln", "c_lac", "c_amm", "c_titer"):
        kwargs[name] = _as_float(_take(raw, name, path), f"{path}.{name}")
    _reject_unknown(raw, path)
    return CultureState(**kwargs)


def _parse_uncertainty(raw, path) -> UncertaintySpec:
    raw = _expect_mapping(raw, path)
    spec = UncertaintySpec(
        mu_max_rel_sd=_as_float(_take(raw, "mu_max_rel_sd", path, 0.03), f"{path}.mu_max_rel_sd"),
        initial_vcd_rel_sd=_as_float(
            _take(raw, "initial_vcd_rel_sd", path, 0.05), f"{path}.initial_vcd_rel_sd"
        ),
    )
    _reject_unknown(raw, path)
    return spec


def _parse_downstream_scale(raw, index, path) -> ScaleConfig:
    raw = _expect_mapping(raw, f"{path}[{index}]")
    p = f"{path}[{index}]"
    scale = ScaleConfig(
        name=_as_str(_take(raw, "name", p), f"{p}.name"),
        vessel=_as_str(_take(raw, "vessel", p), f"{p}.vessel",
                       choices=("bioreactor", "production")),
        filling_volume=_as_float(_take(raw, "filling_volume", p), f"{p}.filling_volume"),
        working_volume_range=_as_pair(_take(raw, "working_volume_range", p),
                                      f"{p}.working_volume_range"),
        passaging_window=_as_pair(_take(raw, "passaging_window", p, [48.0, 120.0]),
                                  f"{p}.passaging_window"),
        medium_c_glc=_as_float(_take(raw, "medium_c_glc", p, 35.0), f"{p}.medium_c_glc"),
        medium_c_gln=_as_float(_take(raw, "medium_c_gln", p, 5.0), f"{p}.medium_c_gln"),
    )
    if "mu_max_override" in raw:
        scale.mu_max_override = _as_float(raw.pop("mu_max_override"), f"{p}.mu_max_override")
    _reject_unknown(raw, p)
    return scale


def from_dict(raw: dict) -> RunConfig:
    raw = _expect_mapping(raw, "<root>")
    version = _as_int(_take(raw, "schema_version", "<root>"), "schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {version}")

    mode = _as_str(_take(raw, "mode", "<root>"), "mode", choices=MODES)
    objectives = _as_str(_take(raw, "objectives", "<root>", "two"), "objectives",
                         choices=OBJECTIVE_MODES)
    seed = _as_int(_take(raw, "seed", "<root>", 0), "seed")
    output_dir = _as_str(_take(raw, "output_dir", "<root>", "out"), "output_dir")
    flasks = _as_int(_take(raw, "flasks", "<root>", 5), "flasks")

    model = _parse_model(_take(raw, "model", "<root>", {}), "model")

    ds_raw = _expect_mapping(_take(raw, "design_space", "<root>"), "design_space")
    design_spaces = {}
    for key, bounds in ds_raw.items():
        try:
            count = int(key)
        except (TypeError, ValueError):
            raise ConfigError(f"design_space.{key}: keys must be flask counts") from None
        if count not in FLASK_COUNTS:
            raise ConfigError(f"design_space.{key}: flask count must be one of {FLASK_COUNTS}")
        if not isinstance(bounds, (list, tuple)):
            raise ConfigError(f"design_space.{key}: expected a list of [low, high] pairs")
        design_spaces[count] = [
            _as_pair(pair, f"design_space.{key}[{i}]") for i, pair in enumerate(bounds)
        ]
        if len(design_spaces[count]) != count:
            raise ConfigError(f"design_space.{key}: expected {count} bound pairs")

    st = _expect_mapping(_take(raw, "seed_train", "<root>"), "seed_train")
    p = "seed_train"
    initial_state = _parse_initial_state(_take(st, "initial_state", p), f"{p}.initial_state")
    uncertainty = _parse_uncertainty(_take(st, "uncertainty", p, {}), f"{p}.uncertainty")

    volumes_raw = _expect_mapping(_take(st, "flask_volumes", p, {}), f"{p}.flask_volumes")
    flask_volumes = {}
    for key, vols in volumes_raw.items():
        try:
            count = int(key)
        except (TypeError, ValueError):
            raise ConfigError(f"{p}.flask_volumes.{key}: keys must be flask counts") from None
        flask_volumes[count] = _as_float_list(vols, f"{p}.flask_volumes.{key}")

    fd_raw = _expect_mapping(_take(st, "flask_defaults", p, {}), f"{p}.flask_defaults")
    flask_defaults = FlaskDefaults(
        passaging_window=_as_pair(
            _take(fd_raw, "passaging_window", f"{p}.flask_defaults", [48.0, 120.0]),
            f"{p}.flask_defaults.passaging_window",
        ),
        medium_c_glc=_as_float(
            _take(fd_raw, "medium_c_glc", f"{p}.flask_defaults", 35.0),
            f"{p}.flask_defaults.medium_c_glc",
        ),
        medium_c_gln=_as_float(
            _take(fd_raw, "medium_c_gln", f"{p}.flask_defaults", 5.0),
            f"{p}.flask_defaults.medium_c_gln",
        ),
    )
    _reject_unknown(fd_raw, f"{p}.flask_defaults")

    scales_raw = _take(st, "downstream_scales", p)
    if not isinstance(scales_raw, (list, tuple)) or not scales_raw:
        raise ConfigError(f"{p}.downstream_scales: expected a non-empty list")
    downstream = [
        _parse_downstream_scale(s, i, f"{p}.downstream_scales")
        for i, s in enumerate(scales_raw)
    ]

    settings = {
        "target_seeding_vcd": _as_float(
            _take(st, "target_seeding_vcd", p, 3.15e8), f"{p}.target_seeding_vcd"),
        "seeding_vcd_range": _as_pair(
            _take(st, "seeding_vcd_range", p, [3.0e8, 3.5e8]), f"{p}.seeding_vcd_range"),
        "transfer_vcd_range": _as_pair(
            _take(st, "transfer_vcd_range", p, [1.0e9, 1.0e10]), f"{p}.transfer_vcd_range"),
        "alpha": _as_float(_take(st, "alpha", p, 1.0), f"{p}.alpha"),
        "n_mc": _as_int(_take(st, "n_mc", p, 1000), f"{p}.n_mc"),
        "production_duration": _as_float(
            _take(st, "production_duration", p, 192.0), f"{p}.production_duration"),
        "passaging_mode": _as_str(
            _take(st, "passaging_mode", p, "utility"), f"{p}.passaging_mode",
            choices=("utility", "fixed")),
        "fixed_interval": _as_float(
            _take(st, "fixed_interval", p, 72.0), f"{p}.fixed_interval"),
        "violation_counting": _as_str(
            _take(st, "violation_counting", p, "per-trajectory"),
            f"{p}.violation_counting", choices=("per-trajectory", "per-event")),
        "lag_first_scale_only": _as_bool(
            _take(st, "lag_first_scale_only", p, True), f"{p}.lag_first_scale_only"),
    }
    _reject_unknown(st, p)

    opt_raw = _expect_mapping(_take(raw, "optimizer", "<root>", {}), "optimizer")
    optimizer_settings = {
        "n_lhs": _as_int(_take(opt_raw, "n_lhs", "optimizer", 10), "optimizer.n_lhs"),
        "n_iterations": _as_int(
            _take(opt_raw, "n_iterations", "optimizer", 20), "optimizer.n_iterations"),
        "ehvi_mc_samples": _as_int(
            _take(opt_raw, "ehvi_mc_samples", "optimizer", 2048), "optimizer.ehvi_mc_samples"),
        "acq_restarts": _as_int(
            _take(opt_raw, "acq_restarts", "optimizer", 32), "optimizer.acq_restarts"),
    }
    _reject_unknown(opt_raw, "optimizer")
    _reject_unknown(raw, "<root>")

    config = RunConfig(
        mode=mode,
        objectives=objectives,
        seed=seed,
        output_dir=output_dir,
        flasks=flasks,
        model=model,
        design_spaces=design_spaces,
        flask_volumes=flask_volumes,
        flask_defaults=flask_defaults,
        downstream_scales=downstream,
        initial_state=initial_state,
        uncertainty=uncertainty,
        seed_train_settings=settings,
        optimizer_settings=optimizer_settings,
    )
    return config


def load(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    if raw is None:
        raise ConfigError(f"{path}: empty config")
    return from_dict(raw)
