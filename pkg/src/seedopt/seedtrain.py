"""Uncertainty-aware seed-train simulation.

Chains cultivation scales from the thawed vial to the production vessel.
Each scale is integrated as a Monte-Carlo ensemble (lognormal perturbations
of the maximum growth rate and of the initial viable cell density, one draw
per sample held fixed across all scales). Passaging times are chosen per
scale from the risk-adjusted utility

    U(t) = mean(Xv(t)) - alpha * sd(Xv(t))

evaluated on integer hours: the earliest feasible hour where U reaches the
required transfer cell density. The objective vector reports the train
duration, the deviation rate (fraction of samples with at least one
seeding- or transfer-density range violation), and optionally end-of-
production titer and viability.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kinetics
from .integrator import IntegratorConfig, integrate
from .kinetics import (
    IDX_TITER,
    IDX_V,
    IDX_XT,
    IDX_XV,
    CultureState,
    FeedSchedule,
    ModelParameters,
    STATE_NAMES,
)

SEEDING_VCD_RANGE_DEFAULT = (3.0e8, 3.5e8)  # cells/L
TRANSFER_VCD_RANGE_DEFAULT = (1.0e9, 1.0e10)  # cells/L
TARGET_SEEDING_VCD_DEFAULT = 3.15e8  # cells/L, = range minimum + 5%
PASSAGING_WINDOW_DEFAULT = (48.0, 120.0)  # h

# Per-component absolute tolerances for the culture-state integrator:
# cells/L, cells/L, four concentrations in mmol/L, titer in mg/L, volume in L.
# Resolving substrate-depletion tails below 1e-5 mmol/L is kinetically
# meaningless (Monod factors there are < 1e-3) and only multiplies steps.
STATE_ABS_TOL = np.array([1.0, 1.0, 1e-5, 1e-5, 1e-5, 1e-5, 1e-5, 1e-9])

VESSEL_KINDS = ("flask", "bioreactor", "production")


class ThresholdUnreachable(RuntimeError):
    """No feasible passaging hour reaches the required transfer density."""

    def __init__(self, scale_name: str, threshold: float, window):
        super().__init__(
            f"utility never reaches {threshold:.4g} cells/L within "
            f"window {window} at scale {scale_name!r}"
        )
        self.scale_name = scale_name
        self.threshold = threshold
        self.window = tuple(window)


@dataclass
class ScaleConfig:
    """One cultivation vessel in the train."""

    name: str
    filling_volume: float  # L; the optimizable target for flask scales
    working_volume_range: tuple[float, float]  # L
    vessel: str = "flask"  # flask | bioreactor | production
    passaging_window: tuple[float, float] = PASSAGING_WINDOW_DEFAULT  # h
    medium_c_glc: float = 35.0  # mmol/L
    medium_c_gln: float = 5.0  # mmol/L
    mu_max_override: float | None = None  # 1/h

    def validate(self) -> None:
        if self.vessel not in VESSEL_KINDS:
            raise ValueError(f"unknown vessel kind {self.vessel!r}")
        lo, hi = self.working_volume_range
        if not (0 < lo <= self.filling_volume <= hi):
            raise ValueError(
                f"scale {self.name!r}: working volume range {self.working_volume_range} "
                f"must contain the filling volume {self.filling_volume}"
            )
        wlo, whi = self.passaging_window
        if wlo < 0 or wlo >= whi:
            raise ValueError(f"scale {self.name!r}: invalid passaging window")
        if self.medium_c_glc < 0 or self.medium_c_gln < 0:
            raise ValueError(f"scale {self.name!r}: medium concentrations must be >= 0")
        if self.mu_max_override is not None and self.mu_max_override <= 0:
            raise ValueError(f"scale {self.name!r}: mu_max_override must be > 0")


@dataclass
class UncertaintySpec:
    """Lognormal multiplicative noise, one draw per Monte-Carlo sample."""

    mu_max_rel_sd: float = 0.03
    initial_vcd_rel_sd: float = 0.05
    rng_seed: int = 0

    def validate(self) -> None:
        if self.mu_max_rel_sd < 0 or self.initial_vcd_rel_sd < 0:
            raise ValueError("relative standard deviations must be >= 0")


@dataclass
class SeedTrainConfig:
    scales: list[ScaleConfig]
    initial_state: CultureState
    uncertainty: UncertaintySpec = field(default_factory=UncertaintySpec)
    seeding_vcd_range: tuple[float, float] = SEEDING_VCD_RANGE_DEFAULT
    transfer_vcd_range: tuple[float, float] = TRANSFER_VCD_RANGE_DEFAULT
    target_seeding_vcd: float = TARGET_SEEDING_VCD_DEFAULT
    alpha: float = 1.0  # risk aversion in U(t)
    n_mc: int = 1000
    production_duration: float = 192.0  # h, batch culture in the last vessel
    passaging_mode: str = "utility"  # "utility" | "fixed"
    fixed_interval: float = 72.0  # h, used by passaging_mode == "fixed"
    violation_counting: str = "per-trajectory"  # | "per-event"
    lag_first_scale_only: bool = True

    def validate(self) -> None:
        if len(self.scales) < 2:
            raise ValueError("need at least two scales")
        for scale in self.scales:
            scale.validate()
        if self.scales[-1].vessel != "production":
            raise ValueError("the last scale must be the production vessel")
        if any(s.vessel == "production" for s in self.scales[:-1]):
            raise ValueError("only the last scale may be the production vessel")
        lo, hi = self.seeding_vcd_range
        if not (0 < lo < hi):
            raise ValueError("seeding_vcd_range must be ordered and positive")
        if not lo <= self.target_seeding_vcd <= hi:
            raise ValueError("target_seeding_vcd must lie in seeding_vcd_range")
        tlo, thi = self.transfer_vcd_range
        if not (0 < tlo < thi):
            raise ValueError("transfer_vcd_range must be ordered and positive")
        if self.n_mc < 2:
            raise ValueError("n_mc must be >= 2")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.production_duration <= 0:
            raise ValueError("production_duration must be > 0")
        if self.passaging_mode not in ("utility", "fixed"):
            raise ValueError(f"unknown passaging_mode {self.passaging_mode!r}")
        if self.passaging_mode == "fixed" and self.fixed_interval <= 0:
            raise ValueError("fixed_interval must be > 0")
        if self.violation_counting not in ("per-trajectory", "per-event"):
            raise ValueError(f"unknown violation_counting {self.violation_counting!r}")
        self.uncertainty.validate()
        self.initial_state.validate()

    @property
    def flask_scales(self) -> list[ScaleConfig]:
        return [s for s in self.scales if s.vessel == "flask"]


@dataclass
class PassagingEvent:
    """Mean schedule entry for one transfer into the next vessel."""

    scale_index: int
    time: float  # h, absolute train time
    transfer_vcd: float  # cells/L, ensemble mean before the transfer
    seeding_vcd_next: float  # cells/L, ensemble mean after the transfer
    suspension_volume_used: float  # L
    medium_volume_added: float  # L
    suspension_discarded: float  # L


@dataclass
class ObjectiveVector:
    """Objective values of one seed-train design."""

    duration: float  # h until production-vessel inoculation
    deviation_rate: float  # percent of MC samples violating a VCD range
    titer_end: float | None = None  # mg/L after the production batch
    viability_end: float | None = None  # percent at the production batch end

    def validate(self) -> None:
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        if not 0.0 <= self.deviation_rate <= 100.0:
            raise ValueError("deviation_rate must be in [0, 100]")
        if self.viability_end is not None and not 0.0 <= self.viability_end <= 100.0:
            raise ValueError("viability_end must be in [0, 100]")

    def as_array(self, four_objectives: bool = False) -> np.ndarray:
        if four_objectives:
            if self.titer_end is None or self.viability_end is None:
                raise ValueError("titer_end/viability_end missing for 4-objective mode")
            return np.array(
                [self.duration, self.deviation_rate, self.titer_end, self.viability_end]
            )
        return np.array([self.duration, self.deviation_rate])


@dataclass
class StateBand:
    """Hourly ensemble summary of one state variable over the train."""

    t: np.ndarray  # h, absolute; passaging hours appear twice (pre/post)
    mean: np.ndarray
    q05: np.ndarray
    q95: np.ndarray


@dataclass
class SeedTrainResult:
    objectives: ObjectiveVector
    protocol: list[PassagingEvent]
    bands: dict[str, StateBand]
    mc_violation_flags: np.ndarray  # (n_mc,) bool
    failure: str | None = None  # scale name when the threshold was unreachable


def required_transfer_vcd(
    current: ScaleConfig,
    next_scale: ScaleConfig,
    target_seeding: float,
    transfer_vcd_min: float = TRANSFER_VCD_RANGE_DEFAULT[0],
) -> float:
    """Minimum viable cell density at which transferring the whole current
    volume (topped up with medium) reaches the seeding target, clamped up to
    the lower bound of the acceptable transfer range."""
    v_cur = current.filling_volume
    v_next = next_scale.filling_volume
    if v_cur <= 0 or v_next <= 0:
        raise ValueError("filling volumes must be > 0")
    return max(target_seeding * v_next / v_cur, transfer_vcd_min)


def find_passaging_time(times, xv_ensemble, alpha, threshold, window) -> float:
    """Earliest hour in the window where U(t) = mean - alpha*sd reaches the
    threshold.

    Args:
        times: (T,) hourly grid.
        xv_ensemble: (n_samples, T) viable cell densities.
        alpha: risk aversion weight on the ensemble standard deviation.
        threshold: required transfer viable cell density, cells/L.
        window: (lower, upper) feasible passaging hours.

    Raises:
        ThresholdUnreachable: no feasible hour in the window.
    """
    times = np.asarray(times, dtype=float)
    xv = np.atleast_2d(np.asarray(xv_ensemble, dtype=float))
    if xv.shape[0] < 2:
        raise ValueError("ensemble must contain at least 2 samples")
    if xv.shape[1] != times.size:
        raise ValueError("ensemble and time grid sizes differ")
    lo, hi = window
    in_window = (times >= lo) & (times <= hi)
    if not np.any(in_window):
        raise ValueError("hourly grid does not cover the passaging window")
    utility = xv.mean(axis=0) - alpha * xv.std(axis=0, ddof=1)
    feasible = in_window & (utility >= threshold)
    if not np.any(feasible):
        raise ThresholdUnreachable("<ensemble>", threshold, window)
    return float(times[np.argmax(feasible)])


def _passage_ensemble(y, next_scale: ScaleConfig, target_seeding):
    """Vectorized transfer of an ensemble into the next vessel.

    Returns (new ensemble, suspension volume used per sample). Samples too
    dilute to reach the seeding target transfer their whole volume and start
    the next scale under-seeded; dense samples discard surplus suspension.
    """
    y = np.asarray(y, dtype=float)
    v_next = next_scale.filling_volume
    xv = y[..., IDX_XV]
    if np.any(xv <= 0):
        raise ValueError("cannot passage a culture without viable cells")
    v_used = np.minimum(y[..., IDX_V], target_seeding * v_next / xv)
    medium = v_next - v_used
    keep = v_used / v_next

    out = y * keep[..., None]
    out[..., kinetics.IDX_GLC] = (
        y[..., kinetics.IDX_GLC] * v_used + next_scale.medium_c_glc * medium
    ) / v_next
    out[..., kinetics.IDX_GLN] = (
        y[..., kinetics.IDX_GLN] * v_used + next_scale.medium_c_gln * medium
    ) / v_next
    out[..., IDX_V] = v_next
    return out, v_used


def execute_passaging(
    source_state: CultureState, next_scale: ScaleConfig, target_seeding: float
) -> CultureState:
    """Transfer one culture into the next vessel.

    Suspension volume is chosen to hit the seeding target exactly when the
    source is dense enough (surplus is discarded); otherwise the whole source
    volume is used and the next scale starts below target. Fresh medium
    contributes glucose and glutamine only. The time field is unchanged.
    """
    y_new, _ = _passage_ensemble(source_state.to_array(), next_scale, target_seeding)
    return CultureState.from_array(source_state.t, y_new)


def default_integrator_config() -> IntegratorConfig:
    return IntegratorConfig(method="rk45_adaptive", rel_tol=1e-8, abs_tol=STATE_ABS_TOL)


def _mean_one_lognormal(rng, rel_sd, n):
    """Unit-mean lognormal factors with the requested relative SD."""
    if rel_sd == 0.0:
        return np.ones(n)
    sigma = np.sqrt(np.log1p(rel_sd**2))
    return rng.lognormal(mean=-0.5 * sigma**2, sigma=sigma, size=n)


def _scale_params(params: ModelParameters, scale: ScaleConfig, scale_index: int,
                  cfg: SeedTrainConfig, mu_factors):
    base = scale.mu_max_override if scale.mu_max_override is not None else params.mu_max
    p = params.with_mu_max(base * mu_factors)
    if cfg.lag_first_scale_only and scale_index > 0:
        p = replace(p, t_lag=0.0)
    return p


def _band_block(bands, t_offset, times, y_block):
    for j, name in enumerate(STATE_NAMES):
        column = y_block[..., j]
        bands[name]["t"].append(t_offset + times)
        bands[name]["mean"].append(column.mean(axis=1))
        bands[name]["q05"].append(np.quantile(column, 0.05, axis=1))
        bands[name]["q95"].append(np.quantile(column, 0.95, axis=1))


def _finish_bands(bands) -> dict[str, StateBand]:
    out = {}
    for name, parts in bands.items():
        if not parts["t"]:
            out[name] = StateBand(*(np.array([]) for _ in range(4)))
            continue
        out[name] = StateBand(
            t=np.concatenate(parts["t"]),
            mean=np.concatenate(parts["mean"]),
            q05=np.concatenate(parts["q05"]),
            q95=np.concatenate(parts["q95"]),
        )
    return out


def penalty_objectives(cfg: SeedTrainConfig, four_objectives: bool) -> ObjectiveVector:
    """Finite worst-case objectives reported for infeasible designs."""
    window_upper = max(s.passaging_window[1] for s in cfg.scales[:-1])
    duration = window_upper * len(cfg.scales) * 2.0
    if four_objectives:
        return ObjectiveVector(duration, 100.0, titer_end=0.0, viability_end=0.0)
    return ObjectiveVector(duration, 100.0)


def simulate_seed_train(
    x,
    cfg: SeedTrainConfig,
    params: ModelParameters,
    icfg: IntegratorConfig | None = None,
    objectives: str = "two",
) -> SeedTrainResult:
    """Simulate the full seed train for one vector of flask filling volumes.

    Args:
        x: filling volumes (L) for the flask scales, in scale order; None
            keeps the volumes configured on the scales.
        cfg: seed-train configuration.
        params: kinetic parameter set.
        icfg: integrator configuration (defaults to adaptive RK45).
        objectives: "two" (duration, deviation rate) or "four" (additionally
            end-of-production titer and viability).

    The schedule is shared across Monte-Carlo samples: one passaging hour per
    scale, chosen from the ensemble utility. An unreachable threshold yields
    penalty objectives rather than an exception so optimizers can learn
    infeasible regions.
    """
    cfg.validate()
    params.validate()
    if objectives not in ("two", "four"):
        raise ValueError(f"unknown objectives mode {objectives!r}")
    four = objectives == "four"
    if icfg is None:
        icfg = default_integrator_config()

    scales = [replace(s) for s in cfg.scales]
    if x is not None:
        x = np.asarray(x, dtype=float)
        flasks = [s for s in scales if s.vessel == "flask"]
        if x.shape != (len(flasks),):
            raise ValueError(f"expected {len(flasks)} flask volumes, got shape {x.shape}")
        for scale, volume in zip(flasks, x):
            lo, hi = scale.working_volume_range
            if not lo <= volume <= hi:
                raise ValueError(
                    f"volume {volume} for scale {scale.name!r} outside working range"
                )
            scale.filling_volume = float(volume)

    rng = np.random.default_rng(cfg.uncertainty.rng_seed)
    mu_factors = _mean_one_lognormal(rng, cfg.uncertainty.mu_max_rel_sd, cfg.n_mc)
    vcd_factors = _mean_one_lognormal(rng, cfg.uncertainty.initial_vcd_rel_sd, cfg.n_mc)

    y = np.tile(cfg.initial_state.to_array(), (cfg.n_mc, 1))
    y[:, IDX_XV] *= vcd_factors
    y[:, IDX_XT] *= vcd_factors
    y[:, IDX_V] = scales[0].filling_volume

    feeds = FeedSchedule.batch()
    seeding_lo, seeding_hi = cfg.seeding_vcd_range
    transfer_lo, transfer_hi = cfg.transfer_vcd_range

    violated = np.zeros(cfg.n_mc, dtype=bool)
    violation_events = 0
    protocol: list[PassagingEvent] = []
    bands = {name: {"t": [], "mean": [], "q05": [], "q95": []} for name in STATE_NAMES}
    t_abs = 0.0
    failure = None

    for k in range(len(scales) - 1):
        scale = scales[k]
        next_scale = scales[k + 1]
        p_k = _scale_params(params, scale, k, cfg, mu_factors)

        if cfg.passaging_mode == "fixed":
            horizon = cfg.fixed_interval
        else:
            horizon = scale.passaging_window[1]
        grid = np.arange(0.0, np.floor(horizon) + 1.0)
        if grid[-1] < horizon:
            grid = np.append(grid, horizon)
        traj = integrate(
            lambda t, yy: kinetics.rhs_array(t, yy, p_k, feeds),
            y,
            0.0,
            horizon,
            icfg,
            output_grid=grid,
            project=kinetics.make_state_projector(icfg.abs_tol),
        )

        threshold = required_transfer_vcd(
            scale, next_scale, cfg.target_seeding_vcd, transfer_lo
        )
        if cfg.passaging_mode == "fixed":
            t_pass = cfg.fixed_interval
        else:
            try:
                t_pass = find_passaging_time(
                    traj.t,
                    traj.y[:, :, IDX_XV].T,
                    cfg.alpha,
                    threshold,
                    scale.passaging_window,
                )
            except ThresholdUnreachable:
                failure = scale.name
                break

        idx = int(np.searchsorted(traj.t, t_pass))
        y_at = traj.y[idx]
        _band_block(bands, t_abs, traj.t[: idx + 1], traj.y[: idx + 1])

        transfer_vcd = y_at[:, IDX_XV]
        transfer_bad = (transfer_vcd < transfer_lo) | (transfer_vcd > transfer_hi)
        y, v_used = _passage_ensemble(y_at, next_scale, cfg.target_seeding_vcd)
        seeding_vcd = y[:, IDX_XV]
        seeding_bad = (seeding_vcd < seeding_lo) | (seeding_vcd > seeding_hi)

        violated |= transfer_bad | seeding_bad
        violation_events += int(transfer_bad.sum()) + int(seeding_bad.sum())

        t_abs += t_pass
        protocol.append(
            PassagingEvent(
                scale_index=k,
                time=t_abs,
                transfer_vcd=float(transfer_vcd.mean()),
                seeding_vcd_next=float(seeding_vcd.mean()),
                suspension_volume_used=float(v_used.mean()),
                medium_volume_added=float(next_scale.filling_volume - v_used.mean()),
                suspension_discarded=float((scale.filling_volume - v_used).mean()),
            )
        )

    if failure is not None:
        obj = penalty_objectives(cfg, four)
        return SeedTrainResult(
            objectives=obj,
            protocol=protocol,
            bands=_finish_bands(bands),
            mc_violation_flags=np.ones(cfg.n_mc, dtype=bool),
            failure=failure,
        )

    titer_end = None
    viability_end = None
    if four:
        production = scales[-1]
        p_prod = _scale_params(params, production, len(scales) - 1, cfg, mu_factors)
        traj = integrate(
            lambda t, yy: kinetics.rhs_array(t, yy, p_prod, feeds),
            y,
            0.0,
            cfg.production_duration,
            icfg,
            project=kinetics.make_state_projector(icfg.abs_tol),
        )
        _band_block(bands, t_abs, traj.t, traj.y)
        y_end = traj.y[-1]
        titer_end = float(y_end[:, IDX_TITER].mean())
        with np.errstate(invalid="ignore", divide="ignore"):
            viability = np.where(
                y_end[:, IDX_XT] > 0, 100.0 * y_end[:, IDX_XV] / y_end[:, IDX_XT], 0.0
            )
        viability_end = float(np.clip(viability, 0.0, 100.0).mean())

    n_transitions = len(scales) - 1
    if cfg.violation_counting == "per-event":
        deviation = 100.0 * violation_events / (cfg.n_mc * 2 * n_transitions)
    else:
        deviation = 100.0 * violated.sum() / cfg.n_mc

    obj = ObjectiveVector(
        duration=t_abs,
        deviation_rate=float(deviation),
        titer_end=titer_end,
        viability_end=viability_end,
    )
    obj.validate()
    return SeedTrainResult(
        objectives=obj,
        protocol=protocol,
        bands=_finish_bands(bands),
        mc_violation_flags=violated,
    )
