"""Mechanistic CHO cell-growth and metabolism model.

Implements the balance and kinetic equations for viable/total cell density,
glucose, glutamine, lactate, ammonia, product titer and culture volume,
applicable to batch and fed-batch operation. Growth follows dual Monod
kinetics on glucose and glutamine with an optional linear lag-phase
correction; death is driven by substrate starvation; lactate and ammonia
carry concentration-ratio production terms with switched uptake. Uptake
terms are damped by a narrow availability factor c/(c + EPS_UPTAKE) so
that concentrations decay to zero instead of crossing it.

All functions are pure and vectorize over a leading sample axis, so a
Monte-Carlo ensemble of cultures can be evaluated as one array operation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

# Floor for metabolite concentrations appearing in denominators. The lactate
# and ammonia rate laws divide by c_Lac and c_Amm, which are zero in fresh
# medium.
EPS_CONC = 1e-6  # mmol/L

# Half-saturation of the metabolite-uptake availability brake. Uptake must
# vanish with the metabolite, otherwise concentrations cross zero; the brake
# is narrow enough to be invisible at working concentrations.
EPS_UPTAKE = 1e-2  # mmol/L

# Relative threshold for the post-step projection guard: negatives smaller
# than this fraction of the running component scale are integration noise and
# get clamped to zero; anything larger aborts.
PROJECTION_REL_TOL = 1e-9

# State vector layout used by the array-based API.
IDX_XV, IDX_XT, IDX_GLC, IDX_GLN, IDX_LAC, IDX_AMM, IDX_TITER, IDX_V = range(8)
STATE_NAMES = ("xv", "xt", "c_glc", "c_gln", "c_lac", "c_amm", "c_titer", "v")


class NegativeStateError(RuntimeError):
    """A state component went negative beyond integration noise."""


@dataclass
class ModelParameters:
    """Kinetic constants of the cell growth / metabolism model.

    Units:
        mu_max, mu_d_min, mu_d_max, k_lys   1/h
        ks_glc, ks_gln, k_glc, k_gln        mmol/L
        q_glc_max, q_gln_max                mmol/(cell*h)
        q_lac_uptake_max, q_amm_uptake_max  mmol/(cell*h)
        y_lac_glc, y_amm_gln                mmol/mmol
        q_titer_max                         mg/(cell*h)
        t_lag                               h
        a_lag, k_amm                        dimensionless
        glc_switch_threshold                mmol/L

    ``mu_max`` may be a scalar or an array broadcastable against the sample
    axis, which is how per-sample growth-rate perturbations enter the
    Monte-Carlo simulation.
    """

    mu_max: float = 0.029
    mu_d_min: float = 5.0e-4
    mu_d_max: float = 0.01
    ks_glc: float = 0.05
    ks_gln: float = 0.03
    k_glc: float = 0.05
    k_gln: float = 0.03
    q_glc_max: float = 1.25e-10
    q_gln_max: float = 3.2e-11
    y_lac_glc: float = 1.8
    y_amm_gln: float = 0.85
    q_lac_uptake_max: float = 5.0e-11
    q_amm_uptake_max: float = 5.0e-12
    k_amm: float = 0.0
    k_lys: float = 0.003
    q_titer_max: float = 3.9e-10
    t_lag: float = 0.0
    a_lag: float = 0.0
    glc_switch_threshold: float = 0.5

    def validate(self) -> None:
        nonneg = (
            "mu_max", "mu_d_min", "mu_d_max", "ks_glc", "ks_gln", "k_glc",
            "k_gln", "q_glc_max", "q_gln_max", "y_lac_glc", "y_amm_gln",
            "q_lac_uptake_max", "q_amm_uptake_max", "k_lys", "q_titer_max",
            "glc_switch_threshold",
        )
        for name in nonneg:
            if np.any(np.asarray(getattr(self, name)) < 0):
                raise ValueError(f"{name} must be >= 0")
        if self.t_lag < 0:
            raise ValueError("t_lag must be >= 0")
        if not 0.0 <= self.a_lag <= 1.0:
            raise ValueError("a_lag must be in [0, 1]")

    def with_mu_max(self, mu_max) -> "ModelParameters":
        """Copy with a replacement (possibly per-sample) maximum growth rate."""
        return replace(self, mu_max=mu_max)


@dataclass
class CultureState:
    """State of one culture: time plus the 8 balanced quantities.

    Units: t in h; xv, xt in cells/L; concentrations in mmol/L; c_titer in
    mg/L; v in L.
    """

    t: float = 0.0
    xv: float = 0.0
    xt: float = 0.0
    c_glc: float = 0.0
    c_gln: float = 0.0
    c_lac: float = 0.0
    c_amm: float = 0.0
    c_titer: float = 0.0
    v: float = 1.0

    def validate(self) -> None:
        if self.xv < 0 or self.xt < self.xv:
            raise ValueError("need xt >= xv >= 0")
        for name in ("c_glc", "c_gln", "c_lac", "c_amm", "c_titer"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.v <= 0:
            raise ValueError("v must be > 0")

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.xv, self.xt, self.c_glc, self.c_gln, self.c_lac,
             self.c_amm, self.c_titer, self.v],
            dtype=float,
        )

    @classmethod
    def from_array(cls, t: float, y: np.ndarray) -> "CultureState":
        y = np.asarray(y, dtype=float)
        if y.shape != (8,):
            raise ValueError("state array must have shape (8,)")
        return cls(t, *(float(v) for v in y))


@dataclass(frozen=True)
class PiecewiseConstant:
    """Right-continuous step function of time.

    ``values[0]`` applies before ``times[0]``; ``values[i]`` applies on
    ``[times[i-1], times[i])``.
    """

    times: tuple[float, ...] = ()
    values: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        if len(self.values) != len(self.times) + 1:
            raise ValueError("need len(values) == len(times) + 1")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("breakpoints must be strictly increasing")

    def __call__(self, t: float) -> float:
        return self.values[int(np.searchsorted(self.times, t, side="right"))]

    @classmethod
    def constant(cls, value: float) -> "PiecewiseConstant":
        return cls((), (float(value),))


_ZERO = PiecewiseConstant.constant(0.0)


@dataclass(frozen=True)
class FeedSchedule:
    """Feed flows (L/h) and feed concentrations (mmol/L) over time.

    Batch mode is the all-flows-zero schedule; ``is_batch`` lets the
    right-hand side skip dilution terms entirely so batch volume is conserved
    bit-exactly.
    """

    f_glc: PiecewiseConstant = _ZERO
    f_gln: PiecewiseConstant = _ZERO
    f_medium: PiecewiseConstant = _ZERO
    f_sample: PiecewiseConstant = _ZERO
    c_glc_f: PiecewiseConstant = _ZERO
    c_gln_f: PiecewiseConstant = _ZERO
    c_glc_medium: PiecewiseConstant = _ZERO
    c_gln_medium: PiecewiseConstant = _ZERO

    def validate(self) -> None:
        for name in ("f_glc", "f_gln", "f_medium", "f_sample"):
            if any(v < 0 for v in getattr(self, name).values):
                raise ValueError(f"{name} must be >= 0 everywhere")

    @property
    def is_batch(self) -> bool:
        flows = (self.f_glc, self.f_gln, self.f_medium, self.f_sample)
        return all(all(v == 0.0 for v in f.values) for f in flows)

    @classmethod
    def batch(cls) -> "FeedSchedule":
        return cls()


def _monod(c, k):
    """c / (c + k); the k == 0 limit is 1 for c > 0 and 0 at c = 0."""
    if k > 0:
        return c / (c + k)
    return np.where(c > 0, 1.0, 0.0)


def _starvation(c, k):
    """k / (k + c); the k == 0 limit is 0 for c > 0 and 1 at c = 0."""
    if k > 0:
        return k / (k + c)
    return np.where(c > 0, 0.0, 1.0)


def growth_rate_array(t, y, p: ModelParameters):
    """Specific growth rate mu (1/h) for state array(s) y of shape (..., 8)."""
    mu = p.mu_max * _monod(y[..., IDX_GLC], p.ks_glc) * _monod(y[..., IDX_GLN], p.ks_gln)
    if p.t_lag > 0 and t <= p.t_lag:
        mu = mu - (1.0 - t / p.t_lag) * p.a_lag * p.mu_max
    # negative growth is modeled by the death rate, not by mu
    return np.maximum(mu, 0.0)


def death_rate_array(y, p: ModelParameters):
    """Specific death rate mu_d (1/h) for state array(s) y of shape (..., 8)."""
    return p.mu_d_min + p.mu_d_max * _starvation(y[..., IDX_GLC], p.ks_glc) * _starvation(
        y[..., IDX_GLN], p.ks_gln
    )


def rate_terms_array(t, y, p: ModelParameters):
    """All cell-specific rates for state array(s) y of shape (..., 8).

    Returns a dict with mu, mu_d (1/h), q_glc, q_gln, q_lac, q_amm
    (mmol/(cell*h)) and q_titer (mg/(cell*h)).
    """
    c_glc = y[..., IDX_GLC]
    c_gln = y[..., IDX_GLN]
    c_lac = y[..., IDX_LAC]
    c_amm = y[..., IDX_AMM]

    mu = growth_rate_array(t, y, p)
    mu_d = death_rate_array(y, p)

    q_glc = p.q_glc_max * _monod(c_glc, p.k_glc)
    q_gln = p.q_gln_max * _monod(c_gln, p.k_gln)

    # fraction of unused growth capacity, driving metabolite re-uptake
    if np.ndim(p.mu_max) == 0:
        idle = (p.mu_max - mu) / p.mu_max if p.mu_max > 0 else np.zeros_like(mu)
    else:
        mu_max = np.asarray(p.mu_max, dtype=float)
        safe = np.where(mu_max > 0, mu_max, 1.0)
        idle = np.where(mu_max > 0, (mu_max - mu) / safe, 0.0)

    q_lac_uptake = np.where(c_glc <= p.glc_switch_threshold, p.q_lac_uptake_max, 0.0)
    q_lac = (
        p.y_lac_glc * q_glc * c_glc / np.maximum(c_lac, EPS_CONC)
        - q_lac_uptake * idle * _monod(c_lac, EPS_UPTAKE)
    )

    k_amm_case = np.where(c_gln > c_amm, 0.0, np.where(mu > mu_d, 1.0, -p.k_amm))
    # the availability brake applies only to genuine uptake (case factor 1),
    # not to the constant-production case (factor -k_amm)
    amm_brake = np.where(k_amm_case > 0, _monod(c_amm, EPS_UPTAKE), 1.0)
    q_amm = (
        p.y_amm_gln * q_gln * c_gln / np.maximum(c_amm, EPS_CONC)
        - k_amm_case * p.q_amm_uptake_max * idle * amm_brake
    )

    return {
        "mu": mu,
        "mu_d": mu_d,
        "q_glc": q_glc,
        "q_gln": q_gln,
        "q_lac": q_lac,
        "q_amm": q_amm,
        "q_titer": p.q_titer_max * np.ones_like(mu),
    }


def rhs_array(t, y, p: ModelParameters, feeds: FeedSchedule) -> np.ndarray:
    """Time derivative of state array(s) y of shape (..., 8).

    Non-positive volume yields non-finite derivatives for the affected
    samples, which adaptive integrators reject as an error.
    """
    y = np.asarray(y, dtype=float)
    r = rate_terms_array(t, y, p)
    xv = y[..., IDX_XV]
    xt = y[..., IDX_XT]
    v = y[..., IDX_V]

    dy = np.empty_like(y)
    dy[..., IDX_XV] = xv * (r["mu"] - r["mu_d"])
    dy[..., IDX_XT] = xv * r["mu"] - p.k_lys * (xt - xv)
    dy[..., IDX_GLC] = -xv * r["q_glc"]
    dy[..., IDX_GLN] = -xv * r["q_gln"]
    dy[..., IDX_LAC] = xv * r["q_lac"]
    dy[..., IDX_AMM] = xv * r["q_amm"]
    dy[..., IDX_TITER] = xv * r["q_titer"]
    dy[..., IDX_V] = 0.0

    if not feeds.is_batch:
        f_glc = feeds.f_glc(t)
        f_gln = feeds.f_gln(t)
        f_medium = feeds.f_medium(t)
        f_sample = feeds.f_sample(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            dilution = (f_glc + f_gln + f_medium) / v
            dy[..., IDX_XV] -= dilution * xv
            dy[..., IDX_XT] -= dilution * xt
            dy[..., IDX_GLC] += (
                f_glc / v * feeds.c_glc_f(t)
                + f_medium / v * feeds.c_glc_medium(t)
                - dilution * y[..., IDX_GLC]
            )
            dy[..., IDX_GLN] += (
                f_gln / v * feeds.c_gln_f(t)
                + f_medium / v * feeds.c_gln_medium(t)
                - dilution * y[..., IDX_GLN]
            )
            dy[..., IDX_LAC] -= dilution * y[..., IDX_LAC]
            dy[..., IDX_AMM] -= dilution * y[..., IDX_AMM]
            dy[..., IDX_TITER] -= dilution * y[..., IDX_TITER]
        dy[..., IDX_V] = -f_sample + f_glc + f_gln + f_medium

    bad = v <= 0
    if np.any(bad):
        dy[bad] = np.nan
    return dy


def specific_growth_rate(state: CultureState, p: ModelParameters) -> float:
    """Specific growth rate mu (1/h), clamped at zero during the lag phase."""
    return float(growth_rate_array(state.t, state.to_array(), p))


def specific_death_rate(state: CultureState, p: ModelParameters) -> float:
    """Specific death rate mu_d (1/h), in [mu_d_min, mu_d_min + mu_d_max]."""
    return float(death_rate_array(state.to_array(), p))


def uptake_and_production_rates(state: CultureState, p: ModelParameters) -> dict:
    """Cell-specific uptake/production rates q_glc, q_gln, q_lac, q_amm, q_titer."""
    r = rate_terms_array(state.t, state.to_array(), p)
    return {k: float(r[k]) for k in ("q_glc", "q_gln", "q_lac", "q_amm", "q_titer")}


def ode_rhs(state: CultureState, p: ModelParameters, feeds: FeedSchedule) -> np.ndarray:
    """All 8 state derivatives, ordered as STATE_NAMES."""
    return rhs_array(state.t, state.to_array(), p, feeds)


def make_state_projector(abs_tol=None):
    """Post-step guard clamping tiny negative state values to zero.

    Negatives beyond ``PROJECTION_REL_TOL`` of the running per-component scale
    (plus an allowance of 10x the integrator's absolute tolerance) are treated
    as solver bugs and raise NegativeStateError instead of being masked.
    """
    scale = None
    extra = 0.0 if abs_tol is None else 10.0 * np.asarray(abs_tol, dtype=float)

    def project(y: np.ndarray) -> np.ndarray:
        nonlocal scale
        mag = np.abs(y)
        while mag.ndim > 1:
            mag = mag.max(axis=0)
        scale = mag if scale is None else np.maximum(scale, mag)
        threshold = PROJECTION_REL_TOL * np.maximum(scale, 1.0) + extra
        if np.any(y < -threshold):
            worst = float(np.min(y))
            raise NegativeStateError(
                f"state component went negative beyond tolerance (min={worst:.3e})"
            )
        return np.where(y < 0.0, 0.0, y)

    return project
