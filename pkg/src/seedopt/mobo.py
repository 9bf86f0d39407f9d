"""Multi-objective Bayesian optimization driver.

Latin-hypercube initialization, one independent Gaussian-process surrogate
per objective, Monte-Carlo expected hypervolume improvement as the
acquisition, derivative-free multi-start pattern search over the box, and a
Pareto archive of non-dominated evaluations.

All objectives are handled internally in minimization convention; maximized
objectives are sign-flipped at the boundary. Every random draw derives from
the root seed through explicit spawn keys, so histories for budgets N and
N' > N are literal prefixes of each other on the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gp

PROVENANCE_LHS = "lhs"
PROVENANCE_PROPOSED = "proposed"

_TAG_LHS, _TAG_FIT, _TAG_ACQ, _TAG_FALLBACK = range(4)

# Pattern-search schedule over the normalized unit box.
_SEARCH_STEP_INIT = 0.25
_SEARCH_STEP_MIN = 1e-3
_DEDUP_DISTANCE = 1e-6


class PointOutsideRef(ValueError):
    """A front point does not dominate the hypervolume reference point."""


class ObjectiveEvaluationError(RuntimeError):
    """The black-box objective failed; carries the failing design point."""

    def __init__(self, x):
        super().__init__(f"objective evaluation failed at x={np.asarray(x)}")
        self.x = np.asarray(x, dtype=float)


@dataclass
class DesignSpace:
    """Box bounds for the optimizable variables, one (lower, upper) per dim."""

    bounds: np.ndarray  # (d, 2)

    def __post_init__(self):
        self.bounds = np.atleast_2d(np.asarray(self.bounds, dtype=float))

    def validate(self) -> None:
        if self.bounds.ndim != 2 or self.bounds.shape[1] != 2:
            raise ValueError("bounds must have shape (d, 2)")
        if np.any(self.bounds[:, 0] >= self.bounds[:, 1]):
            raise ValueError("each lower bound must be < its upper bound")

    @property
    def n_dims(self) -> int:
        return self.bounds.shape[0]

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.bounds[:, 0]) and np.all(x <= self.bounds[:, 1]))

    def normalize(self, x):
        x = np.asarray(x, dtype=float)
        return (x - self.bounds[:, 0]) / (self.bounds[:, 1] - self.bounds[:, 0])

    def denormalize(self, u):
        u = np.asarray(u, dtype=float)
        return self.bounds[:, 0] + u * (self.bounds[:, 1] - self.bounds[:, 0])


@dataclass
class OptimizerConfig:
    n_lhs: int = 10
    n_iterations: int = 20
    objective_sense: tuple[str, ...] = ("minimize", "minimize")
    ehvi_mc_samples: int = 2048
    acq_restarts: int = 32
    rng_seed: int = 0

    def validate(self) -> None:
        if self.n_lhs < 2:
            raise ValueError("n_lhs must be >= 2")
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be >= 0")
        if not self.objective_sense:
            raise ValueError("need at least one objective")
        for sense in self.objective_sense:
            if sense not in ("minimize", "maximize"):
                raise ValueError(f"unknown objective sense {sense!r}")
        if self.ehvi_mc_samples < 1 or self.acq_restarts < 1:
            raise ValueError("ehvi_mc_samples and acq_restarts must be >= 1")

    @property
    def n_objectives(self) -> int:
        return len(self.objective_sense)

    def sense_signs(self) -> np.ndarray:
        return np.array([1.0 if s == "minimize" else -1.0 for s in self.objective_sense])


@dataclass
class ArchiveEntry:
    x: np.ndarray
    values: np.ndarray  # raw objective values, user convention
    provenance: str  # "lhs" | "proposed"


@dataclass
class ParetoArchive:
    """Non-dominated evaluations plus the hypervolume reference point."""

    entries: list[ArchiveEntry]
    reference_point: np.ndarray  # minimization convention
    sense: tuple[str, ...]

    def sense_signs(self) -> np.ndarray:
        return np.array([1.0 if s == "minimize" else -1.0 for s in self.sense])

    def front_matrix(self) -> np.ndarray:
        """Objective values of all entries, flipped to minimization."""
        if not self.entries:
            return np.empty((0, len(self.sense)))
        return np.array([e.values for e in self.entries]) * self.sense_signs()

    def hypervolume(self) -> float:
        return hypervolume(self.front_matrix(), self.reference_point)


@dataclass
class EvaluationRecord:
    index: int
    provenance: str
    x: np.ndarray
    values: np.ndarray  # raw objective values


@dataclass
class OptimizeResult:
    archive: ParetoArchive
    history: list[EvaluationRecord]


def _derive_seed(root_seed: int, *key: int) -> int:
    """Deterministic child seed; independent of how many seeds were drawn."""
    ss = np.random.SeedSequence(entropy=root_seed, spawn_key=tuple(key))
    return int(ss.generate_state(1)[0])


def _lhs_unit(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Midpoint Latin hypercube in the unit box: one sample per stratum."""
    u = np.empty((n, d))
    for j in range(d):
        u[:, j] = (rng.permutation(n) + 0.5) / n
    return u


def latin_hypercube(space: DesignSpace, n: int, seed: int) -> np.ndarray:
    """Midpoint Latin hypercube design in original units."""
    space.validate()
    if n < 1:
        raise ValueError("n must be >= 1")
    u = _lhs_unit(n, space.n_dims, np.random.default_rng(seed))
    return space.denormalize(u)


def pareto_filter(values, sense=None) -> np.ndarray:
    """Indices of non-dominated points; equal vectors are all retained.

    ``sense`` is an optional per-objective tuple of "minimize"/"maximize";
    default is minimization everywhere.
    """
    v = np.atleast_2d(np.asarray(values, dtype=float))
    if v.shape[0] == 0:
        raise ValueError("need at least one point")
    if sense is not None:
        signs = np.array([1.0 if s == "minimize" else -1.0 for s in sense])
        v = v * signs
    n = v.shape[0]
    dominated = np.zeros(n, dtype=bool)
    for i in range(n):
        better_eq = np.all(v <= v[i], axis=1)
        strictly = np.any(v < v[i], axis=1)
        if np.any(better_eq & strictly):
            dominated[i] = True
    return np.nonzero(~dominated)[0]


def _hv_2d(front: np.ndarray, ref: np.ndarray) -> float:
    order = np.lexsort((front[:, 1], front[:, 0]))
    pts = front[order]
    hv = 0.0
    prev_height = ref[1]
    for x0, x1 in pts:
        hv += (ref[0] - x0) * (prev_height - x1)
        prev_height = x1
    return hv


def _wfg(front: np.ndarray, ref: np.ndarray) -> float:
    """Exclusive-contribution recursion for >= 3 objectives (WFG style)."""
    if front.shape[0] == 0:
        return 0.0
    order = np.argsort(front[:, 0])[::-1]
    pts = front[order]
    hv = 0.0
    for i, p in enumerate(pts):
        inclusive = float(np.prod(ref - p))
        rest = pts[i + 1 :]
        if rest.shape[0]:
            limited = np.maximum(rest, p)
            limited = limited[pareto_filter(limited)]
            inclusive -= _wfg(limited, ref)
        hv += inclusive
    return hv


def hypervolume(front, ref) -> float:
    """Lebesgue measure dominated by the front relative to the reference
    point (minimization convention). Dominated members contribute nothing.

    Raises:
        PointOutsideRef: some point does not weakly dominate the reference.
    """
    front = np.atleast_2d(np.asarray(front, dtype=float))
    ref = np.asarray(ref, dtype=float)
    if front.shape[1] != ref.shape[0]:
        raise ValueError("front and reference dimensions differ")
    if np.any(front > ref):
        raise PointOutsideRef("every front point must weakly dominate the reference")
    front = front[pareto_filter(front)]
    if front.shape[1] == 1:
        return float(ref[0] - front[:, 0].min())
    if front.shape[1] == 2:
        return float(_hv_2d(front, ref))
    return float(_wfg(front, ref))


def _improvement_2d(front: np.ndarray, ref: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """HV(front + {y}) - HV(front) for 2-D samples y of shape (..., 2).

    The non-dominated front forms a staircase; each sample's exclusive
    contribution is summed over the vertical strips between consecutive
    front points.
    """
    order = np.lexsort((front[:, 1], front[:, 0]))
    xs = front[order, 0]
    ys = front[order, 1]
    left = np.concatenate([[-np.inf], xs])
    right = np.concatenate([xs, [ref[0]]])
    height = np.concatenate([[ref[1]], ys])
    a = samples[..., 0][..., None]
    b = samples[..., 1][..., None]
    widths = np.clip(right - np.maximum(a, left), 0.0, None)
    heights = np.clip(height - b, 0.0, None)
    return np.sum(widths * heights, axis=-1)


def _improvement_nd(front: np.ndarray, ref: np.ndarray, samples: np.ndarray) -> np.ndarray:
    flat = samples.reshape(-1, samples.shape[-1])
    out = np.zeros(flat.shape[0])
    for i, y in enumerate(flat):
        if np.any(y >= ref):
            continue
        box = float(np.prod(ref - y))
        limited = np.maximum(front, y)
        limited = limited[pareto_filter(limited)]
        out[i] = box - _wfg(limited, ref)
    return out.reshape(samples.shape[:-1])


def _improvement(front: np.ndarray, ref: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """Hypervolume gained by each sample over the current front (>= 0)."""
    if front.shape[0] == 0:
        return np.prod(np.clip(ref - samples, 0.0, None), axis=-1)
    m = front.shape[1]
    if m == 1:
        best = front[:, 0].min()
        return np.clip(best - samples[..., 0], 0.0, None)
    if m == 2:
        return _improvement_2d(front, ref, samples)
    return _improvement_nd(front, ref, samples)


def _ehvi_values(models, archive: ParetoArchive, x_batch: np.ndarray,
                 cfg: OptimizerConfig, z: np.ndarray) -> np.ndarray:
    """Monte-Carlo EHVI for a batch of candidate points, shared normals z."""
    m = cfg.n_objectives
    signs = cfg.sense_signs()
    x_batch = np.atleast_2d(x_batch)
    means = np.empty((x_batch.shape[0], m))
    sds = np.empty((x_batch.shape[0], m))
    for j, model in enumerate(models):
        mu, var = gp.predict_many(model, x_batch)
        means[:, j] = signs[j] * mu
        sds[:, j] = np.sqrt(var)
    # (candidates, mc_samples, objectives)
    samples = means[:, None, :] + sds[:, None, :] * z[None, :, :]
    gains = _improvement(archive.front_matrix(), archive.reference_point, samples)
    return gains.mean(axis=-1)


def acquisition_ehvi(models, archive: ParetoArchive, x, cfg: OptimizerConfig,
                     z: np.ndarray | None = None) -> float:
    """Monte-Carlo expected hypervolume improvement at a candidate point.

    Objective samples are drawn from the independent per-objective Gaussian
    posteriors at x. Passing the standard-normal matrix ``z`` fixes the draw,
    giving a deterministic, smooth acquisition surface within an iteration.
    """
    if len(models) != cfg.n_objectives:
        raise ValueError("one model per objective required")
    if z is None:
        rng = np.random.default_rng(cfg.rng_seed)
        z = rng.standard_normal((cfg.ehvi_mc_samples, cfg.n_objectives))
    return float(_ehvi_values(models, archive, np.atleast_2d(x), cfg, z)[0])


def propose_next(models, archive: ParetoArchive, space: DesignSpace,
                 cfg: OptimizerConfig, evaluated=None, seed: int = 0) -> np.ndarray:
    """Maximize the acquisition over the box.

    Multi-start coordinate pattern search from ``acq_restarts`` Latin-
    hypercube starts, shrinking the step to 1e-3 of the range. The starts
    advance in lockstep so each probe round is one batched acquisition
    evaluation. Candidates within 1e-6 normalized distance of an already
    evaluated point are discarded in favor of the best non-duplicate start.
    """
    space.validate()
    if len(models) != cfg.n_objectives:
        raise ValueError("one model per objective required")
    d = space.n_dims
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((cfg.ehvi_mc_samples, cfg.n_objectives))
    u = _lhs_unit(cfg.acq_restarts, d, rng)

    def acq(points_u: np.ndarray) -> np.ndarray:
        return _ehvi_values(models, archive, space.denormalize(points_u), cfg, z)

    fu = acq(u)
    step = np.full(cfg.acq_restarts, _SEARCH_STEP_INIT)
    active = step >= _SEARCH_STEP_MIN
    while np.any(active):
        improved = np.zeros(cfg.acq_restarts, dtype=bool)
        for dim in range(d):
            for sign in (1.0, -1.0):
                v = u.copy()
                v[active, dim] = np.clip(v[active, dim] + sign * step[active], 0.0, 1.0)
                fv = np.full(cfg.acq_restarts, -np.inf)
                fv[active] = acq(v[active])
                better = fv > fu
                u[better] = v[better]
                fu[better] = fv[better]
                improved |= better
        stuck = active & ~improved
        step[stuck] /= 2.0
        active = step >= _SEARCH_STEP_MIN

    order = np.argsort(-fu, kind="stable")
    if evaluated is not None and len(evaluated):
        evaluated_u = np.array([space.normalize(xe) for xe in evaluated])
    else:
        evaluated_u = np.empty((0, d))

    for i in order:
        if evaluated_u.shape[0]:
            dist = np.sqrt(np.sum((evaluated_u - u[i]) ** 2, axis=1))
            if np.any(dist < _DEDUP_DISTANCE):
                continue
        return space.denormalize(u[i])

    # every start collapsed onto an evaluated point: fall back to a seeded
    # random in-bounds point (feasibility is the only contract here)
    fallback = np.random.default_rng(_derive_seed(seed, _TAG_FALLBACK)).uniform(size=d)
    return space.denormalize(fallback)


def default_reference_point(values_min: np.ndarray) -> np.ndarray:
    """Per-objective worst observed value plus 10% of the observed range
    (minimization convention; a collapsed range counts as span 1)."""
    worst = values_min.max(axis=0)
    span = values_min.max(axis=0) - values_min.min(axis=0)
    span = np.where(span > 0, span, 1.0)
    return worst + 0.1 * span


def fit_objective_models(x_all, values, cfg: OptimizerConfig, iteration: int):
    """One GP per objective on raw values, seeded per (iteration, objective)."""
    x_all = np.asarray(x_all, dtype=float)
    values = np.asarray(values, dtype=float)
    return [
        gp.fit(x_all, values[:, j], restarts=10,
               seed=_derive_seed(cfg.rng_seed, _TAG_FIT, iteration, j))
        for j in range(cfg.n_objectives)
    ]


def build_archive(history, cfg: OptimizerConfig,
                  reference_point: np.ndarray | None = None) -> ParetoArchive:
    """Pareto archive of an evaluation history (raw objective values)."""
    values = np.array([rec.values for rec in history])
    values_min = values * cfg.sense_signs()
    if reference_point is None:
        reference_point = default_reference_point(values_min)
    keep = pareto_filter(values_min)
    entries = [
        ArchiveEntry(x=history[i].x.copy(), values=history[i].values.copy(),
                     provenance=history[i].provenance)
        for i in keep
    ]
    return ParetoArchive(entries=entries, reference_point=reference_point,
                         sense=cfg.objective_sense)


def optimize(objective, space: DesignSpace, cfg: OptimizerConfig) -> OptimizeResult:
    """Run the full loop: LHS evaluations, then per-iteration GP fits,
    acquisition maximization and evaluation of the proposed point.

    ``objective`` maps a design point to its raw objective values (any
    sequence of length n_objectives; infeasibility must be encoded as finite
    penalty values).
    """
    space.validate()
    cfg.validate()
    m = cfg.n_objectives

    def evaluate(x, provenance, index):
        try:
            raw = objective(x)
        except Exception as exc:
            raise ObjectiveEvaluationError(x) from exc
        values = np.asarray(raw, dtype=float).ravel()
        if values.shape != (m,):
            raise ObjectiveEvaluationError(x)
        if not np.all(np.isfinite(values)):
            raise ObjectiveEvaluationError(x)
        return EvaluationRecord(index=index, provenance=provenance,
                                x=np.asarray(x, dtype=float).copy(), values=values)

    history: list[EvaluationRecord] = []
    for x in latin_hypercube(space, cfg.n_lhs, _derive_seed(cfg.rng_seed, _TAG_LHS)):
        history.append(evaluate(x, PROVENANCE_LHS, len(history)))

    for iteration in range(cfg.n_iterations):
        x_all = np.array([rec.x for rec in history])
        values = np.array([rec.values for rec in history])
        models = fit_objective_models(x_all, values, cfg, iteration)
        archive = build_archive(history, cfg)
        x_next = propose_next(
            models, archive, space, cfg, evaluated=x_all,
            seed=_derive_seed(cfg.rng_seed, _TAG_ACQ, iteration),
        )
        history.append(evaluate(x_next, PROVENANCE_PROPOSED, len(history)))

    return OptimizeResult(archive=build_archive(history, cfg), history=history)
