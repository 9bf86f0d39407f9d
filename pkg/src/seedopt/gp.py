"""Gaussian-process regression with a squared-exponential ARD kernel.

Inputs are normalized per dimension to [0, 1] and outputs standardized to
zero mean / unit variance before fitting, so one set of hyperparameter
bounds works across objectives. Hyperparameters maximize the log marginal
likelihood via multi-start Nelder-Mead in log space; the kernel Gram matrix
is Cholesky-factorized once per model with jitter escalation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.optimize import minimize

# Hyperparameter box in normalized-input / standardized-output units.
LENGTHSCALE_BOUNDS = (1e-2, 1e2)
SIGNAL_VARIANCE_BOUNDS = (1e-4, 1e4)
NOISE_VARIANCE_BOUNDS = (1e-8, 1.0)

_JITTER_START = 1e-10
_JITTER_MAX = 1e-6


@dataclass
class GpHyperparams:
    lengthscales: np.ndarray  # (d,), normalized-input units
    signal_variance: float
    noise_variance: float

    def validate(self) -> None:
        if np.any(np.asarray(self.lengthscales) <= 0):
            raise ValueError("lengthscales must be > 0")
        if self.signal_variance <= 0 or self.noise_variance <= 0:
            raise ValueError("variances must be > 0")


@dataclass
class GpModel:
    x_train: np.ndarray  # raw inputs (n, d)
    y_train: np.ndarray  # raw outputs (n,)
    hyper: GpHyperparams
    x_shift: np.ndarray  # per-dimension affine normalization to [0, 1]
    x_scale: np.ndarray
    y_mean: float
    y_sd: float
    chol: np.ndarray  # lower Cholesky factor of K + (noise + jitter) I
    alpha: np.ndarray  # (K + noise I)^-1 y_standardized
    k_inv: np.ndarray  # (K + noise I)^-1, cached for batched prediction
    jitter: float
    log_marginal_likelihood: float
    degenerate: bool = False  # all training outputs identical

    @property
    def n_train(self) -> int:
        return self.x_train.shape[0]

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.x_shift) / self.x_scale


def kernel_se(a, b, hyper: GpHyperparams) -> float:
    """Squared-exponential covariance between two (normalized) points."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("points must have the same dimension")
    r2 = np.sum(((a - b) / hyper.lengthscales) ** 2)
    return float(hyper.signal_variance * np.exp(-0.5 * r2))


def _kernel_matrix(xa, xb, hyper: GpHyperparams) -> np.ndarray:
    sa = xa / hyper.lengthscales
    sb = xb / hyper.lengthscales
    d2 = (
        np.sum(sa**2, axis=1)[:, None]
        + np.sum(sb**2, axis=1)[None, :]
        - 2.0 * sa @ sb.T
    )
    return hyper.signal_variance * np.exp(-0.5 * np.maximum(d2, 0.0))


def _cholesky_with_jitter(gram: np.ndarray, noise: float):
    """Lower Cholesky factor of gram + noise I, escalating jitter on failure."""
    n = gram.shape[0]
    jitter = 0.0
    while True:
        try:
            chol = linalg.cholesky(gram + (noise + jitter) * np.eye(n), lower=True)
            return chol, jitter
        except linalg.LinAlgError:
            jitter = _JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > _JITTER_MAX:
                raise


def _log_marginal_likelihood(x, y, hyper: GpHyperparams):
    """LML of standardized data plus cached factorization pieces."""
    gram = _kernel_matrix(x, x, hyper)
    chol, jitter = _cholesky_with_jitter(gram, hyper.noise_variance)
    alpha = linalg.cho_solve((chol, True), y)
    lml = (
        -0.5 * float(y @ alpha)
        - float(np.sum(np.log(np.diag(chol))))
        - 0.5 * len(y) * np.log(2.0 * np.pi)
    )
    return lml, chol, alpha, jitter


def _normalization(x: np.ndarray):
    shift = x.min(axis=0)
    scale = x.max(axis=0) - shift
    scale = np.where(scale > 0, scale, 1.0)
    return shift, scale


def build_model(
    x,
    y,
    hyper: GpHyperparams,
    normalize_inputs: bool = True,
    standardize_outputs: bool = True,
    degenerate: bool = False,
) -> GpModel:
    """Assemble a GpModel with given hyperparameters (no fitting)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] != y.shape[0]:
        raise ValueError("x and y lengths differ")
    hyper.validate()
    if normalize_inputs:
        shift, scale = _normalization(x)
    else:
        shift = np.zeros(x.shape[1])
        scale = np.ones(x.shape[1])
    if standardize_outputs:
        y_mean = float(y.mean())
        sd = float(y.std())
        y_sd = sd if sd > 0 else 1.0
    else:
        y_mean, y_sd = 0.0, 1.0
    xn = (x - shift) / scale
    yn = (y - y_mean) / y_sd
    lml, chol, alpha, jitter = _log_marginal_likelihood(xn, yn, hyper)
    k_inv = linalg.cho_solve((chol, True), np.eye(len(yn)))
    return GpModel(
        x_train=x,
        y_train=y,
        hyper=hyper,
        x_shift=shift,
        x_scale=scale,
        y_mean=y_mean,
        y_sd=y_sd,
        chol=chol,
        alpha=alpha,
        k_inv=k_inv,
        jitter=jitter,
        log_marginal_likelihood=lml,
        degenerate=degenerate,
    )


def _start_points(d: int, restarts: int, rng: np.random.Generator):
    """Log-space starting points: one heuristic plus seeded random draws."""
    heuristic = np.log(np.concatenate([np.full(d, 0.5), [1.0, 1e-2]]))
    starts = [heuristic]
    lo = np.log(
        np.concatenate(
            [np.full(d, LENGTHSCALE_BOUNDS[0]), [SIGNAL_VARIANCE_BOUNDS[0], NOISE_VARIANCE_BOUNDS[0]]]
        )
    )
    hi = np.log(
        np.concatenate(
            [np.full(d, LENGTHSCALE_BOUNDS[1]), [SIGNAL_VARIANCE_BOUNDS[1], NOISE_VARIANCE_BOUNDS[1]]]
        )
    )
    for _ in range(restarts - 1):
        starts.append(rng.uniform(lo, hi))
    return starts, list(zip(lo, hi))


def _unpack(theta: np.ndarray, d: int, isotropic: bool) -> GpHyperparams:
    ell = np.exp(theta[:d])
    if isotropic:
        ell = np.full(d, ell[0])
    return GpHyperparams(
        lengthscales=ell,
        signal_variance=float(np.exp(theta[d])),
        noise_variance=float(np.exp(theta[d + 1])),
    )


def fit(x, y, restarts: int = 10, seed: int = 0, isotropic: bool = False) -> GpModel:
    """Fit hyperparameters by maximizing the log marginal likelihood.

    Multi-start Nelder-Mead in log-hyperparameter space; the best of
    ``restarts`` starts wins. Identical outputs are a degenerate case: the
    model is returned flagged, with a noise floor and no optimization.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("x must be (n, d) with matching y")
    if np.unique(x, axis=0).shape[0] < 2:
        raise ValueError("need at least 2 distinct training points")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")

    d = x.shape[1]
    if np.ptp(y) == 0.0:
        hyper = GpHyperparams(
            lengthscales=np.ones(d),
            signal_variance=SIGNAL_VARIANCE_BOUNDS[0],
            noise_variance=1e-6,
        )
        return build_model(x, y, hyper, degenerate=True)

    shift, scale = _normalization(x)
    xn = (x - shift) / scale
    y_mean = float(y.mean())
    y_sd = float(y.std())
    yn = (y - y_mean) / y_sd

    n_free = (1 if isotropic else d) + 2

    # pairwise squared separations per dimension, computed once; each NLL
    # evaluation then only rescales, exponentiates and factorizes
    diff2 = (xn[:, None, :] - xn[None, :, :]) ** 2
    eye = np.eye(len(yn))
    log_2pi_term = 0.5 * len(yn) * np.log(2.0 * np.pi)

    def nll(theta_free):
        theta = _expand_theta(theta_free, d, isotropic)
        inv_ell2 = np.exp(-2.0 * theta[:d])
        sf2 = np.exp(theta[d])
        sn2 = np.exp(theta[d + 1])
        gram = sf2 * np.exp(-0.5 * (diff2 @ inv_ell2)) + sn2 * eye
        try:
            chol = np.linalg.cholesky(gram)
        except np.linalg.LinAlgError:
            return 1e12
        alpha = linalg.cho_solve((chol, True), yn)
        return (
            0.5 * float(yn @ alpha)
            + float(np.sum(np.log(np.diag(chol))))
            + log_2pi_term
        )

    starts_full, bounds_full = _start_points(d, restarts, np.random.default_rng(seed))
    if isotropic:
        starts = [np.concatenate([[s[0]], s[d:]]) for s in starts_full]
        bounds = [bounds_full[0]] + bounds_full[d:]
    else:
        starts, bounds = starts_full, bounds_full

    best = None
    for start in starts:
        res = minimize(
            nll,
            start,
            method="Nelder-Mead",
            bounds=bounds,
            options={"maxiter": 200 * n_free, "maxfev": 200 * n_free,
                     "xatol": 1e-3, "fatol": 1e-7},
        )
        if best is None or res.fun < best.fun:
            best = res

    hyper = _unpack(_expand_theta(best.x, d, isotropic), d, isotropic=False)
    return build_model(x, y, hyper)


def _expand_theta(theta_free, d, isotropic):
    theta_free = np.asarray(theta_free, dtype=float)
    if not isotropic:
        return theta_free
    return np.concatenate([np.full(d, theta_free[0]), theta_free[1:]])


def predict(model: GpModel, x) -> tuple[float, float]:
    """Posterior predictive mean and variance at one point, in raw units.

    The variance includes the fitted noise and is clamped at zero after the
    numerical floor.
    """
    mean, var = predict_many(model, np.atleast_2d(np.asarray(x, dtype=float)))
    return float(mean[0]), float(var[0])


def predict_many(model: GpModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized posterior mean/variance at points x of shape (m, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xn = model.normalize(x)
    xt = model.normalize(model.x_train)
    k_star = _kernel_matrix(xn, xt, model.hyper)
    mean_n = k_star @ model.alpha
    var_n = model.hyper.signal_variance - np.sum((k_star @ model.k_inv) * k_star, axis=1)
    var_n = np.maximum(var_n, 0.0) + model.hyper.noise_variance
    mean = model.y_mean + model.y_sd * mean_n
    var = model.y_sd**2 * var_n
    return mean, var


def model_to_dict(model: GpModel) -> dict:
    """JSON-serializable audit dump of a fitted model."""
    return {
        "hyperparameters": {
            "lengthscales": [float(v) for v in model.hyper.lengthscales],
            "signal_variance": float(model.hyper.signal_variance),
            "noise_variance": float(model.hyper.noise_variance),
        },
        "input_normalization": {
            "shift": [float(v) for v in model.x_shift],
            "scale": [float(v) for v in model.x_scale],
        },
        "output_standardization": {"mean": model.y_mean, "sd": model.y_sd},
        "log_marginal_likelihood": model.log_marginal_likelihood,
        "jitter": model.jitter,
        "degenerate": model.degenerate,
        "x_train": [[float(v) for v in row] for row in model.x_train],
        "y_train": [float(v) for v in model.y_train],
    }


def model_to_json(model: GpModel) -> str:
    return json.dumps(model_to_dict(model), indent=2)
