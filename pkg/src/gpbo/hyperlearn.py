"""Hyperparameter learning: MAP point estimation under hyperpriors, a Laplace
approximation of the hyperparameter uncertainty, and prediction that inflates
the surrogate's variance by that uncertainty.

Parameters live internally on log scale (except the constant mean), packed as
[log noise_var, log amplitude, log length_scale..., mean].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import gp
from .errors import DomainError, NumericalError
from .gp import Dataset, GpModel, MaternHyperparams

BOUND_MARGIN = 1e-6  # inward projection fraction when a uniform bound binds
PINNED_FLOOR = 1e-12


@dataclass(frozen=True)
class Uniform:
    """Flat prior on the parameter's internal coordinate (log scale for the
    positive parameters, natural scale for the mean)."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DomainError(f"uniform prior needs lo < hi, got ({self.lo}, {self.hi})")


@dataclass(frozen=True)
class Gaussian:
    mean: float
    var: float

    def __post_init__(self):
        if not self.var > 0:
            raise DomainError(f"gaussian prior needs var > 0, got {self.var}")


Prior = Uniform | Gaussian


@dataclass(frozen=True)
class HyperPriorSet:
    """Independent per-parameter priors; the length-scale prior applies to each
    component under automatic relevance determination."""

    noise_var: Prior
    amplitude: Prior
    length_scale: Prior
    mean: Prior

    @classmethod
    def broad(cls) -> "HyperPriorSet":
        """Weak defaults for unit-cube inputs and raw objective values."""
        return cls(
            noise_var=Uniform(np.log(1e-6), np.log(1e4)),
            amplitude=Uniform(np.log(1e-4), np.log(1e6)),
            length_scale=Uniform(np.log(5e-3), np.log(10.0)),
            mean=Gaussian(0.0, 100.0**2),
        )

    def _per_component(self, n_length: int) -> list[Prior]:
        return [self.noise_var, self.amplitude] + [self.length_scale] * n_length + [self.mean]

    def bounds(self, n_length: int) -> list[tuple[float | None, float | None]]:
        out = []
        for prior in self._per_component(n_length):
            if isinstance(prior, Uniform):
                out.append((prior.lo, prior.hi))
            else:
                out.append((None, None))
        return out

    def log_density(self, vec: np.ndarray, n_length: int) -> float:
        """Log prior density up to a constant; -inf outside uniform support."""
        total = 0.0
        for v, prior in zip(vec, self._per_component(n_length)):
            if isinstance(prior, Uniform):
                if v < prior.lo or v > prior.hi:
                    return -np.inf
            else:
                total += -0.5 * (v - prior.mean) ** 2 / prior.var
        return total

    def grad_log_density(self, vec: np.ndarray, n_length: int) -> np.ndarray:
        grad = np.zeros_like(vec)
        for i, (v, prior) in enumerate(zip(vec, self._per_component(n_length))):
            if isinstance(prior, Gaussian):
                grad[i] = -(v - prior.mean) / prior.var
        return grad

    def sample_start(self, rng: np.random.Generator, n_length: int) -> np.ndarray:
        out = np.empty(3 + n_length)
        for i, prior in enumerate(self._per_component(n_length)):
            if isinstance(prior, Uniform):
                out[i] = rng.uniform(prior.lo, prior.hi)
            else:
                out[i] = rng.normal(prior.mean, np.sqrt(prior.var))
        return out

    def project_inside(self, vec: np.ndarray, n_length: int) -> np.ndarray:
        """Pull any component sitting on a uniform bound strictly inside."""
        out = vec.copy()
        for i, prior in enumerate(self._per_component(n_length)):
            if isinstance(prior, Uniform):
                margin = BOUND_MARGIN * (prior.hi - prior.lo)
                out[i] = min(max(out[i], prior.lo + margin), prior.hi - margin)
        return out

    def pinned_mask(self, vec: np.ndarray, n_length: int) -> np.ndarray:
        """Components sitting at (or within the projection margin of) a bound."""
        mask = np.zeros(vec.size, dtype=bool)
        for i, prior in enumerate(self._per_component(n_length)):
            if isinstance(prior, Uniform):
                margin = 2.0 * BOUND_MARGIN * (prior.hi - prior.lo)
                mask[i] = vec[i] <= prior.lo + margin or vec[i] >= prior.hi - margin
        return mask


def _n_length(data: Dataset, ard: bool) -> int:
    return data.dims if ard else 1


def log_posterior(data: Dataset, priors: HyperPriorSet, vec: np.ndarray, ard: bool = False) -> float:
    n_length = _n_length(data, ard)
    prior = priors.log_density(vec, n_length)
    if not np.isfinite(prior):
        return -np.inf
    hyper = MaternHyperparams.from_log_vector(vec, ard_dims=data.dims if ard else None)
    return gp.log_marginal_likelihood(data, hyper) + prior


def log_posterior_grad(data: Dataset, priors: HyperPriorSet, vec: np.ndarray, ard: bool = False) -> np.ndarray:
    hyper = MaternHyperparams.from_log_vector(vec, ard_dims=data.dims if ard else None)
    return gp.log_marginal_likelihood_grad(data, hyper) + priors.grad_log_density(vec, _n_length(data, ard))


def map_estimate(
    data: Dataset,
    priors: HyperPriorSet,
    restarts: int = 10,
    rng: np.random.Generator | None = None,
    warm_start: MaternHyperparams | None = None,
    ard: bool = False,
    maxiter: int = 80,
) -> MaternHyperparams:
    """Multi-start bounded quasi-Newton ascent of likelihood + log prior.

    Start points are drawn from the prior; a warm start, when given, replaces
    the first draw. Returns the best run's optimum, projected strictly inside
    the uniform support.
    """
    if restarts < 1:
        raise DomainError("restarts must be >= 1")
    rng = rng or np.random.default_rng()
    n_length = _n_length(data, ard)
    ard_dims = data.dims if ard else None
    bounds = priors.bounds(n_length)

    def negative(vec):
        try:
            hyper = MaternHyperparams.from_log_vector(vec, ard_dims=ard_dims)
            lml, lml_grad = gp.log_marginal_likelihood_and_grad(data, hyper)
            value = lml + priors.log_density(vec, n_length)
            grad = lml_grad + priors.grad_log_density(vec, n_length)
        except NumericalError:
            return 1e25, np.zeros(3 + n_length)
        if not np.isfinite(value):
            return 1e25, np.zeros(3 + n_length)
        return -value, -grad

    starts = [priors.sample_start(rng, n_length) for _ in range(restarts)]
    if warm_start is not None:
        starts[0] = priors.project_inside(warm_start.to_log_vector(), n_length)

    best_vec, best_val, diagnostics = None, -np.inf, []
    for x0 in starts:
        result = minimize(negative, x0, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxiter": maxiter})
        diagnostics.append({"status": result.status, "message": str(result.message), "fun": float(result.fun)})
        if np.isfinite(result.fun) and -result.fun > best_val:
            best_val = -result.fun
            best_vec = result.x
    if best_vec is None:
        raise NumericalError("every MAP restart failed", details={"restarts": diagnostics})
    best_vec = priors.project_inside(best_vec, n_length)
    return MaternHyperparams.from_log_vector(best_vec, ard_dims=ard_dims)


@dataclass(frozen=True)
class LaplacePosterior:
    """Gaussian approximation of the hyperparameter posterior at its mode."""

    theta_map: np.ndarray
    covariance: np.ndarray
    lower: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)
    pinned: np.ndarray = field(repr=False)
    diagonal_fallback: bool = False
    ard_dims: int | None = None

    @property
    def size(self) -> int:
        return self.theta_map.size


def _clamp_psd(matrix: np.ndarray) -> np.ndarray:
    sym = (matrix + matrix.T) / 2.0
    w, V = np.linalg.eigh(sym)
    np.maximum(w, 0.0, out=w)
    return (V * w) @ V.T


def hessian_covariance(grad_fn, theta: np.ndarray, h: float = 1e-4):
    """Covariance = -H^-1 with H the central-difference Hessian of a gradient.

    Returns (covariance, used_diagonal_fallback); exposed separately so tests
    can feed an analytic Gaussian's gradient and check recovery.
    """
    p = theta.size
    H = np.empty((p, p))
    for i in range(p):
        up = theta.copy()
        dn = theta.copy()
        up[i] += h
        dn[i] -= h
        H[:, i] = (grad_fn(up) - grad_fn(dn)) / (2.0 * h)
    H = (H + H.T) / 2.0
    neg_H = -H
    try:
        cov = np.linalg.solve(neg_H, np.eye(p))
        if not np.all(np.isfinite(cov)):
            raise np.linalg.LinAlgError("non-finite inverse")
        return _clamp_psd(cov), False
    except np.linalg.LinAlgError:
        diag = np.maximum(neg_H.diagonal(), PINNED_FLOOR)
        return np.diag(1.0 / diag), True


def laplace_covariance(
    data: Dataset,
    priors: HyperPriorSet,
    theta_map: MaternHyperparams,
    ard: bool = False,
    h: float = 1e-4,
) -> LaplacePosterior:
    """Laplace covariance of the log-posterior at the MAP point.

    Components pinned at a uniform-prior bound get their row/column zeroed with
    a floor variance, since curvature there reflects the constraint rather than
    the data.
    """
    n_length = _n_length(data, ard)
    vec = theta_map.to_log_vector()
    cov, fallback = hessian_covariance(lambda v: log_posterior_grad(data, priors, v, ard=ard), vec, h=h)
    pinned = priors.pinned_mask(vec, n_length)
    if pinned.any():
        cov = cov.copy()
        cov[pinned, :] = 0.0
        cov[:, pinned] = 0.0
        cov[pinned, pinned] = PINNED_FLOOR
    bounds = priors.bounds(n_length)
    lower = np.array([-np.inf if lo is None else lo for lo, _ in bounds])
    upper = np.array([np.inf if hi is None else hi for _, hi in bounds])
    return LaplacePosterior(
        theta_map=vec,
        covariance=_clamp_psd(cov),
        lower=lower,
        upper=upper,
        pinned=pinned,
        diagonal_fallback=fallback,
        ard_dims=data.dims if ard else None,
    )


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh((matrix + matrix.T) / 2.0)
    np.maximum(w, 0.0, out=w)
    return (V * np.sqrt(w)) @ V.T


def sigma_points(lap: LaplacePosterior, kappa: float = 0.0):
    """Symmetric 2p+1 sigma-point set with weights; points outside the prior
    support are projected back to its boundary."""
    p = lap.size
    scale = np.sqrt(p + kappa)
    root = _psd_sqrt(lap.covariance)
    points = [lap.theta_map.copy()]
    weights = [kappa / (p + kappa)]
    for i in range(p):
        for sign in (+1.0, -1.0):
            pt = lap.theta_map + sign * scale * root[:, i]
            np.clip(pt, lap.lower, lap.upper, out=pt)
            points.append(pt)
            weights.append(1.0 / (2.0 * (p + kappa)))
    return np.asarray(points), np.asarray(weights)


class MarginalizedPredictor:
    """Mixture posterior over the sigma-point hyperparameter set.

    Refits one lightweight surrogate per sigma point at construction; queries
    mix component means and variances by the law of total variance.
    """

    def __init__(self, model: GpModel, lap: LaplacePosterior, kappa: float = 0.0):
        points, weights = sigma_points(lap, kappa=kappa)
        keep = weights > 0.0
        self.weights = weights[keep] / weights[keep].sum()
        self.models = [
            gp.fit(model.data, MaternHyperparams.from_log_vector(vec, ard_dims=lap.ard_dims))
            for vec in points[keep]
        ]

    def predict(self, X, include_noise: bool = False):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        Xq = np.atleast_2d(X)
        means = np.empty((len(self.models), Xq.shape[0]))
        variances = np.empty_like(means)
        for i, component in enumerate(self.models):
            means[i], variances[i] = component.predict(Xq, include_noise=include_noise)
        w = self.weights[:, None]
        mixture_mean = np.sum(w * means, axis=0)
        second_moment = np.sum(w * (variances + means**2), axis=0)
        mixture_var = np.maximum(second_moment - mixture_mean**2, 0.0)
        if single:
            return float(mixture_mean[0]), float(mixture_var[0])
        return mixture_mean, mixture_var


def marginalized_posterior(model: GpModel, lap: LaplacePosterior, xstar, kappa: float = 0.0):
    """Hyperparameter-uncertainty-inflated posterior at a query point."""
    return MarginalizedPredictor(model, lap, kappa=kappa).predict(xstar)
