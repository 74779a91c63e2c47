"""Gaussian-process regression with a Matern-3/2 kernel and additive noise.

The surrogate works on unit-cube inputs and raw objective values. Observed
repeats at the same location are stored as individual rows; the model never
averages them, because a summary row would discard the observed spread that
makes the noise variance identifiable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.spatial.distance import cdist

from .errors import DomainError, NumericalError, ResourceError

SQRT3 = np.sqrt(3.0)

# Escalating diagonal jitter, as a fraction of the kernel amplitude. Bounded
# above so it can never masquerade as real observation noise.
JITTER_LADDER = tuple(1e-10 * 10.0**k for k in range(7))  # 1e-10 .. 1e-4

#: Hard cap on joint-draw grid size (Cholesky of a G x G matrix).
MAX_JOINT_GRID = 5000


@dataclass(frozen=True)
class MaternHyperparams:
    """Kernel and likelihood hyperparameters.

    ``amplitude`` is the prior variance (k(x, x) = amplitude); ``length_scale``
    is a scalar for the isotropic kernel or a length-d vector for the
    automatic-relevance variant, in unit-cube units. ``mean`` is the constant
    prior mean in raw objective units.
    """

    noise_var: float
    amplitude: float
    length_scale: float | np.ndarray
    mean: float = 0.0

    def __post_init__(self):
        # noise_var = 0 is allowed (noiseless interpolation); the jitter ladder
        # handles the resulting conditioning problems.
        if not (np.isfinite(self.noise_var) and self.noise_var >= 0.0):
            raise DomainError(f"noise_var must be >= 0, got {self.noise_var}")
        if not self.amplitude > 0.0:
            raise DomainError(f"amplitude must be > 0, got {self.amplitude}")
        ls = np.asarray(self.length_scale, dtype=float)
        if ls.ndim not in (0, 1) or not np.all(ls > 0.0):
            raise DomainError(f"length_scale must be positive scalar or vector, got {self.length_scale}")
        if ls.ndim == 1:
            ls = ls.copy()
            ls.setflags(write=False)
            object.__setattr__(self, "length_scale", ls)
        else:
            object.__setattr__(self, "length_scale", float(ls))
        object.__setattr__(self, "noise_var", float(self.noise_var))
        object.__setattr__(self, "amplitude", float(self.amplitude))
        object.__setattr__(self, "mean", float(self.mean))

    @property
    def is_ard(self) -> bool:
        return isinstance(self.length_scale, np.ndarray)

    @property
    def n_length_scales(self) -> int:
        return self.length_scale.size if self.is_ard else 1

    def lengths(self) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.length_scale, dtype=float))

    def to_log_vector(self) -> np.ndarray:
        """Pack as [log noise_var, log amplitude, log length_scale..., mean]."""
        return np.concatenate(
            [
                [np.log(self.noise_var), np.log(self.amplitude)],
                np.log(self.lengths()),
                [self.mean],
            ]
        )

    @classmethod
    def from_log_vector(cls, vec, ard_dims: int | None = None) -> "MaternHyperparams":
        vec = np.asarray(vec, dtype=float)
        n_ls = ard_dims if ard_dims else 1
        if vec.size != n_ls + 3:
            raise DomainError(f"log vector of length {vec.size} does not match {n_ls} length-scale(s)")
        ls = np.exp(vec[2 : 2 + n_ls])
        return cls(
            noise_var=float(np.exp(vec[0])),
            amplitude=float(np.exp(vec[1])),
            length_scale=ls if ard_dims else float(ls[0]),
            mean=float(vec[-1]),
        )


def hyper_vector_size(dims: int, ard: bool) -> int:
    return 3 + (dims if ard else 1)


@dataclass(frozen=True)
class Dataset:
    """Evaluated locations (unit cube) and observed values, repeats kept as rows."""

    X: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        f = np.atleast_1d(np.asarray(self.f, dtype=float))
        if X.shape[0] != f.shape[0]:
            raise DomainError(f"X has {X.shape[0]} rows but f has {f.shape[0]} values")
        if f.ndim != 1:
            raise DomainError("f must be a flat vector of observations")
        X = X.copy()
        f = f.copy()
        X.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "f", f)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dims(self) -> int:
        return self.X.shape[1]

    def extended(self, X_new, f_new) -> "Dataset":
        X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
        f_new = np.atleast_1d(np.asarray(f_new, dtype=float))
        return Dataset(np.vstack([self.X, X_new]), np.concatenate([self.f, f_new]))


def _scaled_distance(X1: np.ndarray, X2: np.ndarray, hyper: MaternHyperparams) -> np.ndarray:
    """Length-scale-weighted Euclidean distance between row sets."""
    ls = hyper.lengths()
    if hyper.is_ard:
        if ls.size != X1.shape[1]:
            raise DomainError(f"ARD length-scale has {ls.size} entries for {X1.shape[1]}-d inputs")
        return cdist(X1 / ls, X2 / ls)
    return cdist(X1, X2) / ls[0]


def kernel_matrix(X1, X2, hyper: MaternHyperparams) -> np.ndarray:
    """Matern-3/2 cross-covariance between two point sets (unit coordinates)."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X1.shape[1] != X2.shape[1]:
        raise DomainError(f"point dimensions differ: {X1.shape[1]} vs {X2.shape[1]}")
    s = _scaled_distance(X1, X2, hyper)
    t = SQRT3 * s
    return hyper.amplitude * (1.0 + t) * np.exp(-t)


def kernel(xi, xj, hyper: MaternHyperparams) -> float:
    """Covariance between two points; equals the amplitude at zero distance."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    xj = np.atleast_1d(np.asarray(xj, dtype=float))
    if xi.shape != xj.shape:
        raise DomainError(f"point shapes differ: {xi.shape} vs {xj.shape}")
    return float(kernel_matrix(xi[None, :], xj[None, :], hyper)[0, 0])


def _factor_gram(K: np.ndarray, amplitude: float):
    """Cholesky with an escalating jitter ladder; returns (lower factor, jitter used)."""
    attempted = []
    n = K.shape[0]
    for frac in (0.0, *JITTER_LADDER):
        jitter = frac * amplitude
        attempted.append(jitter)
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(n) if jitter else K)
            return L, jitter
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        f"Gram factorization failed after jitter ladder up to {attempted[-1]:g}",
        details={"attempted_jitter": attempted},
    )


@dataclass(frozen=True)
class GpModel:
    """Immutable fitted surrogate: data + hyperparameters + factored Gram."""

    data: Dataset
    hyper: MaternHyperparams
    gram_factor: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float = 0.0

    @property
    def dims(self) -> int:
        return self.data.dims

    def predict(self, X, include_noise: bool = False):
        """Posterior mean and variance at query rows (unit coordinates).

        Variance is the latent-function variance by default; pass
        ``include_noise=True`` to predict a noisy observation instead.
        Accepts a single point (d,) or a stack (n, d).
        """
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        Xq = np.atleast_2d(X)
        k_star = kernel_matrix(self.data.X, Xq, self.hyper)  # (n, q)
        mean = self.hyper.mean + k_star.T @ self.alpha
        v = solve_triangular(self.gram_factor, k_star, lower=True)
        var = self.hyper.amplitude - np.einsum("ij,ij->j", v, v)
        np.maximum(var, 0.0, out=var)
        if include_noise:
            var = var + self.hyper.noise_var
        if single:
            return float(mean[0]), float(var[0])
        return mean, var

    def joint_posterior(self, grid):
        """Posterior mean vector and full covariance over a grid of rows."""
        grid = np.atleast_2d(np.asarray(grid, dtype=float))
        if grid.shape[0] > MAX_JOINT_GRID:
            raise ResourceError(
                f"joint posterior over {grid.shape[0]} points exceeds the cap of {MAX_JOINT_GRID}"
            )
        k_star = kernel_matrix(self.data.X, grid, self.hyper)
        mean = self.hyper.mean + k_star.T @ self.alpha
        v = solve_triangular(self.gram_factor, k_star, lower=True)
        cov = kernel_matrix(grid, grid, self.hyper) - v.T @ v
        return mean, cov


def fit(data: Dataset, hyper: MaternHyperparams) -> GpModel:
    """Factor the noisy Gram K(X) + noise_var*I and precompute the data solve."""
    if hyper.is_ard and hyper.length_scale.size != data.dims:
        raise DomainError("ARD length-scale dimension must match the data")
    K = kernel_matrix(data.X, data.X, hyper)
    K[np.diag_indices_from(K)] += hyper.noise_var
    L, jitter = _factor_gram(K, hyper.amplitude)
    resid = data.f - hyper.mean
    alpha = solve_triangular(L.T, solve_triangular(L, resid, lower=True), lower=False)
    return GpModel(data=data, hyper=hyper, gram_factor=L, alpha=alpha, jitter=jitter)


def log_marginal_likelihood(data: Dataset, hyper: MaternHyperparams) -> float:
    """log N(f; mean, K(X) + noise_var*I)."""
    model = fit(data, hyper)
    resid = data.f - hyper.mean
    log_det = 2.0 * np.sum(np.log(np.diag(model.gram_factor)))
    return float(-0.5 * resid @ model.alpha - 0.5 * log_det - 0.5 * data.n * np.log(2.0 * np.pi))


def log_marginal_likelihood_and_grad(data: Dataset, hyper: MaternHyperparams):
    """Likelihood value and its analytic gradient from one factorization.

    Gradient is w.r.t. [log noise_var, log amplitude, log length..., mean],
    via the trace identity dL/dtheta = 0.5 tr((alpha alpha^T - K^-1) dK/dtheta)
    plus sum(alpha) for the constant mean.
    """
    model = fit(data, hyper)
    n = data.n
    alpha = model.alpha
    resid = data.f - hyper.mean
    log_det = 2.0 * np.sum(np.log(np.diag(model.gram_factor)))
    value = float(-0.5 * resid @ alpha - 0.5 * log_det - 0.5 * n * np.log(2.0 * np.pi))

    K_inv = cho_solve((model.gram_factor, True), np.eye(n))
    A = np.outer(alpha, alpha) - K_inv

    s = _scaled_distance(data.X, data.X, hyper)
    t = SQRT3 * s
    decay = np.exp(-t)
    K_kern = hyper.amplitude * (1.0 + t) * decay

    grads = [
        0.5 * hyper.noise_var * np.trace(A),  # dK/dlog noise_var = noise_var * I
        0.5 * float(np.sum(A * K_kern)),      # dK/dlog amplitude = kernel part
    ]
    if hyper.is_ard:
        ls = hyper.lengths()
        for j in range(ls.size):
            diff = (data.X[:, j, None] - data.X[None, :, j]) / ls[j]
            dK = 3.0 * hyper.amplitude * diff**2 * decay
            grads.append(0.5 * float(np.sum(A * dK)))
    else:
        dK = 3.0 * hyper.amplitude * s**2 * decay
        grads.append(0.5 * float(np.sum(A * dK)))
    grads.append(float(np.sum(alpha)))
    return value, np.asarray(grads)


def log_marginal_likelihood_grad(data: Dataset, hyper: MaternHyperparams) -> np.ndarray:
    """Analytic likelihood gradient; see log_marginal_likelihood_and_grad."""
    return log_marginal_likelihood_and_grad(data, hyper)[1]


def _factor_covariance(cov: np.ndarray, amplitude: float) -> np.ndarray:
    """Factor a posterior covariance for joint draws; falls back to an
    eigendecomposition square root when the jitter ladder cannot rescue it."""
    try:
        L, _ = _factor_gram(cov, amplitude)
        return L
    except NumericalError:
        w, V = np.linalg.eigh((cov + cov.T) / 2.0)
        np.maximum(w, 0.0, out=w)
        return V * np.sqrt(w)


def sample_function(model: GpModel, grid, rng: np.random.Generator) -> np.ndarray:
    """One joint draw from the posterior over the grid; repeatable given the seed."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    mean, cov = model.joint_posterior(grid)
    L = _factor_covariance(cov, model.hyper.amplitude)
    z = rng.standard_normal(grid.shape[0])
    return mean + L @ z
