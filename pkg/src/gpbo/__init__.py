"""Bayesian optimization with Gaussian-process surrogates for noisy, volatile
black-box objectives: repeat/batch hybrid sampling plans, DIRECT acquisition
maximization, MAP + Laplace hyperparameter learning, and a reproducible
benchmark harness."""

from . import _threads  # noqa: F401  (must run before heavy numerics)

_threads.limit_blas_threads(1)

__version__ = "0.1.0"
