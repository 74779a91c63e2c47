"""BLAS threading control.

The workload here is many small factorizations (hundreds of rows), where
OpenBLAS's default thread fan-out costs far more than it saves; measured on a
2-core container it slows hyperparameter refits by more than an order of
magnitude. Capping BLAS pools to one thread is the right default for this
package; large single factorizations (ground-truth fits) still run fine.
"""

import os


def _set_env_defaults():
    for var in (
        "OPENBLAS_NUM_THREADS",
        "OMP_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ.setdefault(var, "1")


_set_env_defaults()


def limit_blas_threads(n: int = 1) -> None:
    """Cap already-initialized BLAS pools; no-op if threadpoolctl is missing."""
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=n)
    except Exception:
        pass
