import os

# Keep BLAS single-threaded before numpy initializes its pools: the suite is
# dominated by many small factorizations where thread fan-out only hurts.
for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import gpbo  # noqa: E402,F401  (applies threadpoolctl limits as a fallback)
