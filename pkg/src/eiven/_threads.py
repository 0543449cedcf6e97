"""Thread-count pinning for deterministic BLAS reductions.

Must be imported before numpy so the limits reach the BLAS runtime.
"""

import os


def pin_thread_count() -> None:
    n = os.environ.get("EIVEN_THREADS")
    if not n:
        return
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        os.environ.setdefault(var, n)


pin_thread_count()
