import os
import sys

# Worker-count cap; must land before numpy initializes its BLAS pools.
_n = os.environ.get("JHN_THREADS")
if _n:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _n)

from .cli import main  # noqa: E402

sys.exit(main())
