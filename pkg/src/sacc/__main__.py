import os
import sys

# honor the thread cap before numpy initializes its BLAS pools
_threads = os.environ.get("SACC_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, str(int(_threads)))

from .cli import main  # noqa: E402

sys.exit(main())
