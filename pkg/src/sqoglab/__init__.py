"""sqoglab: a desk-scale offline RL laboratory.

Exact smooth-Bellman operators on finite MDPs, convex-hull-plus-neighborhood
geometry, twin-critic actor-critic agents with an OOD-generalization critic
term, and a Monte-Carlo Q oracle for judging value-estimation accuracy.
"""

import os as _os

# The hot matrices are 64x64-ish; BLAS thread pools only add wake/sync cost
# at that size. Must happen before the first numpy/scipy import in the
# process to take effect (a no-op if the host imported numpy already).
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

from ._kernels import BACKEND as kernel_backend  # noqa: E402

__version__ = "0.1.0"
__all__ = ["kernel_backend", "__version__"]
