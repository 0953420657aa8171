import os

# pin BLAS pools before anything pulls in numpy; the small-matrix kernels
# lose badly to thread wake/sync overhead otherwise
for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")
