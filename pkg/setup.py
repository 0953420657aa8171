"""Build script for the optional compiled kernel core.

`pip install .` works without Cython or a C compiler: the extension is skipped
and the package falls back to the numpy kernels at import time. To build the
compiled core in-place for development:

    python setup.py build_ext --inplace
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    import scipy  # noqa: F401  (cython_blas .pxd must be importable)
    from Cython.Build import cythonize
except ImportError:
    pass
else:
    ext_modules = cythonize(
        [
            Extension(
                "sqoglab._kernels._core",
                ["src/sqoglab/_kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # -O3 + native SIMD matter here (the kernels are plain loops);
                # no -ffast-math, results must stay IEEE-faithful.
                extra_compile_args=["-O3", "-march=native", "-funroll-loops"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
