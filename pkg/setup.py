"""Build the optional Cython kernel extension.

The package imports and works without it; ``cluster_guard.kernels`` falls back
to the numpy implementation when the compiled module is absent.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("CLUSTER_GUARD_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        extensions = [
            Extension(
                "cluster_guard._ckernels",
                ["src/cluster_guard/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                # no FMA contraction: results must match the numpy backend bit for bit
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ]
        ext_modules = cythonize(
            extensions,
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )

setup(ext_modules=ext_modules)
