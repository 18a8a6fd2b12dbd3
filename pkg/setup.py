import os
import sys

import numpy as np
from setuptools import Extension, setup

# ERWLAB_NO_EXT=1 installs the pure-Python kernels only.
ext_modules = []
if not os.environ.get("ERWLAB_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("Cython not available; installing pure-Python kernels only", file=sys.stderr)
    else:
        numpy_root = os.path.dirname(np.__file__)
        ext = Extension(
            "erwlab._core",
            sources=["src/erwlab/_core.pyx"],
            include_dirs=[np.get_include(), "src/erwlab"],
            library_dirs=[os.path.join(numpy_root, "random", "lib")],
            libraries=["npyrandom"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            # keeps float results bit-identical to the numpy fallback
            extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math"],
        )
        ext_modules = cythonize(
            [ext],
            language_level=3,
            compiler_directives={"boundscheck": False, "wraparound": False, "cdivision": True},
        )

setup(ext_modules=ext_modules)
