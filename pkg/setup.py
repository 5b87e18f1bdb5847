import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; crossaug.kernels falls back to numpy
    cythonize = None

# no -ffast-math: kernels must stay IEEE-exact for reproducible training runs
extra_compile_args = ["-O2"]
if os.environ.get("DEBUG"):
    extra_compile_args = ["-O0", "-g3"]

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "crossaug._kernels",
                ["src/crossaug/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=extra_compile_args,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
