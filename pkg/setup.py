import os

import numpy as np
from setuptools import Extension, setup

# Set GANFORENSICS_NO_EXT=1 to install the pure-Python build only.
ext_modules = []
if not os.environ.get("GANFORENSICS_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "ganforensics._ckernels",
                    ["src/ganforensics/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
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
