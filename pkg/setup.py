"""Builds the optional compiled conv kernels; the package works without them."""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("S2HPRUNE_PURE_PYTHON"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("s2hprune._kernels", ["src/s2hprune/_kernels.pyx"],
                       include_dirs=[np.get_include()],
                       extra_compile_args=["-O3"])],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
