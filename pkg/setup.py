"""Build the optional compiled slot kernel.

The package works without it: ``dtsync.kernels`` falls back to the numpy
implementation when the extension is missing or ``DTSYNC_PURE_PYTHON=1``.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("DTSYNC_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "dtsync._ckernels",
                    ["src/dtsync/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
