"""Builds the optional compiled step kernel.  Without a compiler or Cython the
package still installs and falls back to the pure-Python kernel."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("QUADLAB_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension(
                "quadlab.dynamics._step",
                ["src/quadlab/dynamics/_step.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
