"""Build script for the optional compiled stepping kernel.

The package works without the extension (a pure-Python kernel is selected at
import time); compilation failures therefore degrade to a warning instead of
failing the install.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "tplab._core._ck",
                ["src/tplab/_core/_ck.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except Exception as exc:  # pragma: no cover - build-env dependent
    sys.stderr.write(
        "tplab: compiled kernel unavailable (%s); installing with the "
        "pure-Python kernel only\n" % exc
    )

setup(ext_modules=ext_modules)
