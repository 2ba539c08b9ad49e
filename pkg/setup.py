"""Build the optional compiled ADMM kernel.

The package works without it (numpy fallback); a failed compile is reported
and skipped so a plain ``pip install`` never breaks.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("HYDROBESS_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "hydrobess.qp._kernel",
                    ["src/hydrobess/qp/_kernel.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError as exc:  # pragma: no cover - build environment dependent
        print(f"hydrobess: building without compiled kernel ({exc})")

setup(ext_modules=ext_modules)
