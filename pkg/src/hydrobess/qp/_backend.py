"""Select the ADMM kernel: compiled extension if importable, else numpy.

Set ``HYDROBESS_PURE_PYTHON=1`` to force the numpy kernel.
"""

import os

NAME = "python"

if os.environ.get("HYDROBESS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._kernel import admm_iterate  # noqa: F401

        NAME = "cython"
    except ImportError:
        from ._fallback import admm_iterate  # noqa: F401
else:
    from ._fallback import admm_iterate  # noqa: F401
