"""Pick the integration core at import time.

The compiled extension is used when it imports cleanly; setting
``ACSTAB_BACKEND=python`` forces the pure-Python fallback.
"""

import os

from . import _pykernel

if os.environ.get("ACSTAB_BACKEND", "").lower() == "python":
    kernel = _pykernel
    NAME = "python"
else:
    try:
        from . import _kernel as kernel
        NAME = "compiled"
    except ImportError:  # extension not built
        kernel = _pykernel
        NAME = "python"

evaluate = kernel.evaluate
propagate = kernel.propagate
