"""Hot-kernel dispatch.

The heavy inner loops (temporal convolution, exhaustive triplet mining,
Adam updates) exist twice: a numba-compiled version and a pure-numpy
fallback. Selection happens once at import time:

* ``DHMD_NUMBA=0`` in the environment forces the numpy path;
* otherwise numba is used when importable, numpy when not.

``backend_name()`` reports which one is live; ``benchmarks/bench_kernels.py``
times the two against each other.
"""

import os

_want_numba = os.environ.get("DHMD_NUMBA", "1") != "0"

if _want_numba:
    try:
        from . import numba_impl as _impl
    except ImportError:  # pragma: no cover - depends on environment
        from . import numpy_impl as _impl
else:
    from . import numpy_impl as _impl

conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward
triplet_hinge_forward = _impl.triplet_hinge_forward
triplet_hinge_backward = _impl.triplet_hinge_backward
adam_step = _impl.adam_step


def backend_name():
    return _impl.BACKEND
