"""Hot-loop kernels with a compiled core and a pure-numpy fallback.

The compiled Cython extension (`_ck`) is preferred when it was built;
otherwise the numpy backend is used. Set LATENTDIALOG_PURE_PY=1 to force
the fallback (useful for debugging and for benchmarking the two).
"""

import os

from . import numpy_backend

if os.environ.get("LATENTDIALOG_PURE_PY"):
    _backend = numpy_backend
    HAS_COMPILED = False
else:
    try:
        from . import _ck as _backend  # type: ignore[no-redef]

        HAS_COMPILED = True
    except ImportError:
        _backend = numpy_backend
        HAS_COMPILED = False

BACKEND_NAME = "compiled" if HAS_COMPILED else "numpy"

sigmoid = _backend.sigmoid
lstm_gates_forward = _backend.lstm_gates_forward
lstm_gates_backward = _backend.lstm_gates_backward
adam_update = _backend.adam_update
softmax_xent_forward = _backend.softmax_xent_forward
softmax_xent_backward = _backend.softmax_xent_backward
