"""Backend selection for the LSTM sequence kernels.

The compiled extension is used when it imports; otherwise the NumPy
fallback. Setting ``DANNTE_KERNELS=python`` forces the fallback.
"""

import os

from . import _lstm_py

try:
    from . import _lstm_ext
except ImportError:  # extension not built
    _lstm_ext = None

BACKENDS = {"python": _lstm_py}
if _lstm_ext is not None:
    BACKENDS["cython"] = _lstm_ext


def _select():
    wanted = os.environ.get("DANNTE_KERNELS", "").strip().lower()
    if wanted:
        if wanted not in BACKENDS:
            raise ImportError(f"DANNTE_KERNELS={wanted!r} unavailable; have {sorted(BACKENDS)}")
        return wanted
    return "cython" if "cython" in BACKENDS else "python"


BACKEND = _select()
_impl = BACKENDS[BACKEND]

lstm_forward = _impl.lstm_forward
lstm_final = _impl.lstm_final
lstm_backward = _impl.lstm_backward


def get_backend(name):
    """Kernel module by name ("python" or "cython")."""
    return BACKENDS[name]
