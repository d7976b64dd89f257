"""Hot numerical kernels with a compiled core and a pure-numpy fallback.

The Cython extension (`volpeel.kernels._fast`) is built best-effort at
install time; when it is missing, or when VOLPEEL_NO_EXT is set, the
vectorized numpy implementation is used instead.  Both backends share
the same array contracts and emission order.
"""

import os

from . import _pure

if os.environ.get("VOLPEEL_NO_EXT"):
    _impl = _pure
else:
    try:
        from . import _fast as _impl
    except ImportError:
        _impl = _pure

BACKEND = _impl.BACKEND

stiffness_triplets = _impl.stiffness_triplets
divergence = _impl.divergence
marching_tets = _impl.marching_tets


def backends():
    """Mapping of available backend name -> module (for benchmarks/tests)."""
    out = {"pure": _pure}
    try:
        from . import _fast
        out["compiled"] = _fast
    except ImportError:
        pass
    return out
