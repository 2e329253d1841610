"""Kernel backend selection.

The compiled Cython module is used when it imports; otherwise the numpy
implementation is. Set ``CLUSTER_GUARD_PURE=1`` to force the fallback.
"""

import os

from . import _pykernels

BACKENDS = {"python": _pykernels}

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    BACKENDS["cython"] = _ckernels

if os.environ.get("CLUSTER_GUARD_PURE", "") == "1" or _ckernels is None:
    BACKEND = "python"
else:
    BACKEND = "cython"

_impl = BACKENDS[BACKEND]

cell_sort = _impl.cell_sort
band_pairs = _impl.band_pairs
fof_labels = _impl.fof_labels
pair_terms = _impl.pair_terms
huff_decode = _impl.huff_decode


def get_backend(name=None):
    """Module implementing the kernels for ``name`` (default: the active one)."""
    return BACKENDS[name or BACKEND]
