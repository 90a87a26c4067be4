"""Kernel selection: compiled Cython core when available, numpy otherwise.

Set ``NUFLAVOR_PURE_PYTHON=1`` before import to force the numpy fallback.
"""

import os

from nuflavor import _pykernels

if os.environ.get("NUFLAVOR_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from nuflavor import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

COMPILED = _impl is not _pykernels
IMPLEMENTATION = "cython" if COMPILED else "numpy"

apply_pair = _impl.apply_pair
apply_layer = _impl.apply_layer
apply_layers = _impl.apply_layers
apply_layers_reversed = _impl.apply_layers_reversed
z_expectations = _impl.z_expectations


def available():
    """Return ``{name: module}`` for every kernel implementation importable here."""
    impls = {"numpy": _pykernels}
    try:
        from nuflavor import _ckernels
    except ImportError:
        pass
    else:
        impls["cython"] = _ckernels
    return impls
