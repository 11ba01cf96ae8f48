"""Kernel hot loops with a compiled implementation and a numpy fallback.

The compiled module is used when it was built and ``GEOBO_PURE_PYTHON`` is not
set to a true value. ``BACKEND`` names the active implementation.
"""

import os

import numpy as np

from . import _kernels_py

_impl = _kernels_py
BACKEND = "python"
if os.environ.get("GEOBO_PURE_PYTHON", "").lower() not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"


def _c(a):
    return np.ascontiguousarray(a, dtype=float)


def sphere_se(Z1, Z2, theta, beta):
    return _impl.sphere_se(_c(Z1), _c(Z2), float(theta), float(beta))


def euclid_se(X1, X2, theta, beta):
    return _impl.euclid_se(_c(X1), _c(X2), float(theta), float(beta))


def sphere_dk_dc(K, D2, beta):
    return _impl.sphere_dk_dc(_c(K), _c(D2), float(beta))


__all__ = ["BACKEND", "sphere_se", "euclid_se", "sphere_dk_dc"]
