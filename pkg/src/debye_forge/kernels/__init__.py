"""Divided-difference weight kernels with compiled/fallback selection.

The compiled Cython extension `_ddcore` is preferred; the pure-numpy
`_fallback` module is used when the extension is missing or when the
environment variable DEBYE_FORGE_PURE_PYTHON is set to a nonempty value.
Both expose the same functions with identical semantics:

    dd1_matrix(a, b, T, mu)   f[a_i, b_j]
    dd2_matrix(a, b, T, mu)   f[a_i, a_i, b_j]
    dd3_matrix(a, b, T, mu)   f[a_i, a_i, a_i, b_j]

for f = f_T(. - mu). `BACKEND` reports which implementation is active.
"""

import os

from . import _fallback

if os.environ.get("DEBYE_FORGE_PURE_PYTHON"):
    _impl = _fallback
else:
    try:
        from . import _ddcore as _impl
    except ImportError:
        _impl = _fallback

BACKEND = _impl.BACKEND
dd1_matrix = _impl.dd1_matrix
dd2_matrix = _impl.dd2_matrix
dd3_matrix = _impl.dd3_matrix

__all__ = ["BACKEND", "dd1_matrix", "dd2_matrix", "dd3_matrix", "_fallback"]
