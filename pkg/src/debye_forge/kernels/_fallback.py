"""Pure-numpy implementations of the divided-difference weight kernels.

These mirror the compiled `_ddcore` extension exactly (same formulas,
same coalescence thresholds) and act as the fallback when the extension
is unavailable. All return (len(a), len(b)) float64 matrices of
divided differences of f_T(. - mu) over eigenvalue vectors.
"""

from __future__ import annotations

import numpy as np

from .. import occupation as _occ

BACKEND = "python"


def dd1_matrix(a, b, T, mu):
    a = np.asarray(a, dtype=float)[:, None]
    b = np.asarray(b, dtype=float)[None, :]
    return _occ.dd1(a, b, T, mu)


def dd2_matrix(a, b, T, mu):
    a = np.asarray(a, dtype=float)[:, None]
    b = np.asarray(b, dtype=float)[None, :]
    return _occ.dd2(a, b, T, mu)


def dd3_matrix(a, b, T, mu):
    a = np.asarray(a, dtype=float)[:, None]
    b = np.asarray(b, dtype=float)[None, :]
    return _occ.dd3(a, b, T, mu)
