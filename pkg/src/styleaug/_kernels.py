"""Windowed SSIM statistics: numba-jitted hot path plus a pure-numpy fallback.

Path selection is controlled by the ``STYLEAUG_NUMBA`` environment variable:
``0`` forces the numpy fallback, ``1`` requires numba (import error if it is
missing), unset tries numba and falls back silently.  Both paths evaluate the
same formula with sample (N-1) covariance normalization over a uniform
win x win window, restricted to fully valid window positions, so they agree
to float64 rounding and return exactly 1.0 on identical inputs.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.ndimage import uniform_filter


def _ssim_map_numpy(a: np.ndarray, b: np.ndarray, win: int, c1: float, c2: float) -> np.ndarray:
    pad = win // 2
    n = win * win
    cov_norm = n / (n - 1.0)

    def crop(x):
        return x[pad:-pad, pad:-pad] if pad else x

    ua = crop(uniform_filter(a, win))
    ub = crop(uniform_filter(b, win))
    uaa = crop(uniform_filter(a * a, win))
    ubb = crop(uniform_filter(b * b, win))
    uab = crop(uniform_filter(a * b, win))

    va = cov_norm * (uaa - ua * ua)
    vb = cov_norm * (ubb - ub * ub)
    vab = cov_norm * (uab - ua * ub)

    return ((2.0 * ua * ub + c1) * (2.0 * vab + c2)) / (
        (ua * ua + ub * ub + c1) * (va + vb + c2)
    )


try:  # pragma: no cover - exercised through dispatch
    from numba import njit

    @njit(cache=True)
    def _ssim_map_numba(a, b, win, c1, c2):  # type: ignore[misc]
        h, w = a.shape
        oh = h - win + 1
        ow = w - win + 1
        n = win * win
        cov_norm = n / (n - 1.0)
        out = np.empty((oh, ow), dtype=np.float64)
        for i in range(oh):
            for j in range(ow):
                sa = 0.0
                sb = 0.0
                saa = 0.0
                sbb = 0.0
                sab = 0.0
                for u in range(win):
                    for v in range(win):
                        x = a[i + u, j + v]
                        y = b[i + u, j + v]
                        sa += x
                        sb += y
                        saa += x * x
                        sbb += y * y
                        sab += x * y
                ua = sa / n
                ub = sb / n
                va = cov_norm * (saa / n - ua * ua)
                vb = cov_norm * (sbb / n - ub * ub)
                vab = cov_norm * (sab / n - ua * ub)
                out[i, j] = ((2.0 * ua * ub + c1) * (2.0 * vab + c2)) / (
                    (ua * ua + ub * ub + c1) * (va + vb + c2)
                )
        return out

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _ssim_map_numba = None
    _HAVE_NUMBA = False


def _resolve_use_numba() -> bool:
    flag = os.environ.get("STYLEAUG_NUMBA")
    if flag is not None:
        want = flag.strip().lower() not in ("0", "false", "no", "off")
        if want and not _HAVE_NUMBA:
            raise ImportError("STYLEAUG_NUMBA=1 but numba is not importable")
        return want
    return _HAVE_NUMBA


USE_NUMBA = _resolve_use_numba()


def ssim_map(a: np.ndarray, b: np.ndarray, win: int, c1: float, c2: float) -> np.ndarray:
    """Per-window SSIM over all fully valid window positions (float64 inputs)."""
    if USE_NUMBA:
        return _ssim_map_numba(a, b, win, c1, c2)
    return _ssim_map_numpy(a, b, win, c1, c2)
