import os
import subprocess
import sys

import numpy as np
import pytest

from styleaug import _kernels as K

RNG = np.random.default_rng(7)

needs_numba = pytest.mark.skipif(not K._HAVE_NUMBA, reason="numba unavailable")

WIN, C1, C2 = 7, 0.01**2, 0.03**2


@needs_numba
def test_paths_agree_on_random_images():
    for _ in range(5):
        a = RNG.random((40, 33))
        b = RNG.random((40, 33))
        m_np = K._ssim_map_numpy(a, b, WIN, C1, C2)
        m_nb = K._ssim_map_numba(a, b, WIN, C1, C2)
        assert m_np.shape == m_nb.shape == (34, 27)
        assert np.abs(m_np - m_nb).max() < 1e-12


@needs_numba
def test_both_paths_exact_identity():
    a = RNG.random((24, 24))
    assert K._ssim_map_numpy(a, a, WIN, C1, C2).mean() == 1.0
    assert K._ssim_map_numba(a, a, WIN, C1, C2).mean() == 1.0


def test_dispatch_uses_configured_path():
    a = RNG.random((16, 16))
    b = RNG.random((16, 16))
    expected = (
        K._ssim_map_numba(a, b, WIN, C1, C2)
        if K.USE_NUMBA
        else K._ssim_map_numpy(a, b, WIN, C1, C2)
    )
    assert np.array_equal(K.ssim_map(a, b, WIN, C1, C2), expected)


@pytest.mark.parametrize("flag,expect", [("0", "False"), ("1", "True")])
def test_env_flag_controls_selection(flag, expect):
    code = "import styleaug._kernels as K; print(K.USE_NUMBA)"
    env = dict(os.environ, STYLEAUG_NUMBA=flag)
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True
    )
    assert out.stdout.strip() == expect
