import os
import subprocess
import sys

import numpy as np
import pytest

from zeroair import _kernels as K


def _geometry(n=2, c=3, h=7, w=6, k=3, stride=2, pad=1):
    hp, wp = h + 2 * pad, w + 2 * pad
    oh, ow = (hp - k) // stride + 1, (wp - k) // stride + 1
    return n, c, hp, wp, k, stride, oh, ow


@pytest.mark.parametrize("stride", [1, 2])
def test_im2col_variants_agree(stride):
    n, c, hp, wp, k, s, oh, ow = _geometry(stride=stride)
    xp = np.random.default_rng(0).normal(size=(n, c, hp, wp)).astype(np.float32)
    ref = K._im2col_loops(xp, k, k, s, oh, ow)
    np.testing.assert_array_equal(K.im2col_numpy(xp, k, k, s, oh, ow), ref)
    np.testing.assert_array_equal(K.im2col_numba(xp, k, k, s, oh, ow), ref)


@pytest.mark.parametrize("stride", [1, 2])
def test_col2im_variants_agree(stride):
    n, c, hp, wp, k, s, oh, ow = _geometry(stride=stride)
    cols = np.random.default_rng(1).normal(size=(n * oh * ow, c * k * k))
    ref = K._col2im_loops(cols, n, c, hp, wp, k, k, s, oh, ow)
    np.testing.assert_allclose(K.col2im_numpy(cols, n, c, hp, wp, k, k, s, oh, ow), ref, atol=1e-12)
    np.testing.assert_allclose(K.col2im_numba(cols, n, c, hp, wp, k, k, s, oh, ow), ref, atol=1e-12)


def test_col2im_is_adjoint_of_im2col():
    n, c, hp, wp, k, s, oh, ow = _geometry()
    rng = np.random.default_rng(2)
    x = rng.normal(size=(n, c, hp, wp))
    y = rng.normal(size=(n * oh * ow, c * k * k))
    lhs = np.sum(K.im2col_numpy(x, k, k, s, oh, ow) * y)
    rhs = np.sum(x * K.col2im_numpy(y, n, c, hp, wp, k, k, s, oh, ow))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_gmm_kernel_variants_agree():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 8))
    means = rng.normal(size=(3, 8))
    var = rng.uniform(0.1, 1.0, size=(3, 8))
    logw = np.log(np.array([0.2, 0.3, 0.5]))
    ref = K.gmm_posterior_mean_numpy(x, means, var, logw, 0.4)
    np.testing.assert_allclose(K._gmm_posterior_mean_loops(x, means, var, logw, 0.4), ref, rtol=1e-10)
    np.testing.assert_allclose(K.gmm_posterior_mean_numba(x, means, var, logw, 0.4), ref, rtol=1e-10)


def test_env_flag_selects_numpy_backend():
    code = "from zeroair import _kernels as K; print(K.BACKEND, K.im2col is K.im2col_numpy)"
    env = dict(os.environ, ZEROAIR_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]
