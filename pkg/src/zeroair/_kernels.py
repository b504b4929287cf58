"""Hot numeric kernels.

Every kernel exists twice: a numba ``@njit`` loop version and a plain numpy
version. The module-level names (``im2col``, ``col2im``, ``gmm_posterior_mean``)
point at the numba variants unless numba is missing or the environment variable
``ZEROAIR_DISABLE_NUMBA`` is set to a truthy value, in which case the numpy
variants are used. Both variants are always importable so the benchmark and the
tests can compare them directly.
"""

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

_FLAG = os.environ.get("ZEROAIR_DISABLE_NUMBA", "").strip().lower()
USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# im2col / col2im
# ---------------------------------------------------------------------------


def im2col_numpy(xp, kh, kw, stride, oh, ow):
    """Unfold a padded (N, C, H, W) batch into (N*oh*ow, C*kh*kw) patch rows."""
    n, c = xp.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    # (n, c, oh, ow, kh, kw) -> (n, oh, ow, c, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, c * kh * kw)


def col2im_numpy(cols, n, c, hp, wp, kh, kw, stride, oh, ow):
    """Scatter-add (N*oh*ow, C*kh*kw) patch rows back into a padded (N, C, hp, wp) array."""
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    d = cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += d[:, :, i, j]
    return out


def _im2col_loops(xp, kh, kw, stride, oh, ow):
    n, c = xp.shape[0], xp.shape[1]
    cols = np.empty((n * oh * ow, c * kh * kw), dtype=xp.dtype)
    for b in range(n):
        for y in range(oh):
            for x in range(ow):
                r = (b * oh + y) * ow + x
                for ch in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            cols[r, (ch * kh + i) * kw + j] = xp[b, ch, y * stride + i, x * stride + j]
    return cols


def _col2im_loops(cols, n, c, hp, wp, kh, kw, stride, oh, ow):
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for b in range(n):
        for y in range(oh):
            for x in range(ow):
                r = (b * oh + y) * ow + x
                for ch in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            out[b, ch, y * stride + i, x * stride + j] += cols[r, (ch * kh + i) * kw + j]
    return out


# ---------------------------------------------------------------------------
# Gaussian-mixture posterior mean E[x0 | x_t]
# ---------------------------------------------------------------------------


def gmm_posterior_mean_numpy(x, means, variances, log_weights, abar):
    """Posterior mean of x0 given x_t = sqrt(abar) x0 + sqrt(1-abar) eps.

    ``x`` is (B, D), ``means``/``variances`` are (K, D), ``log_weights`` is (K,).
    Each component is a diagonal Gaussian. Computed in float64.
    """
    sa = np.sqrt(abar)
    var_t = abar * variances + (1.0 - abar)  # (K, D)
    diff = x[:, None, :] - sa * means[None, :, :]  # (B, K, D)
    ll = log_weights[None, :] - 0.5 * (
        np.log(2.0 * np.pi * var_t).sum(axis=1)[None, :] + (diff * diff / var_t[None]).sum(axis=2)
    )
    ll -= ll.max(axis=1, keepdims=True)
    resp = np.exp(ll)
    resp /= resp.sum(axis=1, keepdims=True)
    gain = (sa * variances / var_t)[None]  # (1, K, D)
    comp_mean = means[None] + gain * diff
    return np.einsum("bk,bkd->bd", resp, comp_mean)


def _gmm_posterior_mean_loops(x, means, variances, log_weights, abar):
    b_count, d_count = x.shape
    k_count = means.shape[0]
    sa = np.sqrt(abar)
    out = np.zeros((b_count, d_count))
    ll = np.empty(k_count)
    logdet = np.zeros(k_count)
    for k in range(k_count):
        s = 0.0
        for d in range(d_count):
            s += np.log(2.0 * np.pi * (abar * variances[k, d] + 1.0 - abar))
        logdet[k] = s
    for b in range(b_count):
        top = -np.inf
        for k in range(k_count):
            q = 0.0
            for d in range(d_count):
                vt = abar * variances[k, d] + 1.0 - abar
                r = x[b, d] - sa * means[k, d]
                q += r * r / vt
            ll[k] = log_weights[k] - 0.5 * (logdet[k] + q)
            if ll[k] > top:
                top = ll[k]
        total = 0.0
        for k in range(k_count):
            ll[k] = np.exp(ll[k] - top)
            total += ll[k]
        for k in range(k_count):
            w = ll[k] / total
            for d in range(d_count):
                vt = abar * variances[k, d] + 1.0 - abar
                r = x[b, d] - sa * means[k, d]
                out[b, d] += w * (means[k, d] + sa * variances[k, d] / vt * r)
    return out


if HAVE_NUMBA:
    im2col_numba = njit(cache=True)(_im2col_loops)
    col2im_numba = njit(cache=True)(_col2im_loops)
    gmm_posterior_mean_numba = njit(cache=True)(_gmm_posterior_mean_loops)
else:  # pragma: no cover
    im2col_numba = _im2col_loops
    col2im_numba = _col2im_loops
    gmm_posterior_mean_numba = _gmm_posterior_mean_loops

if USE_NUMBA:
    im2col = im2col_numba
    col2im = col2im_numba
    gmm_posterior_mean = gmm_posterior_mean_numba
else:
    im2col = im2col_numpy
    col2im = col2im_numpy
    gmm_posterior_mean = gmm_posterior_mean_numpy
