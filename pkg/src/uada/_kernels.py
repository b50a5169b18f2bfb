"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time. Set ``UADA_NUMBA=0`` to force the
numpy implementations (also used automatically when numba is missing).
Both paths share signatures and produce identical results up to the order
of floating-point accumulation in ``col2im``.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba ships with the dev environment
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("UADA_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# pure numpy implementations
# ---------------------------------------------------------------------------

def gather_np(data, src_y, src_x):
    """out[b, c, y, x] = data[b, c, src_y[y, x], src_x[y, x]]; index -1 -> 0."""
    valid = (src_y >= 0) & (src_x >= 0)
    sy = np.where(valid, src_y, 0)
    sx = np.where(valid, src_x, 0)
    out = data[:, :, sy, sx]
    out[:, :, ~valid] = 0
    return out


def im2col_np(x, k, pad):
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = h + 2 * pad - k + 1
    wo = w + 2 * pad - k + 1
    s = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, shape=(b, ho, wo, c, k, k), strides=(s[0], s[2], s[3], s[1], s[2], s[3])
    )
    return np.ascontiguousarray(win).reshape(b * ho * wo, c * k * k)


def col2im_np(cols, shape, k, pad):
    b, c, h, w = shape
    ho = h + 2 * pad - k + 1
    wo = w + 2 * pad - k + 1
    cols = cols.reshape(b, ho, wo, c, k, k)
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + ho, j:j + wo] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return xp[:, :, pad:pad + h, pad:pad + w]


def maxpool2_np(x):
    b, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    win = x[:, :, :ho * 2, :wo * 2].reshape(b, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(b, c, ho, wo, 4)
    arg = np.argmax(win, axis=-1).astype(np.int8)
    out = np.take_along_axis(win, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, arg


def maxpool2_backward_np(dout, arg, shape):
    b, c, h, w = shape
    ho, wo = dout.shape[2], dout.shape[3]
    dwin = np.zeros((b, c, ho, wo, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None].astype(np.intp), dout[..., None], axis=-1)
    dwin = dwin.reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho * 2, wo * 2)
    dx = np.zeros(shape, dtype=dout.dtype)
    dx[:, :, :ho * 2, :wo * 2] = dwin
    return dx


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def gather_nb(data, src_y, src_x):
        b, c, h, w = data.shape
        oh, ow = src_y.shape
        out = np.zeros((b, c, oh, ow), dtype=data.dtype)
        for y in range(oh):
            for x in range(ow):
                sy = src_y[y, x]
                sx = src_x[y, x]
                if sy < 0 or sx < 0:
                    continue
                for n in range(b):
                    for ch in range(c):
                        out[n, ch, y, x] = data[n, ch, sy, sx]
        return out

    @numba.njit(cache=True, nogil=True)
    def _pad_nb(x, pad):
        b, c, h, w = x.shape
        xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        for n in range(b):
            for ch in range(c):
                for y in range(h):
                    for xx in range(w):
                        xp[n, ch, y + pad, xx + pad] = x[n, ch, y, xx]
        return xp

    @numba.njit(cache=True, nogil=True)
    def im2col_nb(x, k, pad):
        b, c, h, w = x.shape
        ho = h + 2 * pad - k + 1
        wo = w + 2 * pad - k + 1
        xp = _pad_nb(x, pad) if pad > 0 else x
        cols = np.empty((b * ho * wo, c * k * k), dtype=x.dtype)
        for n in range(b):
            for oy in range(ho):
                for ox in range(wo):
                    row = (n * ho + oy) * wo + ox
                    col = 0
                    for ch in range(c):
                        for i in range(k):
                            for j in range(k):
                                cols[row, col] = xp[n, ch, oy + i, ox + j]
                                col += 1
        return cols

    @numba.njit(cache=True, nogil=True)
    def _col2im_nb(cols, b, c, h, w, k, pad):
        ho = h + 2 * pad - k + 1
        wo = w + 2 * pad - k + 1
        dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
        for n in range(b):
            for oy in range(ho):
                for ox in range(wo):
                    row = (n * ho + oy) * wo + ox
                    col = 0
                    for ch in range(c):
                        for i in range(k):
                            for j in range(k):
                                dxp[n, ch, oy + i, ox + j] += cols[row, col]
                                col += 1
        return dxp[:, :, pad:pad + h, pad:pad + w].copy()

    def col2im_nb(cols, shape, k, pad):
        b, c, h, w = shape
        return _col2im_nb(np.ascontiguousarray(cols), b, c, h, w, k, pad)

    @numba.njit(cache=True, nogil=True)
    def maxpool2_nb(x):
        b, c, h, w = x.shape
        ho = h // 2
        wo = w // 2
        out = np.empty((b, c, ho, wo), dtype=x.dtype)
        arg = np.empty((b, c, ho, wo), dtype=np.int8)
        for n in range(b):
            for ch in range(c):
                for y in range(ho):
                    for xx in range(wo):
                        best = x[n, ch, 2 * y, 2 * xx]
                        idx = 0
                        for q in range(1, 4):
                            v = x[n, ch, 2 * y + q // 2, 2 * xx + q % 2]
                            if v > best:
                                best = v
                                idx = q
                        out[n, ch, y, xx] = best
                        arg[n, ch, y, xx] = idx
        return out, arg

    @numba.njit(cache=True, nogil=True)
    def _maxpool2_backward_nb(dout, arg, b, c, h, w):
        dx = np.zeros((b, c, h, w), dtype=dout.dtype)
        ho, wo = dout.shape[2], dout.shape[3]
        for n in range(b):
            for ch in range(c):
                for y in range(ho):
                    for xx in range(wo):
                        q = arg[n, ch, y, xx]
                        dx[n, ch, 2 * y + q // 2, 2 * xx + q % 2] = dout[n, ch, y, xx]
        return dx

    def maxpool2_backward_nb(dout, arg, shape):
        b, c, h, w = shape
        return _maxpool2_backward_nb(np.ascontiguousarray(dout), arg, b, c, h, w)


if USE_NUMBA:
    gather = gather_nb
    im2col = im2col_nb
    col2im = col2im_nb
    maxpool2 = maxpool2_nb
    maxpool2_backward = maxpool2_backward_nb
else:
    gather = gather_np
    im2col = im2col_np
    col2im = col2im_np
    maxpool2 = maxpool2_np
    maxpool2_backward = maxpool2_backward_np
