"""Hot array kernels with numba and pure-numpy variants.

Everything here is data movement: patch extraction / scatter for
convolutions, 2x nearest upsampling and its adjoint, and binary dilation.
Matrix products stay in numpy (BLAS) in both variants. Each pair of
implementations iterates in the same order, so accumulation of floating
point contributions is identical and the two backends agree bit-for-bit
(asserted in tests/test_kernels.py).
"""

import numpy as np

from .backend import USE_NUMBA


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


# ---------------------------------------------------------------------------
# numpy variants

def _im2col_np(x, kh, kw, stride, pad):
    n, h, w, c = x.shape
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(w, kw, stride, pad)
    if pad:
        xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
        xp[:, pad:pad + h, pad:pad + w, :] = x
    else:
        xp = x
    cols = np.empty((n, oh, ow, kh, kw, c), dtype=x.dtype)
    for ky in range(kh):
        y_end = ky + stride * oh
        for kx in range(kw):
            x_end = kx + stride * ow
            cols[:, :, :, ky, kx, :] = xp[:, ky:y_end:stride, kx:x_end:stride, :]
    return cols.reshape(n * oh * ow, kh * kw * c)


def _col2im_np(cols, x_shape, kh, kw, stride, pad):
    n, h, w, c = x_shape
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(w, kw, stride, pad)
    cols6 = cols.reshape(n, oh, ow, kh, kw, c)
    xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    for ky in range(kh):
        y_end = ky + stride * oh
        for kx in range(kw):
            x_end = kx + stride * ow
            xp[:, ky:y_end:stride, kx:x_end:stride, :] += cols6[:, :, :, ky, kx, :]
    if pad:
        return xp[:, pad:pad + h, pad:pad + w, :]
    return xp


def _upsample2_np(x):
    return x.repeat(2, axis=1).repeat(2, axis=2)


def _upsample2_back_np(dy):
    n, h2, w2, c = dy.shape
    out = dy[:, 0::2, 0::2, :].copy()
    out += dy[:, 0::2, 1::2, :]
    out += dy[:, 1::2, 0::2, :]
    out += dy[:, 1::2, 1::2, :]
    return out


def _dilate_np(mask, ksize):
    r = ksize // 2
    h, w = mask.shape
    tmp = mask.copy()
    for dy in range(1, r + 1):
        tmp[dy:, :] |= mask[:h - dy, :]
        tmp[:h - dy, :] |= mask[dy:, :]
    out = tmp.copy()
    for dx in range(1, r + 1):
        out[:, dx:] |= tmp[:, :w - dx]
        out[:, :w - dx] |= tmp[:, dx:]
    return out


# ---------------------------------------------------------------------------
# numba variants (same loop order as the slice-based numpy code above)

if USE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _im2col_nb(x, kh, kw, stride, pad):
        n, h, w, c = x.shape
        oh = (h + 2 * pad - kh) // stride + 1
        ow = (w + 2 * pad - kw) // stride + 1
        cols = np.zeros((n, oh, ow, kh, kw, c), dtype=x.dtype)
        for ky in range(kh):
            for kx in range(kw):
                for i in range(n):
                    for oy in range(oh):
                        sy = oy * stride + ky - pad
                        if sy < 0 or sy >= h:
                            continue
                        for ox in range(ow):
                            sx = ox * stride + kx - pad
                            if sx < 0 or sx >= w:
                                continue
                            for ch in range(c):
                                cols[i, oy, ox, ky, kx, ch] = x[i, sy, sx, ch]
        return cols.reshape(n * oh * ow, kh * kw * c)

    @njit(cache=True)
    def _col2im_nb(cols, n, h, w, c, kh, kw, stride, pad):
        oh = (h + 2 * pad - kh) // stride + 1
        ow = (w + 2 * pad - kw) // stride + 1
        cols6 = cols.reshape(n, oh, ow, kh, kw, c)
        dx = np.zeros((n, h, w, c), dtype=cols.dtype)
        for ky in range(kh):
            for kx in range(kw):
                for i in range(n):
                    for oy in range(oh):
                        sy = oy * stride + ky - pad
                        if sy < 0 or sy >= h:
                            continue
                        for ox in range(ow):
                            sx = ox * stride + kx - pad
                            if sx < 0 or sx >= w:
                                continue
                            for ch in range(c):
                                dx[i, sy, sx, ch] += cols6[i, oy, ox, ky, kx, ch]
        return dx

    @njit(cache=True)
    def _upsample2_nb(x):
        n, h, w, c = x.shape
        out = np.empty((n, 2 * h, 2 * w, c), dtype=x.dtype)
        for i in range(n):
            for y in range(2 * h):
                for x2 in range(2 * w):
                    for ch in range(c):
                        out[i, y, x2, ch] = x[i, y // 2, x2 // 2, ch]
        return out

    @njit(cache=True)
    def _upsample2_back_nb(dy):
        n, h2, w2, c = dy.shape
        h, w = h2 // 2, w2 // 2
        out = np.empty((n, h, w, c), dtype=dy.dtype)
        for i in range(n):
            for y in range(h):
                for x2 in range(w):
                    for ch in range(c):
                        # same accumulation order as the numpy slice adds
                        v = dy[i, 2 * y, 2 * x2, ch]
                        v += dy[i, 2 * y, 2 * x2 + 1, ch]
                        v += dy[i, 2 * y + 1, 2 * x2, ch]
                        v += dy[i, 2 * y + 1, 2 * x2 + 1, ch]
                        out[i, y, x2, ch] = v
        return out

    @njit(cache=True)
    def _dilate_nb(mask, ksize):
        r = ksize // 2
        h, w = mask.shape
        tmp = np.zeros((h, w), dtype=mask.dtype)
        for y in range(h):
            for x in range(w):
                v = mask[y, x]
                if not v:
                    for dy in range(-r, r + 1):
                        sy = y + dy
                        if 0 <= sy < h and mask[sy, x]:
                            v = 1
                            break
                tmp[y, x] = v
        out = np.zeros((h, w), dtype=mask.dtype)
        for y in range(h):
            for x in range(w):
                v = tmp[y, x]
                if not v:
                    for dx in range(-r, r + 1):
                        sx = x + dx
                        if 0 <= sx < w and tmp[y, sx]:
                            v = 1
                            break
                out[y, x] = v
        return out


# ---------------------------------------------------------------------------
# public API

def im2col(x, kh, kw, stride=1, pad=0):
    """Extract conv patches from NHWC input as a (N*OH*OW, kh*kw*C) matrix."""
    if USE_NUMBA:
        return _im2col_nb(np.ascontiguousarray(x), kh, kw, stride, pad)
    return _im2col_np(x, kh, kw, stride, pad)


def col2im(cols, x_shape, kh, kw, stride=1, pad=0):
    """Adjoint of im2col: scatter-add patch gradients back onto NHWC shape."""
    if USE_NUMBA:
        n, h, w, c = x_shape
        return _col2im_nb(np.ascontiguousarray(cols), n, h, w, c, kh, kw, stride, pad)
    return _col2im_np(cols, x_shape, kh, kw, stride, pad)


def upsample2(x):
    """2x nearest-neighbor upsampling on NHWC."""
    if USE_NUMBA:
        return _upsample2_nb(np.ascontiguousarray(x))
    return _upsample2_np(x)


def upsample2_back(dy):
    """Adjoint of upsample2: sum each 2x2 block."""
    if USE_NUMBA:
        return _upsample2_back_nb(np.ascontiguousarray(dy))
    return _upsample2_back_np(dy)


def dilate_binary(mask, ksize):
    """Dilate a binary HxW mask with a ksize x ksize ones kernel (zero-padded)."""
    if ksize % 2 != 1 or ksize < 1:
        raise ValueError(f"dilation kernel size must be odd and >= 1, got {ksize}")
    m = np.ascontiguousarray(mask.astype(np.uint8))
    if ksize == 1:
        return m.copy()
    if USE_NUMBA:
        return _dilate_nb(m, ksize)
    return _dilate_np(m, ksize)
