"""Minimal numpy layer library with explicit forward/backward passes.

Layers keep parameters only; forward returns (y, cache) and backward
returns (dx, param_grads) without touching layer state, so forward-only
use of a shared model is read-only and safe under concurrency. Arrays are
NHWC float32 throughout. Gradients of every layer are checked against
finite differences in tests/test_nn.py.
"""

import numpy as np

from . import kernels

F32 = np.float32


def he_normal(rng, shape, fan_in, scale=1.0):
    std = scale * np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(F32)


# ---------------------------------------------------------------------------
# stateless ops

def silu(x):
    s = 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))
    return x * s, (x, s)


def silu_back(dout, cache):
    x, s = cache
    return dout * (s * (1.0 + x * (1.0 - s)))


def tanh(x):
    y = np.tanh(x)
    return y, y


def tanh_back(dout, y):
    return dout * (1.0 - y * y)


def global_avg_pool(x):
    n, h, w, c = x.shape
    return x.mean(axis=(1, 2)), (n, h, w, c)


def global_avg_pool_back(dout, cache):
    n, h, w, c = cache
    return np.broadcast_to(dout[:, None, None, :] / F32(h * w), (n, h, w, c)).astype(F32)


def upsample2(x):
    return kernels.upsample2(x), None


def upsample2_back(dout, _cache):
    return kernels.upsample2_back(dout)


def normalize_rows(x, eps=1e-8):
    norm = np.sqrt((x * x).sum(axis=1, keepdims=True)) + F32(eps)
    return x / norm, (x, norm)


def normalize_rows_back(dout, cache):
    x, norm = cache
    y = x / norm
    return (dout - y * (dout * y).sum(axis=1, keepdims=True)) / norm


def timestep_embedding(t, dim, max_period=10000.0):
    """Sinusoidal embedding of integer timesteps, shape (N, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=1).astype(F32)


# ---------------------------------------------------------------------------
# parameterized layers

class Dense:
    def __init__(self, d_in, d_out, rng, scale=1.0):
        self.w = he_normal(rng, (d_in, d_out), d_in, scale)
        self.b = np.zeros(d_out, dtype=F32)

    @property
    def params(self):
        return {"w": self.w, "b": self.b}

    def forward(self, x):
        return x @ self.w + self.b, x

    def backward(self, dout, cache):
        x = cache
        return dout @ self.w.T, {"w": x.T @ dout, "b": dout.sum(axis=0)}


class Conv2d:
    """3x3-style conv on NHWC via im2col; weights stored (k*k*cin, cout)."""

    def __init__(self, c_in, c_out, ksize, rng, stride=1, pad=None, scale=1.0):
        self.ksize = ksize
        self.stride = stride
        self.pad = ksize // 2 if pad is None else pad
        self.c_out = c_out
        self.w = he_normal(rng, (ksize * ksize * c_in, c_out), ksize * ksize * c_in, scale)
        self.b = np.zeros(c_out, dtype=F32)

    @property
    def params(self):
        return {"w": self.w, "b": self.b}

    def forward(self, x):
        n, h, w, _ = x.shape
        cols = kernels.im2col(x, self.ksize, self.ksize, self.stride, self.pad)
        y = cols @ self.w + self.b
        oh = kernels.conv_out_size(h, self.ksize, self.stride, self.pad)
        ow = kernels.conv_out_size(w, self.ksize, self.stride, self.pad)
        return y.reshape(n, oh, ow, self.c_out), (x.shape, cols)

    def backward(self, dout, cache):
        x_shape, cols = cache
        dmat = dout.reshape(-1, self.c_out)
        grads = {"w": cols.T @ dmat, "b": dmat.sum(axis=0)}
        dcols = dmat @ self.w.T
        dx = kernels.col2im(dcols, x_shape, self.ksize, self.ksize, self.stride, self.pad)
        return dx, grads


class GroupNorm:
    def __init__(self, groups, channels, eps=1e-5):
        assert channels % groups == 0
        self.groups = groups
        self.eps = eps
        self.gamma = np.ones(channels, dtype=F32)
        self.beta = np.zeros(channels, dtype=F32)

    @property
    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def _grouped(self, x):
        n, h, w, c = x.shape
        return x.reshape(n, h, w, self.groups, c // self.groups)

    def forward(self, x):
        g = self._grouped(x)
        mu = g.mean(axis=(1, 2, 4), keepdims=True)
        var = g.var(axis=(1, 2, 4), keepdims=True)
        inv = 1.0 / np.sqrt(var + F32(self.eps))
        xhat = ((g - mu) * inv).reshape(x.shape)
        return xhat * self.gamma + self.beta, (xhat, inv)

    def backward(self, dout, cache):
        xhat, inv = cache
        grads = {"gamma": (dout * xhat).sum(axis=(0, 1, 2)),
                 "beta": dout.sum(axis=(0, 1, 2))}
        dxhat = self._grouped(dout * self.gamma)
        xh = self._grouped(xhat)
        m = F32(dxhat.shape[1] * dxhat.shape[2] * dxhat.shape[4])
        s1 = dxhat.sum(axis=(1, 2, 4), keepdims=True)
        s2 = (dxhat * xh).sum(axis=(1, 2, 4), keepdims=True)
        dx = inv / m * (m * dxhat - s1 - xh * s2)
        return dx.reshape(dout.shape), grads


class Embedding:
    def __init__(self, count, dim, rng, scale=1.0):
        self.table = (rng.standard_normal((count, dim)) * scale).astype(F32)

    @property
    def params(self):
        return {"table": self.table}

    def forward(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return self.table[idx], idx

    def backward(self, dout, cache):
        idx = cache
        dtable = np.zeros_like(self.table)
        np.add.at(dtable, idx, dout)
        return None, {"table": dtable}


class ConvEncoder:
    """Strided conv trunk: (N,H,W,3) image -> pooled (N, widths[-1]) feature."""

    def __init__(self, rng, widths=(24, 48, 64, 64), c_in=3):
        chans = [c_in] + list(widths)
        self.convs = [Conv2d(chans[i], chans[i + 1], 3, rng, stride=2)
                      for i in range(len(widths))]
        self.feat_dim = widths[-1]

    def named_layers(self, prefix):
        return [(f"{prefix}.conv{i}", conv) for i, conv in enumerate(self.convs)]

    def forward(self, x):
        caches = []
        h = x
        for conv in self.convs:
            h, c_conv = conv.forward(h)
            h, c_act = silu(h)
            caches.append((c_conv, c_act))
        feat, c_pool = global_avg_pool(h)
        return feat, (caches, c_pool)

    def backward(self, dfeat, cache):
        caches, c_pool = cache
        grads = {}
        dh = global_avg_pool_back(dfeat, c_pool)
        for i in reversed(range(len(self.convs))):
            c_conv, c_act = caches[i]
            dh = silu_back(dh, c_act)
            dh, g = self.convs[i].backward(dh, c_conv)
            merge_grads(grads, f"conv{i}", g)
        return dh, grads


# ---------------------------------------------------------------------------
# parameter plumbing

def flatten_params(named_layers):
    """[(name, layer)] -> {"name.param": array} with shared references."""
    flat = {}
    for name, layer in named_layers:
        for pname, arr in layer.params.items():
            flat[f"{name}.{pname}"] = arr
    return flat


def load_flat_params(named_layers, flat):
    for name, layer in named_layers:
        for pname in layer.params:
            key = f"{name}.{pname}"
            src = flat[key]
            dst = layer.params[pname]
            if src.shape != dst.shape:
                raise ValueError(f"shape mismatch for {key}: {src.shape} vs {dst.shape}")
            dst[...] = src


def merge_grads(into, prefix, grads):
    for pname, g in grads.items():
        key = f"{prefix}.{pname}"
        if key in into:
            into[key] += g
        else:
            into[key] = g
