"""Deliberately naive reference implementations used to cross-check the
vectorized library code.  Everything here is written as explicit Python loops
over the defining formulas — slow, obvious, and independent of the strided /
BLAS-backed routes in the package."""

import numpy as np


def conv2d_loops(x, weight, bias=None, stride=1, padding=1):
    """Cross-correlation via the definition: quadruple loop over output
    positions and kernel taps."""
    n, cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, out_h, out_w), dtype=x.dtype)
    for b in range(n):
        for co in range(cout):
            for oi in range(out_h):
                for oj in range(out_w):
                    acc = 0.0
                    for ci in range(cin):
                        for ki in range(kh):
                            for kj in range(kw):
                                ii = oi * stride + ki - padding
                                jj = oj * stride + kj - padding
                                if 0 <= ii < h and 0 <= jj < w:
                                    acc += x[b, ci, ii, jj] * weight[co, ci, ki, kj]
                    out[b, co, oi, oj] = acc
            if bias is not None:
                out[b, co] += bias[co]
    return out


def max_pool2d_loops(x, k, stride):
    n, c, h, w = x.shape
    out_h = (h - k) // stride + 1
    out_w = (w - k) // stride + 1
    out = np.empty((n, c, out_h, out_w), dtype=x.dtype)
    for b in range(n):
        for ci in range(c):
            for oi in range(out_h):
                for oj in range(out_w):
                    best = -np.inf
                    for ki in range(k):
                        for kj in range(k):
                            v = x[b, ci, oi * stride + ki, oj * stride + kj]
                            if v > best:
                                best = v
                    out[b, ci, oi, oj] = best
    return out


def adaptive_avg_pool_loops(x, out_h, out_w):
    """Region averaging with [floor(i*H/out), ceil((i+1)*H/out)) bounds."""
    n, c, h, w = x.shape
    out = np.empty((n, c, out_h, out_w), dtype=x.dtype)
    for b in range(n):
        for ci in range(c):
            for oi in range(out_h):
                h0 = (oi * h) // out_h
                h1 = int(np.ceil((oi + 1) * h / out_h))
                for oj in range(out_w):
                    w0 = (oj * w) // out_w
                    w1 = int(np.ceil((oj + 1) * w / out_w))
                    acc = 0.0
                    for ii in range(h0, h1):
                        for jj in range(w0, w1):
                            acc += x[b, ci, ii, jj]
                    out[b, ci, oi, oj] = acc / ((h1 - h0) * (w1 - w0))
    return out


def linear_loops(x, weight, bias=None):
    """y[i, o] = sum_k x[i, k] * weight[o, k] + bias[o], as a triple loop."""
    n, din = x.shape
    dout = weight.shape[0]
    out = np.zeros((n, dout), dtype=x.dtype)
    for i in range(n):
        for o in range(dout):
            acc = 0.0
            for kk in range(din):
                acc += x[i, kk] * weight[o, kk]
            out[i, o] = acc + (bias[o] if bias is not None else 0.0)
    return out


def batch_norm_loops(x, gamma, beta, eps):
    """Per-channel standardization with biased variance, all in loops."""
    n, c, h, w = x.shape
    m = n * h * w
    out = np.empty_like(x)
    for ci in range(c):
        s = 0.0
        for b in range(n):
            for ii in range(h):
                for jj in range(w):
                    s += x[b, ci, ii, jj]
        mean = s / m
        sq = 0.0
        for b in range(n):
            for ii in range(h):
                for jj in range(w):
                    sq += (x[b, ci, ii, jj] - mean) ** 2
        var = sq / m
        inv = 1.0 / np.sqrt(var + eps)
        for b in range(n):
            for ii in range(h):
                for jj in range(w):
                    out[b, ci, ii, jj] = gamma[ci] * (x[b, ci, ii, jj] - mean) * inv + beta[ci]
    return out


def softmax_cross_entropy_loops(logits, labels):
    """Mean negative log-softmax probability of the true class."""
    n, k = logits.shape
    total = 0.0
    for i in range(n):
        mx = max(logits[i, j] for j in range(k))
        denom = sum(np.exp(logits[i, j] - mx) for j in range(k))
        total += -(logits[i, labels[i]] - mx - np.log(denom))
    return total / n


def bilinear_resize_loops(img, out_h, out_w):
    """Corner-aligned bilinear interpolation of an (H, W) image."""
    h, w = img.shape
    out = np.empty((out_h, out_w), dtype=np.float64)
    for i in range(out_h):
        sy = i * (h - 1) / (out_h - 1) if out_h > 1 else (h - 1) / 2.0
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(out_w):
            sx = j * (w - 1) / (out_w - 1) if out_w > 1 else (w - 1) / 2.0
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
            bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
            out[i, j] = top * (1 - fy) + bot * fy
    return out
