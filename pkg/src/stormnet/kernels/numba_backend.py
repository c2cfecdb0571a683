"""Numba-jitted kernel implementations.

Loop orders are fixed so results are reproducible run to run: matmul and
the xoshiro fill are bit-identical to the numpy backend, convolution
sums the kernel footprint in (dy, dx, ci) order exactly like the
reference loop. Parallel loops only split over independent output
slices (batch rows, output channels), so thread count never changes
results. fastmath stays off everywhere.
"""

import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def matmul(a, b):
    # (i, p, j) loop order: each out[i, j] still accumulates strictly in
    # ascending p, identical to the naive triple loop, but rows of b are
    # read contiguously
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in prange(m):
        for p in range(k):
            a_ip = a[i, p]
            for j in range(n):
                out[i, j] += a_ip * b[p, j]
    return out


@njit(cache=True, parallel=True)
def conv2d(xpad, w):
    B, Hp, Wp, Cin = xpad.shape
    kh, kw, _, Cout = w.shape
    H = Hp - kh + 1
    W = Wp - kw + 1
    out = np.empty((B, H, W, Cout))
    for b in prange(B):
        for y in range(H):
            for x in range(W):
                acc = np.zeros(Cout)
                for dy in range(kh):
                    for dx in range(kw):
                        for ci in range(Cin):
                            xv = xpad[b, y + dy, x + dx, ci]
                            for co in range(Cout):
                                acc[co] += w[dy, dx, ci, co] * xv
                for co in range(Cout):
                    out[b, y, x, co] = acc[co]
    return out


@njit(cache=True, parallel=True)
def _conv2d_grad_input(w, grad_z, Hp, Wp):
    B, H, W, Cout = grad_z.shape
    kh, kw, Cin, _ = w.shape
    grad_xpad = np.zeros((B, Hp, Wp, Cin))
    for b in prange(B):
        for y in range(H):
            for x in range(W):
                for dy in range(kh):
                    for dx in range(kw):
                        for ci in range(Cin):
                            acc = 0.0
                            for co in range(Cout):
                                acc += w[dy, dx, ci, co] * grad_z[b, y, x, co]
                            grad_xpad[b, y + dy, x + dx, ci] += acc
    return grad_xpad


@njit(cache=True, parallel=True)
def _conv2d_grad_weight(xpad, grad_z, kh, kw):
    # parallel over kernel rows: each thread owns the grad_w[dy] slice,
    # and per element the (b, y, x) accumulation order is fixed
    B, H, W, Cout = grad_z.shape
    Cin = xpad.shape[3]
    grad_w = np.zeros((kh, kw, Cin, Cout))
    for dy in prange(kh):
        for dx in range(kw):
            for b in range(B):
                for y in range(H):
                    for x in range(W):
                        for ci in range(Cin):
                            v = xpad[b, y + dy, x + dx, ci]
                            for co in range(Cout):
                                grad_w[dy, dx, ci, co] += v * grad_z[b, y, x, co]
    return grad_w


def conv2d_backward(xpad, w, grad_z, need_input_grad, need_weight_grad):
    grad_xpad = None
    grad_w = None
    if need_input_grad:
        grad_xpad = _conv2d_grad_input(w, grad_z, xpad.shape[1], xpad.shape[2])
    if need_weight_grad:
        grad_w = _conv2d_grad_weight(xpad, grad_z, w.shape[0], w.shape[1])
    return grad_xpad, grad_w


@njit(cache=True, parallel=True)
def _maxpool2x2(x):
    B, H, W, C = x.shape
    H2 = H // 2
    W2 = W // 2
    out = np.empty((B, H2, W2, C))
    argmax = np.empty((B, H2, W2, C), dtype=np.int64)
    for b in prange(B):
        for y in range(H2):
            for x_ in range(W2):
                for c in range(C):
                    best = x[b, 2 * y, 2 * x_, c]
                    idx = 0
                    for dy in range(2):
                        for dx in range(2):
                            v = x[b, 2 * y + dy, 2 * x_ + dx, c]
                            if v > best:
                                best = v
                                idx = dy * 2 + dx
                    out[b, y, x_, c] = best
                    argmax[b, y, x_, c] = idx
    return out, argmax


def maxpool2x2(x):
    return _maxpool2x2(x)


@njit(cache=True, parallel=True)
def maxpool2x2_backward(grad_out, argmax):
    B, H2, W2, C = grad_out.shape
    grad_in = np.zeros((B, H2 * 2, W2 * 2, C))
    for b in prange(B):
        for y in range(H2):
            for x_ in range(W2):
                for c in range(C):
                    idx = argmax[b, y, x_, c]
                    grad_in[b, 2 * y + idx // 2, 2 * x_ + idx % 2, c] = grad_out[b, y, x_, c]
    return grad_in


@njit(cache=True)
def xoshiro_fill(state, out):
    s0, s1, s2, s3 = state[0], state[1], state[2], state[3]
    five = np.uint64(5)
    nine = np.uint64(9)
    r7 = np.uint64(7)
    r57 = np.uint64(57)
    r17 = np.uint64(17)
    r45 = np.uint64(45)
    r19 = np.uint64(19)
    for i in range(out.shape[0]):
        r = s1 * five
        r = (r << r7) | (r >> r57)
        out[i] = r * nine
        t = s1 << r17
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = (s3 << r45) | (s3 >> r19)
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
