"""Pure-numpy kernel implementations (no JIT required).

matmul accumulates over the inner axis in a python-level loop so the
per-element addition order is exactly k ascending, matching the numba
backend bit for bit. Convolution vectorizes over the kernel footprint
with einsum, which reassociates channel sums; it stays within 1e-12 of
the reference loop. The xoshiro fill uses masked python ints and is the
slow path; see benchmarks/benchmark_backends.py for the gap.
"""

import numpy as np

_MASK = (1 << 64) - 1


def matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(k):
        out += a[:, i : i + 1] * b[i : i + 1, :]
    return out


def conv2d(xpad, w):
    B, Hp, Wp, Cin = xpad.shape
    kh, kw, _, Cout = w.shape
    H = Hp - kh + 1
    W = Wp - kw + 1
    out = np.zeros((B, H, W, Cout))
    for dy in range(kh):
        for dx in range(kw):
            patch = xpad[:, dy : dy + H, dx : dx + W, :]
            out += np.einsum("bhwi,io->bhwo", patch, w[dy, dx])
    return out


def conv2d_backward(xpad, w, grad_z, need_input_grad, need_weight_grad):
    B, Hp, Wp, Cin = xpad.shape
    kh, kw, _, Cout = w.shape
    H = Hp - kh + 1
    W = Wp - kw + 1
    grad_xpad = np.zeros_like(xpad) if need_input_grad else None
    grad_w = np.zeros_like(w) if need_weight_grad else None
    for dy in range(kh):
        for dx in range(kw):
            patch = xpad[:, dy : dy + H, dx : dx + W, :]
            if need_weight_grad:
                grad_w[dy, dx] = np.einsum("bhwi,bhwo->io", patch, grad_z)
            if need_input_grad:
                grad_xpad[:, dy : dy + H, dx : dx + W, :] += np.einsum(
                    "bhwo,io->bhwi", grad_z, w[dy, dx]
                )
    return grad_xpad, grad_w


def maxpool2x2(x):
    B, H, W, C = x.shape
    windows = (
        x.reshape(B, H // 2, 2, W // 2, 2, C)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(B, H // 2, W // 2, C, 4)
    )
    argmax = windows.argmax(axis=-1).astype(np.int64)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


def maxpool2x2_backward(grad_out, argmax):
    B, H2, W2, C = grad_out.shape
    scattered = np.zeros((B, H2, W2, C, 4))
    np.put_along_axis(scattered, argmax[..., None], grad_out[..., None], axis=-1)
    grad_in = (
        scattered.reshape(B, H2, W2, C, 2, 2)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(B, H2 * 2, W2 * 2, C)
    )
    return grad_in


def xoshiro_fill(state, out):
    s0, s1, s2, s3 = (int(v) for v in state)
    n = out.shape[0]
    for i in range(n):
        r = (s1 * 5) & _MASK
        r = ((r << 7) | (r >> 57)) & _MASK
        out[i] = (r * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
