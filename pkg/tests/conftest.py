import numpy as np
import pytest

from stormnet import data


@pytest.fixture(scope="session")
def tiny_dataset():
    """Small shared dataset: big enough for AUC/threshold tests, small
    enough to generate once per session."""
    return data.generate(seed=1234, n_train=120, n_val=60, n_test=40)


def conv2d_loop_oracle(x, w, b):
    """Naive windowed-sum convolution, zero padding, stride 1.

    Written before the kernels as the reference for the optimized
    paths; deliberately index-by-index.
    """
    B, H, W, Cin = x.shape
    kh, kw, _, Cout = w.shape
    k = kh // 2
    xp = np.pad(x, ((0, 0), (k, k), (k, k), (0, 0)))
    out = np.zeros((B, H, W, Cout))
    for bi in range(B):
        for y in range(H):
            for xx in range(W):
                for co in range(Cout):
                    acc = 0.0
                    for dy in range(kh):
                        for dx in range(kw):
                            for ci in range(Cin):
                                acc += w[dy, dx, ci, co] * xp[bi, y + dy, xx + dx, ci]
                    out[bi, y, xx, co] = acc + b[co]
    return out


def matmul_loop_oracle(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[p, j]
            out[i, j] = acc
    return out
