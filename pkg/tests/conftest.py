import numpy as np
import pytest

from stylekernel.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def t64(a, requires_grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=requires_grad)


def conv2d_loops(x, w, b, stride, pad):
    """Six nested loops; x is H x W x C_in, w is C_out x C_in x kh x kw."""
    H, W, cin = x.shape
    cout, _, kh, kw = w.shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((Ho, Wo, cout))
    for i in range(Ho):
        for j in range(Wo):
            for o in range(cout):
                acc = b[o]
                for c in range(cin):
                    for a in range(kh):
                        for bb in range(kw):
                            y, xx = i * stride + a - pad, j * stride + bb - pad
                            if 0 <= y < H and 0 <= xx < W:
                                acc += w[o, c, a, bb] * x[y, xx, c]
                out[i, j, o] = acc
    return out


def outer_product_oracle(xn, f1, f2, bias):
    """Per position and channel: k x k kernel outer(F1, F2) on the zero-padded neighbourhood."""
    H, W, C = xn.shape
    k = f1.shape[3]
    r = k // 2
    out = np.zeros((H, W, C))
    for i in range(H):
        for j in range(W):
            for c in range(C):
                K = np.outer(f1[i, j, c], f2[i, j, c])
                acc = bias[i, j, c, 0]
                for a in range(k):
                    for b in range(k):
                        y, x = i + a - r, j + b - r
                        if 0 <= y < H and 0 <= x < W:
                            acc += K[a, b] * xn[y, x, c]
                out[i, j, c] = acc
    return out
