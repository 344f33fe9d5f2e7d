"""Slow, obviously-correct reference implementations used only by the tests."""
import math

import numpy as np
import torch


def conv2d_loop(x, w, b, stride):
    """Same-padded cross-correlation, TF convention (extra pad goes after)."""
    n, c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    oh, ow = -(-h // stride), -(-wd // stride)
    ph = max((oh - 1) * stride + kh - h, 0) // 2
    pw = max((ow - 1) * stride + kw - wd, 0) // 2
    out = np.zeros((n, c_out, oh, ow))
    for s in range(n):
        for o in range(c_out):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0 if b is None else float(b[o])
                    for c in range(c_in):
                        for u in range(kh):
                            for v in range(kw):
                                r, q = i * stride + u - ph, j * stride + v - pw
                                if 0 <= r < h and 0 <= q < wd:
                                    acc += float(x[s, c, r, q]) * float(w[o, c, u, v])
                    out[s, o, i, j] = acc
    return out


def conv1d_loop(x, w, b, stride):
    return conv2d_loop(x[:, :, None, :], w[:, :, None, :], b, stride)[:, :, 0, :]


def maxpool2d_loop(x, window, stride):
    n, c, h, wd = x.shape
    oh, ow = (h - window) // stride + 1, (wd - window) // stride + 1
    out = np.empty((n, c, oh, ow))
    for s in range(n):
        for k in range(c):
            for i in range(oh):
                for j in range(ow):
                    out[s, k, i, j] = max(float(x[s, k, i * stride + u, j * stride + v])
                                          for u in range(window) for v in range(window))
    return out


def eca_loop(desc, w, bias):
    n, c = desc.shape
    k = len(w)
    out = np.empty((n, c))
    for s in range(n):
        for ch in range(c):
            acc = float(bias)
            for t in range(k):
                idx = ch + t - k // 2
                if 0 <= idx < c:
                    acc += float(w[t]) * float(desc[s, idx])
            out[s, ch] = 1.0 / (1.0 + math.exp(-acc))
    return out


def central_difference(fn, tensor, eps=1e-6, max_entries=None, seed=0):
    """Numerical gradient of scalar ``fn()`` w.r.t. entries of ``tensor`` (modified in place).

    Returns (flat indices, numerical gradients) for a random subset of entries.
    """
    flat = tensor.data.view(-1)
    idx = np.arange(flat.numel())
    if max_entries is not None and idx.size > max_entries:
        idx = np.sort(np.random.default_rng(seed).choice(idx, max_entries, replace=False))
    grads = []
    with torch.no_grad():
        for i in idx:
            orig = flat[i].item()
            flat[i] = orig + eps
            up = fn().item()
            flat[i] = orig - eps
            down = fn().item()
            flat[i] = orig
            grads.append((up - down) / (2 * eps))
    return idx, np.array(grads)


def relative_error(a, b, floor=1e-6):
    """Norm-wise relative error; ``floor`` keeps identically-zero gradients from dividing noise by noise."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)
