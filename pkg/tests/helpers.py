"""Shared oracles and random-field factories for the test suite."""

import itertools
import math

import numpy as np
from scipy import ndimage


def smooth_field(dims, rng, max_norm, sigma=4.0, ndim=None):
    """Gaussian-filtered noise scaled so the largest vector has norm ``max_norm``."""
    D = len(dims) if ndim is None else ndim
    v = np.stack([ndimage.gaussian_filter(rng.standard_normal(dims), sigma, mode="reflect") for _ in range(D)])
    return v * (max_norm / np.sqrt(np.sum(v * v, axis=0)).max())


def smooth_image(dims, rng, sigma=2.0):
    x = ndimage.gaussian_filter(rng.standard_normal(dims), sigma, mode="reflect")
    return (x - x.min()) / (x.max() - x.min())


def interior(a, band, lead=1):
    """Strip ``band`` voxels from every spatial axis (the first ``lead`` axes are channels)."""
    sl = (slice(None),) * lead + tuple(slice(band, n - band) for n in a.shape[lead:])
    return a[sl]


def loop_sample(src, p):
    """Scalar-loop multilinear sample of ``src`` at continuous index ``p`` with edge clamping."""
    D = src.ndim
    base, frac = [], []
    for d in range(D):
        n = src.shape[d]
        q = min(max(p[d], 0.0), n - 1.0)
        i = min(int(math.floor(q)), n - 2)
        base.append(i)
        frac.append(q - i)
    total = 0.0
    for corner in itertools.product((0, 1), repeat=D):
        w = 1.0
        idx = []
        for d, c in enumerate(corner):
            w *= frac[d] if c else 1.0 - frac[d]
            idx.append(base[d] + c)
        total += w * src[tuple(idx)]
    return total


def loop_nearest(src, p):
    idx = []
    for d in range(src.ndim):
        i = int(math.floor(p[d] + 0.5))
        idx.append(min(max(i, 0), src.shape[d] - 1))
    return src[tuple(idx)]


def directional_fd(f, x, direction, eps=1e-6):
    return (f(x + eps * direction) - f(x - eps * direction)) / (2 * eps)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def brute_force_surface(A, B, spacing):
    """All-pairs boundary distances: (mean symmetric, symmetric 95th percentile)."""

    def boundary(M):
        out = np.zeros_like(M)
        for idx in zip(*np.nonzero(M)):
            for ax in range(M.ndim):
                for s in (-1, 1):
                    j = list(idx)
                    j[ax] += s
                    if not 0 <= j[ax] < M.shape[ax] or not M[tuple(j)]:
                        out[idx] = True
        return out

    pa = np.argwhere(boundary(A)) * np.asarray(spacing)
    pb = np.argwhere(boundary(B)) * np.asarray(spacing)
    d = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1))
    dab, dba = d.min(1), d.min(0)
    return 0.5 * (dab.mean() + dba.mean()), max(np.percentile(dab, 95), np.percentile(dba, 95))


ACCEPTANCE = []


def record(criterion, passed, detail):
    """Log one acceptance line; the terminal summary prints them all."""
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return passed
