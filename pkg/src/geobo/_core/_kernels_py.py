"""Numpy reference implementation of the kernel hot loops."""

import numpy as np


def sphere_se(Z1, Z2, theta, beta):
    """Geodesic SE kernel on unit vectors; returns ``(K, D2)``."""
    C = np.clip(Z1 @ Z2.T, -1.0, 1.0)
    D2 = np.arccos(C) ** 2
    return theta * np.exp(-beta * D2), D2


def euclid_se(X1, X2, theta, beta):
    """Euclidean SE kernel; returns ``(K, D2)``."""
    D2 = (np.sum(X1 * X1, axis=1)[:, None] + np.sum(X2 * X2, axis=1)[None, :]
          - 2.0 * (X1 @ X2.T))
    np.maximum(D2, 0.0, out=D2)
    return theta * np.exp(-beta * D2), D2


def sphere_dk_dc(K, D2, beta):
    """Derivative of the geodesic SE kernel w.r.t. the cosine ``z_i . z_j``.

    ``dk/dc = 2 beta k d / sin(d)``; the ratio tends to 1 at ``d = 0`` and is
    capped near ``d = pi``.
    """
    d = np.sqrt(D2)
    s = np.sin(d)
    ratio = np.ones_like(d)
    big = d > 1e-6
    ratio[big] = d[big] / np.maximum(s[big], 1e-8)
    small = ~big
    ratio[small] = 1.0 + D2[small] / 6.0
    return 2.0 * beta * K * ratio
